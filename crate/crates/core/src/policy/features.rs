use serde::{Deserialize, Serialize};

use super::PolicyError;
use crate::corpus::{parse_caption, parse_claims, FeatureBits, MediaKind, PreferenceExample, TaskKind};
use crate::seed;

/// Which surface the policy reads the media through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    /// Raw media bits.
    Visual,
    /// Bits recovered from the caption text.
    Caption,
    /// No media block at all.
    TextOnly,
}

impl Channel {
    pub fn name(self) -> &'static str {
        match self {
            Channel::Visual => "visual",
            Channel::Caption => "caption",
            Channel::TextOnly => "text_only",
        }
    }
}

/// Feature layout: `[media bits d][response bits d][task one-hot 4][prompt bucket P][bias]`.
/// Bits are encoded as ±1; an absent block is all zeros.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub bit_dim: usize,
    pub prompt_buckets: usize,
}

impl FeatureSpec {
    pub const DEFAULT_PROMPT_BUCKETS: usize = 3;

    pub fn new(bit_dim: usize) -> Self {
        FeatureSpec {
            bit_dim,
            prompt_buckets: Self::DEFAULT_PROMPT_BUCKETS,
        }
    }

    pub fn dim(&self) -> usize {
        2 * self.bit_dim + TaskKind::ALL.len() + self.prompt_buckets + 1
    }

    /// Rows read from the media channel; these play the vision-encoder role.
    pub fn visual_range(&self) -> std::ops::Range<usize> {
        0..self.bit_dim
    }

    pub fn text_range(&self) -> std::ops::Range<usize> {
        self.bit_dim..2 * self.bit_dim
    }

    pub fn task_offset(&self) -> usize {
        2 * self.bit_dim
    }

    pub fn prompt_offset(&self) -> usize {
        self.task_offset() + TaskKind::ALL.len()
    }

    pub fn bias_index(&self) -> usize {
        self.dim() - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Bits for free text that no parser recognizes.
fn hashed_bits(text: &str, dim: usize) -> FeatureBits {
    let h = seed::text_hash(text);
    FeatureBits::new(
        (0..dim as u64)
            .map(|i| seed::derive_seed(h, "text-bits", i) & 1 == 1)
            .collect(),
    )
}

/// Bits read from a caption: parsed when it is a canonical rendering,
/// hashed otherwise.
pub fn caption_bits(caption: &str, dim: usize) -> FeatureBits {
    match parse_caption(caption) {
        Some(b) if b.len() == dim => b,
        _ => hashed_bits(caption, dim),
    }
}

fn response_bits(text: &str, dim: usize) -> FeatureBits {
    parse_claims(text, dim).unwrap_or_else(|| hashed_bits(text, dim))
}

/// Media bits as seen through `channel`, or `None` for [`Channel::TextOnly`].
pub fn channel_bits(
    spec: &FeatureSpec,
    example: &PreferenceExample,
    channel: Channel,
) -> Result<Option<FeatureBits>, PolicyError> {
    let unavailable = |reason: &str| PolicyError::ChannelUnavailable {
        id: example.id.clone(),
        channel,
        reason: reason.to_string(),
    };
    let bits = match channel {
        Channel::TextOnly => return Ok(None),
        Channel::Visual => {
            let m = example
                .media
                .first()
                .ok_or_else(|| unavailable("example has no media"))?;
            if m.kind == MediaKind::None {
                return Err(unavailable("media was replaced by a caption"));
            }
            m.feature_bits.clone()
        }
        Channel::Caption => {
            let caption = example
                .media
                .first()
                .and_then(|m| m.caption.as_deref())
                .or(example.gold_caption.as_deref())
                .ok_or_else(|| unavailable("example has no caption"))?;
            caption_bits(caption, spec.bit_dim)
        }
    };
    if bits.len() != spec.bit_dim {
        return Err(PolicyError::DimensionMismatch {
            id: example.id.clone(),
            expected: spec.bit_dim,
            found: bits.len(),
        });
    }
    Ok(Some(bits))
}

fn write_bits(out: &mut [f64], bits: &FeatureBits) {
    for (o, &b) in out.iter_mut().zip(bits.as_slice()) {
        *o = if b { 1.0 } else { -1.0 };
    }
}

pub fn featurize(
    spec: &FeatureSpec,
    example: &PreferenceExample,
    channel: Channel,
) -> Result<FeatureVector, PolicyError> {
    let mut x = vec![0.0; spec.dim()];
    if let Some(bits) = channel_bits(spec, example, channel)? {
        write_bits(&mut x[spec.visual_range()], &bits);
    }
    if let Some(text) = &example.response_a {
        write_bits(&mut x[spec.text_range()], &response_bits(text, spec.bit_dim));
    }
    x[spec.task_offset() + example.task.index()] = 1.0;
    if spec.prompt_buckets > 0 {
        let bucket = (seed::text_hash(&example.prompt) % spec.prompt_buckets as u64) as usize;
        x[spec.prompt_offset() + bucket] = 1.0;
    }
    x[spec.bias_index()] = 1.0;
    Ok(FeatureVector(x))
}
