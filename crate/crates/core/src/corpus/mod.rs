//! Preference-data model.
//!
//! A [`PreferenceExample`] is one labeled comparison: a task, a prompt, the
//! media the judgment is grounded in, two candidates and the gold label.
//! Media content is a bit-vector of semantic attributes plus a deterministic
//! caption rendering of the same bits, so the caption channel carries exactly
//! the information the "visual" channel does.

mod io;
mod replay;
mod synth;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use io::{from_jsonl_line, load_corpus, read_corpus, save_corpus, to_jsonl_line, write_corpus};
pub use replay::{mix_batch, replay_mix, AdmissionPolicy, ItemSource, MixRatio, MixedBatch, ReplayBuffer};
pub use synth::{
    attribute_name, parse_caption, parse_claims, render_caption, render_claims, synth_corpus, CorpusSpec, LabelRule,
    Modality, TaskMix,
};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("invalid corpus spec: field `{field}`: {reason}")]
    InvalidSpec { field: &'static str, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("example `{id}`: field `{field}`: {reason}")]
    Invalid {
        id: String,
        field: &'static str,
        reason: String,
    },
    #[error("line {line}: example `{id}`: field `{field}`: {reason}")]
    InvalidAtLine {
        line: usize,
        id: String,
        field: &'static str,
        reason: String,
    },
    #[error("duplicate example id `{0}`")]
    DuplicateId(String),
    #[error("example `{0}` has no gold caption")]
    MissingCaption(String),
    #[error("replay buffer is empty but the mix ratio requests replay items")]
    EmptyBuffer,
    #[error("replay buffer holds {available} items, batch needs {needed}")]
    InsufficientBuffer { available: usize, needed: usize },
    #[error("invalid mix ratio: {0}")]
    InvalidRatio(String),
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

/// The four preference tasks a generative reward model is asked to judge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    ImageUnderstanding,
    ImageGeneration,
    VideoUnderstanding,
    VideoGeneration,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [
        TaskKind::ImageUnderstanding,
        TaskKind::ImageGeneration,
        TaskKind::VideoUnderstanding,
        TaskKind::VideoGeneration,
    ];

    /// Lowercase prose name, as it appears inside a `<type>` tag.
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::ImageUnderstanding => "image understanding",
            TaskKind::ImageGeneration => "image generation",
            TaskKind::VideoUnderstanding => "video understanding",
            TaskKind::VideoGeneration => "video generation",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            TaskKind::ImageUnderstanding => "image_understanding",
            TaskKind::ImageGeneration => "image_generation",
            TaskKind::VideoUnderstanding => "video_understanding",
            TaskKind::VideoGeneration => "video_generation",
        }
    }

    /// Case-insensitive match against [`TaskKind::name`], ignoring surrounding whitespace.
    pub fn from_name(text: &str) -> Option<TaskKind> {
        let text = text.trim();
        TaskKind::ALL.into_iter().find(|t| t.name().eq_ignore_ascii_case(text))
    }

    pub fn from_slug(text: &str) -> Option<TaskKind> {
        TaskKind::ALL.into_iter().find(|t| t.slug() == text)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<TaskKind> {
        TaskKind::ALL.get(index).copied()
    }

    pub fn is_generation(self) -> bool {
        matches!(self, TaskKind::ImageGeneration | TaskKind::VideoGeneration)
    }

    pub fn media_kind(self) -> MediaKind {
        match self {
            TaskKind::ImageUnderstanding | TaskKind::ImageGeneration => MediaKind::Image,
            TaskKind::VideoUnderstanding | TaskKind::VideoGeneration => MediaKind::Video,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Preferred candidate. There is deliberately no "both" or "neither".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    A,
    B,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::A, Label::B];

    pub fn flip(self) -> Label {
        match self {
            Label::A => Label::B,
            Label::B => Label::A,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Label> {
        Label::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::A => "A",
            Label::B => "B",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "A" => Ok(Label::A),
            "B" => Ok(Label::B),
            other => Err(format!("label must be \"A\" or \"B\", got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MediaKind {
    Image,
    Video,
    /// Media replaced by its caption.
    None,
}

/// Fixed-length attribute bits. Serialized as a string of `0`/`1` characters.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct FeatureBits(Vec<bool>);

impl FeatureBits {
    pub fn new(bits: Vec<bool>) -> Self {
        FeatureBits(bits)
    }

    pub fn zeros(len: usize) -> Self {
        FeatureBits(vec![false; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    pub fn get(&self, index: usize) -> bool {
        self.0[index]
    }

    pub fn complement(&self) -> FeatureBits {
        FeatureBits(self.0.iter().map(|b| !b).collect())
    }

    pub fn hamming(&self, other: &FeatureBits) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count() + self.0.len().abs_diff(other.0.len())
    }
}

impl fmt::Display for FeatureBits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for FeatureBits {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(format!("feature_bits may only contain 0 and 1, found {other:?}")),
            })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(FeatureBits)
    }
}

impl Serialize for FeatureBits {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FeatureBits {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MediaDescriptor {
    pub kind: MediaKind,
    pub feature_bits: FeatureBits,
    pub caption: Option<String>,
}

/// One labeled comparison.
///
/// Understanding tasks carry one media descriptor and two textual responses;
/// generation tasks carry two media descriptors (the candidates) and no
/// responses. A text-only example is an understanding example with no media.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceExample {
    pub id: String,
    pub task: TaskKind,
    pub prompt: String,
    pub media: Vec<MediaDescriptor>,
    pub response_a: Option<String>,
    pub response_b: Option<String>,
    pub label: Label,
    pub gold_caption: Option<String>,
    pub source_rationale: Option<String>,
}

impl PreferenceExample {
    pub fn is_text_only(&self) -> bool {
        self.media.is_empty()
    }

    /// True once every media descriptor has been replaced by its caption.
    pub fn is_caption_based(&self) -> bool {
        !self.media.is_empty() && self.media.iter().all(|m| m.kind == MediaKind::None)
    }

    /// Bit dimension carried by this example's media, if any.
    pub fn feature_dim(&self) -> Option<usize> {
        self.media.first().map(|m| m.feature_bits.len())
    }

    fn invalid(&self, field: &'static str, reason: impl Into<String>) -> CorpusError {
        CorpusError::Invalid {
            id: self.id.clone(),
            field,
            reason: reason.into(),
        }
    }

    /// Checks the structural invariants. `feature_dim`, when given, is the
    /// corpus-wide bit dimension every media descriptor must match.
    pub fn validate(&self, feature_dim: Option<usize>) -> Result<()> {
        if self.id.is_empty() {
            return Err(self.invalid("id", "must be non-empty"));
        }
        if self.task.is_generation() {
            if self.media.len() != 2 {
                return Err(self.invalid(
                    "media",
                    format!("generation tasks carry 2 media descriptors, found {}", self.media.len()),
                ));
            }
            if self.response_a.is_some() || self.response_b.is_some() {
                return Err(self.invalid("response_a", "generation tasks carry no textual responses"));
            }
        } else {
            if self.media.len() > 1 {
                return Err(self.invalid(
                    "media",
                    format!(
                        "understanding tasks carry at most 1 media descriptor, found {}",
                        self.media.len()
                    ),
                ));
            }
            if self.response_a.is_none() {
                return Err(self.invalid("response_a", "understanding tasks need two responses"));
            }
            if self.response_b.is_none() {
                return Err(self.invalid("response_b", "understanding tasks need two responses"));
            }
        }
        let dim = feature_dim.or_else(|| self.feature_dim());
        for m in &self.media {
            if let Some(d) = dim {
                if m.feature_bits.len() != d {
                    return Err(self.invalid(
                        "feature_bits",
                        format!("expected {d} bits, found {}", m.feature_bits.len()),
                    ));
                }
            }
            match m.kind {
                MediaKind::None => {
                    if m.caption.is_none() {
                        return Err(self.invalid("caption", "media of kind none must carry a caption"));
                    }
                }
                kind if kind != self.task.media_kind() => {
                    return Err(self.invalid(
                        "kind",
                        format!("{kind:?} media does not match task {}", self.task.slug()),
                    ));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Validates every example plus corpus-wide properties: unique ids and one bit
/// dimension shared by all media.
pub fn validate_corpus(examples: &[PreferenceExample]) -> Result<Option<usize>> {
    let dim = examples.iter().find_map(PreferenceExample::feature_dim);
    let mut seen = HashSet::with_capacity(examples.len());
    for ex in examples {
        ex.validate(dim)?;
        if !seen.insert(ex.id.as_str()) {
            return Err(CorpusError::DuplicateId(ex.id.clone()));
        }
    }
    Ok(dim)
}

/// Replaces every media descriptor by the example's gold caption.
///
/// Task, label, prompt and responses are untouched. Idempotent.
pub fn to_caption_based(example: &PreferenceExample) -> Result<PreferenceExample> {
    let mut out = example.clone();
    if out.media.is_empty() {
        return Ok(out);
    }
    for m in &mut out.media {
        if m.kind == MediaKind::None && m.caption.is_some() {
            continue;
        }
        let caption = example
            .gold_caption
            .clone()
            .ok_or_else(|| CorpusError::MissingCaption(example.id.clone()))?;
        m.kind = MediaKind::None;
        m.caption = Some(caption);
    }
    Ok(out)
}
