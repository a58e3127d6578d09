//! Synthetic corpora with ground truth known by construction.
//!
//! Every example has a hidden attribute vector `b ∈ {0,1}^d`: bit `i` set
//! means candidate A exhibits attribute `i` and candidate B does not. The
//! gold label is a deterministic rule over `b`, optionally flipped with
//! probability `noise_rate`.
//!
//! Where `b` is observable depends on the modality:
//! - textual examples state it in the responses ("Response covers: ...");
//! - multimodal examples carry it in the media bits and the gold caption,
//!   while understanding responses make claims that are independent of it.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{to_caption_based, CorpusError, FeatureBits, Label, MediaDescriptor, PreferenceExample, Result, TaskKind};
use crate::grammar::{render_rationale, Rationale, StageFormat};
use crate::seed;

const ATTRIBUTES: [&str; 16] = [
    "accurate",
    "grounded",
    "concise",
    "detailed",
    "safe",
    "fluent",
    "relevant",
    "consistent",
    "vivid",
    "sharp",
    "coherent",
    "complete",
    "faithful",
    "natural",
    "balanced",
    "clear",
];

pub fn attribute_name(index: usize) -> String {
    ATTRIBUTES
        .get(index)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("aspect{index}"))
}

fn attribute_index(name: &str) -> Option<usize> {
    if let Some(i) = ATTRIBUTES.iter().position(|a| *a == name) {
        return Some(i);
    }
    name.strip_prefix("aspect")?
        .parse::<usize>()
        .ok()
        .filter(|&i| i >= ATTRIBUTES.len())
}

fn attribute_list(bits: &FeatureBits, present: bool) -> String {
    let names: Vec<String> = (0..bits.len())
        .filter(|&i| bits.get(i) == present)
        .map(attribute_name)
        .collect();
    if names.is_empty() {
        "none".into()
    } else {
        names.join(", ")
    }
}

/// Deterministic caption for a bit vector: `bits: 0110. Visible attributes: ...`.
pub fn render_caption(bits: &FeatureBits) -> String {
    format!("bits: {bits}. Visible attributes: {}.", attribute_list(bits, true))
}

/// Recovers the bits from a caption produced by [`render_caption`].
pub fn parse_caption(caption: &str) -> Option<FeatureBits> {
    let rest = caption.trim_start().strip_prefix("bits: ")?;
    let end = rest.find(|c| c != '0' && c != '1').unwrap_or(rest.len());
    if end == 0 {
        return None;
    }
    rest[..end].parse().ok()
}

/// Textual response listing the attributes whose bit equals `present`.
pub fn render_claims(bits: &FeatureBits, present: bool) -> String {
    format!("Response covers: {}.", attribute_list(bits, present))
}

/// Inverse of [`render_claims`] with `present = true`.
pub fn parse_claims(text: &str, dim: usize) -> Option<FeatureBits> {
    let start = text.find("covers: ")? + "covers: ".len();
    let rest = &text[start..];
    let list = &rest[..rest.find('.').unwrap_or(rest.len())];
    let mut bits = vec![false; dim];
    if list.trim() == "none" {
        return Some(FeatureBits::new(bits));
    }
    for name in list.split(',') {
        let i = attribute_index(name.trim())?;
        *bits.get_mut(i)? = true;
    }
    Some(FeatureBits::new(bits))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskMix {
    #[serde(default)]
    pub image_understanding: f64,
    #[serde(default)]
    pub image_generation: f64,
    #[serde(default)]
    pub video_understanding: f64,
    #[serde(default)]
    pub video_generation: f64,
}

impl TaskMix {
    pub fn only(task: TaskKind) -> TaskMix {
        let mut p = [0.0; 4];
        p[task.index()] = 1.0;
        TaskMix::from_array(p)
    }

    pub fn uniform() -> TaskMix {
        TaskMix::from_array([0.25; 4])
    }

    fn from_array(p: [f64; 4]) -> TaskMix {
        TaskMix {
            image_understanding: p[0],
            image_generation: p[1],
            video_understanding: p[2],
            video_generation: p[3],
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [
            self.image_understanding,
            self.image_generation,
            self.video_understanding,
            self.video_generation,
        ]
    }

    /// Largest-remainder apportionment of `n` examples, so each count is
    /// within one of `n * p`.
    pub fn counts(&self, n: usize) -> [usize; 4] {
        let p = self.as_array();
        let exact: Vec<f64> = p.iter().map(|q| q * n as f64).collect();
        let mut counts = [0usize; 4];
        for (c, e) in counts.iter_mut().zip(&exact) {
            *c = e.floor() as usize;
        }
        let mut left = n.saturating_sub(counts.iter().sum());
        let mut order: Vec<usize> = (0..4).collect();
        order.sort_by(|&a, &b| {
            let fa = exact[a] - exact[a].floor();
            let fb = exact[b] - exact[b].floor();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            if p[i] > 0.0 {
                counts[i] += 1;
                left -= 1;
            }
        }
        counts
    }
}

/// Gold-label rule over the attribute bits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LabelRule {
    /// A iff `Σ w_i (2 b_i − 1) > 0`; ties go to B.
    Linear {
        weights: Vec<i64>,
    },
    /// Linear rule with weights drawn from `{±1, ±2, ±3}` by `rule_seed`.
    /// Corpora that share a `rule_seed` share the rule.
    RandomLinear {
        rule_seed: u64,
    },
    Constant {
        label: Label,
    },
}

impl LabelRule {
    /// Integer weights for linear rules; `None` for constant rules.
    pub fn weights(&self, dim: usize) -> Option<Vec<i64>> {
        match self {
            LabelRule::Linear { weights } => Some(weights.clone()),
            LabelRule::RandomLinear { rule_seed } => {
                let mut rng = seed::derived_rng(*rule_seed, "label-rule", dim as u64);
                Some(
                    (0..dim)
                        .map(|_| {
                            let m = rng.gen_range(1..=3);
                            if rng.gen_bool(0.5) {
                                m
                            } else {
                                -m
                            }
                        })
                        .collect(),
                )
            }
            LabelRule::Constant { .. } => None,
        }
    }

    pub fn label_with(weights: Option<&[i64]>, constant: Label, bits: &FeatureBits) -> Label {
        match weights {
            Some(w) => {
                let score: i64 = w
                    .iter()
                    .zip(bits.as_slice())
                    .map(|(w, &b)| if b { *w } else { -*w })
                    .sum();
                if score > 0 {
                    Label::A
                } else {
                    Label::B
                }
            }
            None => constant,
        }
    }

    pub fn label(&self, bits: &FeatureBits) -> Label {
        let w = self.weights(bits.len());
        let constant = match self {
            LabelRule::Constant { label } => *label,
            _ => Label::B,
        };
        LabelRule::label_with(w.as_deref(), constant, bits)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    /// Media bits plus gold captions.
    #[default]
    Multimodal,
    /// Multimodal examples with media already replaced by captions.
    CaptionBased,
    /// No media; the attribute bits are stated in the responses.
    Textual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub n_examples: usize,
    pub feature_dim: usize,
    /// Defaults to all image understanding for textual corpora, uniform otherwise.
    #[serde(default)]
    pub task_mix: Option<TaskMix>,
    pub label_rule: LabelRule,
    #[serde(default)]
    pub noise_rate: f64,
    pub seed: u64,
    #[serde(default)]
    pub modality: Modality,
    /// Attach a canonical rationale for the gold label (SFT cold-start data).
    #[serde(default)]
    pub with_rationales: bool,
    #[serde(default = "default_prefix")]
    pub id_prefix: String,
}

fn default_prefix() -> String {
    "ex".into()
}

impl CorpusSpec {
    pub fn new(n_examples: usize, feature_dim: usize, label_rule: LabelRule, seed: u64) -> Self {
        CorpusSpec {
            n_examples,
            feature_dim,
            task_mix: None,
            label_rule,
            noise_rate: 0.0,
            seed,
            modality: Modality::Multimodal,
            with_rationales: false,
            id_prefix: default_prefix(),
        }
    }

    pub fn resolved_mix(&self) -> TaskMix {
        self.task_mix.unwrap_or(match self.modality {
            Modality::Textual => TaskMix::only(TaskKind::ImageUnderstanding),
            _ => TaskMix::uniform(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field, reason: String| Err(CorpusError::InvalidSpec { field, reason });
        if self.feature_dim == 0 {
            return bad("feature_dim", "must be at least 1".into());
        }
        let mix = self.resolved_mix().as_array();
        if mix.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return bad("task_mix", "proportions must be finite and non-negative".into());
        }
        let total: f64 = mix.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return bad("task_mix", format!("proportions sum to {total}, expected 1"));
        }
        if self.modality == Modality::Textual && TaskKind::ALL.iter().any(|t| t.is_generation() && mix[t.index()] > 0.0)
        {
            return bad("task_mix", "textual corpora hold understanding tasks only".into());
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return bad("noise_rate", format!("{} is outside [0, 1]", self.noise_rate));
        }
        if let LabelRule::Linear { weights } = &self.label_rule {
            if weights.len() != self.feature_dim {
                return bad(
                    "label_rule",
                    format!("{} weights for feature_dim {}", weights.len(), self.feature_dim),
                );
            }
        }
        if self.id_prefix.is_empty() {
            return bad("id_prefix", "must be non-empty".into());
        }
        Ok(())
    }
}

fn random_bits(rng: &mut seed::Rng, dim: usize) -> FeatureBits {
    FeatureBits::new((0..dim).map(|_| rng.gen_bool(0.5)).collect())
}

/// Generates the corpus described by `spec`. Deterministic in `spec.seed`.
pub fn synth_corpus(spec: &CorpusSpec) -> Result<Vec<PreferenceExample>> {
    spec.validate()?;
    let d = spec.feature_dim;
    let mut rng = seed::derived_rng(spec.seed, "synth", 0);
    let counts = spec.resolved_mix().counts(spec.n_examples);
    let mut tasks: Vec<TaskKind> = TaskKind::ALL
        .iter()
        .flat_map(|&t| std::iter::repeat(t).take(counts[t.index()]))
        .collect();
    tasks.shuffle(&mut rng);

    let weights = spec.label_rule.weights(d);
    let constant = match spec.label_rule {
        LabelRule::Constant { label } => label,
        _ => Label::B,
    };

    let mut out = Vec::with_capacity(spec.n_examples);
    for (i, task) in tasks.into_iter().enumerate() {
        let bits = random_bits(&mut rng, d);
        let rule_label = LabelRule::label_with(weights.as_deref(), constant, &bits);
        let label = if rng.gen::<f64>() < spec.noise_rate {
            rule_label.flip()
        } else {
            rule_label
        };
        let id = format!("{}-{i:06}", spec.id_prefix);
        let noun = match task.media_kind() {
            super::MediaKind::Video => "video",
            _ => "image",
        };
        let mut ex = if spec.modality == Modality::Textual {
            PreferenceExample {
                id,
                task,
                prompt: format!("Request #{i}: which response better serves the user?"),
                media: Vec::new(),
                response_a: Some(render_claims(&bits, true)),
                response_b: Some(render_claims(&bits, false)),
                label,
                gold_caption: None,
                source_rationale: None,
            }
        } else if task.is_generation() {
            let media = |b: FeatureBits| MediaDescriptor {
                kind: task.media_kind(),
                feature_bits: b,
                caption: None,
            };
            PreferenceExample {
                id,
                task,
                prompt: format!("Generate a {noun} of scene #{i}."),
                media: vec![media(bits.clone()), media(bits.complement())],
                response_a: None,
                response_b: None,
                label,
                gold_caption: Some(render_caption(&bits)),
                source_rationale: None,
            }
        } else {
            let claims = random_bits(&mut rng, d);
            PreferenceExample {
                id,
                task,
                prompt: format!("Query #{i}: which response better describes the {noun}?"),
                media: vec![MediaDescriptor {
                    kind: task.media_kind(),
                    feature_bits: bits.clone(),
                    caption: None,
                }],
                response_a: Some(render_claims(&claims, true)),
                response_b: Some(render_claims(&claims, false)),
                label,
                gold_caption: Some(render_caption(&bits)),
                source_rationale: None,
            }
        };
        if spec.with_rationales {
            let format = if ex.is_text_only() {
                StageFormat::ThinkAnswer
            } else {
                StageFormat::TypedThinkAnswer
            };
            let r = Rationale::templated(format, task, ex.gold_caption.clone(), label);
            ex.source_rationale = Some(render_rationale(&r).expect("templated rationales always render"));
        }
        if spec.modality == Modality::CaptionBased {
            ex = to_caption_based(&ex)?;
        }
        out.push(ex);
    }
    Ok(out)
}
