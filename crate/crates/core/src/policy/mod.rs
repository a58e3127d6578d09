//! The toy generative reward policy.
//!
//! Four linear softmax heads read a feature vector and pick, independently,
//! the answer, the declared task, whether the output is well formed, and
//! whether the caption is faithful. The chosen [`StructuredAction`] renders
//! deterministically to rationale text, so rewards are computed on real
//! text while log-probabilities, gradients and KL stay exact.

mod features;
mod params;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use features::{caption_bits, channel_bits, featurize, Channel, FeatureSpec, FeatureVector};
pub use params::{
    Checkpoint, Head, HeadKind, PolicyGrad, PolicyParams, PolicySnapshot, CHECKPOINT_FORMAT, CHECKPOINT_VERSION,
};

use crate::corpus::{render_caption, Label, PreferenceExample, TaskKind};
use crate::grammar::{render_rationale, Rationale, StageFormat, THINK_CLOSE};
use crate::seed;

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("example `{id}`: {} channel unavailable: {reason}", channel.name())]
    ChannelUnavailable {
        id: String,
        channel: Channel,
        reason: String,
    },
    #[error("example `{id}`: expected {expected} media bits, found {found}")]
    DimensionMismatch { id: String, expected: usize, found: usize },
    #[error("policy and snapshot shapes differ")]
    ShapeMismatch,
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StructuredAction {
    pub answer: Label,
    pub task_tag: TaskKind,
    pub well_formed: bool,
    pub caption_faithful: bool,
}

impl StructuredAction {
    /// Index of the chosen category in `head`.
    pub fn choice(&self, head: HeadKind) -> usize {
        match head {
            HeadKind::Answer => self.answer.index(),
            HeadKind::Task => self.task_tag.index(),
            HeadKind::Format => usize::from(!self.well_formed),
            HeadKind::Caption => usize::from(!self.caption_faithful),
        }
    }

    /// The action an expert would take: gold answer, true task, clean format,
    /// faithful caption.
    pub fn ideal(example: &PreferenceExample) -> Self {
        StructuredAction {
            answer: example.label,
            task_tag: example.task,
            well_formed: true,
            caption_faithful: true,
        }
    }
}

/// Heads whose decision appears in the output for `format`.
pub fn active_heads(format: StageFormat) -> &'static [HeadKind] {
    match format {
        StageFormat::ThinkAnswer => &[HeadKind::Answer, HeadKind::Format],
        StageFormat::TypedThinkAnswer => &HeadKind::ALL,
    }
}

/// Every distinct action for `format`. Decisions of inactive heads are fixed
/// at the example's task and a faithful caption.
pub fn enumerate_actions(format: StageFormat, task: TaskKind) -> Vec<StructuredAction> {
    let tasks: Vec<TaskKind> = if format.is_typed() {
        TaskKind::ALL.to_vec()
    } else {
        vec![task]
    };
    let captions: &[bool] = if format.is_typed() { &[true, false] } else { &[true] };
    let mut out = Vec::new();
    for answer in Label::ALL {
        for &task_tag in &tasks {
            for well_formed in [true, false] {
                for &caption_faithful in captions {
                    out.push(StructuredAction {
                        answer,
                        task_tag,
                        well_formed,
                        caption_faithful,
                    });
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
struct HeadDist {
    probs: Vec<f64>,
    log_probs: Vec<f64>,
}

impl HeadDist {
    fn from_logits(logits: Vec<f64>) -> Self {
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        let log_probs: Vec<f64> = logits.iter().map(|z| z - lse).collect();
        let probs = log_probs.iter().map(|l| l.exp()).collect();
        HeadDist { probs, log_probs }
    }

    fn sample(&self, rng: &mut seed::Rng) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.probs.len() - 1
    }

    fn kl(&self, other: &HeadDist) -> f64 {
        self.probs
            .iter()
            .zip(&self.log_probs)
            .zip(&other.log_probs)
            .map(|((p, lp), lq)| if *p == 0.0 { 0.0 } else { p * (lp - lq) })
            .sum()
    }
}

/// The policy's action distribution for one example, channel and format.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDist {
    features: FeatureVector,
    format: StageFormat,
    task: TaskKind,
    heads: Vec<HeadDist>,
}

impl ActionDist {
    pub fn new(params: &PolicyParams, features: FeatureVector, format: StageFormat, task: TaskKind) -> Self {
        let x = features.as_slice();
        let heads = HeadKind::ALL
            .iter()
            .map(|&kind| {
                let k = kind.arity();
                let w = &params.head(kind).weights;
                let logits = (0..k)
                    .map(|c| x.iter().enumerate().map(|(i, xi)| xi * w[i * k + c]).sum())
                    .collect();
                HeadDist::from_logits(logits)
            })
            .collect();
        ActionDist {
            features,
            format,
            task,
            heads,
        }
    }

    pub fn for_example(
        params: &PolicyParams,
        example: &PreferenceExample,
        format: StageFormat,
        channel: Channel,
    ) -> Result<Self, PolicyError> {
        let x = featurize(params.spec(), example, channel)?;
        Ok(ActionDist::new(params, x, format, example.task))
    }

    pub fn features(&self) -> &FeatureVector {
        &self.features
    }

    pub fn format(&self) -> StageFormat {
        self.format
    }

    pub fn head_probs(&self, head: HeadKind) -> &[f64] {
        &self.heads[head.index()].probs
    }

    pub fn answer_prob(&self, label: Label) -> f64 {
        self.heads[HeadKind::Answer.index()].probs[label.index()]
    }

    /// Sum of the active heads' log-probabilities.
    pub fn logprob(&self, action: &StructuredAction) -> f64 {
        active_heads(self.format)
            .iter()
            .map(|&h| self.heads[h.index()].log_probs[action.choice(h)])
            .sum()
    }

    pub fn sample(&self, rng: &mut seed::Rng) -> StructuredAction {
        let mut action = StructuredAction {
            answer: Label::A,
            task_tag: self.task,
            well_formed: true,
            caption_faithful: true,
        };
        for &h in active_heads(self.format) {
            let c = self.heads[h.index()].sample(rng);
            match h {
                HeadKind::Answer => action.answer = Label::from_index(c).expect("binary head"),
                HeadKind::Task => action.task_tag = TaskKind::from_index(c).expect("four-way head"),
                HeadKind::Format => action.well_formed = c == 0,
                HeadKind::Caption => action.caption_faithful = c == 0,
            }
        }
        action
    }

    /// `grad += scale · ∇θ log π(action)`, ignoring the freeze mask.
    pub fn accumulate_grad_logprob(&self, action: &StructuredAction, scale: f64, grad: &mut PolicyGrad) {
        for &h in active_heads(self.format) {
            let d = &self.heads[h.index()];
            let chosen = action.choice(h);
            let v: Vec<f64> = d
                .probs
                .iter()
                .enumerate()
                .map(|(c, p)| f64::from(u8::from(c == chosen)) - p)
                .collect();
            grad.add_outer(h, self.features.as_slice(), &v, scale);
        }
    }

    /// Exact `KL(self ‖ reference)` over the active heads.
    pub fn kl(&self, reference: &ActionDist) -> f64 {
        active_heads(self.format)
            .iter()
            .map(|&h| self.heads[h.index()].kl(&reference.heads[h.index()]))
            .sum()
    }

    /// `grad += scale · ∇θ KL(self ‖ reference)`, with `reference` held fixed.
    pub fn accumulate_grad_kl(&self, reference: &ActionDist, scale: f64, grad: &mut PolicyGrad) {
        for &h in active_heads(self.format) {
            let p = &self.heads[h.index()];
            let q = &reference.heads[h.index()];
            let kl = p.kl(q);
            let v: Vec<f64> = (0..h.arity())
                .map(|c| {
                    if p.probs[c] == 0.0 {
                        0.0
                    } else {
                        p.probs[c] * (p.log_probs[c] - q.log_probs[c] - kl)
                    }
                })
                .collect();
            grad.add_outer(h, self.features.as_slice(), &v, scale);
        }
    }
}

/// Caption the action emits: the example's gold caption when faithful, the
/// rendering of the complemented bits otherwise.
fn action_caption(example: &PreferenceExample, faithful: bool) -> String {
    let bits = example.media.first().map(|m| &m.feature_bits);
    if faithful {
        if let Some(c) = example
            .gold_caption
            .as_deref()
            .or_else(|| example.media.first().and_then(|m| m.caption.as_deref()))
        {
            return c.trim().to_string();
        }
        return bits.map(render_caption).unwrap_or_else(|| "no visual content".into());
    }
    bits.map(|b| render_caption(&b.complement()))
        .unwrap_or_else(|| "unrelated visual content".into())
}

/// Deterministic output text for `action`. A malformed action renders the
/// same rationale with `</think>` removed.
pub fn render_action(example: &PreferenceExample, action: &StructuredAction, format: StageFormat) -> String {
    let caption = format
        .is_typed()
        .then(|| action_caption(example, action.caption_faithful));
    let r = Rationale::templated(format, action.task_tag, caption, action.answer);
    let text = render_rationale(&r).unwrap_or_else(|_| {
        let fallback = Rationale::templated(format, action.task_tag, None, action.answer);
        render_rationale(&fallback).expect("templated rationales always render")
    });
    if action.well_formed {
        text
    } else {
        text.replacen(THINK_CLOSE, "", 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub action: StructuredAction,
    pub text: String,
    pub logprob: f64,
}

pub fn sample_from(dist: &ActionDist, example: &PreferenceExample, rng: &mut seed::Rng) -> Rollout {
    let action = dist.sample(rng);
    Rollout {
        action,
        text: render_action(example, &action, dist.format()),
        logprob: dist.logprob(&action),
    }
}

/// One rollout, deterministic in `seed`.
pub fn sample_action(
    params: &PolicyParams,
    example: &PreferenceExample,
    format: StageFormat,
    channel: Channel,
    seed: u64,
) -> Result<Rollout, PolicyError> {
    let dist = ActionDist::for_example(params, example, format, channel)?;
    Ok(sample_from(&dist, example, &mut seed::rng(seed)))
}

pub fn action_logprob(
    params: &PolicyParams,
    example: &PreferenceExample,
    action: &StructuredAction,
    format: StageFormat,
    channel: Channel,
) -> Result<f64, PolicyError> {
    Ok(ActionDist::for_example(params, example, format, channel)?.logprob(action))
}

/// Gradient of [`action_logprob`]; zero at frozen entries.
pub fn grad_logprob(
    params: &PolicyParams,
    example: &PreferenceExample,
    action: &StructuredAction,
    format: StageFormat,
    channel: Channel,
) -> Result<PolicyGrad, PolicyError> {
    let dist = ActionDist::for_example(params, example, format, channel)?;
    let mut g = params.zero_grad();
    dist.accumulate_grad_logprob(action, 1.0, &mut g);
    params.mask(&mut g);
    Ok(g)
}

pub fn kl_divergence(
    params: &PolicyParams,
    snapshot: &PolicySnapshot,
    example: &PreferenceExample,
    format: StageFormat,
    channel: Channel,
) -> Result<f64, PolicyError> {
    if params.spec() != snapshot.params().spec() {
        return Err(PolicyError::ShapeMismatch);
    }
    let p = ActionDist::for_example(params, example, format, channel)?;
    let q = ActionDist::new(snapshot.params(), p.features().clone(), format, example.task);
    Ok(p.kl(&q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synth_corpus, CorpusSpec, LabelRule};
    use crate::grammar::parse_rationale;

    fn example() -> PreferenceExample {
        let spec = CorpusSpec::new(1, 4, LabelRule::RandomLinear { rule_seed: 2 }, 9);
        synth_corpus(&spec).unwrap().remove(0)
    }

    #[test]
    fn zero_params_are_uniform() {
        let params = PolicyParams::zeros(FeatureSpec::new(4));
        let ex = example();
        let r = sample_action(&params, &ex, StageFormat::TypedThinkAnswer, Channel::Visual, 1).unwrap();
        let expected = (0.5f64).ln() * 3.0 + (0.25f64).ln();
        assert!((r.logprob - expected).abs() < 1e-12);
    }

    #[test]
    fn renderings_parse_iff_well_formed() {
        let ex = example();
        for format in [StageFormat::ThinkAnswer, StageFormat::TypedThinkAnswer] {
            for a in enumerate_actions(format, ex.task) {
                let text = render_action(&ex, &a, format);
                let parsed = parse_rationale(&text, format);
                assert_eq!(parsed.is_ok(), a.well_formed, "{text}");
                if let Ok(r) = parsed {
                    assert_eq!(r.answer, a.answer);
                    assert_eq!(r.task_tag, format.is_typed().then_some(a.task_tag));
                }
            }
        }
        assert_eq!(enumerate_actions(StageFormat::TypedThinkAnswer, ex.task).len(), 32);
        assert_eq!(enumerate_actions(StageFormat::ThinkAnswer, ex.task).len(), 4);
    }

    #[test]
    fn frozen_entries_have_zero_gradient() {
        let mut params = PolicyParams::zeros(FeatureSpec::new(4));
        params.freeze_visual();
        let ex = example();
        let a = StructuredAction::ideal(&ex);
        let g = grad_logprob(&params, &ex, &a, StageFormat::TypedThinkAnswer, Channel::Visual).unwrap();
        for h in HeadKind::ALL {
            for r in params.spec().visual_range() {
                for c in 0..h.arity() {
                    assert_eq!(g.get(h, r, c), 0.0);
                }
            }
        }
        assert!(!g.is_zero());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut params = PolicyParams::zeros(FeatureSpec::new(4));
        params.set_weight(HeadKind::Answer, 3, 1, 0.1 + 0.2);
        params.set_weight(HeadKind::Task, 0, 2, -1.0 / 3.0);
        params.freeze_visual();
        let back = PolicyParams::from_json(&params.to_json()).unwrap();
        assert_eq!(back, params);
        let mut broken = params.to_checkpoint();
        broken.version = 9;
        assert!(PolicyParams::from_checkpoint(broken).is_err());
    }
}
