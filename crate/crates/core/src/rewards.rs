//! Verifiable rewards and the reference reward-model losses.
//!
//! Reward components are fixed-point thousandths, so a total is an exact
//! integer sum and `total == format + accuracy + task` holds bit for bit.

use std::fmt;
use std::ops::Add;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::{Label, TaskKind};
use crate::grammar::{extract_answer, extract_task_tag, parse_rationale, StageFormat};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RewardError {
    #[error("{name} must be finite, got {value}")]
    NonFinite { name: &'static str, value: f64 },
    #[error("label log-probability must be <= 0, got {0}")]
    PositiveLogProb(f64),
    #[error("task reward value must be a non-negative multiple of 0.001, got {0}")]
    InvalidTaskValue(f64),
}

/// Reward in thousandths.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Reward(i64);

impl Reward {
    pub const ZERO: Reward = Reward(0);
    pub const ONE: Reward = Reward(1000);

    pub const fn from_milli(milli: i64) -> Reward {
        Reward(milli)
    }

    pub fn milli(self) -> i64 {
        self.0
    }

    /// Exact conversion from a decimal value with at most three fractional digits.
    pub fn from_f64(value: f64) -> Option<Reward> {
        let scaled = value * 1000.0;
        let rounded = scaled.round();
        if !value.is_finite() || (scaled - rounded).abs() > 1e-6 || rounded.abs() > 1e15 {
            return None;
        }
        Some(Reward(rounded as i64))
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }
}

impl Add for Reward {
    type Output = Reward;

    fn add(self, rhs: Reward) -> Reward {
        Reward(self.0 + rhs.0)
    }
}

impl fmt::Display for Reward {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_f64())
    }
}

impl Serialize for Reward {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for Reward {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        Reward::from_f64(v).ok_or_else(|| serde::de::Error::custom(format!("{v} is not a multiple of 0.001")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub format: Reward,
    pub accuracy: Reward,
    pub task: Reward,
    pub total: Reward,
}

impl RewardBreakdown {
    pub fn new(format: Reward, accuracy: Reward, task: Reward) -> Self {
        RewardBreakdown {
            format,
            accuracy,
            task,
            total: format + accuracy + task,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub use_task_reward: bool,
    pub task_reward_value: f64,
    /// Grant accuracy only when the whole output parses.
    pub gate_accuracy: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            use_task_reward: false,
            task_reward_value: 0.2,
            gate_accuracy: true,
        }
    }
}

impl RewardConfig {
    pub fn with_task_reward() -> Self {
        RewardConfig {
            use_task_reward: true,
            ..RewardConfig::default()
        }
    }

    pub fn task_value(&self) -> Result<Reward, RewardError> {
        match Reward::from_f64(self.task_reward_value) {
            Some(r) if r >= Reward::ZERO => Ok(r),
            _ => Err(RewardError::InvalidTaskValue(self.task_reward_value)),
        }
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        self.task_value().map(|_| ())
    }
}

pub const DEFAULT_TASK_REWARD: Reward = Reward::from_milli(200);

pub fn format_reward(text: &str, expected: StageFormat) -> Reward {
    if parse_rationale(text, expected).is_ok() {
        Reward::ONE
    } else {
        Reward::ZERO
    }
}

/// Gated accuracy: 1 iff the output parses and its answer equals `gold`.
pub fn accuracy_reward(text: &str, expected: StageFormat, gold: Label) -> Reward {
    match parse_rationale(text, expected) {
        Ok(r) if r.answer == gold => Reward::ONE,
        _ => Reward::ZERO,
    }
}

/// Ungated accuracy: reads the answer token regardless of the surrounding structure.
pub fn accuracy_reward_ungated(text: &str, gold: Label) -> Reward {
    if extract_answer(text) == Some(gold) {
        Reward::ONE
    } else {
        Reward::ZERO
    }
}

/// 0.2 iff the first `<type>` element names `true_task`, whatever the rest of
/// the output looks like.
pub fn task_reward(text: &str, true_task: TaskKind) -> Reward {
    task_reward_with(text, true_task, DEFAULT_TASK_REWARD)
}

pub fn task_reward_with(text: &str, true_task: TaskKind, value: Reward) -> Reward {
    if extract_task_tag(text) == Some(true_task) {
        value
    } else {
        Reward::ZERO
    }
}

pub fn total_reward(
    text: &str,
    expected: StageFormat,
    gold: Label,
    true_task: TaskKind,
    cfg: &RewardConfig,
) -> Result<RewardBreakdown, RewardError> {
    let parsed = parse_rationale(text, expected);
    let format = if parsed.is_ok() { Reward::ONE } else { Reward::ZERO };
    let accuracy = if cfg.gate_accuracy {
        match parsed {
            Ok(r) if r.answer == gold => Reward::ONE,
            _ => Reward::ZERO,
        }
    } else {
        accuracy_reward_ungated(text, gold)
    };
    let task = if cfg.use_task_reward {
        task_reward_with(text, true_task, cfg.task_value()?)
    } else {
        Reward::ZERO
    };
    Ok(RewardBreakdown::new(format, accuracy, task))
}

fn finite(name: &'static str, value: f64) -> Result<f64, RewardError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(RewardError::NonFinite { name, value })
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn margin(score_a: f64, score_b: f64, preferred: Label) -> Result<f64, RewardError> {
    let a = finite("score_a", score_a)?;
    let b = finite("score_b", score_b)?;
    Ok(match preferred {
        Label::A => a - b,
        Label::B => b - a,
    })
}

/// Bradley–Terry negative log-likelihood `−ln σ(s_pref − s_other)`.
pub fn bt_loss(score_a: f64, score_b: f64, preferred: Label) -> Result<f64, RewardError> {
    Ok(softplus(-margin(score_a, score_b, preferred)?))
}

/// Gradient of [`bt_loss`] with respect to `(score_a, score_b)`.
pub fn bt_loss_grad(score_a: f64, score_b: f64, preferred: Label) -> Result<(f64, f64), RewardError> {
    let g = -sigmoid(-margin(score_a, score_b, preferred)?);
    Ok(match preferred {
        Label::A => (g, -g),
        Label::B => (-g, g),
    })
}

/// Generative reward-model loss: negative log-probability of the gold label token.
pub fn gen_rm_loss(label_logprob: f64) -> Result<f64, RewardError> {
    let lp = finite("label_logprob", label_logprob)?;
    if lp > 0.0 {
        return Err(RewardError::PositiveLogProb(lp));
    }
    Ok(0.0 - lp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{render_rationale, Rationale};

    fn typed(task: TaskKind, answer: Label) -> String {
        render_rationale(&Rationale::templated(
            StageFormat::TypedThinkAnswer,
            task,
            Some("bits: 01.".into()),
            answer,
        ))
        .unwrap()
    }

    #[test]
    fn stage_totals() {
        let t = TaskKind::ImageUnderstanding;
        let text = typed(t, Label::A);
        let b = total_reward(
            &text,
            StageFormat::TypedThinkAnswer,
            Label::A,
            t,
            &RewardConfig::with_task_reward(),
        )
        .unwrap();
        assert_eq!(
            (b.format, b.accuracy, b.task, b.total),
            (Reward::ONE, Reward::ONE, Reward(200), Reward(2200))
        );

        let plain = render_rationale(&Rationale::templated(StageFormat::ThinkAnswer, t, None, Label::B)).unwrap();
        let b = total_reward(&plain, StageFormat::ThinkAnswer, Label::B, t, &RewardConfig::default()).unwrap();
        assert_eq!(b.total, Reward(2000));

        let b = total_reward(
            "\u{0}\u{ff}garbage",
            StageFormat::ThinkAnswer,
            Label::A,
            t,
            &RewardConfig::with_task_reward(),
        )
        .unwrap();
        assert_eq!(b, RewardBreakdown::new(Reward::ZERO, Reward::ZERO, Reward::ZERO));
    }

    #[test]
    fn gating_switch() {
        let t = TaskKind::ImageUnderstanding;
        let broken = typed(t, Label::A).replace("</think>", "");
        let gated = total_reward(
            &broken,
            StageFormat::TypedThinkAnswer,
            Label::A,
            t,
            &RewardConfig::default(),
        )
        .unwrap();
        assert_eq!(gated.accuracy, Reward::ZERO);
        let cfg = RewardConfig {
            gate_accuracy: false,
            ..RewardConfig::default()
        };
        let ungated = total_reward(&broken, StageFormat::TypedThinkAnswer, Label::A, t, &cfg).unwrap();
        assert_eq!((ungated.format, ungated.accuracy), (Reward::ZERO, Reward::ONE));
    }

    #[test]
    fn task_reward_ignores_other_structure() {
        assert_eq!(
            task_reward("<type>image understanding</type>", TaskKind::ImageUnderstanding),
            Reward(200)
        );
        assert_eq!(
            task_reward("<type>video generation</type>", TaskKind::ImageUnderstanding),
            Reward::ZERO
        );
        assert_eq!(task_reward("no tag", TaskKind::ImageUnderstanding), Reward::ZERO);
    }

    #[test]
    fn losses() {
        assert!((bt_loss(0.3, 0.3, Label::A).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(
            bt_loss(1.5, -0.2, Label::A).unwrap(),
            bt_loss(-0.2, 1.5, Label::B).unwrap()
        );
        assert!(bt_loss(f64::NAN, 0.0, Label::A).is_err());
        assert!(bt_loss(1e6, 0.0, Label::B).unwrap().is_finite());
        assert_eq!(gen_rm_loss(0.0).unwrap(), 0.0);
        assert!((gen_rm_loss(0.5f64.ln()).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(gen_rm_loss(0.1).is_err());
    }

    #[test]
    fn reward_serializes_as_decimal() {
        let b = RewardBreakdown::new(Reward::ONE, Reward::ZERO, Reward(200));
        let json = serde_json::to_string(&b).unwrap();
        assert_eq!(json, r#"{"format":1.0,"accuracy":0.0,"task":0.2,"total":1.2}"#);
        assert_eq!(serde_json::from_str::<RewardBreakdown>(&json).unwrap(), b);
    }
}
