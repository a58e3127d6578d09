//! Cross-modal distillation: vote a pseudo-label over sampled rationales,
//! keep the agreeing well-formed ones and pick the most confident.

use serde::{Deserialize, Serialize};

use crate::corpus::{Label, PreferenceExample, TaskKind};
use crate::grammar::{extract_answer, parse_rationale, Rationale, StageFormat};
use crate::policy::{active_heads, sample_from, ActionDist, Channel, PolicyError, PolicyParams, StructuredAction};
use crate::seed;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Confidence {
    /// Log-probability divided by the number of decisions in the output.
    #[default]
    MeanLogProb,
    SequenceLogProb,
}

/// Deterministic tie rules. Only one rule is defined: vote ties go to A,
/// confidence ties go to the lowest rollout index.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    #[default]
    ABeforeBLowestIndex,
}

fn default_n() -> usize {
    8
}

fn default_sft_steps() -> usize {
    20
}

fn default_sft_lr() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CmkdSpec {
    #[serde(default = "default_n")]
    pub n_samples: usize,
    #[serde(default)]
    pub confidence: Confidence,
    #[serde(default)]
    pub tie_break: TieBreak,
    /// Supervised steps on the distilled pairs, read through the visual channel.
    #[serde(default = "default_sft_steps")]
    pub sft_steps: usize,
    #[serde(default = "default_sft_lr")]
    pub sft_lr: f64,
}

impl Default for CmkdSpec {
    fn default() -> Self {
        CmkdSpec {
            n_samples: default_n(),
            confidence: Confidence::default(),
            tie_break: TieBreak::default(),
            sft_steps: default_sft_steps(),
            sft_lr: default_sft_lr(),
        }
    }
}

impl CmkdSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.n_samples < 1 {
            return Err("cmkd n_samples must be at least 1".into());
        }
        if !(self.sft_lr.is_finite() && self.sft_lr >= 0.0) {
            return Err("cmkd sft_lr must be finite and non-negative".into());
        }
        Ok(())
    }
}

/// One sampled output with its confidence score.
#[derive(Debug, Clone, PartialEq)]
pub struct CmkdRollout {
    pub text: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Selection {
    Selected {
        index: usize,
        pseudo_label: Label,
        rationale: Rationale,
    },
    NoConsensus,
}

/// Majority label among the readable answers; ties go to A.
pub fn vote(labels: impl IntoIterator<Item = Label>) -> Option<Label> {
    let (mut a, mut b) = (0usize, 0usize);
    for l in labels {
        match l {
            Label::A => a += 1,
            Label::B => b += 1,
        }
    }
    match (a, b) {
        (0, 0) => None,
        _ if a >= b => Some(Label::A),
        _ => Some(Label::B),
    }
}

/// The three-step selection.
///
/// 1. `ŵ` is the mode of the answers that can be read from the outputs.
/// 2. Outputs whose answer differs from `ŵ` are dropped.
/// 3. Outputs that do not parse under `format` are dropped.
///
/// The survivor with the highest confidence wins.
pub fn cmkd_select(rollouts: &[CmkdRollout], format: StageFormat) -> Selection {
    let answers: Vec<Option<Label>> = rollouts.iter().map(|r| extract_answer(&r.text)).collect();
    let Some(w) = vote(answers.iter().flatten().copied()) else {
        return Selection::NoConsensus;
    };
    let mut best: Option<(usize, f64, Rationale)> = None;
    for (i, r) in rollouts.iter().enumerate() {
        if answers[i] != Some(w) {
            continue;
        }
        let Ok(parsed) = parse_rationale(&r.text, format) else {
            continue;
        };
        let c = if r.confidence.is_nan() {
            f64::NEG_INFINITY
        } else {
            r.confidence
        };
        if best.as_ref().map_or(true, |(_, bc, _)| c > *bc) {
            best = Some((i, c, parsed));
        }
    }
    match best {
        Some((index, _, rationale)) => Selection::Selected {
            index,
            pseudo_label: w,
            rationale,
        },
        None => Selection::NoConsensus,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistilledPair {
    pub example_id: String,
    pub caption: Option<String>,
    pub teacher: Rationale,
    pub pseudo_label: Label,
}

impl DistilledPair {
    /// The student's target: the teacher's answer and task tag, rendered
    /// well formed with the faithful caption first.
    pub fn target(&self, fallback_task: TaskKind) -> StructuredAction {
        StructuredAction {
            answer: self.pseudo_label,
            task_tag: self.teacher.task_tag.unwrap_or(fallback_task),
            well_formed: true,
            caption_faithful: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DistillStats {
    pub n_examples: usize,
    pub n_pairs: usize,
    pub n_no_consensus: usize,
}

/// Samples `spec.n_samples` caption-channel rationales per example and keeps
/// the consensus pairs. Deterministic in `seed`.
pub fn cmkd_distill(
    params: &PolicyParams,
    corpus: &[PreferenceExample],
    spec: &CmkdSpec,
    format: StageFormat,
    seed: u64,
) -> Result<(Vec<DistilledPair>, DistillStats), PolicyError> {
    let decisions = active_heads(format).len() as f64;
    let mut pairs = Vec::new();
    let mut stats = DistillStats {
        n_examples: corpus.len(),
        ..DistillStats::default()
    };
    for (i, ex) in corpus.iter().enumerate() {
        let dist = ActionDist::for_example(params, ex, format, Channel::Caption)?;
        let mut rng = seed::derived_rng(seed, "cmkd", i as u64);
        let rollouts: Vec<CmkdRollout> = (0..spec.n_samples)
            .map(|_| {
                let r = sample_from(&dist, ex, &mut rng);
                let confidence = match spec.confidence {
                    Confidence::MeanLogProb => r.logprob / decisions,
                    Confidence::SequenceLogProb => r.logprob,
                };
                CmkdRollout {
                    text: r.text,
                    confidence,
                }
            })
            .collect();
        match cmkd_select(&rollouts, format) {
            Selection::Selected {
                pseudo_label,
                rationale,
                ..
            } => pairs.push(DistilledPair {
                example_id: ex.id.clone(),
                caption: rationale.caption.clone(),
                teacher: rationale,
                pseudo_label,
            }),
            Selection::NoConsensus => stats.n_no_consensus += 1,
        }
    }
    stats.n_pairs = pairs.len();
    Ok((pairs, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::render_rationale;

    fn out(answer: Label, confidence: f64, well_formed: bool) -> CmkdRollout {
        let r = Rationale::templated(StageFormat::ThinkAnswer, TaskKind::ImageUnderstanding, None, answer);
        let mut text = render_rationale(&r).unwrap();
        if !well_formed {
            text = text.replace("</think>", "");
        }
        CmkdRollout { text, confidence }
    }

    #[test]
    fn worked_example() {
        let rs = [
            out(Label::A, -1.0, true),
            out(Label::A, -0.5, true),
            out(Label::B, -0.2, true),
        ];
        match cmkd_select(&rs, StageFormat::ThinkAnswer) {
            Selection::Selected {
                index, pseudo_label, ..
            } => assert_eq!((index, pseudo_label), (1, Label::A)),
            Selection::NoConsensus => panic!("expected a selection"),
        }
    }

    #[test]
    fn ties_and_empty_sets() {
        let rs = [out(Label::B, -0.1, true), out(Label::A, -0.9, true)];
        assert!(matches!(
            cmkd_select(&rs, StageFormat::ThinkAnswer),
            Selection::Selected {
                index: 1,
                pseudo_label: Label::A,
                ..
            }
        ));
        let rs = [out(Label::A, -0.3, true), out(Label::A, -0.3, true)];
        assert!(matches!(
            cmkd_select(&rs, StageFormat::ThinkAnswer),
            Selection::Selected { index: 0, .. }
        ));
        let rs = [out(Label::A, -0.3, false), out(Label::A, -0.1, false)];
        assert_eq!(cmkd_select(&rs, StageFormat::ThinkAnswer), Selection::NoConsensus);
        // Malformed outputs still vote.
        let rs = [
            out(Label::B, -0.3, false),
            out(Label::B, -0.1, false),
            out(Label::A, -0.1, true),
        ];
        assert_eq!(cmkd_select(&rs, StageFormat::ThinkAnswer), Selection::NoConsensus);
    }
}
