//! Evaluation with majority voting, the replay-ratio sweep, and reports.

mod report;
mod sweep;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use report::{format_pct, render_eval, render_sweep, write_report, Report};
pub use sweep::{ratio_sweep, SweepRow, SweepTable};

use crate::corpus::{CorpusError, Label, PreferenceExample, TaskKind};
use crate::curriculum::{vote, CurriculumError};
use crate::grammar::{extract_task_tag, parse_rationale, StageFormat};
use crate::policy::{sample_from, ActionDist, Channel, PolicyError, PolicyParams};
use crate::seed;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("evaluation corpus is empty")]
    EmptyCorpus,
    #[error("voting k must be at least 1")]
    InvalidK,
    #[error("sweep needs at least one ratio")]
    NoRatios,
    #[error("sweep: {0}")]
    Sweep(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Curriculum(Box<CurriculumError>),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<CurriculumError> for HarnessError {
    fn from(e: CurriculumError) -> Self {
        HarnessError::Curriculum(Box::new(e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall_accuracy: f64,
    /// Accuracy per task present in the corpus.
    pub per_task: BTreeMap<TaskKind, f64>,
    pub per_task_counts: BTreeMap<TaskKind, usize>,
    pub n_examples: usize,
    pub n_correct: usize,
    pub voting_k: usize,
    /// Fraction of all rollouts that parse.
    pub format_rate: f64,
    /// Fraction of all rollouts whose type tag names the true task.
    pub task_tag_rate: f64,
}

/// Outcome of voting on one example.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vote {
    pub predicted: Option<Label>,
    pub n_parsed: usize,
    pub n_task_tag: usize,
}

/// Draws `k` rollouts from `rng` and takes the majority of the parseable
/// answers. Unparseable rollouts abstain; ties go to A.
pub fn vote_on(dist: &ActionDist, example: &PreferenceExample, k: usize, rng: &mut seed::Rng) -> Vote {
    let mut labels = Vec::with_capacity(k);
    let mut n_task_tag = 0;
    for _ in 0..k {
        let r = sample_from(dist, example, rng);
        if let Ok(parsed) = parse_rationale(&r.text, dist.format()) {
            labels.push(parsed.answer);
        }
        if extract_task_tag(&r.text) == Some(example.task) {
            n_task_tag += 1;
        }
    }
    Vote {
        predicted: vote(labels.iter().copied()),
        n_parsed: labels.len(),
        n_task_tag,
    }
}

/// Voting@k accuracy. Example `i` draws from the stream derived from
/// `(seed, "eval", i)`, so `k = 1` is plain single-sample evaluation.
pub fn evaluate(
    params: &PolicyParams,
    corpus: &[PreferenceExample],
    format: StageFormat,
    channel: Channel,
    k: usize,
    seed: u64,
) -> Result<EvalReport, HarnessError> {
    if corpus.is_empty() {
        return Err(HarnessError::EmptyCorpus);
    }
    if k == 0 {
        return Err(HarnessError::InvalidK);
    }
    let mut correct: BTreeMap<TaskKind, usize> = BTreeMap::new();
    let mut counts: BTreeMap<TaskKind, usize> = BTreeMap::new();
    let (mut parsed, mut tagged) = (0usize, 0usize);
    for (i, ex) in corpus.iter().enumerate() {
        let dist = ActionDist::for_example(params, ex, format, channel)?;
        let mut rng = seed::derived_rng(seed, "eval", i as u64);
        let v = vote_on(&dist, ex, k, &mut rng);
        *counts.entry(ex.task).or_default() += 1;
        let hit = v.predicted == Some(ex.label);
        *correct.entry(ex.task).or_default() += usize::from(hit);
        parsed += v.n_parsed;
        tagged += v.n_task_tag;
    }
    let n = corpus.len();
    let n_correct: usize = correct.values().sum();
    let rollouts = (n * k) as f64;
    Ok(EvalReport {
        overall_accuracy: n_correct as f64 / n as f64,
        per_task: counts
            .iter()
            .map(|(t, &c)| (*t, correct[t] as f64 / c as f64))
            .collect(),
        per_task_counts: counts,
        n_examples: n,
        n_correct,
        voting_k: k,
        format_rate: parsed as f64 / rollouts,
        task_tag_rate: tagged as f64 / rollouts,
    })
}
