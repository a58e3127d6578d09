use serde::{Deserialize, Serialize};

use super::{evaluate, HarnessError};
use crate::corpus::{MixRatio, PreferenceExample};
use crate::curriculum::{run_stage, run_stage_with, StagePlan};
use crate::grammar::StageFormat;
use crate::policy::{Channel, PolicyParams};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ratio: MixRatio,
    /// Caption-based held-out accuracy after stage 2.
    pub caption_accuracy: f64,
    /// Textual held-out accuracy after stage 2 (the forgetting probe).
    pub text_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub voting_k: usize,
    /// Both probes on the shared stage-1 checkpoint.
    pub stage1_caption_accuracy: f64,
    pub stage1_text_accuracy: f64,
    pub rows: Vec<SweepRow>,
}

fn probes(
    params: &PolicyParams,
    caption_eval: &[PreferenceExample],
    text_eval: &[PreferenceExample],
    k: usize,
    seed: u64,
) -> Result<(f64, f64), HarnessError> {
    let eval_seed = seed::derive_seed(seed, "sweep-eval", 0);
    let c = evaluate(
        params,
        caption_eval,
        StageFormat::TypedThinkAnswer,
        Channel::Caption,
        k,
        eval_seed,
    )?;
    let t = evaluate(
        params,
        text_eval,
        StageFormat::ThinkAnswer,
        Channel::TextOnly,
        k,
        eval_seed,
    )?;
    Ok((c.overall_accuracy, t.overall_accuracy))
}

/// Trains the plan's stage-1 entries once, then reruns its stage-2 entries
/// from that checkpoint once per ratio. `1:0` disables replay; other ratios
/// need a replay block on every stage-2 RLVR entry to draw the buffer from.
pub fn ratio_sweep(
    plan: &StagePlan,
    init: &PolicyParams,
    ratios: &[MixRatio],
    caption_eval: &[PreferenceExample],
    text_eval: &[PreferenceExample],
    k: usize,
    seed: u64,
) -> Result<SweepTable, HarnessError> {
    if ratios.is_empty() {
        return Err(HarnessError::NoRatios);
    }
    plan.validate()?;
    let mut stage1 = init.clone();
    for (entry, s) in plan.stages.iter().enumerate() {
        if s.stage_id == 1 {
            stage1 = run_stage(plan, entry, &stage1, seed)?.params;
        }
    }
    let (c1, t1) = probes(&stage1, caption_eval, text_eval, k, seed)?;
    let mut rows = Vec::with_capacity(ratios.len());
    for &ratio in ratios {
        let mut params = stage1.clone();
        for (entry, s) in plan.stages.iter().enumerate() {
            if s.stage_id != 2 {
                continue;
            }
            let mut spec = s.clone();
            if ratio.replay == 0 {
                spec.replay = None;
            } else if let Some(r) = spec.replay.as_mut() {
                r.ratio_new_to_replay = ratio;
            } else if spec.phase == crate::curriculum::Phase::Rlvr {
                return Err(HarnessError::Sweep(format!(
                    "stage entry {entry} has no replay block to draw {ratio} batches from"
                )));
            }
            if let Some(r) = &spec.replay {
                r.ratio_new_to_replay
                    .split(spec.optimizer.batch_prompts)
                    .map_err(|e| HarnessError::Sweep(format!("stage entry {entry}: {e}")))?;
            }
            params = run_stage_with(plan, entry, &spec, &params, seed)?.params;
        }
        let (caption_accuracy, text_accuracy) = probes(&params, caption_eval, text_eval, k, seed)?;
        rows.push(SweepRow {
            ratio,
            caption_accuracy,
            text_accuracy,
        });
    }
    Ok(SweepTable {
        voting_k: k,
        stage1_caption_accuracy: c1,
        stage1_text_accuracy: t1,
        rows,
    })
}
