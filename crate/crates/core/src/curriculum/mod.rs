//! Three-stage training: textual SFT and RLVR with the visual parameters
//! frozen, caption-based RLVR with replay and distillation, then RLVR on the
//! visual channel.

mod cmkd;
mod plan;

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use cmkd::{
    cmkd_distill, cmkd_select, vote, CmkdRollout, CmkdSpec, Confidence, DistillStats, DistilledPair, Selection,
    TieBreak,
};
pub use plan::{CorpusRef, EvalSpec, Phase, ReplaySpec, StagePlan, StageSpec, SweepSpec};

use crate::corpus::{replay_mix, CorpusError, ItemSource, MediaKind, MixRatio, PreferenceExample, ReplayBuffer};
use crate::harness::{evaluate, HarnessError};
use crate::optimizer::{grpo_step, rollout_group, sft_step, KlReference, OptimError, SftPair};
use crate::policy::{sample_action, Channel, PolicyError, PolicyParams, PolicySnapshot, StructuredAction};
use crate::rewards::total_reward;
use crate::seed;

#[derive(Debug, thiserror::Error)]
pub enum CurriculumError {
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("plan is not valid TOML: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("stage {stage_id} (entry {entry}): {source}")]
    Corpus {
        stage_id: u8,
        entry: usize,
        #[source]
        source: CorpusError,
    },
    #[error("stage {stage_id} (entry {entry}): corpus is empty")]
    EmptyCorpus { stage_id: u8, entry: usize },
    #[error("stage {stage_id} (entry {entry}), step {step}: {source}")]
    Training {
        stage_id: u8,
        entry: usize,
        step: usize,
        #[source]
        source: OptimError,
    },
    #[error("stage {stage_id} (entry {entry}): {source}")]
    Policy {
        stage_id: u8,
        entry: usize,
        #[source]
        source: PolicyError,
    },
    #[error("stage {stage_id} (entry {entry}): evaluation: {source}")]
    Eval {
        stage_id: u8,
        entry: usize,
        #[source]
        source: Box<HarnessError>,
    },
}

/// Sets the freeze mask a stage trains under: the visual rows of every head
/// in stage 1, nothing afterwards.
pub fn apply_freeze(params: &PolicyParams, stage: &StageSpec) -> PolicyParams {
    let mut p = params.clone();
    p.clear_freeze();
    if stage.freeze_visual {
        p.freeze_visual();
    }
    p
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub stage: u8,
    pub phase: Phase,
    pub mean_reward: f64,
    pub mean_format: f64,
    pub mean_accuracy: f64,
    pub mean_task: f64,
    pub kl: f64,
    pub clip_frac: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sft_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replay_items: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heldout_acc: Option<f64>,
}

impl StepLog {
    fn sft(step: usize, stage: u8, loss: f64) -> Self {
        StepLog {
            step,
            stage,
            phase: Phase::Sft,
            mean_reward: 0.0,
            mean_format: 0.0,
            mean_accuracy: 0.0,
            mean_task: 0.0,
            kl: 0.0,
            clip_frac: 0.0,
            sft_loss: Some(loss),
            replay_items: None,
            heldout_acc: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageRun {
    pub stage_id: u8,
    pub entry: usize,
    pub logs: Vec<StepLog>,
    pub distill: Option<DistillStats>,
    pub params: PolicyParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanRun {
    pub params: PolicyParams,
    pub stages: Vec<StageRun>,
}

impl PlanRun {
    /// Writes `stage{k}.ckpt` (parameters after the last entry of stage `k`)
    /// and `stage{k}.log.jsonl` for every stage that ran.
    pub fn write(&self, dir: &Path) -> Result<(), CurriculumError> {
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| CurriculumError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let mut logs: Vec<(u8, Vec<&StepLog>)> = Vec::new();
        for run in &self.stages {
            match logs.last_mut() {
                Some((id, l)) if *id == run.stage_id => l.extend(&run.logs),
                _ => logs.push((run.stage_id, run.logs.iter().collect())),
            }
            let ckpt = dir.join(format!("stage{}.ckpt", run.stage_id));
            run.params.save(&ckpt).map_err(|source| CurriculumError::Policy {
                stage_id: run.stage_id,
                entry: run.entry,
                source,
            })?;
        }
        for (id, entries) in logs {
            let path = dir.join(format!("stage{id}.log.jsonl"));
            let mut f = fs::File::create(&path).map_err(io(&path))?;
            for e in entries {
                let line = serde_json::to_string(e).expect("log entries always serialize");
                writeln!(f, "{line}").map_err(io(&path))?;
            }
        }
        Ok(())
    }
}

/// Endless sequence of corpus items, reshuffled every epoch.
struct EpochStream<'a> {
    corpus: &'a [PreferenceExample],
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl<'a> EpochStream<'a> {
    fn new(corpus: &'a [PreferenceExample], seed: u64) -> Self {
        EpochStream {
            corpus,
            seed,
            epoch: 0,
            order: Vec::new(),
            pos: 0,
        }
    }
}

impl Iterator for EpochStream<'_> {
    type Item = PreferenceExample;

    fn next(&mut self) -> Option<PreferenceExample> {
        if self.corpus.is_empty() {
            return None;
        }
        if self.pos == self.order.len() {
            use rand::seq::SliceRandom;
            self.order = (0..self.corpus.len()).collect();
            self.order
                .shuffle(&mut seed::derived_rng(self.seed, "epoch", self.epoch));
            self.epoch += 1;
            self.pos = 0;
        }
        self.pos += 1;
        Some(self.corpus[self.order[self.pos - 1]].clone())
    }
}

/// The multimodal example behind a caption-based one: media kinds restored,
/// captions dropped, bits unchanged.
fn with_visual_media(example: &PreferenceExample) -> PreferenceExample {
    let mut ex = example.clone();
    for m in &mut ex.media {
        if m.kind == MediaKind::None {
            m.kind = ex.task.media_kind();
            m.caption = None;
        }
    }
    ex
}

/// SFT target for a cold-start example: its source rationale when that
/// parses under `format`, the ideal action otherwise.
fn sft_target(example: &PreferenceExample, format: crate::grammar::StageFormat) -> StructuredAction {
    let ideal = StructuredAction::ideal(example);
    match example
        .source_rationale
        .as_deref()
        .map(|t| crate::grammar::parse_rationale(t, format))
    {
        Some(Ok(r)) => StructuredAction {
            answer: r.answer,
            task_tag: r.task_tag.unwrap_or(example.task),
            ..ideal
        },
        _ => ideal,
    }
}

/// Runs one plan entry from `params`.
pub fn run_stage(
    plan: &StagePlan,
    entry: usize,
    params: &PolicyParams,
    seed: u64,
) -> Result<StageRun, CurriculumError> {
    run_stage_with(plan, entry, &plan.stages[entry], params, seed)
}

/// Like [`run_stage`] but with an explicit spec, for callers that vary one
/// entry (the ratio sweep).
pub fn run_stage_with(
    plan: &StagePlan,
    entry: usize,
    spec: &StageSpec,
    params: &PolicyParams,
    seed: u64,
) -> Result<StageRun, CurriculumError> {
    let stage_id = spec.stage_id;
    let base = plan.base_dir.as_deref();
    let corpus_err = |source| CurriculumError::Corpus {
        stage_id,
        entry,
        source,
    };
    let train_err = |step, source| CurriculumError::Training {
        stage_id,
        entry,
        step,
        source,
    };
    let policy_err = |source| CurriculumError::Policy {
        stage_id,
        entry,
        source,
    };
    let eval_err = |source| CurriculumError::Eval {
        stage_id,
        entry,
        source: Box::new(source),
    };

    let corpus = spec.corpus.resolve(base).map_err(corpus_err)?;
    if corpus.is_empty() && spec.steps > 0 {
        return Err(CurriculumError::EmptyCorpus { stage_id, entry });
    }
    let eval = match &spec.eval {
        Some(e) => Some((e, e.corpus.resolve(base).map_err(corpus_err)?)),
        None => None,
    };
    let stage_seed = seed::derive_seed(seed, "stage", entry as u64);
    let heldout = |p: &PolicyParams| -> Result<Option<f64>, CurriculumError> {
        match &eval {
            Some((e, c)) => evaluate(
                p,
                c,
                e.stage_format,
                e.channel,
                e.k,
                seed::derive_seed(stage_seed, "eval", 0),
            )
            .map(|r| Some(r.overall_accuracy))
            .map_err(eval_err),
            None => Ok(None),
        }
    };
    let eval_due = |step: usize| match &eval {
        Some((e, _)) => step == spec.steps || (e.every > 0 && step % e.every == 0),
        None => false,
    };

    let mut params = apply_freeze(params, spec);
    let mut logs = Vec::with_capacity(spec.steps);
    let batch = spec.optimizer.batch_prompts;
    let mut stream = EpochStream::new(&corpus, seed::derive_seed(stage_seed, "stream", 0));
    let mut distill = None;

    match spec.phase {
        Phase::Sft => {
            for step in 1..=spec.steps {
                let items: Vec<PreferenceExample> = stream.by_ref().take(batch).collect();
                let pairs: Vec<SftPair<'_>> = items
                    .iter()
                    .map(|ex| SftPair {
                        example: ex,
                        target: sft_target(ex, spec.stage_format),
                        channel: spec.channel,
                        format: spec.stage_format,
                    })
                    .collect();
                let loss = crate::optimizer::sft_loss(&params, &pairs).map_err(|e| train_err(step, e))?;
                params = sft_step(&params, &pairs, spec.sft_lr).map_err(|e| train_err(step, e))?;
                let mut log = StepLog::sft(step, stage_id, loss / pairs.len().max(1) as f64);
                if eval_due(step) {
                    log.heldout_acc = heldout(&params)?;
                }
                logs.push(log);
            }
        }
        Phase::Rlvr => {
            let replay = spec.replay.as_ref();
            let mut buffer = ReplayBuffer::new(0, Default::default());
            if let Some(r) = replay {
                let source = r.buffer_source.resolve(base).map_err(corpus_err)?;
                buffer = ReplayBuffer::new(r.capacity.unwrap_or(source.len()), r.admission);
                let rcfg = crate::rewards::RewardConfig {
                    use_task_reward: r.use_task_reward,
                    ..crate::rewards::RewardConfig::default()
                };
                for (i, ex) in source.into_iter().enumerate() {
                    let s = seed::derive_seed(stage_seed, "admission", i as u64);
                    let roll = sample_action(&params, &ex, r.stage_format, r.channel, s).map_err(policy_err)?;
                    let reward = total_reward(&roll.text, r.stage_format, ex.label, ex.task, &rcfg)
                        .map_err(|e| train_err(0, e.into()))?;
                    buffer.offer(ex, Some(reward.total.as_f64()));
                }
            }
            let ratio = replay.map_or(MixRatio::pass_through(), |r| r.ratio_new_to_replay);
            let mixer = replay_mix(
                stream.by_ref(),
                &buffer,
                ratio,
                batch,
                seed::derive_seed(stage_seed, "mix", 0),
            )
            .map_err(corpus_err)?;
            let new_cfg = spec.reward_config();
            let cfg = spec.optimizer;
            let fixed = PolicySnapshot::of(&params);
            for (step, mixed) in (1..=spec.steps).zip(mixer) {
                let reference = match cfg.kl_reference {
                    KlReference::Snapshot => PolicySnapshot::of(&params),
                    KlReference::Fixed => fixed.clone(),
                };
                let mut groups = Vec::with_capacity(mixed.len());
                for (j, (src, ex)) in mixed.items.iter().enumerate() {
                    let (format, channel, rcfg) = match (src, replay) {
                        (ItemSource::Replay, Some(r)) => (
                            r.stage_format,
                            r.channel,
                            crate::rewards::RewardConfig {
                                use_task_reward: r.use_task_reward,
                                ..new_cfg
                            },
                        ),
                        _ => (spec.stage_format, spec.channel, new_cfg),
                    };
                    let mut rng = seed::derived_rng(stage_seed, "rollout", (step * batch + j) as u64);
                    let g = rollout_group(&params, ex, format, channel, &rcfg, &cfg, &mut rng)
                        .map_err(|e| train_err(step, e))?;
                    groups.push(g);
                }
                let (next, stats) = grpo_step(&params, &reference, &groups, &cfg).map_err(|e| train_err(step, e))?;
                params = next;
                let mut log = StepLog {
                    step,
                    stage: stage_id,
                    phase: Phase::Rlvr,
                    mean_reward: stats.mean_reward,
                    mean_format: stats.mean_format,
                    mean_accuracy: stats.mean_accuracy,
                    mean_task: stats.mean_task,
                    kl: stats.kl,
                    clip_frac: stats.clip_frac,
                    sft_loss: None,
                    replay_items: replay.map(|_| mixed.count(ItemSource::Replay)),
                    heldout_acc: None,
                };
                if eval_due(step) {
                    log.heldout_acc = heldout(&params)?;
                }
                logs.push(log);
            }
            if let Some(c) = &spec.cmkd {
                let (pairs, stats) = cmkd_distill(
                    &params,
                    &corpus,
                    c,
                    spec.stage_format,
                    seed::derive_seed(stage_seed, "cmkd", 0),
                )
                .map_err(policy_err)?;
                distill = Some(stats);
                let by_id: HashMap<&str, &PreferenceExample> = corpus.iter().map(|e| (e.id.as_str(), e)).collect();
                let students: Vec<(PreferenceExample, StructuredAction)> = pairs
                    .iter()
                    .map(|p| {
                        let ex = by_id[p.example_id.as_str()];
                        (with_visual_media(ex), p.target(ex.task))
                    })
                    .collect();
                if !students.is_empty() {
                    let mut cursor = 0usize;
                    for t in 1..=c.sft_steps {
                        let sft: Vec<SftPair<'_>> = (0..batch.min(students.len()))
                            .map(|k| {
                                let (ex, target) = &students[(cursor + k) % students.len()];
                                SftPair {
                                    example: ex,
                                    target: *target,
                                    channel: Channel::Visual,
                                    format: spec.stage_format,
                                }
                            })
                            .collect();
                        cursor = (cursor + sft.len()) % students.len();
                        let step = spec.steps + t;
                        let loss = crate::optimizer::sft_loss(&params, &sft).map_err(|e| train_err(step, e))?;
                        params = sft_step(&params, &sft, c.sft_lr).map_err(|e| train_err(step, e))?;
                        logs.push(StepLog::sft(step, stage_id, loss / sft.len() as f64));
                    }
                }
            }
        }
    }
    Ok(StageRun {
        stage_id,
        entry,
        logs,
        distill,
        params,
    })
}

/// Executes every entry of `plan` in order, each from the previous entry's
/// parameters. Deterministic in `seed`.
pub fn run_plan(plan: &StagePlan, init: &PolicyParams, seed: u64) -> Result<PlanRun, CurriculumError> {
    plan.validate()?;
    if init.spec() != &plan.feature_spec() {
        return Err(CurriculumError::InvalidPlan(format!(
            "initial parameters have layout {:?}, plan expects {:?}",
            init.spec(),
            plan.feature_spec()
        )));
    }
    let mut params = init.clone();
    let mut stages = Vec::with_capacity(plan.stages.len());
    for entry in 0..plan.stages.len() {
        let run = run_stage(plan, entry, &params, seed)?;
        params = run.params.clone();
        stages.push(run);
    }
    Ok(PlanRun { params, stages })
}
