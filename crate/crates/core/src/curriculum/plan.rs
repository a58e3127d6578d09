use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CmkdSpec, CurriculumError};
use crate::corpus::{load_corpus, synth_corpus, AdmissionPolicy, CorpusError, CorpusSpec, MixRatio, PreferenceExample};
use crate::grammar::StageFormat;
use crate::optimizer::GrpoConfig;
use crate::policy::{Channel, FeatureSpec};
use crate::rewards::RewardConfig;

/// Where a stage's examples come from: a JSONL file or a synthetic spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusRef {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<CorpusSpec>,
}

impl CorpusRef {
    pub fn path(path: impl Into<PathBuf>) -> Self {
        CorpusRef {
            path: Some(path.into()),
            synth: None,
        }
    }

    pub fn synth(spec: CorpusSpec) -> Self {
        CorpusRef {
            path: None,
            synth: Some(spec),
        }
    }

    fn check(&self) -> Result<(), String> {
        match (&self.path, &self.synth) {
            (Some(_), None) => Ok(()),
            (None, Some(s)) => s.validate().map_err(|e| e.to_string()),
            _ => Err("exactly one of `path` and `synth` must be set".into()),
        }
    }

    /// Loads or synthesizes the corpus. Relative paths resolve against `base`.
    pub fn resolve(&self, base: Option<&Path>) -> Result<Vec<PreferenceExample>, CorpusError> {
        match (&self.path, &self.synth) {
            (Some(p), None) => {
                let full = match base {
                    Some(b) if p.is_relative() => b.join(p),
                    _ => p.clone(),
                };
                load_corpus(full)
            }
            (None, Some(s)) => synth_corpus(s),
            _ => Err(CorpusError::InvalidSpec {
                field: "corpus",
                reason: "exactly one of `path` and `synth` must be set".into(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Sft,
    Rlvr,
}

/// Earlier-stage data mixed into RLVR batches. Replay items keep the
/// settings they were trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplaySpec {
    pub buffer_source: CorpusRef,
    pub ratio_new_to_replay: MixRatio,
    /// Defaults to the size of `buffer_source`.
    #[serde(default)]
    pub capacity: Option<usize>,
    #[serde(default)]
    pub admission: AdmissionPolicy,
    #[serde(default = "text_only")]
    pub channel: Channel,
    #[serde(default = "think_answer")]
    pub stage_format: StageFormat,
    #[serde(default)]
    pub use_task_reward: bool,
}

fn text_only() -> Channel {
    Channel::TextOnly
}

fn think_answer() -> StageFormat {
    StageFormat::ThinkAnswer
}

/// Held-out evaluation attached to a stage entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    pub corpus: CorpusRef,
    pub channel: Channel,
    pub stage_format: StageFormat,
    #[serde(default = "one")]
    pub k: usize,
    /// Evaluate every this many steps; 0 evaluates only after the last step.
    #[serde(default)]
    pub every: usize,
}

fn one() -> usize {
    1
}

fn default_sft_lr() -> f64 {
    0.01
}

fn default_task_value() -> f64 {
    0.2
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub stage_id: u8,
    pub phase: Phase,
    pub corpus: CorpusRef,
    pub channel: Channel,
    pub stage_format: StageFormat,
    #[serde(default)]
    pub use_task_reward: bool,
    #[serde(default)]
    pub freeze_visual: bool,
    #[serde(default)]
    pub replay: Option<ReplaySpec>,
    #[serde(default)]
    pub cmkd: Option<CmkdSpec>,
    pub steps: usize,
    #[serde(default)]
    pub optimizer: GrpoConfig,
    #[serde(default = "default_sft_lr")]
    pub sft_lr: f64,
    #[serde(default = "default_task_value")]
    pub task_reward_value: f64,
    #[serde(default = "yes")]
    pub gate_accuracy: bool,
    #[serde(default)]
    pub eval: Option<EvalSpec>,
}

impl StageSpec {
    pub fn reward_config(&self) -> RewardConfig {
        RewardConfig {
            use_task_reward: self.use_task_reward,
            task_reward_value: self.task_reward_value,
            gate_accuracy: self.gate_accuracy,
        }
    }
}

/// Evaluation sets for the replay-ratio sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub caption_eval: CorpusRef,
    pub text_eval: CorpusRef,
    #[serde(default = "one")]
    pub k: usize,
    #[serde(default)]
    pub ratios: Option<Vec<MixRatio>>,
}

fn default_buckets() -> usize {
    FeatureSpec::DEFAULT_PROMPT_BUCKETS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StagePlan {
    pub bit_dim: usize,
    #[serde(default = "default_buckets")]
    pub prompt_buckets: usize,
    #[serde(rename = "stage")]
    pub stages: Vec<StageSpec>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    /// Directory relative corpus paths resolve against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl StagePlan {
    pub fn feature_spec(&self) -> FeatureSpec {
        FeatureSpec {
            bit_dim: self.bit_dim,
            prompt_buckets: self.prompt_buckets,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, CurriculumError> {
        let plan: StagePlan = toml::from_str(text)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("plans always serialize")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CurriculumError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| CurriculumError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut plan = Self::from_toml(&text)?;
        plan.base_dir = path.parent().map(Path::to_path_buf);
        Ok(plan)
    }

    /// Checks every structural invariant before any training happens.
    pub fn validate(&self) -> Result<(), CurriculumError> {
        let fail = |i: Option<usize>, reason: String| {
            Err(CurriculumError::InvalidPlan(match i {
                Some(i) => format!("stage entry {i}: {reason}"),
                None => reason,
            }))
        };
        if self.bit_dim == 0 {
            return fail(None, "bit_dim must be at least 1".into());
        }
        if self.stages.is_empty() {
            return fail(None, "plan has no stages".into());
        }
        let mut last = 0u8;
        for (i, s) in self.stages.iter().enumerate() {
            let at = Some(i);
            if !(1..=3).contains(&s.stage_id) {
                return fail(at, format!("stage_id {} is not 1, 2 or 3", s.stage_id));
            }
            if s.stage_id < last {
                return fail(at, format!("stage {} listed after stage {last}", s.stage_id));
            }
            last = s.stage_id;
            if s.stage_id == 1 {
                if !s.freeze_visual {
                    return fail(at, "stage 1 must freeze the visual parameters".into());
                }
                if s.use_task_reward {
                    return fail(at, "stage 1 does not use the task reward".into());
                }
            } else {
                if s.freeze_visual {
                    return fail(at, format!("stage {} trains the visual parameters", s.stage_id));
                }
                if !s.use_task_reward {
                    return fail(at, format!("stage {} must use the task reward", s.stage_id));
                }
            }
            if s.cmkd.is_some() && s.stage_id != 2 {
                return fail(at, "distillation only runs in stage 2".into());
            }
            if s.phase == Phase::Sft && (s.replay.is_some() || s.cmkd.is_some()) {
                return fail(at, "replay and distillation need an rlvr phase".into());
            }
            if let Err(e) = s.corpus.check() {
                return fail(at, format!("corpus: {e}"));
            }
            if let Err(e) = s.optimizer.validate() {
                return fail(at, e.to_string());
            }
            if let Err(e) = s.reward_config().validate() {
                return fail(at, e.to_string());
            }
            if !(s.sft_lr.is_finite() && s.sft_lr >= 0.0) {
                return fail(at, "sft_lr must be finite and non-negative".into());
            }
            if let Some(r) = &s.replay {
                if let Err(e) = r.buffer_source.check() {
                    return fail(at, format!("replay buffer_source: {e}"));
                }
                if let Err(e) = r.ratio_new_to_replay.split(s.optimizer.batch_prompts) {
                    return fail(at, e.to_string());
                }
            }
            if let Some(c) = &s.cmkd {
                if let Err(e) = c.validate() {
                    return fail(at, e);
                }
            }
            if let Some(e) = &s.eval {
                if e.k == 0 {
                    return fail(at, "eval k must be at least 1".into());
                }
                if let Err(err) = e.corpus.check() {
                    return fail(at, format!("eval corpus: {err}"));
                }
            }
        }
        if let Some(sw) = &self.sweep {
            if sw.k == 0 {
                return fail(None, "sweep k must be at least 1".into());
            }
            for c in [&sw.caption_eval, &sw.text_eval] {
                if let Err(e) = c.check() {
                    return fail(None, format!("sweep corpus: {e}"));
                }
            }
        }
        Ok(())
    }
}
