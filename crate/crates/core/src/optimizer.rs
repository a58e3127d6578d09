//! GRPO over the structured policy, plus the supervised step used for the
//! cold start and for distillation.

use serde::{Deserialize, Serialize};

use crate::corpus::{PreferenceExample, TaskKind};
use crate::grammar::StageFormat;
use crate::policy::{
    sample_from, ActionDist, Channel, FeatureVector, PolicyError, PolicyParams, PolicySnapshot, StructuredAction,
};
use crate::rewards::{total_reward, RewardBreakdown, RewardConfig, RewardError};
use crate::seed;

#[derive(Debug, thiserror::Error)]
pub enum OptimError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error("non-finite gradient in group `{group_id}`")]
    NonFiniteGradient { group_id: String },
    #[error("invalid optimizer config: field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroStdPolicy {
    /// Keep the group with all advantages 0; it still contributes KL.
    #[default]
    ZeroAdvantages,
    /// Drop the group from the step entirely.
    SkipGroup,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Surrogate {
    /// `min(ρ·a, clip(ρ, 1−ε, 1+ε)·a)`.
    #[default]
    Clipped,
    /// `ρ·a` without clipping.
    Reinforce,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlReference {
    /// Penalize divergence from the policy as it was before the current step.
    #[default]
    Snapshot,
    /// Penalize divergence from the policy at the start of the stage.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub kl_beta: f64,
    pub clip_eps: f64,
    pub learning_rate: f64,
    pub batch_prompts: usize,
    pub zero_std_policy: ZeroStdPolicy,
    pub surrogate: Surrogate,
    pub kl_reference: KlReference,
    /// Gradient steps taken on each rollout batch.
    pub epochs_per_batch: usize,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            group_size: 8,
            kl_beta: 0.01,
            clip_eps: 0.2,
            learning_rate: 1e-2,
            batch_prompts: 128,
            zero_std_policy: ZeroStdPolicy::ZeroAdvantages,
            surrogate: Surrogate::Clipped,
            kl_reference: KlReference::Snapshot,
            epochs_per_batch: 1,
        }
    }
}

impl GrpoConfig {
    /// Settings used for billion-parameter backbones (learning rate 1e-6).
    pub fn large_model() -> Self {
        GrpoConfig {
            learning_rate: 1e-6,
            ..GrpoConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        let bad = |field, reason: &str| {
            Err(OptimError::InvalidConfig {
                field,
                reason: reason.to_string(),
            })
        };
        if self.group_size < 2 {
            return bad("group_size", "must be at least 2");
        }
        if self.batch_prompts < 1 {
            return bad("batch_prompts", "must be at least 1");
        }
        if !(self.kl_beta.is_finite() && self.kl_beta >= 0.0) {
            return bad("kl_beta", "must be finite and non-negative");
        }
        if !(self.clip_eps.is_finite() && self.clip_eps > 0.0) {
            return bad("clip_eps", "must be finite and positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate", "must be finite and positive");
        }
        if self.epochs_per_batch < 1 {
            return bad("epochs_per_batch", "must be at least 1");
        }
        Ok(())
    }
}

fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// True when the rewards carry no usable spread (population std is zero up
/// to rounding of the mean).
pub fn is_degenerate(rewards: &[f64]) -> bool {
    let (mean, std) = moments(rewards);
    std <= 1e-12 * mean.abs().max(1.0)
}

/// Group-relative advantages `(r − mean) / std` with the population std.
/// Degenerate groups get all-zero advantages under either policy; the
/// policy only decides whether the optimizer keeps the group.
pub fn compute_advantages(rewards: &[f64], _policy: ZeroStdPolicy) -> Vec<f64> {
    if rewards.is_empty() || is_degenerate(rewards) {
        return vec![0.0; rewards.len()];
    }
    let (mean, std) = moments(rewards);
    rewards.iter().map(|r| (r - mean) / std).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupRollout {
    pub action: StructuredAction,
    pub text: String,
    pub logprob_old: f64,
    pub reward: RewardBreakdown,
    pub advantage: f64,
}

/// `G` rollouts for one example, with everything needed to re-evaluate them
/// under updated parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub example_id: String,
    pub task: TaskKind,
    pub format: StageFormat,
    pub features: FeatureVector,
    pub rollouts: Vec<GroupRollout>,
    /// Set when the rewards were degenerate and the config skips such groups.
    pub skipped: bool,
}

impl RolloutGroup {
    /// Builds a group from already-scored rollouts, filling in advantages.
    pub fn from_scored(
        example_id: String,
        task: TaskKind,
        format: StageFormat,
        features: FeatureVector,
        scored: Vec<(StructuredAction, String, f64, RewardBreakdown)>,
        policy: ZeroStdPolicy,
    ) -> Self {
        let rewards: Vec<f64> = scored.iter().map(|s| s.3.total.as_f64()).collect();
        let advantages = compute_advantages(&rewards, policy);
        let skipped = policy == ZeroStdPolicy::SkipGroup && is_degenerate(&rewards);
        RolloutGroup {
            example_id,
            task,
            format,
            features,
            rollouts: scored
                .into_iter()
                .zip(advantages)
                .map(|((action, text, logprob_old, reward), advantage)| GroupRollout {
                    action,
                    text,
                    logprob_old,
                    reward,
                    advantage,
                })
                .collect(),
            skipped,
        }
    }
}

/// Samples and scores `cfg.group_size` rollouts for `example` under `params`.
#[allow(clippy::too_many_arguments)]
pub fn rollout_group(
    params: &PolicyParams,
    example: &PreferenceExample,
    format: StageFormat,
    channel: Channel,
    reward_cfg: &RewardConfig,
    cfg: &GrpoConfig,
    rng: &mut seed::Rng,
) -> Result<RolloutGroup, OptimError> {
    let dist = ActionDist::for_example(params, example, format, channel)?;
    let mut scored = Vec::with_capacity(cfg.group_size);
    for _ in 0..cfg.group_size {
        let r = sample_from(&dist, example, rng);
        let reward = total_reward(&r.text, format, example.label, example.task, reward_cfg)?;
        scored.push((r.action, r.text, r.logprob, reward));
    }
    Ok(RolloutGroup::from_scored(
        example.id.clone(),
        example.task,
        format,
        dist.features().clone(),
        scored,
        cfg.zero_std_policy,
    ))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub mean_reward: f64,
    pub mean_format: f64,
    pub mean_accuracy: f64,
    pub mean_task: f64,
    pub mean_abs_advantage: f64,
    /// Exact KL to the reference after the update, averaged over groups.
    pub kl: f64,
    /// Fraction of rollouts whose clipped branch was active.
    pub clip_frac: f64,
    pub n_groups: usize,
    pub n_skipped: usize,
}

/// Surrogate gradient weight `∂J_i/∂logπ` and whether clipping was active.
fn surrogate_weight(ratio: f64, adv: f64, cfg: &GrpoConfig) -> (f64, bool) {
    match cfg.surrogate {
        Surrogate::Reinforce => (ratio * adv, false),
        Surrogate::Clipped => {
            let clipped = (adv > 0.0 && ratio > 1.0 + cfg.clip_eps) || (adv < 0.0 && ratio < 1.0 - cfg.clip_eps);
            if clipped {
                (0.0, true)
            } else {
                (ratio * adv, false)
            }
        }
    }
}

/// One GRPO update (or `epochs_per_batch` of them) on `groups`.
///
/// Ascends `mean_i surrogate_i − β · mean_g KL(π_θ ‖ π_ref)` where `reference`
/// is the KL anchor; `logprob_old` of each rollout must come from the policy
/// that generated it.
pub fn grpo_step(
    params: &PolicyParams,
    reference: &PolicySnapshot,
    groups: &[RolloutGroup],
    cfg: &GrpoConfig,
) -> Result<(PolicyParams, StepStats), OptimError> {
    cfg.validate()?;
    let mut new = params.clone();
    let active: Vec<&RolloutGroup> = groups.iter().filter(|g| !g.skipped).collect();
    let n_rollouts: usize = active.iter().map(|g| g.rollouts.len()).sum();
    let mut clipped = 0usize;

    let refs: Vec<ActionDist> = active
        .iter()
        .map(|g| ActionDist::new(reference.params(), g.features.clone(), g.format, g.task))
        .collect();

    for epoch in 0..cfg.epochs_per_batch {
        let mut grad = new.zero_grad();
        for (g, q) in active.iter().zip(&refs) {
            let p = ActionDist::new(&new, g.features.clone(), g.format, g.task);
            let mut gg = new.zero_grad();
            for r in &g.rollouts {
                let ratio = (p.logprob(&r.action) - r.logprob_old).exp();
                let (w, was_clipped) = surrogate_weight(ratio, r.advantage, cfg);
                if epoch == 0 && was_clipped {
                    clipped += 1;
                }
                if w != 0.0 {
                    p.accumulate_grad_logprob(&r.action, w / n_rollouts as f64, &mut gg);
                }
            }
            if cfg.kl_beta > 0.0 {
                p.accumulate_grad_kl(q, -cfg.kl_beta / active.len() as f64, &mut gg);
            }
            if !gg.is_finite() {
                return Err(OptimError::NonFiniteGradient {
                    group_id: g.example_id.clone(),
                });
            }
            grad.add_scaled(&gg, 1.0);
        }
        new.apply(&grad, cfg.learning_rate);
    }

    let mut stats = StepStats {
        n_groups: groups.len(),
        n_skipped: groups.len() - active.len(),
        ..StepStats::default()
    };
    let all = groups.iter().flat_map(|g| &g.rollouts);
    let n_all = groups.iter().map(|g| g.rollouts.len()).sum::<usize>().max(1) as f64;
    for r in all {
        stats.mean_reward += r.reward.total.as_f64() / n_all;
        stats.mean_format += r.reward.format.as_f64() / n_all;
        stats.mean_accuracy += r.reward.accuracy.as_f64() / n_all;
        stats.mean_task += r.reward.task.as_f64() / n_all;
        stats.mean_abs_advantage += r.advantage.abs() / n_all;
    }
    if !active.is_empty() {
        stats.clip_frac = clipped as f64 / n_rollouts.max(1) as f64;
        stats.kl = active
            .iter()
            .zip(&refs)
            .map(|(g, q)| ActionDist::new(&new, g.features.clone(), g.format, g.task).kl(q))
            .sum::<f64>()
            / active.len() as f64;
    }
    Ok((new, stats))
}

/// Supervised target: the action to imitate for one example.
#[derive(Debug, Clone, Copy)]
pub struct SftPair<'a> {
    pub example: &'a PreferenceExample,
    pub target: StructuredAction,
    pub channel: Channel,
    pub format: StageFormat,
}

/// `−Σ log π(target)` over the batch.
pub fn sft_loss(params: &PolicyParams, pairs: &[SftPair<'_>]) -> Result<f64, OptimError> {
    let mut loss = 0.0;
    for p in pairs {
        let d = ActionDist::for_example(params, p.example, p.format, p.channel)?;
        loss -= d.logprob(&p.target);
    }
    Ok(loss)
}

/// One gradient step on [`sft_loss`]: `θ += lr · Σ ∇ log π(target)`.
pub fn sft_step(params: &PolicyParams, pairs: &[SftPair<'_>], lr: f64) -> Result<PolicyParams, OptimError> {
    if !(lr.is_finite() && lr >= 0.0) {
        return Err(OptimError::InvalidConfig {
            field: "learning_rate",
            reason: format!("{lr} is not a finite non-negative rate"),
        });
    }
    let mut grad = params.zero_grad();
    for p in pairs {
        let d = ActionDist::for_example(params, p.example, p.format, p.channel)?;
        let mut g = params.zero_grad();
        d.accumulate_grad_logprob(&p.target, 1.0, &mut g);
        if !g.is_finite() {
            return Err(OptimError::NonFiniteGradient {
                group_id: p.example.id.clone(),
            });
        }
        grad.add_scaled(&g, 1.0);
    }
    let mut new = params.clone();
    if lr > 0.0 {
        new.apply(&grad, lr);
    }
    Ok(new)
}
