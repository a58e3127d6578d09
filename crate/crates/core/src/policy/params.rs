use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FeatureSpec, PolicyError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Logits over {A, B}.
    Answer,
    /// Logits over the four tasks.
    Task,
    /// Logits over {WellFormed, Malformed}.
    Format,
    /// Logits over {EmitGoldCaption, EmitCorruptCaption}.
    Caption,
}

impl HeadKind {
    pub const ALL: [HeadKind; 4] = [HeadKind::Answer, HeadKind::Task, HeadKind::Format, HeadKind::Caption];

    pub fn arity(self) -> usize {
        match self {
            HeadKind::Task => 4,
            _ => 2,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// A `D × K` weight matrix, row-major (`w[i * K + k]`), plus its freeze mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub weights: Vec<f64>,
    /// `true` = not updated.
    pub frozen: Vec<bool>,
}

impl Head {
    fn zeros(rows: usize, arity: usize) -> Head {
        Head {
            weights: vec![0.0; rows * arity],
            frozen: vec![false; rows * arity],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    spec: FeatureSpec,
    heads: [Head; 4],
}

impl PolicyParams {
    /// All-zero parameters: every head starts uniform.
    pub fn zeros(spec: FeatureSpec) -> Self {
        let d = spec.dim();
        PolicyParams {
            spec,
            heads: HeadKind::ALL.map(|h| Head::zeros(d, h.arity())),
        }
    }

    pub fn spec(&self) -> &FeatureSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn head(&self, kind: HeadKind) -> &Head {
        &self.heads[kind.index()]
    }

    pub fn head_mut(&mut self, kind: HeadKind) -> &mut Head {
        &mut self.heads[kind.index()]
    }

    pub fn weight(&self, kind: HeadKind, row: usize, col: usize) -> f64 {
        self.heads[kind.index()].weights[row * kind.arity() + col]
    }

    /// Sets a weight regardless of the freeze mask.
    pub fn set_weight(&mut self, kind: HeadKind, row: usize, col: usize, value: f64) {
        self.heads[kind.index()].weights[row * kind.arity() + col] = value;
    }

    pub fn is_frozen(&self, kind: HeadKind, row: usize, col: usize) -> bool {
        self.heads[kind.index()].frozen[row * kind.arity() + col]
    }

    pub fn clear_freeze(&mut self) {
        for h in &mut self.heads {
            h.frozen.iter_mut().for_each(|f| *f = false);
        }
    }

    /// Freezes every head's rows that read the media block.
    pub fn freeze_visual(&mut self) {
        let rows = self.spec.visual_range();
        for kind in HeadKind::ALL {
            let k = kind.arity();
            let head = &mut self.heads[kind.index()];
            for r in rows.clone() {
                head.frozen[r * k..(r + 1) * k].iter_mut().for_each(|f| *f = true);
            }
        }
    }

    /// Weights of the media-block rows of every head, in head order.
    pub fn visual_weights(&self) -> Vec<f64> {
        let rows = self.spec.visual_range();
        HeadKind::ALL
            .iter()
            .flat_map(|&kind| {
                let k = kind.arity();
                self.heads[kind.index()].weights[rows.start * k..rows.end * k].to_vec()
            })
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.heads.iter().all(|h| h.weights.iter().all(|w| w.is_finite()))
    }

    /// `θ += step · g` on unfrozen entries. Frozen entries are left untouched
    /// bit for bit, whatever `g` holds there.
    pub fn apply(&mut self, grad: &PolicyGrad, step: f64) {
        for (head, g) in self.heads.iter_mut().zip(&grad.heads) {
            for ((w, &f), &gi) in head.weights.iter_mut().zip(&head.frozen).zip(g) {
                if !f {
                    *w += step * gi;
                }
            }
        }
    }

    /// Zeroes `grad` at frozen entries.
    pub fn mask(&self, grad: &mut PolicyGrad) {
        for (head, g) in self.heads.iter().zip(&mut grad.heads) {
            for (gi, &f) in g.iter_mut().zip(&head.frozen) {
                if f {
                    *gi = 0.0;
                }
            }
        }
    }

    pub fn zero_grad(&self) -> PolicyGrad {
        PolicyGrad::zeros(self.dim())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            feature_dim: self.dim(),
            bit_dim: self.spec.bit_dim,
            prompt_buckets: self.spec.prompt_buckets,
            answer: self.heads[0].clone(),
            task: self.heads[1].clone(),
            format_head: self.heads[2].clone(),
            caption: self.heads[3].clone(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self, PolicyError> {
        let bad = |reason: String| PolicyError::Checkpoint(reason);
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(bad(format!("unknown checkpoint format {:?}", ckpt.format)));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported checkpoint version {}", ckpt.version)));
        }
        let spec = FeatureSpec {
            bit_dim: ckpt.bit_dim,
            prompt_buckets: ckpt.prompt_buckets,
        };
        if spec.dim() != ckpt.feature_dim {
            return Err(bad(format!(
                "feature_dim {} does not match layout dimension {}",
                ckpt.feature_dim,
                spec.dim()
            )));
        }
        let heads = [ckpt.answer, ckpt.task, ckpt.format_head, ckpt.caption];
        for (kind, h) in HeadKind::ALL.iter().zip(&heads) {
            let n = spec.dim() * kind.arity();
            if h.weights.len() != n || h.frozen.len() != n {
                return Err(bad(format!("{kind:?} head must hold {n} entries")));
            }
            if h.weights.iter().any(|w| !w.is_finite()) {
                return Err(bad(format!("{kind:?} head has non-finite weights")));
            }
        }
        Ok(PolicyParams { spec, heads })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_checkpoint()).expect("checkpoints always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, PolicyError> {
        let ckpt: Checkpoint = serde_json::from_str(text).map_err(|e| PolicyError::Checkpoint(e.to_string()))?;
        Self::from_checkpoint(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PolicyError> {
        let path = path.as_ref();
        let mut text = self.to_json();
        text.push('\n');
        fs::write(path, text).map_err(|source| PolicyError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PolicyError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| PolicyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}

pub const CHECKPOINT_FORMAT: &str = "msrl-policy";
pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk parameter layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub feature_dim: usize,
    pub bit_dim: usize,
    pub prompt_buckets: usize,
    pub answer: Head,
    pub task: Head,
    pub format_head: Head,
    pub caption: Head,
}

/// Immutable copy of the parameters at some point in training.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySnapshot(PolicyParams);

impl PolicySnapshot {
    pub fn of(params: &PolicyParams) -> Self {
        PolicySnapshot(params.clone())
    }

    pub fn params(&self) -> &PolicyParams {
        &self.0
    }
}

/// Gradient with the same shape as [`PolicyParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrad {
    pub heads: [Vec<f64>; 4],
}

impl PolicyGrad {
    pub fn zeros(dim: usize) -> Self {
        PolicyGrad {
            heads: HeadKind::ALL.map(|h| vec![0.0; dim * h.arity()]),
        }
    }

    pub fn get(&self, kind: HeadKind, row: usize, col: usize) -> f64 {
        self.heads[kind.index()][row * kind.arity() + col]
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &PolicyGrad, scale: f64) {
        for (a, b) in self.heads.iter_mut().zip(&other.heads) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    /// `g[i, k] += scale · x[i] · v[k]` for one head.
    pub fn add_outer(&mut self, kind: HeadKind, x: &[f64], v: &[f64], scale: f64) {
        let k = kind.arity();
        let g = &mut self.heads[kind.index()];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (c, &vc) in v.iter().enumerate() {
                g[i * k + c] += scale * xi * vc;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.heads.iter().all(|h| h.iter().all(|x| x.is_finite()))
    }

    pub fn is_zero(&self) -> bool {
        self.heads.iter().all(|h| h.iter().all(|&x| x == 0.0))
    }
}
