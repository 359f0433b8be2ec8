//! Dual head weighting.
//!
//! Two weights per attention head:
//! - the learnable weight `w_a = softmax(logits) * N`, applied to each head;
//! - the cosine weight, from the similarity of every head to the base
//!   (most important) head over the previous batch, rebalanced around its
//!   geometric mean `beta` and rectified: `w_dwa = relu(beta - w_cos)`.
//!
//! The cosine weight is computed from the previous iteration's heads, so it
//! enters the current forward pass as a constant.

use serde::{Deserialize, Serialize};

use crate::autodiff::{cosine_similarity, Graph, Var};
use crate::error::{Error, Result};

/// Per-entry floor on `|w_cos|` before the geometric mean.
pub const GEOMETRIC_FLOOR: f64 = 1e-8;

/// `softmax(w_prev) * N`.
pub fn update_head_weights(w_prev: &[f64]) -> Result<Vec<f64>> {
    if w_prev.is_empty() {
        return Err(Error::contract("update_head_weights on an empty vector"));
    }
    let n = w_prev.len() as f64;
    let max = w_prev.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = w_prev.iter().map(|w| (w - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z * n).collect())
}

/// Differentiable `softmax(logits) * N` over a `[1, N]` row.
pub fn update_head_weights_graph(g: &mut Graph, logits: Var) -> Result<Var> {
    let [_, n] = g.shape(logits);
    let s = g.softmax(logits)?;
    g.scale(s, n as f64)
}

/// Scale head `j` by `w[j]`.
pub fn apply_head_weights(w: &[f64], heads: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if w.len() != heads.len() {
        return Err(Error::contract(format!(
            "{} head weights for {} heads",
            w.len(),
            heads.len()
        )));
    }
    Ok(heads
        .iter()
        .zip(w)
        .map(|(h, &wj)| h.iter().map(|x| x * wj).collect())
        .collect())
}

/// Argmax of `w_a`, ties to the lowest index.
pub fn select_base_head(w_a: &[f64]) -> usize {
    let mut best = 0;
    for (j, &w) in w_a.iter().enumerate() {
        if w > w_a[best] {
            best = j;
        }
    }
    best
}

/// Batch-mean cosine similarity of every head to the base head.
///
/// `batch_heads[k][j]` is the flattened output of head `j` for sample `k`.
pub fn cosine_head_weights(batch_heads: &[Vec<Vec<f64>>], base_index: usize) -> Result<Vec<f64>> {
    let Some(first) = batch_heads.first() else {
        return Err(Error::contract("cosine_head_weights on an empty batch"));
    };
    let n = first.len();
    if base_index >= n {
        return Err(Error::contract(format!("base head {base_index} out of range for {n} heads")));
    }
    let mut w = vec![0.0; n];
    for (k, sample) in batch_heads.iter().enumerate() {
        if sample.len() != n {
            return Err(Error::contract(format!(
                "sample {k} has {} heads, expected {n}",
                sample.len()
            )));
        }
        let base = &sample[base_index];
        for (wj, head) in w.iter_mut().zip(sample) {
            *wj += cosine_similarity(head, base);
        }
    }
    let count = batch_heads.len() as f64;
    Ok(w.into_iter().map(|s| s / count).collect())
}

/// Geometric mean of floored `|w_cos|`.
pub fn geometric_beta(w_cos: &[f64]) -> f64 {
    let mean_log = w_cos
        .iter()
        .map(|w| w.abs().max(GEOMETRIC_FLOOR).ln())
        .sum::<f64>()
        / w_cos.len() as f64;
    // exp(ln x) can miss x by an ulp; the mean lies between the extremes.
    let (lo, hi) = w_cos
        .iter()
        .map(|w| w.abs().max(GEOMETRIC_FLOOR))
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), w| (lo.min(w), hi.max(w)));
    mean_log.exp().clamp(lo, hi)
}

/// `(beta, relu(beta - w_cos))`, falling back to uniform `1/N` when every
/// rectified weight is zero.
pub fn dual_weight(w_cos: &[f64]) -> (f64, Vec<f64>) {
    if w_cos.is_empty() {
        return (0.0, Vec::new());
    }
    let beta = geometric_beta(w_cos);
    let mut w: Vec<f64> = w_cos.iter().map(|c| (beta - c).max(0.0)).collect();
    if w.iter().all(|&x| x == 0.0) {
        let n = w.len() as f64;
        w.iter_mut().for_each(|x| *x = 1.0 / n);
    }
    (beta, w)
}

/// Differentiable `(beta, relu(beta - w_cos))` over a `[1, N]` row. The
/// uniform fallback is not part of the graph; callers check for it.
pub fn dual_weight_graph(g: &mut Graph, w_cos: Var) -> Result<(Var, Var)> {
    let a = g.abs(w_cos)?;
    let a = g.clamp_min(a, GEOMETRIC_FLOOR)?;
    let l = g.log(a)?;
    let m = g.mean(l)?;
    let beta = g.exp(m)?;
    let diff = g.sub(beta, w_cos)?;
    let w = g.relu(diff)?;
    Ok((beta, w))
}

/// How the second (cosine) weight is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    /// Only the learnable weight.
    Single,
    /// Learnable weight times the rectified cosine weight.
    #[default]
    Dual,
}

impl WeightMode {
    pub fn as_str(self) -> &'static str {
        match self {
            WeightMode::Single => "single",
            WeightMode::Dual => "dual",
        }
    }
}

/// Snapshot of both head-weight vectors for one forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualAttentionState {
    pub w_a: Vec<f64>,
    pub w_cos: Vec<f64>,
    pub beta: f64,
    pub w_dwa: Vec<f64>,
    pub base_index: usize,
}

impl DualAttentionState {
    /// Cold start: no previous heads, so `w_cos` is all ones and the uniform
    /// fallback applies.
    pub fn cold_start(w_a: Vec<f64>) -> Self {
        let n = w_a.len();
        let w_cos = vec![1.0; n];
        let (beta, w_dwa) = dual_weight(&w_cos);
        Self {
            base_index: select_base_head(&w_a),
            w_a,
            w_cos,
            beta,
            w_dwa,
        }
    }

    /// Weights from the previous iteration's per-sample head outputs.
    pub fn from_previous(w_a: Vec<f64>, previous: &[Vec<Vec<f64>>]) -> Result<Self> {
        let base_index = select_base_head(&w_a);
        let w_cos = cosine_head_weights(previous, base_index)?;
        let (beta, w_dwa) = dual_weight(&w_cos);
        Ok(Self {
            w_a,
            w_cos,
            beta,
            w_dwa,
            base_index,
        })
    }
}

/// Carries head outputs from one training iteration to the next.
#[derive(Debug, Clone, Default)]
pub struct DualWeightTracker {
    previous: Option<Vec<Vec<Vec<f64>>>>,
    latest: Option<DualAttentionState>,
}

impl DualWeightTracker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Resume from a stored state (e.g. loaded from a checkpoint).
    pub fn with_state(state: DualAttentionState) -> Self {
        Self {
            previous: None,
            latest: Some(state),
        }
    }

    /// Weights for the current iteration given the current `w_a`.
    pub fn begin_iteration(&mut self, w_a: Vec<f64>) -> Result<DualAttentionState> {
        let state = match &self.previous {
            Some(prev) => DualAttentionState::from_previous(w_a, prev)?,
            None => match &self.latest {
                Some(s) => DualAttentionState {
                    base_index: select_base_head(&w_a),
                    w_a,
                    ..s.clone()
                },
                None => DualAttentionState::cold_start(w_a),
            },
        };
        self.latest = Some(state.clone());
        Ok(state)
    }

    /// Store this iteration's heads for the next one.
    pub fn end_iteration(&mut self, batch_heads: Vec<Vec<Vec<f64>>>) {
        if !batch_heads.is_empty() {
            self.previous = Some(batch_heads);
        }
    }

    pub fn latest(&self) -> Option<&DualAttentionState> {
        self.latest.as_ref()
    }
}
