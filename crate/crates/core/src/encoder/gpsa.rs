//! Simplified gated positional self-attention.
//!
//! Each head blends content attention with a learned, input-independent
//! positional attention map:
//! `A = (1 - sigmoid(gate_h)) * softmax(Q K^T / sqrt(d_k)) + sigmoid(gate_h) * softmax(P)`.
//! A two-layer GeLU feed-forward follows; both sublayers are residual.

use super::attention::{check_heads, scaled_attention};
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::rng::SplitMix64;

#[derive(Debug, Clone)]
pub struct GpsaBlock {
    pub heads: usize,
    pub d_model: usize,
    pub num_patches: usize,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub positional_scores: ParamId,
    pub gate: ParamId,
    pub ffn_w1: ParamId,
    pub ffn_b1: ParamId,
    pub ffn_w2: ParamId,
    pub ffn_b2: ParamId,
}

impl GpsaBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        d_model: usize,
        heads: usize,
        num_patches: usize,
        ffn_dim: usize,
        rng: &mut SplitMix64,
    ) -> Result<Self> {
        check_heads(d_model, heads)?;
        let mut add = |name: &str, t: Tensor| store.add(format!("{prefix}.{name}"), t);
        Ok(Self {
            heads,
            d_model,
            num_patches,
            wq: add("wq", Tensor::xavier(d_model, d_model, rng))?,
            wk: add("wk", Tensor::xavier(d_model, d_model, rng))?,
            wv: add("wv", Tensor::xavier(d_model, d_model, rng))?,
            wo: add("wo", Tensor::xavier(d_model, d_model, rng))?,
            positional_scores: add(
                "positional_scores",
                Tensor::uniform(&[num_patches, num_patches], 0.5, rng),
            )?,
            gate: add("gate", Tensor::zeros(&[1, heads]))?,
            ffn_w1: add("ffn_w1", Tensor::xavier(d_model, ffn_dim, rng))?,
            ffn_b1: add("ffn_b1", Tensor::zeros(&[1, ffn_dim]))?,
            ffn_w2: add("ffn_w2", Tensor::xavier(ffn_dim, d_model, rng))?,
            ffn_b2: add("ffn_b2", Tensor::zeros(&[1, d_model]))?,
        })
    }

    /// Per-head blended attention matrices, each `[num_patches, num_patches]`.
    pub fn mixed_attention(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<(Vec<Var>, Var)> {
        let [rows, cols] = g.shape(x);
        if rows != self.num_patches || cols != self.d_model {
            return Err(Error::config(format!(
                "gpsa input [{rows}, {cols}] does not match positional table [{}, {}]",
                self.num_patches, self.d_model
            )));
        }
        let dk = self.d_model / self.heads;
        let q = g.matmul(x, p[self.wq])?;
        let k = g.matmul(x, p[self.wk])?;
        let v = g.matmul(x, p[self.wv])?;
        let positional = g.softmax(p[self.positional_scores])?;
        let gates = g.sigmoid(p[self.gate])?;
        let mut mixed = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice(q, 1, h * dk, dk)?;
            let kh = g.slice(k, 1, h * dk, dk)?;
            let content = scaled_attention(g, qh, kh, 1.0 / (dk as f64).sqrt())?;
            let gate = g.slice(gates, 1, h, 1)?;
            // content + gate * (positional - content)
            let delta = g.sub(positional, content)?;
            let delta = g.mul(delta, gate)?;
            mixed.push(g.add(content, delta)?);
        }
        Ok((mixed, v))
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let (mixed, v) = self.mixed_attention(g, p, x)?;
        let dk = self.d_model / self.heads;
        let mut heads = Vec::with_capacity(self.heads);
        for (h, &a) in mixed.iter().enumerate() {
            let vh = g.slice(v, 1, h * dk, dk)?;
            heads.push(g.matmul(a, vh)?);
        }
        let cat = g.concat(&heads, 1)?;
        let attended = g.matmul(cat, p[self.wo])?;
        let x = g.add(x, attended)?;
        let hidden = g.matmul(x, p[self.ffn_w1])?;
        let hidden = g.add(hidden, p[self.ffn_b1])?;
        let hidden = g.gelu(hidden)?;
        let out = g.matmul(hidden, p[self.ffn_w2])?;
        let out = g.add(out, p[self.ffn_b2])?;
        g.add(x, out)
    }
}
