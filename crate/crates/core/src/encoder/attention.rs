use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::rng::SplitMix64;

/// Standard multi-head self-attention with an output projection.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub dim: usize,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
}

/// Per-head outputs (`[seq, d_k]` each), their attention matrices, and the
/// projected concatenation.
#[derive(Debug, Clone)]
pub struct MhaOutput {
    pub heads: Vec<Var>,
    pub attention: Vec<Var>,
    pub concat: Var,
}

pub(crate) fn check_heads(dim: usize, heads: usize) -> Result<usize> {
    if heads == 0 || dim == 0 || dim % heads != 0 {
        return Err(Error::config(format!(
            "model dim {dim} must be a positive multiple of head count {heads}"
        )));
    }
    Ok(dim / heads)
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize, heads: usize, rng: &mut SplitMix64) -> Result<Self> {
        check_heads(dim, heads)?;
        Ok(Self {
            heads,
            dim,
            wq: store.add(format!("{prefix}.wq"), Tensor::xavier(dim, dim, rng))?,
            wk: store.add(format!("{prefix}.wk"), Tensor::xavier(dim, dim, rng))?,
            wv: store.add(format!("{prefix}.wv"), Tensor::xavier(dim, dim, rng))?,
            wo: store.add(format!("{prefix}.wo"), Tensor::xavier(dim, dim, rng))?,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// Per-head `softmax(Q K^T / sqrt(d_k)) V`, without the output projection.
    pub fn heads(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<(Vec<Var>, Vec<Var>)> {
        let [_, cols] = g.shape(x);
        if cols != self.dim {
            return Err(Error::ShapeMismatch {
                op: "multi_head_attention",
                left: vec![cols],
                right: vec![self.dim],
            });
        }
        let q = g.matmul(x, p[self.wq])?;
        let k = g.matmul(x, p[self.wk])?;
        let v = g.matmul(x, p[self.wv])?;
        let dk = self.head_dim();
        let scale = 1.0 / (dk as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut attns = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice(q, 1, h * dk, dk)?;
            let kh = g.slice(k, 1, h * dk, dk)?;
            let vh = g.slice(v, 1, h * dk, dk)?;
            let a = scaled_attention(g, qh, kh, scale)?;
            outs.push(g.matmul(a, vh)?);
            attns.push(a);
        }
        Ok((outs, attns))
    }

    /// `Concat(heads) W`.
    pub fn project(&self, g: &mut Graph, p: &Bound, heads: &[Var]) -> Result<Var> {
        let cat = g.concat(heads, 1)?;
        g.matmul(cat, p[self.wo])
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<MhaOutput> {
        let (heads, attention) = self.heads(g, p, x)?;
        let concat = self.project(g, p, &heads)?;
        Ok(MhaOutput {
            heads,
            attention,
            concat,
        })
    }
}

/// Row-stochastic `softmax(q k^T * scale)`.
pub(crate) fn scaled_attention(g: &mut Graph, q: Var, k: Var, scale: f64) -> Result<Var> {
    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let scores = g.scale(scores, scale)?;
    g.softmax(scores)
}
