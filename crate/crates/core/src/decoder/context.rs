use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::rng::SplitMix64;

/// Single-layer attention block producing the two per-step context
/// embeddings `T1` and `T2`.
///
/// Memory is the encoder's projected token sequence (mapped to embedding
/// width) followed by the embedded corpus description tokens. The query at
/// each step is the embedding of the previous word.
#[derive(Debug, Clone)]
pub struct ContextBlock {
    pub embedding_dim: usize,
    pub w_visual: ParamId,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub w_t1: ParamId,
    pub w_t2: ParamId,
}

/// Keys and values for one sample, built once and reused at every step.
#[derive(Debug, Clone, Copy)]
pub struct ContextMemory {
    pub keys_t: Var,
    pub values: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct ContextEmbedding {
    pub t1: Var,
    pub t2: Var,
}

impl ContextBlock {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        feature_dim: usize,
        embedding_dim: usize,
        rng: &mut SplitMix64,
    ) -> Result<Self> {
        let e = embedding_dim;
        let mut add = |name: &str, rows: usize, rng: &mut SplitMix64| {
            store.add(format!("{prefix}.{name}"), Tensor::xavier(rows, e, rng))
        };
        Ok(Self {
            embedding_dim,
            w_visual: add("w_visual", feature_dim, rng)?,
            wq: add("wq", e, rng)?,
            wk: add("wk", e, rng)?,
            wv: add("wv", e, rng)?,
            w_t1: add("w_t1", e, rng)?,
            w_t2: add("w_t2", e, rng)?,
        })
    }

    /// `visual_tokens`: `[n, feature_dim]`; `corpus`: optional `[m, embedding_dim]`.
    pub fn memory(&self, g: &mut Graph, p: &Bound, visual_tokens: Var, corpus: Option<Var>) -> Result<ContextMemory> {
        let visual = g.matmul(visual_tokens, p[self.w_visual])?;
        let mem = match corpus {
            Some(c) => g.concat(&[visual, c], 0)?,
            None => visual,
        };
        let keys = g.matmul(mem, p[self.wk])?;
        let keys_t = g.transpose(keys)?;
        let values = g.matmul(mem, p[self.wv])?;
        Ok(ContextMemory { keys_t, values })
    }

    pub fn step(&self, g: &mut Graph, p: &Bound, memory: &ContextMemory, word: Var) -> Result<ContextEmbedding> {
        let [_, e] = g.shape(word);
        if e != self.embedding_dim {
            return Err(Error::contract(format!(
                "context query width {e} does not match embedding dim {}",
                self.embedding_dim
            )));
        }
        let q = g.matmul(word, p[self.wq])?;
        let scores = g.matmul(q, memory.keys_t)?;
        let scores = g.scale(scores, 1.0 / (self.embedding_dim as f64).sqrt())?;
        let attn = g.softmax(scores)?;
        let ctx = g.matmul(attn, memory.values)?;
        let t1 = g.matmul(ctx, p[self.w_t1])?;
        let t2 = g.matmul(ctx, p[self.w_t2])?;
        Ok(ContextEmbedding { t1, t2 })
    }
}
