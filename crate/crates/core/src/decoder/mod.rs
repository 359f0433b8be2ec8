//! Parallel LSTM decoder: a feature-encoding LSTM followed by two stacked
//! decoding LSTMs, each with its own vocabulary head.

pub mod context;
pub mod lstm;
pub mod search;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::rng::SplitMix64;

pub use context::{ContextBlock, ContextEmbedding, ContextMemory};
pub use lstm::{LstmCell, LstmState};
pub use search::{beam_search, greedy_decode, Hypothesis, StepModel};

pub const BOS: usize = 0;
pub const EOS: usize = 1;
pub const PAD: usize = 2;
pub const UNK: usize = 3;
pub const NUM_SPECIAL: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderDims {
    pub vocab_size: usize,
    pub embedding_dim: usize,
    pub hidden: usize,
    pub feature_dim: usize,
    pub factor_dim: usize,
}

#[derive(Debug, Clone)]
pub struct ParallelDecoder {
    pub dims: DecoderDims,
    /// Word embedding table `[vocab, embedding]`, shared with the label module.
    pub embedding: ParamId,
    pub context: ContextBlock,
    /// Input `[T1, weighted_attention, class_feature, factors]`.
    pub encoder_lstm: LstmCell,
    /// Input `[T1, h1, embed(x)]`, recurrent in h2.
    pub lstm2: LstmCell,
    /// Input `[T2, h2, embed(x)]`, no h3 recurrence.
    pub lstm3: LstmCell,
    pub fc1: ParamId,
    pub fc1_b: ParamId,
    pub fc2: ParamId,
    pub fc2_b: ParamId,
}

/// Per-sample quantities computed once before unrolling.
#[derive(Debug, Clone, Copy)]
pub struct Prepared {
    pub memory: ContextMemory,
    /// `[weighted_attention, class_feature, factors]` times the matching rows
    /// of the encoder LSTM input weight.
    static_proj: Var,
    /// Rows of the encoder LSTM input weight that multiply `T1`.
    w_t1: Var,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DecoderState {
    pub enc: Option<LstmState>,
    pub dec: Option<LstmState>,
}

#[derive(Debug, Clone, Copy)]
pub struct StepOutput {
    pub h1: Var,
    pub h2: Var,
    pub h3: Var,
    pub p1: Var,
    pub p2: Var,
}

#[derive(Debug, Clone)]
pub struct DecoderTrace {
    pub h1: Vec<Var>,
    pub h2: Vec<Var>,
    pub h3: Vec<Var>,
    /// `[steps, vocab]`
    pub p1: Var,
    /// `[steps, vocab]`
    pub p2: Var,
}

impl ParallelDecoder {
    pub fn new(store: &mut ParamStore, dims: DecoderDims, rng: &mut SplitMix64) -> Result<Self> {
        let DecoderDims {
            vocab_size: v,
            embedding_dim: e,
            hidden: h,
            feature_dim: f,
            factor_dim,
        } = dims;
        if v == 0 || e == 0 || h == 0 || f == 0 {
            return Err(Error::config(format!("decoder dims must be positive: {dims:?}")));
        }
        let embedding = store.add("decoder.embedding", Tensor::uniform(&[v, e], 0.1, rng))?;
        let context = ContextBlock::new(store, "decoder.context", f, e, rng)?;
        let encoder_lstm = LstmCell::new(store, "decoder.lstm1", e + 2 * f + factor_dim, h, true, rng)?;
        let lstm2 = LstmCell::new(store, "decoder.lstm2", 2 * e + h, h, true, rng)?;
        let lstm3 = LstmCell::new(store, "decoder.lstm3", 2 * e + h, h, false, rng)?;
        let fc1 = store.add("decoder.fc1", Tensor::xavier(h, v, rng))?;
        let fc1_b = store.add("decoder.fc1_b", Tensor::zeros(&[1, v]))?;
        let fc2 = store.add("decoder.fc2", Tensor::xavier(h, v, rng))?;
        let fc2_b = store.add("decoder.fc2_b", Tensor::zeros(&[1, v]))?;
        Ok(Self {
            dims,
            embedding,
            context,
            encoder_lstm,
            lstm2,
            lstm3,
            fc1,
            fc1_b,
            fc2,
            fc2_b,
        })
    }

    /// `visual_tokens`: `[n, feature_dim]`; `weighted_attention`, `class_feature`:
    /// `[1, feature_dim]`; `factors`: `[1, factor_dim]` (ignored when zero-width);
    /// `corpus`: token ids of the description text, if any.
    pub fn prepare(
        &self,
        g: &mut Graph,
        p: &Bound,
        visual_tokens: Var,
        weighted_attention: Var,
        class_feature: Var,
        factors: Option<Var>,
        corpus: &[usize],
    ) -> Result<Prepared> {
        let corpus = if corpus.is_empty() {
            None
        } else {
            self.check_tokens(corpus)?;
            Some(g.gather(p[self.embedding], corpus)?)
        };
        let memory = self.context.memory(g, p, visual_tokens, corpus)?;
        let mut parts = vec![weighted_attention, class_feature];
        if self.dims.factor_dim > 0 {
            let f = factors.ok_or_else(|| Error::contract("decoder expects a factor vector"))?;
            let [r, c] = g.shape(f);
            if r != 1 || c != self.dims.factor_dim {
                return Err(Error::contract(format!(
                    "factor vector [{r}, {c}] does not match factor dim {}",
                    self.dims.factor_dim
                )));
            }
            parts.push(f);
        }
        let x = g.concat(&parts, 1)?;
        let e = self.dims.embedding_dim;
        let w = p[self.encoder_lstm.w];
        let w_t1 = g.slice(w, 0, 0, e)?;
        let w_static = g.slice(w, 0, e, self.encoder_lstm.input_size - e)?;
        let static_proj = g.matmul(x, w_static)?;
        Ok(Prepared {
            memory,
            static_proj,
            w_t1,
        })
    }

    fn check_tokens(&self, ids: &[usize]) -> Result<()> {
        match ids.iter().find(|&&t| t >= self.dims.vocab_size) {
            Some(t) => Err(Error::contract(format!(
                "token {t} outside vocabulary of size {}",
                self.dims.vocab_size
            ))),
            None => Ok(()),
        }
    }

    /// Encoder LSTM over `[T1, static]` from the previous carried state.
    pub fn encoder_lstm(&self, g: &mut Graph, p: &Bound, prep: &Prepared, t1: Var, prev: Option<LstmState>) -> Result<LstmState> {
        let xw = g.matmul(t1, prep.w_t1)?;
        let xw = g.add(xw, prep.static_proj)?;
        self.encoder_lstm.gates(g, p, xw, prev)
    }

    /// Hidden states for one step; vocabulary heads are applied by the caller.
    fn hidden_step(
        &self,
        g: &mut Graph,
        p: &Bound,
        prep: &Prepared,
        state: DecoderState,
        token_prev: usize,
    ) -> Result<(LstmState, LstmState, Var)> {
        self.check_tokens(&[token_prev])?;
        let word = g.gather(p[self.embedding], &[token_prev])?;
        let ctx = self.context.step(g, p, &prep.memory, word)?;
        let s1 = self.encoder_lstm(g, p, prep, ctx.t1, state.enc)?;
        let s2 = self.lstm2.step(g, p, &[ctx.t1, s1.h, word], state.dec)?;
        let s3 = self.lstm3.step(g, p, &[ctx.t2, s2.h, word], None)?;
        Ok((s1, s2, s3.h))
    }

    fn heads(&self, g: &mut Graph, p: &Bound, h2: Var, h3: Var) -> Result<(Var, Var)> {
        let z1 = g.matmul(h2, p[self.fc1])?;
        let z1 = g.add(z1, p[self.fc1_b])?;
        let z2 = g.matmul(h3, p[self.fc2])?;
        let z2 = g.add(z2, p[self.fc2_b])?;
        Ok((g.softmax(z1)?, g.softmax(z2)?))
    }

    pub fn step(
        &self,
        g: &mut Graph,
        p: &Bound,
        prep: &Prepared,
        state: DecoderState,
        token_prev: usize,
    ) -> Result<(StepOutput, DecoderState)> {
        let (s1, s2, h3) = self.hidden_step(g, p, prep, state, token_prev)?;
        let (p1, p2) = self.heads(g, p, s2.h, h3)?;
        let out = StepOutput {
            h1: s1.h,
            h2: s2.h,
            h3,
            p1,
            p2,
        };
        Ok((out, DecoderState { enc: Some(s1), dec: Some(s2) }))
    }

    /// Unroll over `inputs` (the shifted target, starting with BOS). One row
    /// of `p1`/`p2` per input token.
    pub fn teacher_forced(&self, g: &mut Graph, p: &Bound, prep: &Prepared, inputs: &[usize]) -> Result<DecoderTrace> {
        if inputs.is_empty() {
            return Err(Error::contract("teacher forcing over an empty sequence"));
        }
        let mut state = DecoderState::default();
        let (mut h1, mut h2, mut h3) = (Vec::new(), Vec::new(), Vec::new());
        for &tok in inputs {
            let (s1, s2, h) = self.hidden_step(g, p, prep, state, tok)?;
            h1.push(s1.h);
            h2.push(s2.h);
            h3.push(h);
            state = DecoderState { enc: Some(s1), dec: Some(s2) };
        }
        let all2 = g.concat(&h2, 0)?;
        let all3 = g.concat(&h3, 0)?;
        let (p1, p2) = self.heads(g, p, all2, all3)?;
        Ok(DecoderTrace { h1, h2, h3, p1, p2 })
    }
}
