use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::rng::SplitMix64;

/// LSTM cell over the concatenation of several input vectors.
///
/// Gate blocks in `w`, `u` and `b` are laid out as `[input, forget, output, candidate]`.
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub input_size: usize,
    pub hidden_size: usize,
    pub w: ParamId,
    /// Absent for a cell that is not self-recurrent.
    pub u: Option<ParamId>,
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmCell {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
        recurrent: bool,
        rng: &mut SplitMix64,
    ) -> Result<Self> {
        let w = store.add(format!("{prefix}.w"), Tensor::xavier(input_size, 4 * hidden_size, rng))?;
        let u = if recurrent {
            Some(store.add(format!("{prefix}.u"), Tensor::xavier(hidden_size, 4 * hidden_size, rng))?)
        } else {
            None
        };
        // forget-gate bias starts at 1
        let mut bias = vec![0.0; 4 * hidden_size];
        bias[hidden_size..2 * hidden_size].iter_mut().for_each(|x| *x = 1.0);
        let b = store.add(format!("{prefix}.b"), Tensor::row(bias))?;
        Ok(Self {
            input_size,
            hidden_size,
            w,
            u,
            b,
        })
    }

    pub fn zero_state(&self, g: &mut Graph) -> Result<LstmState> {
        let h = g.constant_row(vec![0.0; self.hidden_size])?;
        let c = g.constant_row(vec![0.0; self.hidden_size])?;
        Ok(LstmState { h, c })
    }

    /// One step. `prev = None` means a zero state.
    pub fn step(&self, g: &mut Graph, p: &Bound, inputs: &[Var], prev: Option<LstmState>) -> Result<LstmState> {
        let x = if inputs.len() == 1 {
            inputs[0]
        } else {
            g.concat(inputs, 1)?
        };
        let [rows, len] = g.shape(x);
        if rows != 1 || len != self.input_size {
            return Err(Error::contract(format!(
                "lstm input length {len} (rows {rows}) does not match cell input size {}",
                self.input_size
            )));
        }
        let xw = g.matmul(x, p[self.w])?;
        self.gates(g, p, xw, prev)
    }

    /// Step from a precomputed input projection `x W` (`[1, 4H]`).
    pub fn gates(&self, g: &mut Graph, p: &Bound, xw: Var, prev: Option<LstmState>) -> Result<LstmState> {
        let hs = self.hidden_size;
        let mut z = g.add(xw, p[self.b])?;
        if let (Some(u), Some(prev)) = (self.u, prev) {
            let hu = g.matmul(prev.h, p[u])?;
            z = g.add(z, hu)?;
        }
        let ifo = g.slice(z, 1, 0, 3 * hs)?;
        let ifo = g.sigmoid(ifo)?;
        let i = g.slice(ifo, 1, 0, hs)?;
        let f = g.slice(ifo, 1, hs, hs)?;
        let o = g.slice(ifo, 1, 2 * hs, hs)?;
        let cand = g.slice(z, 1, 3 * hs, hs)?;
        let cand = g.tanh(cand)?;
        let ic = g.mul(i, cand)?;
        let c = match prev {
            Some(prev) => {
                let fc = g.mul(f, prev.c)?;
                g.add(fc, ic)?
            }
            None => ic,
        };
        let tc = g.tanh(c)?;
        let h = g.mul(o, tc)?;
        Ok(LstmState { h, c })
    }
}
