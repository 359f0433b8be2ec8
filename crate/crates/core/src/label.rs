//! Label enhancement: a category-prediction LSTM over the embedded generated
//! report, producing a distribution over diagnostic labels.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::decoder::LstmCell;
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::rng::SplitMix64;

pub const DEFAULT_LABELS: [&str; 8] = [
    "isnt_rule_followed",
    "rim_pallor",
    "bayoneting",
    "sharp_edge",
    "laminar_dot_sign",
    "notching",
    "rim_thinning",
    "high_risk",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVocabulary {
    names: Vec<String>,
}

impl LabelVocabulary {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::contract("label vocabulary is empty"));
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(Error::contract(format!("duplicate label {n:?}")));
            }
        }
        Ok(Self { names })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

impl Default for LabelVocabulary {
    fn default() -> Self {
        Self {
            names: DEFAULT_LABELS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Expected embedding per step: `distributions [T, V] x table [V, E]`.
pub fn embed_report(g: &mut Graph, distributions: Var, table: Var) -> Result<Var> {
    let [t, _] = g.shape(distributions);
    if t == 0 {
        return Err(Error::contract("cannot embed an empty report"));
    }
    g.matmul(distributions, table)
}

/// Embedding of concrete tokens, used at inference.
pub fn embed_tokens(g: &mut Graph, table: Var, tokens: &[usize]) -> Result<Var> {
    if tokens.is_empty() {
        return Err(Error::contract("cannot embed an empty report"));
    }
    g.gather(table, tokens)
}

#[derive(Debug, Clone)]
pub struct LabelHead {
    pub num_labels: usize,
    pub lstm: LstmCell,
    pub w_t: ParamId,
    pub b_t: ParamId,
}

impl LabelHead {
    pub fn new(
        store: &mut ParamStore,
        embedding_dim: usize,
        hidden: usize,
        num_labels: usize,
        rng: &mut SplitMix64,
    ) -> Result<Self> {
        if num_labels == 0 {
            return Err(Error::config("label count must be positive"));
        }
        let lstm = LstmCell::new(store, "label.lstm", embedding_dim, hidden, true, rng)?;
        let w_t = store.add("label.w_t", Tensor::xavier(hidden, num_labels, rng))?;
        let b_t = store.add("label.b_t", Tensor::zeros(&[1, num_labels]))?;
        Ok(Self {
            num_labels,
            lstm,
            w_t,
            b_t,
        })
    }

    /// Final hidden state of the LSTM over `rp` (`[T, E]`), mapped to a
    /// softmax over labels (`[1, n]`).
    pub fn predict_labels(&self, g: &mut Graph, p: &Bound, rp: Var) -> Result<Var> {
        let [steps, width] = g.shape(rp);
        if width != self.lstm.input_size {
            return Err(Error::contract(format!(
                "report embedding width {width} does not match label LSTM input {}",
                self.lstm.input_size
            )));
        }
        let xw = g.matmul(rp, p[self.lstm.w])?;
        let mut state = None;
        for t in 0..steps {
            let row = g.slice(xw, 0, t, 1)?;
            state = Some(self.lstm.gates(g, p, row, state)?);
        }
        let h = state.expect("at least one step").h;
        let z = g.matmul(h, p[self.w_t])?;
        let z = g.add(z, p[self.b_t])?;
        g.softmax(z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;

    #[test]
    fn vocabulary_rejects_duplicates_and_empty() {
        assert!(LabelVocabulary::new(vec![]).is_err());
        assert!(LabelVocabulary::new(vec!["a".into(), "a".into()]).is_err());
        assert_eq!(LabelVocabulary::default().len(), 8);
        assert_eq!(LabelVocabulary::default().index("high_risk"), Some(7));
    }

    #[test]
    fn one_hot_and_uniform_mixtures() {
        let mut g = Graph::new();
        let table = g.constant(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let d = g.constant(2, 3, vec![0.0, 1.0, 0.0, 0.5, 0.0, 0.5]).unwrap();
        let rp = embed_report(&mut g, d, table).unwrap();
        assert_eq!(g.value(rp), &[3.0, 4.0, 3.0, 4.0]);
        let e = embed_tokens(&mut g, table, &[2]).unwrap();
        assert_eq!(g.value(e), &[5.0, 6.0]);
        assert!(matches!(embed_tokens(&mut g, table, &[]), Err(Error::Contract(_))));
    }

    fn head(n: usize, seed: u64) -> (ParamStore, LabelHead) {
        let mut store = ParamStore::new();
        let mut rng = SplitMix64::new(seed);
        let h = LabelHead::new(&mut store, 4, 5, n, &mut rng).unwrap();
        (store, h)
    }

    #[test]
    fn labels_are_a_distribution() {
        let mut rng = SplitMix64::new(3);
        for seed in 0..30 {
            let (store, h) = head(8, seed);
            let mut g = Graph::new();
            let p = store.bind(&mut g, false).unwrap();
            let rp = g.leaf(&Tensor::uniform(&[6, 4], 2.0, &mut rng)).unwrap();
            let l = h.predict_labels(&mut g, &p, rp).unwrap();
            assert!(g.value(l).iter().all(|&x| x > 0.0));
            assert!((g.value(l).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let (store, h) = head(1, 0);
        let mut g = Graph::new();
        let p = store.bind(&mut g, false).unwrap();
        let rp = g.constant(2, 4, vec![0.3; 8]).unwrap();
        let l = h.predict_labels(&mut g, &p, rp).unwrap();
        assert_eq!(g.value(l), &[1.0]);
    }

    #[test]
    fn permuting_label_rows_permutes_output() {
        let (mut store, h) = head(4, 11);
        let mut rng = SplitMix64::new(12);
        *store.get_mut(h.b_t) = Tensor::uniform(&[1, 4], 1.0, &mut rng);
        let x = Tensor::uniform(&[3, 4], 1.0, &mut rng);
        let run = |store: &ParamStore| {
            let mut g = Graph::new();
            let p = store.bind(&mut g, false).unwrap();
            let rp = g.leaf(&x).unwrap();
            let l = h.predict_labels(&mut g, &p, rp).unwrap();
            g.value(l).to_vec()
        };
        let base = run(&store);
        let perm = [2, 0, 3, 1];
        let w = store.get(h.w_t).clone();
        let b = store.get(h.b_t).clone();
        let rows = w.shape()[0];
        let mut wp = vec![0.0; w.len()];
        let mut bp = vec![0.0; 4];
        for (new, &old) in perm.iter().enumerate() {
            for r in 0..rows {
                wp[r * 4 + new] = w.data()[r * 4 + old];
            }
            bp[new] = b.data()[old];
        }
        *store.get_mut(h.w_t) = Tensor::matrix(rows, 4, wp).unwrap();
        *store.get_mut(h.b_t) = Tensor::row(bp);
        let permuted = run(&store);
        for (new, &old) in perm.iter().enumerate() {
            assert_eq!(permuted[new], base[old]);
        }
    }

    #[test]
    fn gradcheck_through_embedding_and_prediction() {
        let (mut store, h) = head(3, 5);
        let mut rng = SplitMix64::new(6);
        store.add("table", Tensor::uniform(&[7, 4], 1.0, &mut rng)).unwrap();
        store.add("logits", Tensor::uniform(&[3, 7], 1.0, &mut rng)).unwrap();
        let table_id = store.id("table").unwrap();
        let logits_id = store.id("logits").unwrap();
        let params: Vec<Tensor> = store.iter().map(|(_, _, t)| t.clone()).collect();
        let err = grad_check(
            |g, vars| {
                let p = Bound::from_vars(vars.to_vec());
                let d = g.softmax(p[logits_id])?;
                let rp = embed_report(g, d, p[table_id])?;
                let l = h.predict_labels(g, &p, rp)?;
                let w = g.constant_row(vec![1.0, -2.0, 0.5])?;
                let s = g.mul(l, w)?;
                g.sum(s)
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
