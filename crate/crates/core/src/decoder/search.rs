//! Greedy and beam-search decoding over any step-wise next-token model.
//!
//! Beginning-of-sequence, padding and unknown tokens are never emitted.
//! A hypothesis scores `sum(log p) / len`, where `len` counts emitted tokens
//! including the closing end-of-sequence token. Hypotheses that reach
//! `max_len` tokens without closing are finished as they stand.

use std::cmp::Ordering;

use super::{BOS, EOS, PAD, UNK};
use crate::error::{Error, Result};

pub trait StepModel {
    type State: Clone;

    fn vocab_size(&self) -> usize;
    fn start(&mut self) -> Result<Self::State>;
    /// Next-token distribution after feeding `token`, with the advanced state.
    fn step(&mut self, state: &Self::State, token: usize) -> Result<(Vec<f64>, Self::State)>;
}

pub fn is_generatable(token: usize) -> bool {
    !matches!(token, BOS | PAD | UNK)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Emitted tokens, excluding the closing end-of-sequence token.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub closed: bool,
}

impl Hypothesis {
    pub fn len(&self) -> usize {
        self.tokens.len() + usize::from(self.closed)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn score(&self) -> f64 {
        self.log_prob / self.len().max(1) as f64
    }
}

/// Higher score first; equal scores fall back to the smaller token sequence.
fn rank(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score()
        .total_cmp(&a.score())
        .then_with(|| a.tokens.cmp(&b.tokens))
        .then_with(|| b.closed.cmp(&a.closed))
}

fn check_distribution(dist: &[f64], vocab: usize) -> Result<()> {
    if dist.len() != vocab {
        return Err(Error::contract(format!(
            "model returned {} probabilities for vocabulary of {vocab}",
            dist.len()
        )));
    }
    Ok(())
}

pub fn greedy_decode<M: StepModel>(model: &mut M, max_len: usize) -> Result<Vec<usize>> {
    if max_len == 0 {
        return Err(Error::contract("max_len must be at least 1"));
    }
    let vocab = model.vocab_size();
    let mut state = model.start()?;
    let mut prev = BOS;
    let mut out = Vec::new();
    while out.len() < max_len {
        let (dist, next) = model.step(&state, prev)?;
        check_distribution(&dist, vocab)?;
        let mut best: Option<usize> = None;
        for (t, &p) in dist.iter().enumerate() {
            if is_generatable(t) && best.is_none_or(|b| p > dist[b]) {
                best = Some(t);
            }
        }
        let tok = best.ok_or_else(|| Error::contract("vocabulary has no generatable token"))?;
        if tok == EOS {
            break;
        }
        out.push(tok);
        state = next;
        prev = tok;
    }
    Ok(out)
}

/// Returns the best finished hypothesis. At each step the top `width`
/// extensions of the active beam are kept; those that close leave the beam.
pub fn beam_search<M: StepModel>(model: &mut M, width: usize, max_len: usize) -> Result<Hypothesis> {
    if width == 0 {
        return Err(Error::contract("beam width must be at least 1"));
    }
    if max_len == 0 {
        return Err(Error::contract("max_len must be at least 1"));
    }
    let vocab = model.vocab_size();
    let start = Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        closed: false,
    };
    let mut active = vec![(start, model.start()?)];
    let mut finished: Vec<Hypothesis> = Vec::new();
    while !active.is_empty() {
        let mut candidates = Vec::new();
        for (parent, (hyp, state)) in active.iter().enumerate() {
            let prev = hyp.tokens.last().copied().unwrap_or(BOS);
            let (dist, next) = model.step(state, prev)?;
            check_distribution(&dist, vocab)?;
            for (t, &p) in dist.iter().enumerate().filter(|(t, _)| is_generatable(*t)) {
                let mut tokens = hyp.tokens.clone();
                let closed = t == EOS;
                if !closed {
                    tokens.push(t);
                }
                let cand = Hypothesis {
                    tokens,
                    log_prob: hyp.log_prob + p.ln(),
                    closed,
                };
                candidates.push((cand, parent, next.clone()));
            }
        }
        if candidates.is_empty() {
            return Err(Error::contract("vocabulary has no generatable token"));
        }
        candidates.sort_by(|a, b| rank(&a.0, &b.0));
        candidates.truncate(width);
        active = Vec::with_capacity(width);
        for (cand, _, state) in candidates {
            if cand.closed || cand.tokens.len() >= max_len {
                finished.push(cand);
            } else {
                active.push((cand, state));
            }
        }
    }
    finished.sort_by(rank);
    Ok(finished.swap_remove(0))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    /// Random next-token distributions keyed by the full prefix.
    pub(crate) struct TableModel {
        pub vocab: usize,
        pub seed: u64,
        pub sharpness: f64,
    }

    impl StepModel for TableModel {
        type State = Vec<usize>;

        fn vocab_size(&self) -> usize {
            self.vocab
        }

        fn start(&mut self) -> Result<Vec<usize>> {
            Ok(Vec::new())
        }

        fn step(&mut self, state: &Vec<usize>, token: usize) -> Result<(Vec<f64>, Vec<usize>)> {
            let mut prefix = state.clone();
            prefix.push(token);
            let key = prefix.iter().fold(self.seed, |h, &t| h.wrapping_mul(1_000_003).wrapping_add(t as u64 + 1));
            let mut rng = SplitMix64::new(key);
            let logits: Vec<f64> = (0..self.vocab).map(|_| self.sharpness * rng.normal()).collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let s: f64 = e.iter().sum();
            Ok((e.into_iter().map(|x| x / s).collect(), prefix))
        }
    }

    /// Score every sequence in `vocab^max_len`, truncated at its first
    /// end-of-sequence token, and keep the best.
    pub(crate) fn exhaustive_best(model: &mut TableModel, max_len: usize) -> Hypothesis {
        let v = model.vocab;
        let mut best: Option<Hypothesis> = None;
        let total = v.pow(max_len as u32);
        for code in 0..total {
            let seq: Vec<usize> = (0..max_len).map(|i| (code / v.pow(i as u32)) % v).collect();
            let mut state = model.start().unwrap();
            let mut prev = BOS;
            let mut hyp = Hypothesis {
                tokens: Vec::new(),
                log_prob: 0.0,
                closed: false,
            };
            let mut valid = true;
            for &t in &seq {
                if !is_generatable(t) {
                    valid = false;
                    break;
                }
                let (dist, next) = model.step(&state, prev).unwrap();
                hyp.log_prob += dist[t].ln();
                if t == EOS {
                    hyp.closed = true;
                    break;
                }
                hyp.tokens.push(t);
                state = next;
                prev = t;
            }
            if valid && best.as_ref().is_none_or(|b| rank(&hyp, b) == Ordering::Less) {
                best = Some(hyp);
            }
        }
        best.unwrap()
    }

    struct AlwaysEnd;

    impl StepModel for AlwaysEnd {
        type State = ();
        fn vocab_size(&self) -> usize {
            6
        }
        fn start(&mut self) -> Result<()> {
            Ok(())
        }
        fn step(&mut self, _: &(), _: usize) -> Result<(Vec<f64>, ())> {
            Ok((vec![0.05, 0.6, 0.05, 0.1, 0.1, 0.1], ()))
        }
    }

    #[test]
    fn always_end_gives_empty_report() {
        assert!(greedy_decode(&mut AlwaysEnd, 10).unwrap().is_empty());
        let h = beam_search(&mut AlwaysEnd, 5, 10).unwrap();
        assert!(h.tokens.is_empty() && h.closed);
    }

    #[test]
    fn width_one_equals_greedy() {
        for seed in 0..50 {
            let mut m = TableModel {
                vocab: 9,
                seed,
                sharpness: 1.5,
            };
            let g = greedy_decode(&mut m, 12).unwrap();
            assert_eq!(g, greedy_decode(&mut m, 12).unwrap());
            assert_eq!(beam_search(&mut m, 1, 12).unwrap().tokens, g, "seed {seed}");
        }
    }

    #[test]
    fn width_five_matches_exhaustive_on_vocab_five() {
        for seed in 0..200 {
            let mut m = TableModel {
                vocab: 5,
                seed,
                sharpness: 1.0,
            };
            let beam = beam_search(&mut m, 5, 3).unwrap();
            assert_eq!(beam, exhaustive_best(&mut m, 3), "seed {seed}");
        }
    }

    #[test]
    fn wide_enough_beam_matches_exhaustive_on_vocab_six() {
        for seed in 0..200 {
            let mut m = TableModel {
                vocab: 6,
                seed,
                sharpness: 1.0,
            };
            let beam = beam_search(&mut m, 6, 3).unwrap();
            assert_eq!(beam, exhaustive_best(&mut m, 3), "seed {seed}");
        }
    }

    #[test]
    fn zero_width_is_contract_error() {
        let mut m = TableModel {
            vocab: 6,
            seed: 1,
            sharpness: 1.0,
        };
        assert!(matches!(beam_search(&mut m, 0, 3), Err(Error::Contract(_))));
    }

    #[test]
    fn max_len_caps_unclosed_hypotheses() {
        struct NeverEnd;
        impl StepModel for NeverEnd {
            type State = ();
            fn vocab_size(&self) -> usize {
                5
            }
            fn start(&mut self) -> Result<()> {
                Ok(())
            }
            fn step(&mut self, _: &(), _: usize) -> Result<(Vec<f64>, ())> {
                Ok((vec![0.0, 0.0, 0.0, 0.0, 1.0], ()))
            }
        }
        assert_eq!(greedy_decode(&mut NeverEnd, 4).unwrap(), vec![4; 4]);
        let h = beam_search(&mut NeverEnd, 3, 4).unwrap();
        assert_eq!(h.tokens, vec![4; 4]);
        assert!(!h.closed);
    }
}
