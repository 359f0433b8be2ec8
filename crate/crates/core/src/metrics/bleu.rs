use std::collections::HashMap;

use super::TokenizedPair;
use crate::error::{Error, Result};

pub(crate) fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Clipped n-gram matches and candidate n-gram totals per order, plus the
/// lengths used by the brevity penalty.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BleuStats {
    pub matches: Vec<usize>,
    pub totals: Vec<usize>,
    pub candidate_len: usize,
    pub reference_len: usize,
}

impl BleuStats {
    pub fn of_pair(pair: &TokenizedPair, n: usize) -> Self {
        let c = &pair.candidate;
        let mut matches = Vec::with_capacity(n);
        let mut totals = Vec::with_capacity(n);
        for k in 1..=n {
            let cand = ngram_counts(c, k);
            let mut max_ref: HashMap<&[String], usize> = HashMap::new();
            for r in &pair.references {
                for (g, cnt) in ngram_counts(r, k) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(cnt);
                }
            }
            matches.push(cand.iter().map(|(g, &cnt)| cnt.min(max_ref.get(g).copied().unwrap_or(0))).sum());
            totals.push(c.len().saturating_sub(k - 1));
        }
        Self {
            matches,
            totals,
            candidate_len: c.len(),
            reference_len: closest_ref_len(c.len(), &pair.references),
        }
    }

    fn add(&mut self, other: &Self) {
        if self.matches.is_empty() {
            self.matches = vec![0; other.matches.len()];
            self.totals = vec![0; other.totals.len()];
        }
        for k in 0..other.matches.len() {
            self.matches[k] += other.matches[k];
            self.totals[k] += other.totals[k];
        }
        self.candidate_len += other.candidate_len;
        self.reference_len += other.reference_len;
    }

    /// Zero when the candidate is empty or shares no unigram with the
    /// references. Higher orders with no match use `(m + 1) / (t + 1)`.
    pub fn score(&self) -> f64 {
        if self.candidate_len == 0 || self.matches[0] == 0 {
            return 0.0;
        }
        let n = self.matches.len();
        let mut log_sum = 0.0;
        for k in 0..n {
            let (m, t) = (self.matches[k] as f64, self.totals[k] as f64);
            let p = if k > 0 && self.matches[k] == 0 { (m + 1.0) / (t + 1.0) } else { m / t };
            log_sum += p.ln();
        }
        let (c, r) = (self.candidate_len as f64, self.reference_len as f64);
        let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
        bp * (log_sum / n as f64).exp()
    }
}

/// Reference length closest to `c`; ties go to the shorter reference.
fn closest_ref_len(c: usize, refs: &[Vec<String>]) -> usize {
    refs.iter()
        .map(|r| r.len())
        .min_by_key(|&l| (l.abs_diff(c), l))
        .unwrap_or(0)
}

fn check_order(n: usize) -> Result<()> {
    if !(1..=4).contains(&n) {
        return Err(Error::contract(format!("BLEU order {n} outside 1..=4")));
    }
    Ok(())
}

pub fn bleu_n(pair: &TokenizedPair, n: usize) -> Result<f64> {
    check_order(n)?;
    Ok(BleuStats::of_pair(pair, n).score())
}

/// Counts pooled over the corpus before the precisions and brevity penalty.
pub fn corpus_bleu(pairs: &[TokenizedPair], n: usize) -> Result<f64> {
    check_order(n)?;
    let mut total = BleuStats::default();
    for p in pairs {
        total.add(&BleuStats::of_pair(p, n));
    }
    if total.matches.is_empty() {
        return Ok(0.0);
    }
    Ok(total.score())
}
