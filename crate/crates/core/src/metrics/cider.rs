use std::collections::{HashMap, HashSet};

use super::bleu::ngram_counts;
use super::TokenizedPair;
use crate::error::{Error, Result};

const MAX_N: usize = 4;
const SIGMA: f64 = 6.0;
const SCALE: f64 = 10.0;

type Vector<'a> = HashMap<&'a [String], f64>;

fn tfidf<'a>(tokens: &'a [String], n: usize, df: &HashMap<&[String], usize>, log_n: f64) -> Vector<'a> {
    ngram_counts(tokens, n)
        .into_iter()
        .map(|(g, c)| {
            let d = df.get(g).copied().unwrap_or(0).max(1) as f64;
            (g, c as f64 * (log_n - d.ln()))
        })
        .collect()
}

fn cosine(a: &Vector<'_>, b: &Vector<'_>) -> f64 {
    let na: f64 = a.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().map(|(g, x)| x * b.get(g).copied().unwrap_or(0.0)).sum();
    dot / (na * nb)
}

/// Per-pair CIDEr. Document frequency of an n-gram is the number of pairs
/// whose reference set contains it, floored at 1.
pub fn cider_pairs(pairs: &[TokenizedPair]) -> Result<Vec<f64>> {
    if pairs.is_empty() {
        return Err(Error::contract("CIDEr needs a nonempty corpus"));
    }
    let log_n = (pairs.len() as f64).ln();
    let mut scores = vec![0.0; pairs.len()];
    for n in 1..=MAX_N {
        let mut df: HashMap<&[String], usize> = HashMap::new();
        for p in pairs {
            let seen: HashSet<&[String]> = p.references.iter().flat_map(|r| ngram_counts(r, n).into_keys()).collect();
            for g in seen {
                *df.entry(g).or_insert(0) += 1;
            }
        }
        for (p, score) in pairs.iter().zip(scores.iter_mut()) {
            let cv = tfidf(&p.candidate, n, &df, log_n);
            let mut acc = 0.0;
            for r in &p.references {
                let rv = tfidf(r, n, &df, log_n);
                let delta = p.candidate.len() as f64 - r.len() as f64;
                acc += cosine(&cv, &rv) * (-delta * delta / (2.0 * SIGMA * SIGMA)).exp();
            }
            *score += acc / p.references.len() as f64;
        }
    }
    Ok(scores.into_iter().map(|s| SCALE * s / MAX_N as f64).collect())
}

pub fn cider(pairs: &[TokenizedPair]) -> Result<f64> {
    let s = cider_pairs(pairs)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(c: &str, r: &[&str]) -> TokenizedPair {
        TokenizedPair::from_text(c, r).unwrap()
    }

    #[test]
    fn constant_corpus_scores_zero() {
        let pairs = vec![
            pair("the disc is large", &["the disc is large"]),
            pair("the disc", &["the disc is large"]),
            pair("something else", &["the disc is large"]),
        ];
        assert_eq!(cider(&pairs).unwrap(), 0.0);
    }

    #[test]
    fn self_match_in_disjoint_corpus_is_one_before_scaling() {
        let pairs = vec![
            pair("alpha beta gamma delta", &["alpha beta gamma delta"]),
            pair("one two", &["three four five"]),
            pair("red green", &["blue yellow"]),
        ];
        let s = cider_pairs(&pairs).unwrap();
        assert!((s[0] - SCALE).abs() < 1e-12);
    }

    #[test]
    fn single_document_corpus_is_defined() {
        let s = cider(&[pair("a b", &["a b"])]).unwrap();
        assert_eq!(s, 0.0);
        assert!(cider(&[]).is_err());
    }
}
