//! Caption metrics: BLEU-1..4, ROUGE-L and CIDEr.

mod bleu;
mod cider;
mod rouge;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bleu::{bleu_n, corpus_bleu, BleuStats};
pub use cider::{cider, cider_pairs};
pub use rouge::{lcs_len, rouge_l, rouge_l_beta, ROUGE_BETA};

/// Lowercase, split on whitespace, strip punctuation from both ends of each
/// token, drop tokens that end up empty. Inner punctuation (`0.8`) survives.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedPair {
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
}

impl TokenizedPair {
    pub fn new(candidate: Vec<String>, references: Vec<Vec<String>>) -> Result<Self> {
        if references.is_empty() {
            return Err(Error::contract("a pair needs at least one reference"));
        }
        Ok(Self { candidate, references })
    }

    pub fn from_text(candidate: &str, references: &[&str]) -> Result<Self> {
        Self::new(tokenize(candidate), references.iter().map(|r| tokenize(r)).collect())
    }
}

/// Scores in `[0, 1]` (CIDEr unbounded above).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub b4: f64,
    pub rouge_l: f64,
    pub cider: f64,
}

impl MetricReport {
    pub const HEADER: [&'static str; 6] = ["B-1", "B-2", "B-3", "B-4", "ROU", "CID"];

    pub fn values(&self) -> [f64; 6] {
        [self.b1, self.b2, self.b3, self.b4, self.rouge_l, self.cider]
    }

    /// Every score times 100 with two decimals, space separated.
    pub fn percent_row(&self) -> String {
        self.values().iter().map(|v| format!("{:.2}", v * 100.0)).collect::<Vec<_>>().join(" ")
    }
}

/// Corpus BLEU, mean ROUGE-L and CIDEr over `pairs`.
pub fn evaluate(pairs: &[TokenizedPair]) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(Error::contract("cannot score an empty corpus"));
    }
    let b = |n| corpus_bleu(pairs, n);
    let rouge = pairs.iter().map(rouge_l).sum::<f64>() / pairs.len() as f64;
    Ok(MetricReport {
        b1: b(1)?,
        b2: b(2)?,
        b3: b(3)?,
        b4: b(4)?,
        rouge_l: rouge,
        cider: cider(pairs)?,
    })
}

/// Pair each candidate line with the reference line at the same index.
pub fn evaluate_lines(candidates: &[String], references: &[String]) -> Result<MetricReport> {
    if candidates.len() != references.len() {
        return Err(Error::Validation(format!(
            "{} candidate lines but {} reference lines",
            candidates.len(),
            references.len()
        )));
    }
    let pairs = candidates
        .iter()
        .zip(references)
        .map(|(c, r)| TokenizedPair::from_text(c, &[r]))
        .collect::<Result<Vec<_>>>()?;
    evaluate(&pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_rules() {
        assert_eq!(
            tokenize("The Cup-to-disc ratio is 0.8.  Done!"),
            vec!["the", "cup-to-disc", "ratio", "is", "0.8", "done"]
        );
        assert!(tokenize(" , . ").is_empty());
    }

    #[test]
    fn identical_lines_score_100() {
        let lines = vec!["the disc is large".to_string(), "the rim is pale and thin".to_string()];
        let r = evaluate_lines(&lines, &lines).unwrap();
        for v in &r.values()[..5] {
            assert!((v - 1.0).abs() < 1e-12);
        }
        assert_eq!(r.percent_row().split(' ').take(5).collect::<Vec<_>>(), vec!["100.00"; 5]);
    }

    #[test]
    fn disjoint_lines_score_zero() {
        let c = vec!["alpha beta".to_string(), "gamma".to_string()];
        let r = vec!["one two three".to_string(), "four five".to_string()];
        let m = evaluate_lines(&c, &r).unwrap();
        assert_eq!([m.b1, m.b2, m.b3, m.b4, m.rouge_l], [0.0; 5]);
    }

    #[test]
    fn line_count_mismatch_names_both_counts() {
        let err = evaluate_lines(&["a".into()], &["a".into(), "b".into()]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('1') && msg.contains('2'), "{msg}");
    }
}
