use super::TokenizedPair;

pub const ROUGE_BETA: f64 = 1.2;

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS F-measure, best over references.
pub fn rouge_l(pair: &TokenizedPair) -> f64 {
    rouge_l_beta(pair, ROUGE_BETA)
}

pub fn rouge_l_beta(pair: &TokenizedPair, beta: f64) -> f64 {
    let c = &pair.candidate;
    if c.is_empty() {
        return 0.0;
    }
    let b2 = beta * beta;
    pair.references
        .iter()
        .map(|r| {
            let l = lcs_len(c, r) as f64;
            if l == 0.0 {
                return 0.0;
            }
            let p = l / c.len() as f64;
            let rec = l / r.len() as f64;
            (1.0 + b2) * p * rec / (rec + b2 * p)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(c: &str, r: &[&str]) -> TokenizedPair {
        TokenizedPair::from_text(c, r).unwrap()
    }

    #[test]
    fn anchors() {
        assert!((rouge_l(&pair("a b c d", &["a c d e"])) - 0.75).abs() < 1e-12);
        assert_eq!(rouge_l(&pair("a b", &["a b"])), 1.0);
        assert_eq!(rouge_l(&pair("a b", &["c d"])), 0.0);
        assert_eq!(rouge_l(&pair("", &["c d"])), 0.0);
    }

    #[test]
    fn best_reference_wins() {
        let p = pair("a b c", &["x y", "a b c"]);
        assert_eq!(rouge_l(&p), 1.0);
    }

    #[test]
    fn symmetric_when_beta_is_one() {
        let a = pair("a b c d e f", &["b d f g"]);
        let b = pair("b d f g", &["a b c d e f"]);
        assert!((rouge_l_beta(&a, 1.0) - rouge_l_beta(&b, 1.0)).abs() < 1e-15);
    }
}
