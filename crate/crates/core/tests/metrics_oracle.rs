mod common;

use glaucoma_report::metrics::{bleu_n, cider, corpus_bleu, evaluate, rouge_l, TokenizedPair};

const TOL: f64 = 1e-6;

#[test]
fn random_fixtures_match_brute_force() {
    for seed in 0..20 {
        let pairs = common::random_fixture(seed);
        for n in 1..=4 {
            for p in &pairs {
                let (a, b) = (bleu_n(p, n).unwrap(), common::bleu(p, n));
                assert!((a - b).abs() < TOL, "seed {seed} BLEU-{n}: {a} vs {b} for {p:?}");
            }
            let (a, b) = (corpus_bleu(&pairs, n).unwrap(), common::corpus_bleu(&pairs, n));
            assert!((a - b).abs() < TOL, "seed {seed} corpus BLEU-{n}: {a} vs {b}");
        }
        for p in &pairs {
            let (a, b) = (rouge_l(p), common::rouge_l(p));
            assert!((a - b).abs() < TOL, "seed {seed} ROUGE-L: {a} vs {b}");
        }
        let (a, b) = (cider(&pairs).unwrap(), common::cider(&pairs));
        assert!((a - b).abs() < TOL, "seed {seed} CIDEr: {a} vs {b}");
    }
}

#[test]
fn larger_random_corpora_match_too() {
    let mut pairs = Vec::new();
    for seed in 100..130 {
        pairs.extend(common::random_fixture(seed));
    }
    let r = evaluate(&pairs).unwrap();
    for (n, v) in [r.b1, r.b2, r.b3, r.b4].into_iter().enumerate() {
        assert!((v - common::corpus_bleu(&pairs, n + 1)).abs() < TOL);
    }
    assert!((r.cider - common::cider(&pairs)).abs() < TOL);
    let rouge = pairs.iter().map(common::rouge_l).sum::<f64>() / pairs.len() as f64;
    assert!((r.rouge_l - rouge).abs() < TOL);
}

#[test]
fn hand_anchors() {
    let p = TokenizedPair::from_text("the cat sat", &["the cat sat down"]).unwrap();
    assert!((bleu_n(&p, 1).unwrap() - 0.7165).abs() < 1e-4);
    let p = TokenizedPair::from_text("a b c d", &["a c d e"]).unwrap();
    assert!((rouge_l(&p) - 0.75).abs() < 1e-12);
    assert_eq!(common::lcs(&p.candidate, &p.references[0]), 3);
    let constant: Vec<TokenizedPair> = ["the disc", "a rim is pale", "the disc is large"]
        .iter()
        .map(|c| TokenizedPair::from_text(c, &["the disc is large"]).unwrap())
        .collect();
    assert_eq!(cider(&constant).unwrap(), 0.0);
}
