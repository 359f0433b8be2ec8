//! Brute-force metric references for integration tests. Deliberately naive:
//! linear scans instead of hash maps, subsequence enumeration instead of
//! dynamic programming.

#![allow(dead_code)]

use glaucoma_report::metrics::TokenizedPair;
use glaucoma_report::rng::SplitMix64;

type Seq = Vec<String>;

fn grams(s: &[String], n: usize) -> Vec<Seq> {
    let mut out = Vec::new();
    let mut i = 0;
    while i + n <= s.len() {
        out.push(s[i..i + n].to_vec());
        i += 1;
    }
    out
}

fn count(list: &[Seq], g: &Seq) -> usize {
    list.iter().filter(|x| *x == g).count()
}

fn distinct(list: &[Seq]) -> Vec<Seq> {
    let mut out: Vec<Seq> = Vec::new();
    for g in list {
        if !out.contains(g) {
            out.push(g.clone());
        }
    }
    out
}

/// (clipped matches, candidate n-grams) for order `n`.
fn clipped(p: &TokenizedPair, n: usize) -> (usize, usize) {
    let cg = grams(&p.candidate, n);
    let mut m = 0;
    for g in distinct(&cg) {
        let in_cand = count(&cg, &g);
        let mut best_ref = 0;
        for r in &p.references {
            best_ref = best_ref.max(count(&grams(r, n), &g));
        }
        m += in_cand.min(best_ref);
    }
    (m, cg.len())
}

fn closest_len(c: usize, refs: &[Seq]) -> usize {
    let mut best = refs[0].len();
    for r in refs {
        let d = (r.len() as i64 - c as i64).abs();
        let bd = (best as i64 - c as i64).abs();
        if d < bd || (d == bd && r.len() < best) {
            best = r.len();
        }
    }
    best
}

fn bleu_from(m: &[usize], t: &[usize], c: usize, r: usize) -> f64 {
    if c == 0 || m[0] == 0 {
        return 0.0;
    }
    let mut prod = 1.0;
    for k in 0..m.len() {
        let p = if k >= 1 && m[k] == 0 {
            1.0 / (t[k] as f64 + 1.0)
        } else {
            m[k] as f64 / t[k] as f64
        };
        prod *= p;
    }
    let bp = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
    bp * prod.powf(1.0 / m.len() as f64)
}

pub fn bleu(p: &TokenizedPair, n: usize) -> f64 {
    corpus_bleu(std::slice::from_ref(p), n)
}

pub fn corpus_bleu(pairs: &[TokenizedPair], n: usize) -> f64 {
    let mut m = vec![0; n];
    let mut t = vec![0; n];
    let (mut c, mut r) = (0, 0);
    for p in pairs {
        for k in 1..=n {
            let (mk, tk) = clipped(p, k);
            m[k - 1] += mk;
            t[k - 1] += tk;
        }
        c += p.candidate.len();
        r += closest_len(p.candidate.len(), &p.references);
    }
    bleu_from(&m, &t, c, r)
}

fn is_subsequence(sub: &[&String], of: &[String]) -> bool {
    let mut it = of.iter();
    sub.iter().all(|x| it.any(|y| y == *x))
}

/// Longest common subsequence by trying every subset of `a`.
pub fn lcs(a: &[String], b: &[String]) -> usize {
    assert!(a.len() <= 16);
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let sub: Vec<&String> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| &a[i]).collect();
        if sub.len() > best && is_subsequence(&sub, b) {
            best = sub.len();
        }
    }
    best
}

pub fn rouge_l(p: &TokenizedPair) -> f64 {
    let b2 = 1.2f64 * 1.2;
    let mut best = 0.0f64;
    for r in &p.references {
        let l = lcs(&p.candidate, r) as f64;
        if l == 0.0 {
            continue;
        }
        let prec = l / p.candidate.len() as f64;
        let rec = l / r.len() as f64;
        best = best.max((1.0 + b2) * prec * rec / (rec + b2 * prec));
    }
    best
}

pub fn cider(pairs: &[TokenizedPair]) -> f64 {
    let big_n = pairs.len() as f64;
    let mut total = 0.0;
    for p in pairs {
        let mut s = 0.0;
        for n in 1..=4 {
            let df = |g: &Seq| {
                pairs
                    .iter()
                    .filter(|q| q.references.iter().any(|r| grams(r, n).contains(g)))
                    .count()
                    .max(1) as f64
            };
            let vector = |toks: &[String]| -> Vec<(Seq, f64)> {
                let gs = grams(toks, n);
                distinct(&gs)
                    .into_iter()
                    .map(|g| {
                        let w = count(&gs, &g) as f64 * (big_n.ln() - df(&g).ln());
                        (g, w)
                    })
                    .collect()
            };
            let cv = vector(&p.candidate);
            let mut acc = 0.0;
            for r in &p.references {
                let rv = vector(r);
                let norm = |v: &[(Seq, f64)]| v.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
                let (nc, nr) = (norm(&cv), norm(&rv));
                let cos = if nc == 0.0 || nr == 0.0 {
                    0.0
                } else {
                    let mut dot = 0.0;
                    for (g, w) in &cv {
                        for (h, x) in &rv {
                            if g == h {
                                dot += w * x;
                            }
                        }
                    }
                    dot / (nc * nr)
                };
                let d = p.candidate.len() as f64 - r.len() as f64;
                acc += cos * (-d * d / 72.0).exp();
            }
            s += acc / p.references.len() as f64;
        }
        total += 10.0 * s / 4.0;
    }
    total / big_n
}

/// Random small corpora over a six-word alphabet.
pub fn random_fixture(seed: u64) -> Vec<TokenizedPair> {
    const WORDS: [&str; 6] = ["the", "disc", "rim", "is", "pale", "large"];
    let mut rng = SplitMix64::new(seed);
    let seq = |rng: &mut SplitMix64, min: usize| -> Seq {
        let len = min + rng.below(9 - min);
        (0..len).map(|_| WORDS[rng.below(WORDS.len())].to_string()).collect()
    };
    let pairs = 1 + rng.below(4);
    (0..pairs)
        .map(|_| {
            let cand = seq(&mut rng, 0);
            let refs = (0..1 + rng.below(3)).map(|_| seq(&mut rng, 1)).collect();
            TokenizedPair::new(cand, refs).unwrap()
        })
        .collect()
}
