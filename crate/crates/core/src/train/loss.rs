use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};

pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda: f64,
    pub alpha: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda: 0.5, alpha: 5.0 }
    }
}

impl LossConfig {
    /// `lambda` in `(0, 1]`, `alpha` in `[1, 10)`.
    pub fn new(lambda: f64, alpha: f64) -> Result<Self> {
        let c = Self { lambda, alpha };
        c.validate()?;
        Ok(c)
    }

    /// Like [`LossConfig::new`] but admits `alpha = 10`, the top row of the
    /// alpha sweep.
    pub fn for_sweep(lambda: f64, alpha: f64) -> Result<Self> {
        let c = Self { lambda, alpha };
        c.check_lambda()?;
        if !(1.0..=10.0).contains(&alpha) {
            return Err(Error::config(format!("sweep alpha {alpha} outside [1, 10]")));
        }
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.check_lambda()?;
        if !(1.0..10.0).contains(&self.alpha) {
            return Err(Error::config(format!("alpha {} outside [1, 10)", self.alpha)));
        }
        Ok(())
    }

    fn check_lambda(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::config(format!("lambda {} outside (0, 1]", self.lambda)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub loss1: f64,
    pub loss2: f64,
    pub loss_t: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            loss1: self.loss1 * k,
            loss2: self.loss2 * k,
            loss_t: self.loss_t * k,
            total: self.total * k,
        }
    }

    pub fn accumulate(&mut self, other: &Self) {
        self.loss1 += other.loss1;
        self.loss2 += other.loss2;
        self.loss_t += other.loss_t;
        self.total += other.total;
    }
}

/// `total = loss1 + lambda * loss2 + alpha * loss_t`. The config is not
/// range-checked here; callers validate it once up front.
pub fn composite_loss(loss1: f64, loss2: f64, loss_t: f64, cfg: &LossConfig) -> LossBreakdown {
    LossBreakdown {
        loss1,
        loss2,
        loss_t,
        total: loss1 + cfg.lambda * loss2 + cfg.alpha * loss_t,
    }
}

/// Graph form of [`composite_loss`], evaluated in the same order.
pub fn composite_loss_graph(g: &mut Graph, loss1: Var, loss2: Var, loss_t: Var, cfg: &LossConfig) -> Result<Var> {
    let l2 = g.scale(loss2, cfg.lambda)?;
    let lt = g.scale(loss_t, cfg.alpha)?;
    let s = g.add(loss1, l2)?;
    g.add(s, lt)
}

/// Mean of `-ln(max(p[t, target[t]], 1e-12))` over steps where `mask[t]` is set.
pub fn cross_entropy(g: &mut Graph, pred: Var, targets: &[usize], mask: &[bool]) -> Result<Var> {
    let [rows, vocab] = g.shape(pred);
    if targets.len() != rows || mask.len() != rows {
        return Err(Error::contract(format!(
            "cross entropy over {rows} steps with {} targets and {} mask entries",
            targets.len(),
            mask.len()
        )));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= vocab) {
        return Err(Error::contract(format!("target {t} outside vocabulary of size {vocab}")));
    }
    let picks: Vec<usize> = targets
        .iter()
        .zip(mask)
        .enumerate()
        .filter(|(_, (_, &m))| m)
        .map(|(i, (&t, _))| i * vocab + t)
        .collect();
    if picks.is_empty() {
        return Err(Error::contract("cross entropy over an all-masked sequence"));
    }
    let flat = g.reshape(pred, rows * vocab, 1)?;
    let picked = g.gather(flat, &picks)?;
    let logs = g.log_floor(picked, PROB_FLOOR)?;
    let m = g.mean(logs)?;
    g.scale(m, -1.0)
}

/// `-(1/n) * sum_i [y_i ln sig(x_i) + (1 - y_i) ln(1 - sig(x_i))]` on the raw entries of `label`.
pub fn multilabel_softmargin(g: &mut Graph, label: Var, truth: &[f64]) -> Result<Var> {
    let [r, c] = g.shape(label);
    let n = r * c;
    if truth.len() != n {
        return Err(Error::contract(format!("{} truth entries for {n} labels", truth.len())));
    }
    if let Some(&y) = truth.iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(Error::contract(format!("truth entry {y} is not 0 or 1")));
    }
    let x = g.reshape(label, 1, n)?;
    let pos = g.sigmoid(x)?;
    let pos = g.log_floor(pos, f64::MIN_POSITIVE)?;
    let negx = g.scale(x, -1.0)?;
    let neg = g.sigmoid(negx)?;
    let neg = g.log_floor(neg, f64::MIN_POSITIVE)?;
    let y = g.constant_row(truth.to_vec())?;
    let not_y = g.constant_row(truth.iter().map(|v| 1.0 - v).collect())?;
    let a = g.mul(pos, y)?;
    let b = g.mul(neg, not_y)?;
    let s = g.add(a, b)?;
    let s = g.sum(s)?;
    g.scale(s, -1.0 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::rng::SplitMix64;

    #[test]
    fn composite_arithmetic() {
        let b = composite_loss(2.0, 1.0, 0.3, &LossConfig::default());
        assert_eq!(b.total, 4.0);
        let mut g = Graph::new();
        let l1 = g.constant_row(vec![2.0]).unwrap();
        let l2 = g.constant_row(vec![1.0]).unwrap();
        let lt = g.constant_row(vec![0.3]).unwrap();
        let t = composite_loss_graph(&mut g, l1, l2, lt, &LossConfig::default()).unwrap();
        assert_eq!(g.scalar(t), 4.0);
    }

    #[test]
    fn config_ranges() {
        assert!(LossConfig::new(0.5, 5.0).is_ok());
        assert!(LossConfig::new(1.0, 1.0).is_ok());
        assert!(matches!(LossConfig::new(0.0, 5.0), Err(Error::Config(_))));
        assert!(matches!(LossConfig::new(1.1, 5.0), Err(Error::Config(_))));
        assert!(matches!(LossConfig::new(0.5, 10.0), Err(Error::Config(_))));
        assert!(matches!(LossConfig::new(0.5, 0.0), Err(Error::Config(_))));
        for a in 1..=10 {
            assert!(LossConfig::for_sweep(0.5, a as f64).is_ok());
        }
        assert!(LossConfig::for_sweep(0.5, 10.5).is_err());
    }

    #[test]
    fn composite_gradient_is_linear() {
        let mut g = Graph::new();
        let l1 = g.leaf(&Tensor::scalar(1.3).with_grad()).unwrap();
        let l2 = g.leaf(&Tensor::scalar(0.7).with_grad()).unwrap();
        let lt = g.leaf(&Tensor::scalar(0.2).with_grad()).unwrap();
        let cfg = LossConfig::new(0.3, 7.0).unwrap();
        let t = composite_loss_graph(&mut g, l1, l2, lt, &cfg).unwrap();
        let grads = g.backward(t).unwrap();
        assert_eq!(grads.get(l1).unwrap(), &[1.0]);
        assert_eq!(grads.get(l2).unwrap(), &[0.3]);
        assert_eq!(grads.get(lt).unwrap(), &[7.0]);
    }

    #[test]
    fn cross_entropy_cases() {
        let mut g = Graph::new();
        let p = g.constant(2, 3, vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let l = cross_entropy(&mut g, p, &[1, 0], &[true, true]).unwrap();
        assert_eq!(g.scalar(l), 0.0);
        let u = g.constant(3, 5, vec![0.2; 15]).unwrap();
        let l = cross_entropy(&mut g, u, &[0, 4, 2], &[true, true, false]).unwrap();
        assert!((g.scalar(l) - 5f64.ln()).abs() < 1e-12);
        assert!(matches!(
            cross_entropy(&mut g, u, &[0, 4, 2], &[false; 3]),
            Err(Error::Contract(_))
        ));
        assert!(matches!(cross_entropy(&mut g, u, &[0, 4], &[true; 2]), Err(Error::Contract(_))));
    }

    #[test]
    fn cross_entropy_matches_direct_sum() {
        let mut rng = SplitMix64::new(3);
        for _ in 0..50 {
            let (t, v) = (1 + rng.below(6), 2 + rng.below(8));
            let mut rows = Vec::new();
            for _ in 0..t {
                let e: Vec<f64> = (0..v).map(|_| rng.uniform(-3.0, 3.0).exp()).collect();
                let s: f64 = e.iter().sum();
                rows.extend(e.iter().map(|x| x / s));
            }
            let targets: Vec<usize> = (0..t).map(|_| rng.below(v)).collect();
            let mut mask: Vec<bool> = (0..t).map(|_| rng.bernoulli(0.7)).collect();
            mask[0] = true;
            let mut total = 0.0;
            let mut count = 0.0;
            for i in 0..t {
                if mask[i] {
                    total -= rows[i * v + targets[i]].max(1e-12).ln();
                    count += 1.0;
                }
            }
            let mut g = Graph::new();
            let p = g.constant(t, v, rows).unwrap();
            let l = cross_entropy(&mut g, p, &targets, &mask).unwrap();
            assert!((g.scalar(l) - total / count).abs() < 1e-12);
        }
    }

    #[test]
    fn softmargin_cases() {
        let mut g = Graph::new();
        let x = g.constant_row(vec![0.0, 0.0]).unwrap();
        let l = multilabel_softmargin(&mut g, x, &[1.0, 0.0]).unwrap();
        assert!((g.scalar(l) - 2f64.ln()).abs() < 1e-12);
        let big = g.constant_row(vec![40.0]).unwrap();
        let l = multilabel_softmargin(&mut g, big, &[1.0]).unwrap();
        assert!(g.scalar(l) < 1e-15);
        assert!(matches!(multilabel_softmargin(&mut g, x, &[1.0]), Err(Error::Contract(_))));
        assert!(matches!(multilabel_softmargin(&mut g, x, &[1.0, 0.5]), Err(Error::Contract(_))));
    }

    #[test]
    fn softmargin_matches_direct_sum() {
        let mut rng = SplitMix64::new(4);
        for _ in 0..50 {
            let x: Vec<f64> = (0..8).map(|_| rng.uniform(-4.0, 4.0)).collect();
            let y: Vec<f64> = (0..8).map(|_| if rng.bernoulli(0.5) { 1.0 } else { 0.0 }).collect();
            let mut s = 0.0;
            for i in 0..8 {
                let sig = 1.0 / (1.0 + (-x[i]).exp());
                s += y[i] * sig.ln() + (1.0 - y[i]) * (1.0 - sig).ln();
            }
            let expected = -s / 8.0;
            let mut g = Graph::new();
            let xv = g.constant_row(x).unwrap();
            let l = multilabel_softmargin(&mut g, xv, &y).unwrap();
            assert!((g.scalar(l) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn softmargin_falls_toward_zero_as_predictions_saturate() {
        let truth = [1.0, 0.0, 1.0];
        let mut prev = f64::INFINITY;
        for k in 0..30 {
            let s = k as f64 * 0.5;
            let mut g = Graph::new();
            let x = g.constant_row(vec![s, -s, s]).unwrap();
            let l = multilabel_softmargin(&mut g, x, &truth).unwrap();
            let l = g.scalar(l);
            assert!(l < prev);
            prev = l;
        }
        assert!(prev < 1e-5);
    }
}
