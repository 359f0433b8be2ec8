//! Finite-difference gradient checks over every parameterised block of the
//! model at toy dimensions.

use std::time::Instant;

use crate::autodiff::{grad_check_with_fault, Graph, OpKind, Tensor, Var};
use crate::data::{ModalityFlags, Vocabulary, FACTOR_DIM};
use crate::encoder::{DualSource, EncoderConfig, WeightMode};
use crate::error::Result;
use crate::label::{embed_report, LabelVocabulary};
use crate::model::{Example, ModelConfig, ReportModel};
use crate::params::Bound;
use crate::rng::SplitMix64;
use crate::train::{cross_entropy, multilabel_softmargin, LossConfig};

/// Pass threshold on the max relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
const STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockCheck {
    pub name: &'static str,
    pub params: usize,
    pub max_error: f64,
    pub seconds: f64,
}

impl BlockCheck {
    pub fn passed(&self) -> bool {
        self.max_error < GRADCHECK_TOLERANCE
    }
}

/// Model with `d_model` 8, two heads and a 12-token vocabulary, plus one
/// example for it.
pub fn toy_setup(seed: u64) -> Result<(ReportModel, Example)> {
    let words = ["the", "optic", "disc", "is", "large", "pale", "high", "risk"];
    let vocab = Vocabulary::from_words(words.iter().map(|w| w.to_string()).collect())?;
    let config = ModelConfig {
        encoder: EncoderConfig {
            image_side: 16,
            patch_size: 8,
            d_model: 8,
            heads: 2,
            gpsa_blocks: 1,
            ffn_dim: 8,
            feature_dim: 8,
        },
        embedding_dim: 6,
        hidden: 6,
        label_hidden: 5,
        weight_mode: WeightMode::Dual,
        modality: ModalityFlags::ALL,
    };
    let mut model = ReportModel::new(config, vocab, LabelVocabulary::default(), seed)?;
    let mut rng = SplitMix64::derive(seed, 1);
    // Distinct head weights so the base head is well defined.
    *model.store.get_mut(model.encoder.head_logits) = Tensor::row(vec![0.6, -0.3]);
    let ex = Example {
        image: (0..256).map(|_| rng.next_f64()).collect(),
        corpus: vec![5, 9],
        factors: (0..FACTOR_DIM).map(|_| rng.uniform(0.0, 1.0)).collect(),
        tokens: vec![4, 6, 11],
        labels: vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0],
    };
    Ok((model, ex))
}

/// Check the gradients of the parameters whose names start with one of
/// `prefixes`; every other parameter is held constant.
fn check_block<F>(model: &ReportModel, name: &'static str, prefixes: &[&str], fault: Option<OpKind>, f: F) -> Result<BlockCheck>
where
    F: Fn(&mut Graph, &Bound) -> Result<Var>,
{
    let start = Instant::now();
    let selected: Vec<bool> = model
        .store
        .iter()
        .map(|(_, n, _)| prefixes.iter().any(|p| n.starts_with(p)))
        .collect();
    let params: Vec<Tensor> = model
        .store
        .iter()
        .zip(&selected)
        .filter(|(_, &s)| s)
        .map(|((_, _, t), _)| t.clone())
        .collect();
    let max_error = grad_check_with_fault(
        |g, vars| {
            let mut it = vars.iter();
            let mut all = Vec::with_capacity(selected.len());
            for ((_, _, t), &s) in model.store.iter().zip(&selected) {
                all.push(if s { *it.next().expect("one var per selected tensor") } else { g.leaf(t)? });
            }
            f(g, &Bound::from_vars(all))
        },
        &params,
        STEP,
        fault,
    )?;
    Ok(BlockCheck {
        name,
        params: params.iter().map(Tensor::len).sum(),
        max_error,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Fixed-weight projection of a row vector to a scalar.
fn project(g: &mut Graph, x: Var, salt: usize) -> Result<Var> {
    let [r, c] = g.shape(x);
    let w: Vec<f64> = (0..r * c).map(|i| ((i * 7 + salt) % 5) as f64 / 2.0 - 1.0).collect();
    let w = g.constant(r, c, w)?;
    let s = g.mul(x, w)?;
    g.sum(s)
}

/// Run every block check. `fault` corrupts one backward rule on the
/// analytic side, as a negative control.
pub fn gradient_suite(fault: Option<OpKind>) -> Result<Vec<BlockCheck>> {
    let (model, ex) = toy_setup(11)?;
    let fixed_dwa = [0.35, 0.9];
    let mut out = Vec::new();
    for (name, dual) in [
        ("encoder, single weight", DualSource::Single),
        ("encoder, fixed dual weight", DualSource::Fixed(&fixed_dwa)),
        ("encoder, in-graph dual weight", DualSource::InGraph),
    ] {
        out.push(check_block(&model, name, &["encoder."], fault, |g, p| {
            let e = model.encoder.encode(g, p, &ex.image, dual)?;
            let a = g.tanh(e.weighted_attention)?;
            let b = g.tanh(e.class_feature)?;
            let s = g.concat(&[a, b], 1)?;
            project(g, s, 1)
        })?);
    }
    let targets = ex.targets();
    let mask = vec![true; targets.len()];
    out.push(check_block(&model, "decoder", &["decoder."], fault, |g, p| {
        let f = model.forward(g, p, &ex, DualSource::Fixed(&fixed_dwa), &LossConfig::default())?;
        let l1 = cross_entropy(g, f.trace.p1, &targets, &mask)?;
        let l2 = cross_entropy(g, f.trace.p2, &targets, &mask)?;
        g.add(l1, l2)
    })?);
    out.push(check_block(&model, "label", &["label.", "decoder.embedding"], fault, |g, p| {
        let f = model.forward(g, p, &ex, DualSource::Fixed(&fixed_dwa), &LossConfig::default())?;
        let rp = embed_report(g, f.trace.p2, p[model.decoder.embedding])?;
        let l = model.label.predict_labels(g, p, rp)?;
        let a = multilabel_softmargin(g, l, &ex.labels)?;
        let b = project(g, l, 3)?;
        g.add(a, b)
    })?);
    out.push(check_block(&model, "composite loss", &[""], fault, |g, p| {
        Ok(model.forward(g, p, &ex, DualSource::InGraph, &LossConfig::default())?.total)
    })?);
    Ok(out)
}
