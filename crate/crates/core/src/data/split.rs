use serde::{Deserialize, Serialize};

use super::render::render_fundus;
use super::sample::{encode_factors, GlaucomaSample, FACTOR_DIM};
use crate::error::{Error, Result};
use crate::metrics::tokenize;
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Shuffle `0..n` with the seeded Fisher-Yates and cut it into `k`
/// contiguous validation blocks; the first `n % k` blocks get one extra index.
pub fn split_folds(n: usize, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k == 0 || k > n {
        return Err(Error::contract(format!("cannot split {n} samples into {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    SplitMix64::new(seed).shuffle(&mut order);
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let len = base + usize::from(i < extra);
        let validation = order[start..start + len].to_vec();
        let train = order[..start].iter().chain(&order[start + len..]).copied().collect();
        folds.push(Fold { train, validation });
        start += len;
    }
    Ok(folds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModalityFlags {
    pub image: bool,
    pub corpus: bool,
    pub factor: bool,
}

impl Default for ModalityFlags {
    fn default() -> Self {
        Self::ALL
    }
}

impl ModalityFlags {
    pub const ALL: Self = Self {
        image: true,
        corpus: true,
        factor: true,
    };

    /// The seven usable combinations, ordered as (image, corpus, factor)
    /// binary counting from 001 to 111.
    pub fn valid_combinations() -> Vec<Self> {
        (1u8..8)
            .map(|b| Self {
                image: b & 4 != 0,
                corpus: b & 2 != 0,
                factor: b & 1 != 0,
            })
            .collect()
    }

    pub fn check(&self) -> Result<()> {
        if !(self.image || self.corpus || self.factor) {
            return Err(Error::contract("no input modality"));
        }
        Ok(())
    }
}

/// Model inputs for one record after masking.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedInputs {
    pub image: Vec<f64>,
    /// Description tokens; empty when the corpus modality is off.
    pub corpus: Vec<String>,
    pub factors: Vec<f64>,
}

pub fn model_inputs(sample: &GlaucomaSample, side: usize) -> MaskedInputs {
    MaskedInputs {
        image: render_fundus(sample, side),
        corpus: tokenize(&sample.neuroretinal_rim),
        factors: encode_factors(sample),
    }
}

/// Disabled modalities become a zero image, an empty corpus and a zero
/// factor vector.
pub fn mask_modalities(inputs: &MaskedInputs, flags: ModalityFlags) -> Result<MaskedInputs> {
    flags.check()?;
    Ok(MaskedInputs {
        image: if flags.image { inputs.image.clone() } else { vec![0.0; inputs.image.len()] },
        corpus: if flags.corpus { inputs.corpus.clone() } else { Vec::new() },
        factors: if flags.factor { inputs.factors.clone() } else { vec![0.0; FACTOR_DIM] },
    })
}
