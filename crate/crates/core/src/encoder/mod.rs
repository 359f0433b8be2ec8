//! Image encoder: patch embedding, gated positional self-attention blocks,
//! a class token, a fully connected projection, and dual-weighted
//! multi-head attention.

pub mod attention;
pub mod dual_weight;
pub mod gpsa;
pub mod patch;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::rng::SplitMix64;

pub use attention::{MhaOutput, MultiHeadAttention};
pub use dual_weight::{DualAttentionState, DualWeightTracker, WeightMode};
pub use gpsa::GpsaBlock;
pub use patch::PatchEmbedder;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub image_side: usize,
    pub patch_size: usize,
    pub d_model: usize,
    pub heads: usize,
    pub gpsa_blocks: usize,
    pub ffn_dim: usize,
    /// Width of the projected feature sequence and of the dual-weighted
    /// attention that runs on it.
    pub feature_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            image_side: 32,
            patch_size: 8,
            d_model: 64,
            heads: 8,
            gpsa_blocks: 2,
            ffn_dim: 128,
            feature_dim: 512,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if let Err(e) = patch::check_geometry(self.image_side, self.patch_size) {
            errs.push(e.message());
        }
        if let Err(e) = attention::check_heads(self.d_model, self.heads) {
            errs.push(e.message());
        }
        if let Err(e) = attention::check_heads(self.feature_dim, self.heads) {
            errs.push(e.message());
        }
        if self.ffn_dim == 0 {
            errs.push("ffn_dim must be positive".into());
        }
        errs
    }
}

/// Where the cosine-derived weight comes from for one forward pass.
#[derive(Debug, Clone, Copy)]
pub enum DualSource<'a> {
    /// Learnable weight only.
    Single,
    /// Rectified cosine weights from the previous iteration (constants).
    Fixed(&'a [f64]),
    /// Cosine weights computed from this pass's own heads, inside the graph.
    /// Used to check gradients through the whole weighting path.
    InGraph,
}

#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// `[1, feature_dim]`, class-token row of the dual-weighted attention.
    pub weighted_attention: Var,
    /// `[1, feature_dim]`, projected class token.
    pub class_feature: Var,
    /// `[num_patches + 1, feature_dim]`, projected token sequence.
    pub tokens: Var,
    /// Raw per-head attention outputs, `[num_patches + 1, d_k]` each.
    pub heads: Vec<Var>,
    /// `[1, N]` learnable head weights after the softmax update.
    pub w_a: Var,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub patch: PatchEmbedder,
    pub blocks: Vec<GpsaBlock>,
    pub class_token: ParamId,
    pub fc_w: ParamId,
    pub fc_b: ParamId,
    pub mha: MultiHeadAttention,
    pub head_logits: ParamId,
}

impl Encoder {
    pub fn new(store: &mut ParamStore, config: &EncoderConfig, rng: &mut SplitMix64) -> Result<Self> {
        let errs = config.validate();
        if !errs.is_empty() {
            return Err(Error::config(errs.join("; ")));
        }
        let c = config;
        let patch = PatchEmbedder::new(store, "encoder.patch", c.image_side, c.patch_size, c.d_model, rng)?;
        let num_patches = patch.num_patches();
        let blocks = (0..c.gpsa_blocks)
            .map(|i| GpsaBlock::new(store, &format!("encoder.gpsa{i}"), c.d_model, c.heads, num_patches, c.ffn_dim, rng))
            .collect::<Result<Vec<_>>>()?;
        let class_token = store.add("encoder.class_token", Tensor::uniform(&[1, c.d_model], 0.02, rng))?;
        let fc_w = store.add("encoder.fc_w", Tensor::xavier(c.d_model, c.feature_dim, rng))?;
        let fc_b = store.add("encoder.fc_b", Tensor::zeros(&[1, c.feature_dim]))?;
        let mha = MultiHeadAttention::new(store, "encoder.mha", c.feature_dim, c.heads, rng)?;
        let head_logits = store.add(
            "encoder.head_logits",
            Tensor::filled(&[1, c.heads], 1.0 / c.heads as f64),
        )?;
        Ok(Self {
            config: c.clone(),
            patch,
            blocks,
            class_token,
            fc_w,
            fc_b,
            mha,
            head_logits,
        })
    }

    pub fn num_tokens(&self) -> usize {
        self.patch.num_patches() + 1
    }

    /// Patch embedding through the GPSA stack, class token appended, then
    /// projected to `feature_dim`.
    pub fn features(&self, g: &mut Graph, p: &Bound, image: &[f64]) -> Result<Var> {
        let mut x = self.patch.forward(g, p, image)?;
        for block in &self.blocks {
            x = block.forward(g, p, x)?;
        }
        let x = g.concat(&[x, p[self.class_token]], 0)?;
        let f = g.matmul(x, p[self.fc_w])?;
        g.add(f, p[self.fc_b])
    }

    pub fn encode(&self, g: &mut Graph, p: &Bound, image: &[f64], dual: DualSource<'_>) -> Result<EncoderOutput> {
        let tokens = self.features(g, p, image)?;
        let last = self.num_tokens() - 1;
        let class_feature = g.slice(tokens, 0, last, 1)?;
        let (heads, _) = self.mha.heads(g, p, tokens)?;
        let w_a = dual_weight::update_head_weights_graph(g, p[self.head_logits])?;
        let n = self.config.heads;
        let coef = match dual {
            DualSource::Single => w_a,
            DualSource::Fixed(w_dwa) => {
                if w_dwa.len() != n {
                    return Err(Error::contract(format!("{} dual weights for {n} heads", w_dwa.len())));
                }
                let w = g.constant_row(w_dwa.to_vec())?;
                g.mul(w_a, w)?
            }
            DualSource::InGraph => {
                let base = dual_weight::select_base_head(g.value(w_a));
                let mut sims = Vec::with_capacity(n);
                for &h in &heads {
                    sims.push(g.cosine(h, heads[base])?);
                }
                let w_cos = g.concat(&sims, 1)?;
                let (_, w_dwa) = dual_weight::dual_weight_graph(g, w_cos)?;
                g.mul(w_a, w_dwa)?
            }
        };
        let mut weighted = Vec::with_capacity(n);
        for (j, &h) in heads.iter().enumerate() {
            let cj = g.slice(coef, 1, j, 1)?;
            weighted.push(g.mul(h, cj)?);
        }
        let projected = self.mha.project(g, p, &weighted)?;
        let weighted_attention = g.slice(projected, 0, last, 1)?;
        Ok(EncoderOutput {
            weighted_attention,
            class_feature,
            tokens,
            heads,
            w_a,
        })
    }
}
