use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::rng::SplitMix64;

/// Splits a square image into non-overlapping patches and projects each one.
#[derive(Debug, Clone)]
pub struct PatchEmbedder {
    pub image_side: usize,
    pub patch_size: usize,
    pub d_model: usize,
    pub projection: ParamId,
    pub positional: ParamId,
}

impl PatchEmbedder {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        image_side: usize,
        patch_size: usize,
        d_model: usize,
        rng: &mut SplitMix64,
    ) -> Result<Self> {
        check_geometry(image_side, patch_size)?;
        let pixels = patch_size * patch_size;
        let patches = (image_side / patch_size).pow(2);
        let projection = store.add(format!("{prefix}.projection"), Tensor::xavier(pixels, d_model, rng))?;
        let positional = store.add(
            format!("{prefix}.positional"),
            Tensor::uniform(&[patches, d_model], 0.02, rng),
        )?;
        Ok(Self {
            image_side,
            patch_size,
            d_model,
            projection,
            positional,
        })
    }

    pub fn num_patches(&self) -> usize {
        (self.image_side / self.patch_size).pow(2)
    }

    /// `[num_patches, d_model]`: projected patches plus positional rows.
    pub fn forward(&self, g: &mut Graph, p: &Bound, image: &[f64]) -> Result<Var> {
        let patches = extract_patches(image, self.image_side, self.patch_size)?;
        let pixels = self.patch_size * self.patch_size;
        let x = g.constant(self.num_patches(), pixels, patches)?;
        let projected = g.matmul(x, p[self.projection])?;
        g.add(projected, p[self.positional])
    }
}

pub(crate) fn check_geometry(image_side: usize, patch_size: usize) -> Result<()> {
    if patch_size == 0 || image_side == 0 || image_side % patch_size != 0 {
        return Err(Error::config(format!(
            "image side {image_side} is not a positive multiple of patch size {patch_size}"
        )));
    }
    Ok(())
}

/// Raster-order patches, each flattened row-major: `[num_patches * patch_size^2]`.
pub fn extract_patches(image: &[f64], side: usize, patch_size: usize) -> Result<Vec<f64>> {
    check_geometry(side, patch_size)?;
    if image.len() != side * side {
        return Err(Error::ShapeMismatch {
            op: "patch_embed",
            left: vec![side, side],
            right: vec![image.len()],
        });
    }
    let per_side = side / patch_size;
    let mut out = Vec::with_capacity(image.len());
    for pr in 0..per_side {
        for pc in 0..per_side {
            for r in 0..patch_size {
                let row = pr * patch_size + r;
                let start = row * side + pc * patch_size;
                out.extend_from_slice(&image[start..start + patch_size]);
            }
        }
    }
    Ok(out)
}
