//! Training losses: mixture-Laplace photometric likelihood with analytic
//! gradients, feature-space perceptual loss, edge-aware smoothness, and the
//! distillation L1 term.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::MixtureField;
use crate::numeric::{log_sum_exp, pairwise_sum};
use crate::raster::{Map, Mask};

/// Loss value and gradients with respect to the warped mixture parameters.
///
/// Gradients are plane-major (`plane * H * W + pixel`) like [`MixtureField`],
/// and already include the 1/Σm normalization of the pixel mean.
#[derive(Debug, Clone)]
pub struct MllOutput {
    pub loss: f64,
    pub grad_logits: Vec<f64>,
    pub grad_scales: Vec<f64>,
    /// Total mask weight over valid pixels (the mean's denominator).
    pub weight: f64,
}

/// Per-pixel negative log-likelihood and its gradients for one pixel.
///
/// `logits`, `scales`, `errors` hold the active planes only. Returns the loss;
/// gradients are written into `gl` and `gs`.
pub fn mll_pixel(logits: &[f64], scales: &[f64], errors: &[f64], gl: &mut [f64], gs: &mut [f64]) -> f64 {
    let n = logits.len();
    let lse_l = log_sum_exp(logits);
    for i in 0..n {
        gs[i] = logits[i] - errors[i] / scales[i] - (2.0 * scales[i]).ln();
    }
    let lse_t = log_sum_exp(&gs[..n]);
    for i in 0..n {
        let r = (gs[i] - lse_t).exp();
        let pi = (logits[i] - lse_l).exp();
        gl[i] = pi - r;
        gs[i] = -r * (errors[i] / (scales[i] * scales[i]) - 1.0 / scales[i]);
    }
    lse_l - lse_t
}

/// Per-channel mean absolute difference between two pixels.
#[inline]
fn photometric_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Mixture-Laplace photometric loss over per-plane warped images.
///
/// Averaged over pixels where at least one plane is valid, weighted by the
/// optional soft mask (single-channel, values in [0, 1]).
pub fn mll_loss(
    reference: &Map,
    warped_images: &[Map],
    warped_field: &MixtureField,
    mask: Option<&Map>,
) -> Result<MllOutput> {
    let n = warped_field.planes();
    let (w, h) = (warped_field.width(), warped_field.height());
    if warped_images.len() != n {
        return Err(Error::ShapeMismatch(format!("{} warped images for {} planes", warped_images.len(), n)));
    }
    if reference.width() != w || reference.height() != h {
        return Err(Error::ShapeMismatch("reference image and field sizes differ".into()));
    }
    let c = reference.channels();
    for img in warped_images {
        img.ensure_same_shape(reference, "warped image")?;
    }
    if let Some(m) = mask {
        if m.width() != w || m.height() != h || m.channels() != 1 {
            return Err(Error::ShapeMismatch("mask must be single-channel and match the field".into()));
        }
    }
    let npx = w * h;
    // pixel-major scratch results; transposed to plane-major at the end
    let mut losses = vec![0.0; npx];
    let mut weights = vec![0.0; npx];
    let mut gl_px = vec![0.0; npx * n];
    let mut gs_px = vec![0.0; npx * n];
    losses
        .par_chunks_mut(w)
        .zip(weights.par_chunks_mut(w))
        .zip(gl_px.par_chunks_mut(w * n))
        .zip(gs_px.par_chunks_mut(w * n))
        .enumerate()
        .for_each(|(y, (((lrow, wrow), glrow), gsrow))| {
            let mut active = Vec::with_capacity(n);
            let mut ls = Vec::with_capacity(n);
            let mut ss = Vec::with_capacity(n);
            let mut es = Vec::with_capacity(n);
            let mut gl = vec![0.0; n];
            let mut gs = vec![0.0; n];
            for x in 0..w {
                let px = y * w + x;
                let m = mask.map_or(1.0, |m| m.data()[px]);
                if m <= 0.0 {
                    continue;
                }
                active.clear();
                ls.clear();
                ss.clear();
                es.clear();
                let r = &reference.data()[px * c..(px + 1) * c];
                for i in 0..n {
                    if warped_field.is_valid(i, px) {
                        active.push(i);
                        ls.push(warped_field.logit(i, px));
                        ss.push(warped_field.scale(i, px));
                        es.push(photometric_error(r, &warped_images[i].data()[px * c..(px + 1) * c]));
                    }
                }
                if active.is_empty() {
                    continue;
                }
                let k = active.len();
                lrow[x] = m * mll_pixel(&ls, &ss, &es, &mut gl[..k], &mut gs[..k]);
                wrow[x] = m;
                for (a, &i) in active.iter().enumerate() {
                    glrow[x * n + i] = m * gl[a];
                    gsrow[x * n + i] = m * gs[a];
                }
            }
        });
    let total = pairwise_sum(&weights);
    if !(total > 0.0) {
        return Err(Error::EmptyInput("no valid pixels for the mixture-Laplace loss"));
    }
    let loss = pairwise_sum(&losses) / total;
    let mut grad_logits = vec![0.0; n * npx];
    let mut grad_scales = vec![0.0; n * npx];
    for px in 0..npx {
        for i in 0..n {
            grad_logits[i * npx + px] = gl_px[px * n + i] / total;
            grad_scales[i * npx + px] = gs_px[px * n + i] / total;
        }
    }
    Ok(MllOutput {
        loss,
        grad_logits,
        grad_scales,
        weight: total,
    })
}

/// Maps an image to a list of feature maps, one per level.
pub trait FeatureExtractor {
    fn extract(&self, image: &Map) -> Vec<Map>;
}

impl<F: Fn(&Map) -> Vec<Map>> FeatureExtractor for F {
    fn extract(&self, image: &Map) -> Vec<Map> {
        self(image)
    }
}

/// Single level: the image itself.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityFeatures;

impl FeatureExtractor for IdentityFeatures {
    fn extract(&self, image: &Map) -> Vec<Map> {
        vec![image.clone()]
    }
}

/// Image plus forward-difference x/y gradients, on a pyramid of 2x2-averaged levels.
#[derive(Debug, Clone, Copy)]
pub struct GradientPyramid {
    pub levels: usize,
}

impl Default for GradientPyramid {
    fn default() -> Self {
        GradientPyramid { levels: 2 }
    }
}

fn gradient_features(img: &Map) -> Map {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    Map::from_fn(w, h, 3 * c, |x, y, k| {
        let ch = k % c;
        match k / c {
            0 => img.get(x, y, ch),
            1 if x + 1 < w => img.get(x + 1, y, ch) - img.get(x, y, ch),
            2 if y + 1 < h => img.get(x, y + 1, ch) - img.get(x, y, ch),
            _ => 0.0,
        }
    })
}

fn downsample(img: &Map) -> Map {
    let (w, h) = ((img.width() / 2).max(1), (img.height() / 2).max(1));
    Map::from_fn(w, h, img.channels(), |x, y, ch| {
        let xs = [2 * x, (2 * x + 1).min(img.width() - 1)];
        let ys = [2 * y, (2 * y + 1).min(img.height() - 1)];
        let mut s = 0.0;
        for &yy in &ys {
            for &xx in &xs {
                s += img.get(xx, yy, ch);
            }
        }
        s / 4.0
    })
}

impl FeatureExtractor for GradientPyramid {
    fn extract(&self, image: &Map) -> Vec<Map> {
        let mut out = Vec::with_capacity(self.levels);
        let mut level = image.clone();
        for l in 0..self.levels {
            if l > 0 {
                level = downsample(&level);
            }
            out.push(gradient_features(&level));
        }
        out
    }
}

/// Sum over levels of the mean squared difference between feature maps.
pub fn feature_distance(a: &[Map], b: &[Map]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} feature levels", a.len(), b.len())));
    }
    let mut total = 0.0;
    for (fa, fb) in a.iter().zip(b) {
        fa.ensure_same_shape(fb, "feature level")?;
        if fa.data().is_empty() {
            continue;
        }
        let sq: Vec<f64> = fa.data().iter().zip(fb.data()).map(|(x, y)| (x - y) * (x - y)).collect();
        total += pairwise_sum(&sq) / sq.len() as f64;
    }
    Ok(total)
}

/// Perceptual loss between the reference and `mask * synth + (1 - mask) * reference`.
pub fn perceptual_loss(
    reference: &Map,
    synth: &Map,
    extractor: &dyn FeatureExtractor,
    mask: Option<&Map>,
) -> Result<f64> {
    reference.ensure_same_shape(synth, "synthesized image")?;
    let blend = match mask {
        None => synth.clone(),
        Some(m) => {
            if m.width() != reference.width() || m.height() != reference.height() || m.channels() != 1 {
                return Err(Error::ShapeMismatch("mask must be single-channel and match the image".into()));
            }
            let c = reference.channels();
            Map::from_fn(reference.width(), reference.height(), c, |x, y, ch| {
                let mv = m.get(x, y, 0);
                mv * synth.get(x, y, ch) + (1.0 - mv) * reference.get(x, y, ch)
            })
        }
    };
    feature_distance(&extractor.extract(reference), &extractor.extract(&blend))
}

/// Edge-aware first-order smoothness of the mean-normalized disparity.
pub fn smoothness_loss(disp: &Map, image: &Map) -> Result<f64> {
    if disp.channels() != 1 || disp.width() != image.width() || disp.height() != image.height() {
        return Err(Error::ShapeMismatch("disparity must be single-channel and match the image".into()));
    }
    let (w, h) = (disp.width(), disp.height());
    let mean = pairwise_sum(disp.data()) / (w * h) as f64;
    if !(mean > 0.0) {
        return Err(Error::param("disp", "mean disparity must be positive"));
    }
    let c = image.channels();
    let img_grad = |x0: usize, y0: usize, x1: usize, y1: usize| {
        (0..c).map(|ch| (image.get(x1, y1, ch) - image.get(x0, y0, ch)).abs()).sum::<f64>() / c as f64
    };
    let mut gx = Vec::with_capacity(w.saturating_sub(1) * h);
    let mut gy = Vec::with_capacity(w * h.saturating_sub(1));
    for y in 0..h {
        for x in 0..w {
            let d = disp.get(x, y, 0);
            if x + 1 < w {
                gx.push((disp.get(x + 1, y, 0) - d).abs() / mean * (-img_grad(x, y, x + 1, y)).exp());
            }
            if y + 1 < h {
                gy.push((disp.get(x, y + 1, 0) - d).abs() / mean * (-img_grad(x, y, x, y + 1)).exp());
            }
        }
    }
    let term = |v: &[f64]| if v.is_empty() { 0.0 } else { pairwise_sum(v) / v.len() as f64 };
    Ok(term(&gx) + term(&gy))
}

/// Mean absolute disparity error over valid pixels.
pub fn distill_l1(pred: &Map, label: &Map, valid: Option<&Mask>) -> Result<f64> {
    pred.ensure_same_shape(label, "disparity label")?;
    if pred.channels() != 1 {
        return Err(Error::ShapeMismatch("disparity maps must be single-channel".into()));
    }
    let diffs: Vec<f64> = (0..pred.data().len())
        .filter(|&i| valid.is_none_or(|m| m.data()[i]))
        .map(|i| (pred.data()[i] - label.data()[i]).abs())
        .collect();
    if diffs.is_empty() {
        return Err(Error::EmptyInput("no valid pixels for the distillation loss"));
    }
    Ok(pairwise_sum(&diffs) / diffs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 0.1,
            lambda2: 0.04,
            lambda3: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda3", self.lambda3)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::param(name, "must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

/// Individual loss terms. In distill mode `mll` and `perceptual` are the masked variants.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub mll: f64,
    pub perceptual: f64,
    pub smoothness: f64,
    pub distill: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    Stage1,
    Distill,
}

pub fn combine_losses(parts: &LossParts, weights: &LossWeights, mode: LossMode) -> f64 {
    let base = parts.mll + weights.lambda1 * parts.perceptual + weights.lambda2 * parts.smoothness;
    match mode {
        LossMode::Stage1 => base,
        LossMode::Distill => base + weights.lambda3 * parts.distill,
    }
}
