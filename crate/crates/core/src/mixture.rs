//! Per-pixel Laplacian mixture over planes.
//!
//! Each pixel carries a logit `l_i` and a scale `sigma_i` for every plane.
//! Weights are `pi = softmax(l)`; the plane probability is
//! `p_i ∝ sum_j pi_j exp(-|D_i - D_j| / sigma_j) / (2 sigma_j)` and depth is
//! composed as `sum_i p_i D_i`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numeric::pairwise_mean;
use crate::raster::{Map, Mask, PlaneStack};

/// Lower bound on Laplace scales (metres).
pub const SIGMA_MIN: f64 = 1e-4;

/// Logit given to invalid (out-of-view) samples; softmax maps it to exactly 0.
pub const INVALID_LOGIT: f64 = -1e30;

/// `exp(-x)` underflows to zero beyond this.
const EXP_CUTOFF: f64 = 745.2;

/// Pixels whose mixture normalizer falls below this are flagged invalid.
pub const Z_MIN: f64 = 1e-20;

/// Logits and scales for every pixel and plane, stored plane-major, plus a
/// per-sample validity flag (false after warping out of view).
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureField {
    width: usize,
    height: usize,
    planes: usize,
    logits: Vec<f64>,
    scales: Vec<f64>,
    valid: Vec<bool>,
}

impl MixtureField {
    pub fn new(
        width: usize,
        height: usize,
        planes: usize,
        logits: Vec<f64>,
        scales: Vec<f64>,
    ) -> Result<Self> {
        let n = width * height * planes;
        Self::with_validity(width, height, planes, logits, scales, vec![true; n])
    }

    pub fn with_validity(
        width: usize,
        height: usize,
        planes: usize,
        logits: Vec<f64>,
        scales: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        let n = width * height * planes;
        if planes == 0 {
            return Err(Error::EmptyInput("mixture field needs at least one plane"));
        }
        if logits.len() != n || scales.len() != n || valid.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "mixture field {width}x{height}x{planes} needs {n} logits/scales/flags"
            )));
        }
        if let Some(i) = logits.iter().position(|l| !l.is_finite()) {
            return Err(Error::param("logits", format!("non-finite logit at index {i}")));
        }
        if let Some(i) = scales.iter().position(|s| !(s.is_finite() && *s >= SIGMA_MIN)) {
            return Err(Error::param(
                "scales",
                format!("scale {} at index {i} is below {SIGMA_MIN} or non-finite", scales[i]),
            ));
        }
        Ok(MixtureField {
            width,
            height,
            planes,
            logits,
            scales,
            valid,
        })
    }

    /// Constant logits and scales everywhere.
    pub fn constant(width: usize, height: usize, planes: usize, logit: f64, scale: f64) -> Result<Self> {
        let n = width * height * planes;
        Self::new(width, height, planes, vec![logit; n], vec![scale; n])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn planes(&self) -> usize {
        self.planes
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn logits(&self, plane: usize) -> &[f64] {
        let n = self.pixel_count();
        &self.logits[plane * n..(plane + 1) * n]
    }

    pub fn logits_mut(&mut self, plane: usize) -> &mut [f64] {
        let n = self.pixel_count();
        &mut self.logits[plane * n..(plane + 1) * n]
    }

    pub fn scales(&self, plane: usize) -> &[f64] {
        let n = self.pixel_count();
        &self.scales[plane * n..(plane + 1) * n]
    }

    /// Scales must stay at or above [`SIGMA_MIN`]; callers writing through this
    /// slice are responsible for that.
    pub fn scales_mut(&mut self, plane: usize) -> &mut [f64] {
        let n = self.pixel_count();
        &mut self.scales[plane * n..(plane + 1) * n]
    }

    pub fn valid(&self, plane: usize) -> &[bool] {
        let n = self.pixel_count();
        &self.valid[plane * n..(plane + 1) * n]
    }

    #[inline]
    pub fn logit(&self, plane: usize, pixel: usize) -> f64 {
        self.logits[plane * self.pixel_count() + pixel]
    }

    #[inline]
    pub fn scale(&self, plane: usize, pixel: usize) -> f64 {
        self.scales[plane * self.pixel_count() + pixel]
    }

    #[inline]
    pub fn is_valid(&self, plane: usize, pixel: usize) -> bool {
        self.valid[plane * self.pixel_count() + pixel]
    }

    pub fn flip_horizontal(&self) -> MixtureField {
        let mut out = self.clone();
        let (w, h) = (self.width, self.height);
        for p in 0..self.planes {
            for y in 0..h {
                for x in 0..w {
                    let src = p * w * h + y * w + (w - 1 - x);
                    let dst = p * w * h + y * w + x;
                    out.logits[dst] = self.logits[src];
                    out.scales[dst] = self.scales[src];
                    out.valid[dst] = self.valid[src];
                }
            }
        }
        out
    }

    fn check_stack(&self, stack: &PlaneStack) -> Result<()> {
        if stack.width() != self.width || stack.height() != self.height || stack.planes() != self.planes {
            return Err(Error::ShapeMismatch(format!(
                "field {}x{}x{} vs plane stack {}x{}x{}",
                self.width,
                self.height,
                self.planes,
                stack.width(),
                stack.height(),
                stack.planes()
            )));
        }
        Ok(())
    }
}

/// Per-pixel normalised distribution over planes, stored pixel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbField {
    width: usize,
    height: usize,
    planes: usize,
    probs: Vec<f64>,
    valid: Vec<bool>,
}

impl ProbField {
    /// Builds from pixel-major probabilities; each valid pixel is checked to sum to 1.
    pub fn from_pixel_major(
        width: usize,
        height: usize,
        planes: usize,
        probs: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        if probs.len() != width * height * planes || valid.len() != width * height {
            return Err(Error::ShapeMismatch("probability field size".into()));
        }
        for (px, chunk) in probs.chunks(planes).enumerate() {
            if valid[px] {
                let s: f64 = chunk.iter().sum();
                if chunk.iter().any(|p| !(*p >= 0.0)) || (s - 1.0).abs() > 1e-9 {
                    return Err(Error::param("probs", format!("pixel {px} is not normalised (sum {s})")));
                }
            }
        }
        Ok(ProbField {
            width,
            height,
            planes,
            probs,
            valid,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn planes(&self) -> usize {
        self.planes
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn pixel(&self, pixel: usize) -> &[f64] {
        &self.probs[pixel * self.planes..(pixel + 1) * self.planes]
    }

    #[inline]
    pub fn get(&self, pixel: usize, plane: usize) -> f64 {
        self.probs[pixel * self.planes + plane]
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_mask(&self) -> Mask {
        Mask::from_vec(self.width, self.height, self.valid.clone()).expect("sized")
    }

    /// One plane's probabilities as a single-channel map.
    pub fn plane_map(&self, plane: usize) -> Map {
        Map::from_vec(
            self.width,
            self.height,
            1,
            (0..self.pixel_count()).map(|px| self.get(px, plane)).collect(),
        )
        .expect("sized")
    }

    /// Index of the most probable plane at each valid pixel.
    pub fn argmax(&self) -> Vec<Option<usize>> {
        (0..self.pixel_count())
            .map(|px| {
                self.valid[px].then(|| {
                    self.pixel(px)
                        .iter()
                        .enumerate()
                        .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
                        .0
                })
            })
            .collect()
    }
}

struct Scratch {
    active: Vec<usize>,
    weights: Vec<f64>,
    depths: Vec<f64>,
    inv_scales: Vec<f64>,
}

/// Runs `f(pixel, out)` for every pixel in parallel rows, writing `planes`
/// values per pixel, and returns the pixel-major buffer plus validity.
fn per_pixel(
    width: usize,
    height: usize,
    planes: usize,
    f: impl Fn(usize, &mut [f64], &mut Scratch) -> bool + Sync,
) -> (Vec<f64>, Vec<bool>) {
    let mut probs = vec![0.0; width * height * planes];
    let mut valid = vec![false; width * height];
    probs
        .par_chunks_mut(width * planes)
        .zip(valid.par_chunks_mut(width))
        .enumerate()
        .for_each(|(y, (prow, vrow))| {
            let mut scratch = Scratch {
                active: Vec::with_capacity(planes),
                weights: Vec::with_capacity(planes),
                depths: Vec::with_capacity(planes),
                inv_scales: Vec::with_capacity(planes),
            };
            for x in 0..width {
                let out = &mut prow[x * planes..(x + 1) * planes];
                vrow[x] = f(y * width + x, out, &mut scratch);
                if !vrow[x] {
                    out.fill(0.0);
                }
            }
        });
    (probs, valid)
}

/// Softmax over the planes in `active`, written into `out` (zero elsewhere).
#[inline]
fn softmax_into(field: &MixtureField, pixel: usize, active: &[usize], out: &mut [f64]) {
    out.fill(0.0);
    let max = active
        .iter()
        .map(|&i| field.logit(i, pixel))
        .fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for &i in active {
        let e = (field.logit(i, pixel) - max).exp();
        out[i] = e;
        sum += e;
    }
    for &i in active {
        out[i] /= sum;
    }
}

/// `pi = softmax(l)` per pixel over valid samples; a pixel with no valid
/// sample is flagged invalid.
pub fn softmax_weights(field: &MixtureField) -> ProbField {
    let n = field.planes;
    let (probs, valid) = per_pixel(field.width, field.height, n, |px, out, scratch| {
        let active = &mut scratch.active;
        active.clear();
        active.extend((0..n).filter(|&i| field.is_valid(i, px)));
        if active.is_empty() {
            return false;
        }
        softmax_into(field, px, active, out);
        true
    });
    ProbField {
        width: field.width,
        height: field.height,
        planes: n,
        probs,
        valid,
    }
}

/// Laplacian mixture plane probabilities, normalised per pixel.
///
/// Planes whose sample or depth is invalid at a pixel are left out of both
/// sums; the softmax is taken over the remaining planes.
pub fn mixture_probs(field: &MixtureField, plane_depths: &PlaneStack) -> Result<ProbField> {
    field.check_stack(plane_depths)?;
    let n = field.planes;
    let (probs, valid) = per_pixel(field.width, field.height, n, |px, out, scratch| {
        let Scratch {
            active,
            weights,
            depths,
            inv_scales,
        } = scratch;
        active.clear();
        active.extend((0..n).filter(|&i| field.is_valid(i, px) && plane_depths.is_valid(i, px)));
        if active.is_empty() {
            return false;
        }
        softmax_into(field, px, active, out);
        // gathered per pixel so the pair loop runs over contiguous memory
        weights.clear();
        depths.clear();
        inv_scales.clear();
        for &j in active.iter() {
            let sigma = field.scale(j, px);
            weights.push(out[j] / (2.0 * sigma));
            depths.push(plane_depths.value(j, px));
            inv_scales.push(1.0 / sigma);
        }
        let mut z = 0.0;
        for (a, &i) in active.iter().enumerate() {
            let di = depths[a];
            let mut p = 0.0;
            for k in 0..weights.len() {
                if weights[k] == 0.0 {
                    continue;
                }
                let arg = (di - depths[k]).abs() * inv_scales[k];
                if arg < EXP_CUTOFF {
                    p += weights[k] * (-arg).exp();
                }
            }
            out[i] = p;
            z += p;
        }
        if !(z >= Z_MIN) {
            return false;
        }
        for &i in active.iter() {
            out[i] /= z;
        }
        true
    });
    Ok(ProbField {
        width: field.width,
        height: field.height,
        planes: n,
        probs,
        valid,
    })
}

/// `D = sum_i p_i D_i`; invalid pixels stay invalid with depth 0.
pub fn compose_depth(probs: &ProbField, plane_depths: &PlaneStack) -> Result<(Map, Mask)> {
    if probs.width != plane_depths.width()
        || probs.height != plane_depths.height()
        || probs.planes != plane_depths.planes()
    {
        return Err(Error::ShapeMismatch("probabilities vs plane depths".into()));
    }
    let depth: Vec<f64> = (0..probs.pixel_count())
        .map(|px| {
            if !probs.valid[px] {
                return 0.0;
            }
            probs
                .pixel(px)
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(|(i, &p)| p * plane_depths.value(i, px))
                .sum()
        })
        .collect();
    Ok((
        Map::from_vec(probs.width, probs.height, 1, depth)?,
        probs.valid_mask(),
    ))
}

/// Mean over valid pixels of the largest plane probability.
pub fn mmp(probs: &ProbField) -> Result<f64> {
    let maxima: Vec<f64> = (0..probs.pixel_count())
        .filter(|&px| probs.valid[px])
        .map(|px| probs.pixel(px).iter().copied().fold(0.0, f64::max))
        .collect();
    pairwise_mean(&maxima).ok_or(Error::EmptyInput("no valid pixels for MMP"))
}
