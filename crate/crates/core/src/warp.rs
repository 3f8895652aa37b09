//! Plane-induced homographies, backward bilinear warping, reference-view
//! synthesis, and horizontal disparity shifts.
//!
//! Warps are backward: to fill destination pixel `u` the source is sampled at
//! `H^-1 u`. Samples that leave the source are marked invalid and set to 0;
//! they never contribute to losses or metrics.

use nalgebra::{Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use crate::camera::{Intrinsics, Pose};
use crate::error::{Error, Result};
use crate::mixture::{mixture_probs, MixtureField, INVALID_LOGIT, SIGMA_MIN};
use crate::planes::{render_depth_stack, DepthLimits, Plane};
use crate::raster::{bilinear_axis, Map, Mask, PlaneStack};

/// `H = K (M + t n^T / delta) K^-1`, mapping target pixels to reference pixels.
pub fn homography(plane: &Plane, pose: &impl Pose, intr: &Intrinsics) -> Result<Matrix3<f64>> {
    if plane.distance() == 0.0 {
        return Err(Error::DegeneratePlane(plane.distance()));
    }
    let inner = pose.linear() + pose.translation() * plane.normal().transpose() / plane.distance();
    let h = intr.k() * inner * intr.k_inv();
    let det = h.determinant();
    if !(det.abs() >= 1e-12) {
        return Err(Error::DegenerateHomography(det.abs()));
    }
    Ok(h)
}

/// Applies a homography to a pixel; `None` at the line at infinity.
#[inline]
pub fn map_pixel(h: &Matrix3<f64>, u: Vector2<f64>) -> Option<Vector2<f64>> {
    let p = h * Vector3::new(u.x, u.y, 1.0);
    (p.z.abs() > 1e-300).then(|| Vector2::new(p.x / p.z, p.y / p.z))
}

fn inverse(h: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let det = h.determinant();
    if !(det.abs() >= 1e-12) {
        return Err(Error::DegenerateHomography(det.abs()));
    }
    h.try_inverse().ok_or(Error::DegenerateHomography(det.abs()))
}

/// Bilinear sample of a single-channel plane-major layer.
#[inline]
fn sample_layer(layer: &[f64], width: usize, height: usize, x: f64, y: f64) -> Option<f64> {
    let (x0, x1, fx) = bilinear_axis(x, width)?;
    let (y0, y1, fy) = bilinear_axis(y, height)?;
    let v00 = layer[y0 * width + x0];
    let v10 = layer[y0 * width + x1];
    let v01 = layer[y1 * width + x0];
    let v11 = layer[y1 * width + x1];
    let top = v00 + (v10 - v00) * fx;
    let bottom = v01 + (v11 - v01) * fx;
    Some(top + (bottom - top) * fy)
}

/// Backward-warps `src` into an `out_w x out_h` image: `out(u) = src(H^-1 u)`.
pub fn warp_bilinear(src: &Map, h: &Matrix3<f64>, out_w: usize, out_h: usize) -> Result<(Map, Mask)> {
    let inv = inverse(h)?;
    let c = src.channels();
    let mut data = vec![0.0; out_w * out_h * c];
    let mut valid = vec![false; out_w * out_h];
    data.par_chunks_mut(out_w * c)
        .zip(valid.par_chunks_mut(out_w))
        .enumerate()
        .for_each(|(y, (drow, vrow))| {
            for x in 0..out_w {
                if let Some(p) = map_pixel(&inv, Vector2::new(x as f64, y as f64)) {
                    vrow[x] = src.sample_bilinear(p.x, p.y, &mut drow[x * c..(x + 1) * c]);
                }
            }
        });
    Ok((Map::from_vec(out_w, out_h, c, data)?, Mask::from_vec(out_w, out_h, valid)?))
}

/// Warps each plane's logit and scale channel with that plane's homography.
///
/// Out-of-view samples get [`INVALID_LOGIT`] and are flagged invalid, so the
/// softmax taken afterwards gives them zero weight.
pub fn warp_mixture(field: &MixtureField, homographies: &[Matrix3<f64>]) -> Result<MixtureField> {
    let n = field.planes();
    if homographies.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} homographies for {} planes",
            homographies.len(),
            n
        )));
    }
    let (w, h) = (field.width(), field.height());
    let npx = w * h;
    let mut logits = vec![INVALID_LOGIT; n * npx];
    let mut scales = vec![SIGMA_MIN; n * npx];
    let mut valid = vec![false; n * npx];
    for (i, hom) in homographies.iter().enumerate() {
        let inv = inverse(hom)?;
        let src_l = field.logits(i);
        let src_s = field.scales(i);
        let range = i * npx..(i + 1) * npx;
        logits[range.clone()]
            .par_chunks_mut(w)
            .zip(scales[range.clone()].par_chunks_mut(w))
            .zip(valid[range].par_chunks_mut(w))
            .enumerate()
            .for_each(|(y, ((lrow, srow), vrow))| {
                for x in 0..w {
                    let Some(p) = map_pixel(&inv, Vector2::new(x as f64, y as f64)) else {
                        continue;
                    };
                    if let (Some(l), Some(s)) = (sample_layer(src_l, w, h, p.x, p.y), sample_layer(src_s, w, h, p.x, p.y)) {
                        lrow[x] = l;
                        srow[x] = s.max(SIGMA_MIN);
                        vrow[x] = true;
                    }
                }
            });
    }
    MixtureField::with_validity(w, h, n, logits, scales, valid)
}

/// Composes the reference image from per-plane warped images, weighted by the
/// Laplacian mixture probabilities evaluated at the reference-view plane depths.
pub fn synthesize_reference(
    warped_field: &MixtureField,
    warped_images: &[Map],
    ref_plane_depths: &PlaneStack,
) -> Result<(Map, Mask)> {
    let n = warped_field.planes();
    if warped_images.len() != n {
        return Err(Error::ShapeMismatch(format!("{} warped images for {} planes", warped_images.len(), n)));
    }
    let (w, h) = (warped_field.width(), warped_field.height());
    let c = warped_images[0].channels();
    for img in warped_images {
        if img.width() != w || img.height() != h || img.channels() != c {
            return Err(Error::ShapeMismatch("warped image size differs from field".into()));
        }
    }
    let probs = mixture_probs(warped_field, ref_plane_depths)?;
    let mut out = Map::zeros(w, h, c);
    let data = out.data_mut();
    for px in 0..w * h {
        if !probs.valid()[px] {
            continue;
        }
        let dst = &mut data[px * c..(px + 1) * c];
        for (i, &p) in probs.pixel(px).iter().enumerate() {
            if p > 0.0 {
                let src = &warped_images[i].data()[px * c..(px + 1) * c];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += p * s;
                }
            }
        }
    }
    Ok((out, probs.valid_mask()))
}

/// Everything produced while synthesising the reference view from the target.
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub image: Map,
    pub valid: Mask,
    pub warped_field: MixtureField,
    pub warped_images: Vec<Map>,
    pub ref_depths: PlaneStack,
    pub homographies: Vec<Matrix3<f64>>,
}

/// Warps the target image and field through every plane into the reference
/// view and composes the reference image.
pub fn synthesize_view(
    field: &MixtureField,
    target_image: &Map,
    planes: &[Plane],
    pose: &impl Pose,
    intr: &Intrinsics,
    limits: &DepthLimits,
) -> Result<Synthesis> {
    if planes.len() != field.planes() {
        return Err(Error::ShapeMismatch(format!("{} planes for a {}-plane field", planes.len(), field.planes())));
    }
    if target_image.width() != field.width() || target_image.height() != field.height() {
        return Err(Error::ShapeMismatch("target image and field sizes differ".into()));
    }
    let homographies = planes
        .iter()
        .map(|p| homography(p, pose, intr))
        .collect::<Result<Vec<_>>>()?;
    let warped_field = warp_mixture(field, &homographies)?;
    let warped_images = homographies
        .iter()
        .map(|hm| warp_bilinear(target_image, hm, field.width(), field.height()).map(|(m, _)| m))
        .collect::<Result<Vec<_>>>()?;
    let ref_planes = planes
        .iter()
        .map(|p| p.transformed(pose))
        .collect::<Result<Vec<_>>>()?;
    let ref_depths = render_depth_stack(&ref_planes, intr, limits)?;
    let (image, valid) = synthesize_reference(&warped_field, &warped_images, &ref_depths)?;
    Ok(Synthesis {
        image,
        valid,
        warped_field,
        warped_images,
        ref_depths,
        homographies,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftDirection {
    /// `out(x, y) = src(x + d(x, y), y)`: a left-view map seen from the right view.
    LeftToRight,
    /// `out(x, y) = src(x - d(x, y), y)`: a right-view map seen from the left view.
    RightToLeft,
}

/// Horizontal bilinear shift by a per-pixel disparity (indexed at the output pixel).
pub fn disparity_shift(src: &Map, disp: &Map, direction: ShiftDirection) -> Result<(Map, Mask)> {
    disparity_shift_masked(src, disp, None, direction)
}

/// [`disparity_shift`] that also treats pixels with invalid disparity as invalid.
pub fn disparity_shift_masked(
    src: &Map,
    disp: &Map,
    disp_valid: Option<&Mask>,
    direction: ShiftDirection,
) -> Result<(Map, Mask)> {
    if disp.width() != src.width() || disp.height() != src.height() || disp.channels() != 1 {
        return Err(Error::ShapeMismatch("disparity map must be single-channel and match the source".into()));
    }
    let (w, h, c) = (src.width(), src.height(), src.channels());
    let sign = match direction {
        ShiftDirection::LeftToRight => 1.0,
        ShiftDirection::RightToLeft => -1.0,
    };
    let mut out = Map::zeros(w, h, c);
    let mut valid = Mask::new(w, h, false);
    let data = out.data_mut();
    for y in 0..h {
        for x in 0..w {
            if disp_valid.is_some_and(|m| !m.get(x, y)) {
                continue;
            }
            let sx = x as f64 + sign * disp.get(x, y, 0);
            if let Some((x0, x1, f)) = bilinear_axis(sx, w) {
                for ch in 0..c {
                    let a = src.get(x0, y, ch);
                    let b = src.get(x1, y, ch);
                    data[(y * w + x) * c + ch] = a + (b - a) * f;
                }
                valid.set(x, y, true);
            }
        }
    }
    Ok((out, valid))
}

/// Layer-wise [`disparity_shift_masked`] over single-channel slices.
pub(crate) fn shift_layer(
    src: &[f64],
    disp: &[f64],
    disp_valid: &[bool],
    width: usize,
    height: usize,
    direction: ShiftDirection,
    out: &mut [f64],
    out_valid: &mut [bool],
) {
    let sign = match direction {
        ShiftDirection::LeftToRight => 1.0,
        ShiftDirection::RightToLeft => -1.0,
    };
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            out_valid[i] = false;
            if !disp_valid[i] {
                continue;
            }
            if let Some((x0, x1, f)) = bilinear_axis(x as f64 + sign * disp[i], width) {
                let a = src[y * width + x0];
                let b = src[y * width + x1];
                out[i] = a + (b - a) * f;
                out_valid[i] = true;
            }
        }
    }
}
