//! Stereo occlusion masks built by shifting plane weights between views, and
//! the post-processed self-distillation label.
//!
//! Disparity fields are per-plane left-view maps. Both plane families have
//! disparity that depends only on the image row, so the same layer serves as
//! the shift field in either view.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::MixtureField;
use crate::raster::{Map, Mask, PlaneStack};
use crate::warp::{shift_layer, ShiftDirection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskSide {
    /// Left-view pixels not visible in the right view (left of objects).
    Rl,
    /// Left-view pixels on the right side of objects, from the swapped construction.
    Lr,
    /// Right-view pixels with no left-view pre-image.
    R,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionMask {
    pub side: MaskSide,
    /// Single-channel, values in `[0, 1]`.
    pub values: Map,
}

impl OcclusionMask {
    /// `true` where the mask is at least `threshold` (visible).
    pub fn binarize(&self, threshold: f64) -> Mask {
        let data = self.values.data().iter().map(|&v| v >= threshold).collect();
        Mask::from_vec(self.values.width(), self.values.height(), data).expect("sized")
    }

    pub fn flip_horizontal(&self) -> OcclusionMask {
        OcclusionMask {
            side: self.side,
            values: self.values.flip_horizontal(),
        }
    }
}

fn check_inputs(field: &MixtureField, disps: &PlaneStack) -> Result<()> {
    if field.width() != disps.width() || field.height() != disps.height() || field.planes() != disps.planes() {
        return Err(Error::ShapeMismatch(format!(
            "field {}x{}x{} vs disparities {}x{}x{}",
            field.width(),
            field.height(),
            field.planes(),
            disps.width(),
            disps.height(),
            disps.planes()
        )));
    }
    Ok(())
}

fn opposite(dir: ShiftDirection) -> ShiftDirection {
    match dir {
        ShiftDirection::LeftToRight => ShiftDirection::RightToLeft,
        ShiftDirection::RightToLeft => ShiftDirection::LeftToRight,
    }
}

/// Shifts every plane layer of `src` by its disparity, returning plane-major values and validity.
fn shift_planes(
    src: &[f64],
    disps: &PlaneStack,
    dir: ShiftDirection,
) -> (Vec<f64>, Vec<bool>) {
    let (w, h, n) = (disps.width(), disps.height(), disps.planes());
    let npx = w * h;
    let mut out = vec![0.0; n * npx];
    let mut valid = vec![false; n * npx];
    out.par_chunks_mut(npx)
        .zip(valid.par_chunks_mut(npx))
        .enumerate()
        .for_each(|(i, (o, v))| {
            shift_layer(&src[i * npx..(i + 1) * npx], disps.layer(i), disps.valid(i), w, h, dir, o, v);
        });
    (out, valid)
}

/// Softmax over valid entries at each pixel of plane-major logits; rows with
/// no valid entry stay 0.
fn masked_softmax(logits: &[f64], valid: &[bool], n: usize, npx: usize) -> Vec<f64> {
    let mut probs = vec![0.0; n * npx];
    for px in 0..npx {
        let mut m = f64::NEG_INFINITY;
        for i in 0..n {
            if valid[i * npx + px] {
                m = m.max(logits[i * npx + px]);
            }
        }
        if m == f64::NEG_INFINITY {
            continue;
        }
        let mut z = 0.0;
        for i in 0..n {
            if valid[i * npx + px] {
                let e = (logits[i * npx + px] - m).exp();
                probs[i * npx + px] = e;
                z += e;
            }
        }
        for i in 0..n {
            probs[i * npx + px] /= z;
        }
    }
    probs
}

/// Sums the shifted per-plane weights and clamps at 1; invalid samples add nothing.
fn summed_mask(weights: &[f64], disps: &PlaneStack, dir: ShiftDirection) -> Map {
    let (w, h, n) = (disps.width(), disps.height(), disps.planes());
    let npx = w * h;
    let (shifted, valid) = shift_planes(weights, disps, dir);
    let mut out = vec![0.0; npx];
    for i in 0..n {
        for px in 0..npx {
            if valid[i * npx + px] {
                out[px] += shifted[i * npx + px];
            }
        }
    }
    for v in &mut out {
        *v = v.clamp(0.0, 1.0);
    }
    Map::from_vec(w, h, 1, out).expect("sized")
}

fn two_way_mask(field: &MixtureField, disps: &PlaneStack, first: ShiftDirection) -> Result<Map> {
    check_inputs(field, disps)?;
    let (n, npx) = (field.planes(), field.pixel_count());
    let logits: Vec<f64> = (0..n).flat_map(|i| field.logits(i).iter().copied()).collect();
    let (shifted, valid) = shift_planes(&logits, disps, first);
    let probs = masked_softmax(&shifted, &valid, n, npx);
    Ok(summed_mask(&probs, disps, opposite(first)))
}

/// Unilateral mask: logits shifted left-to-right, softmaxed in the right
/// view, then weights shifted back and summed. Near 0 on left-view pixels
/// that the right view cannot see.
pub fn occlusion_mask_rl(field: &MixtureField, disps: &PlaneStack) -> Result<OcclusionMask> {
    Ok(OcclusionMask {
        side: MaskSide::Rl,
        values: two_way_mask(field, disps, ShiftDirection::LeftToRight)?,
    })
}

/// The swapped construction; flags bands on the right side of objects.
pub fn occlusion_mask_lr(field: &MixtureField, disps: &PlaneStack) -> Result<OcclusionMask> {
    Ok(OcclusionMask {
        side: MaskSide::Lr,
        values: two_way_mask(field, disps, ShiftDirection::RightToLeft)?,
    })
}

/// Right-view mask: left-view weights shifted into the right view and summed.
pub fn right_view_mask(field: &MixtureField, disps: &PlaneStack) -> Result<OcclusionMask> {
    check_inputs(field, disps)?;
    let (n, npx) = (field.planes(), field.pixel_count());
    let logits: Vec<f64> = (0..n).flat_map(|i| field.logits(i).iter().copied()).collect();
    let valid: Vec<bool> = (0..n).flat_map(|i| field.valid(i).iter().copied()).collect();
    let probs = masked_softmax(&logits, &valid, n, npx);
    Ok(OcclusionMask {
        side: MaskSide::R,
        values: summed_mask(&probs, disps, ShiftDirection::LeftToRight),
    })
}

/// Average of a prediction and the flipped-back prediction on the flipped input.
pub fn post_process(d: &Map, d_ff: &Map) -> Result<Map> {
    d.ensure_same_shape(d_ff, "flipped disparity")?;
    let data = d.data().iter().zip(d_ff.data()).map(|(a, b)| 0.5 * (a + b)).collect();
    Map::from_vec(d.width(), d.height(), d.channels(), data)
}

/// `M_RL (M_LR d_pp + (1 - M_LR) d) + (1 - M_RL) d_ff` with soft masks.
pub fn distill_label(d: &Map, d_ff: &Map, m_rl: &OcclusionMask, m_lr: &OcclusionMask) -> Result<Map> {
    d.ensure_same_shape(d_ff, "flipped disparity")?;
    if d.channels() != 1 {
        return Err(Error::ShapeMismatch("disparity maps must be single-channel".into()));
    }
    d.ensure_same_shape(&m_rl.values, "rl mask")?;
    d.ensure_same_shape(&m_lr.values, "lr mask")?;
    let data = (0..d.data().len())
        .map(|i| {
            let (a, b) = (d.data()[i], d_ff.data()[i]);
            let pp = 0.5 * (a + b);
            let rl = m_rl.values.data()[i];
            let lr = m_lr.values.data()[i];
            rl * (lr * pp + (1.0 - lr) * a) + (1.0 - rl) * b
        })
        .collect();
    Map::from_vec(d.width(), d.height(), 1, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Constant-disparity stack, all valid.
    fn disps(w: usize, h: usize, values: &[f64]) -> PlaneStack {
        let mut s = PlaneStack::new(w, h, values.len());
        for (i, &d) in values.iter().enumerate() {
            s.layer_mut(i).fill(d);
        }
        s
    }

    /// Two-layer scene: background plane 0 everywhere except foreground columns.
    fn two_layer(w: usize, h: usize, fg: std::ops::Range<usize>, l_bg: f64, l_fg: f64) -> MixtureField {
        let npx = w * h;
        let mut logits = vec![0.0; 2 * npx];
        for y in 0..h {
            for x in 0..w {
                if fg.contains(&x) {
                    logits[npx + y * w + x] = l_fg;
                } else {
                    logits[y * w + x] = l_bg;
                }
            }
        }
        MixtureField::new(w, h, 2, logits, vec![1.0; 2 * npx]).unwrap()
    }

    #[test]
    fn single_plane_border_bands() {
        let f = MixtureField::constant(40, 3, 1, 0.0, 1.0).unwrap();
        let d = disps(40, 3, &[6.0]);
        let rl = occlusion_mask_rl(&f, &d).unwrap();
        let lr = occlusion_mask_lr(&f, &d).unwrap();
        let r = right_view_mask(&f, &d).unwrap();
        for x in 0..40 {
            assert_eq!(rl.values.get(x, 1, 0), if x < 6 { 0.0 } else { 1.0 }, "rl x={x}");
            assert_eq!(lr.values.get(x, 1, 0), if x > 33 { 0.0 } else { 1.0 }, "lr x={x}");
            assert_eq!(r.values.get(x, 1, 0), if x > 33 { 0.0 } else { 1.0 }, "r x={x}");
        }
    }

    #[test]
    fn two_layer_band_left_of_object() {
        // background d = 5, foreground columns [100, 200) at d = 15, nearer wins the softmax
        let f = two_layer(300, 2, 100..200, 40.0, 60.0);
        let d = disps(300, 2, &[5.0, 15.0]);
        let rl = occlusion_mask_rl(&f, &d).unwrap();
        for x in 5..300 {
            let v = rl.values.get(x, 0, 0);
            if (90..100).contains(&x) {
                assert!(v < 1e-6, "x={x} v={v}");
            } else {
                assert!(v > 1.0 - 1e-6, "x={x} v={v}");
            }
        }
        // right view: band right of the object's right edge (object spans [85, 185) there)
        let r = right_view_mask(&f, &d).unwrap();
        for x in 0..295 {
            let v = r.values.get(x, 1, 0);
            if (185..195).contains(&x) {
                assert!(v < 1e-6, "x={x} v={v}");
            } else {
                assert!(v > 1.0 - 1e-6, "x={x} v={v}");
            }
        }
        // swapped construction: band right of the object in the left view
        let lr = occlusion_mask_lr(&f, &d).unwrap();
        for x in 0..285 {
            let v = lr.values.get(x, 0, 0);
            if (200..210).contains(&x) {
                assert!(v < 1e-6, "x={x} v={v}");
            } else {
                assert!(v > 1.0 - 1e-6, "x={x} v={v}");
            }
        }
    }

    #[test]
    fn tied_logits_give_half_in_band() {
        let f = two_layer(300, 1, 100..200, 30.0, 30.0);
        let d = disps(300, 1, &[5.0, 15.0]);
        let rl = occlusion_mask_rl(&f, &d).unwrap();
        assert!((rl.values.get(95, 0, 0) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn equal_disparity_no_occlusion() {
        let f = two_layer(60, 2, 20..40, 40.0, 60.0);
        let d = disps(60, 2, &[4.0, 4.0]);
        let rl = occlusion_mask_rl(&f, &d).unwrap();
        let lr = occlusion_mask_lr(&f, &d).unwrap();
        for x in 4..56 {
            assert!((rl.values.get(x, 0, 0) - 1.0).abs() < 1e-12);
            assert!((lr.values.get(x, 0, 0) - 1.0).abs() < 1e-12);
        }
        let zero = disps(60, 2, &[0.0, 0.0]);
        let rl = occlusion_mask_rl(&f, &zero).unwrap();
        assert!(rl.values.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn uniform_weights_over_equal_planes() {
        let f = MixtureField::constant(30, 2, 3, 0.0, 1.0).unwrap();
        let one = MixtureField::constant(30, 2, 1, 0.0, 1.0).unwrap();
        let a = right_view_mask(&f, &disps(30, 2, &[3.0, 3.0, 3.0])).unwrap();
        let b = right_view_mask(&one, &disps(30, 2, &[3.0])).unwrap();
        for (x, y) in a.values.data().iter().zip(b.values.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn flip_equivariance() {
        let f = two_layer(120, 2, 30..70, 40.0, 52.0);
        let d = disps(120, 2, &[3.0, 9.0]);
        let lr = occlusion_mask_lr(&f, &d).unwrap();
        let rl_flipped = occlusion_mask_rl(&f.flip_horizontal(), &d.flip_horizontal()).unwrap();
        let back = rl_flipped.flip_horizontal();
        for (a, b) in lr.values.data().iter().zip(back.values.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn label_algebra() {
        let d = Map::from_fn(4, 3, 1, |x, y, _| 1.0 + x as f64 + 0.5 * y as f64);
        let d_ff = Map::from_fn(4, 3, 1, |x, y, _| 3.0 - 0.2 * x as f64 + y as f64);
        let mk = |v: f64, side| OcclusionMask {
            side,
            values: Map::filled(4, 3, 1, v),
        };
        let pp = post_process(&d, &d_ff).unwrap();
        assert_eq!(distill_label(&d, &d_ff, &mk(1.0, MaskSide::Rl), &mk(1.0, MaskSide::Lr)).unwrap(), pp);
        assert_eq!(distill_label(&d, &d_ff, &mk(0.0, MaskSide::Rl), &mk(0.3, MaskSide::Lr)).unwrap(), d_ff);
        assert_eq!(distill_label(&d, &d_ff, &mk(1.0, MaskSide::Rl), &mk(0.0, MaskSide::Lr)).unwrap(), d);
        let ten = Map::filled(1, 1, 1, 10.0);
        let twenty = Map::filled(1, 1, 1, 20.0);
        assert_eq!(post_process(&ten, &twenty).unwrap().data(), &[15.0]);
    }
}
