//! Depth evaluation metrics over valid, optionally cropped pixels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::pairwise_sum;
use crate::raster::{Map, Mask};

pub const CLIP_MIN: f64 = 1e-3;

/// Fractional crop window `[top, bottom) x [left, right)` in units of image size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Crop {
    pub top: f64,
    pub bottom: f64,
    pub left: f64,
    pub right: f64,
}

impl Crop {
    pub fn validate(&self) -> Result<()> {
        let ok = |a: f64, b: f64| (0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b) && a < b;
        if !ok(self.top, self.bottom) || !ok(self.left, self.right) {
            return Err(Error::param("crop", "fractions must satisfy 0 <= top < bottom <= 1 and 0 <= left < right <= 1"));
        }
        Ok(())
    }

    /// Pixel ranges `(rows, cols)`.
    pub fn pixel_ranges(&self, width: usize, height: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let r = |f: f64, n: usize| ((f * n as f64).floor() as usize).min(n);
        (r(self.top, height)..r(self.bottom, height), r(self.left, width)..r(self.right, width))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub count: usize,
}

impl Metrics {
    pub const COLUMNS: [&'static str; 7] = ["abs_rel", "sq_rel", "rmse", "rmse_log", "a1", "a2", "a3"];

    pub fn values(&self) -> [f64; 7] {
        [self.abs_rel, self.sq_rel, self.rmse, self.rmse_log, self.a1, self.a2, self.a3]
    }
}

/// Abs Rel, Sq Rel, RMSE, RMSE log and the 1.25^t accuracies, after clamping
/// both maps to `[CLIP_MIN, clip_max]`.
pub fn depth_metrics(pred: &Map, gt: &Map, valid: &Mask, clip_max: f64, crop: Option<&Crop>) -> Result<Metrics> {
    pred.ensure_same_shape(gt, "ground truth")?;
    if pred.channels() != 1 || valid.width() != pred.width() || valid.height() != pred.height() {
        return Err(Error::ShapeMismatch("metrics need single-channel maps and a matching mask".into()));
    }
    if !(clip_max > CLIP_MIN) {
        return Err(Error::param("clip_max", format!("must exceed {CLIP_MIN}")));
    }
    let (w, h) = (pred.width(), pred.height());
    let (rows, cols) = match crop {
        Some(c) => {
            c.validate()?;
            c.pixel_ranges(w, h)
        }
        None => (0..h, 0..w),
    };
    let n_max = rows.len() * cols.len();
    let mut abs_rel = Vec::with_capacity(n_max);
    let mut sq_rel = Vec::with_capacity(n_max);
    let mut sq = Vec::with_capacity(n_max);
    let mut sq_log = Vec::with_capacity(n_max);
    let mut hits = [0usize; 3];
    let thresholds = [1.25, 1.25f64.powi(2), 1.25f64.powi(3)];
    for y in rows {
        for x in cols.clone() {
            if !valid.get(x, y) {
                continue;
            }
            let g = gt.get(x, y, 0).clamp(CLIP_MIN, clip_max);
            let p = pred.get(x, y, 0).clamp(CLIP_MIN, clip_max);
            if !(g.is_finite() && p.is_finite()) {
                return Err(Error::param("depth", "non-finite depth on a valid pixel"));
            }
            let diff = g - p;
            abs_rel.push(diff.abs() / g);
            sq_rel.push(diff * diff / g);
            sq.push(diff * diff);
            let dl = g.ln() - p.ln();
            sq_log.push(dl * dl);
            let ratio = (p / g).max(g / p);
            for (k, &t) in thresholds.iter().enumerate() {
                if ratio < t {
                    hits[k] += 1;
                }
            }
        }
    }
    let n = abs_rel.len();
    if n == 0 {
        return Err(Error::EmptyInput("no valid pixels to evaluate"));
    }
    let mean = |v: &[f64]| pairwise_sum(v) / n as f64;
    Ok(Metrics {
        abs_rel: mean(&abs_rel),
        sq_rel: mean(&sq_rel),
        rmse: mean(&sq).sqrt(),
        rmse_log: mean(&sq_log).sqrt(),
        a1: hits[0] as f64 / n as f64,
        a2: hits[1] as f64 / n as f64,
        a3: hits[2] as f64 / n as f64,
        count: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> Map {
        Map::from_fn(w, h, 1, |x, y, _| 1.0 + 0.5 * x as f64 + 2.0 * y as f64)
    }

    #[test]
    fn identical_maps() {
        let gt = ramp(6, 4);
        let m = depth_metrics(&gt, &gt, &Mask::new(6, 4, true), 80.0, None).unwrap();
        assert_eq!(m.values(), [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(m.count, 24);
    }

    #[test]
    fn proportional_prediction() {
        let gt = ramp(6, 4);
        let pred = gt.map(|d| 1.3 * d);
        let m = depth_metrics(&pred, &gt, &Mask::new(6, 4, true), 80.0, None).unwrap();
        assert!((m.abs_rel - 0.3).abs() < 1e-15);
        assert_eq!((m.a1, m.a2, m.a3), (0.0, 1.0, 1.0));
        assert!((m.rmse_log - 1.3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn clip_and_crop() {
        let gt = Map::filled(4, 4, 1, 100.0);
        let pred = Map::filled(4, 4, 1, 90.0);
        let m = depth_metrics(&pred, &gt, &Mask::new(4, 4, true), 80.0, None).unwrap();
        assert_eq!(m.abs_rel, 0.0);
        let crop = Crop {
            top: 0.5,
            bottom: 1.0,
            left: 0.25,
            right: 0.75,
        };
        let m = depth_metrics(&pred, &gt, &Mask::new(4, 4, true), 80.0, Some(&crop)).unwrap();
        assert_eq!(m.count, 4);
        let bad = Crop { top: 0.6, bottom: 0.5, ..crop };
        assert!(depth_metrics(&pred, &gt, &Mask::new(4, 4, true), 80.0, Some(&bad)).is_err());
    }

    #[test]
    fn empty_errors() {
        let gt = ramp(3, 3);
        assert!(matches!(
            depth_metrics(&gt, &gt, &Mask::new(3, 3, false), 80.0, None),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn json_keys() {
        let gt = ramp(2, 2);
        let m = depth_metrics(&gt, &gt, &Mask::new(2, 2, true), 80.0, None).unwrap();
        let v: serde_json::Value = serde_json::to_value(m).unwrap();
        for k in Metrics::COLUMNS.iter().chain(&["count"]) {
            assert!(v.get(k).is_some(), "{k}");
        }
    }
}
