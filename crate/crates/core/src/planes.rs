//! Orthogonal plane bank: fronto-parallel ("vertical") planes sampled in
//! exponential disparity space and ground planes sampled linearly in camera
//! height, plus per-plane depth and disparity rendering.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{Intrinsics, Pose, StereoRig};
use crate::error::{Error, Result};
use crate::raster::{Map, Mask, PlaneStack};

const UNIT_TOL: f64 = 1e-12;

/// `n^T w = delta` in camera coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    normal: Vector3<f64>,
    distance: f64,
}

impl Plane {
    pub fn new(normal: Vector3<f64>, distance: f64) -> Result<Self> {
        if ((normal.norm() - 1.0).abs() > UNIT_TOL) || !normal.iter().all(|v| v.is_finite()) {
            return Err(Error::param("normal", format!("must be unit length, got norm {}", normal.norm())));
        }
        if !distance.is_finite() {
            return Err(Error::param("delta", "must be finite"));
        }
        Ok(Plane { normal, distance })
    }

    pub fn normal(&self) -> Vector3<f64> {
        self.normal
    }

    pub fn distance(&self) -> f64 {
        self.distance
    }

    /// Signed offset of `w` from the plane.
    pub fn residual(&self, w: &Vector3<f64>) -> f64 {
        self.normal.dot(w) - self.distance
    }

    /// The same plane expressed in the frame `w' = M w + t`.
    pub fn transformed(&self, pose: &impl Pose) -> Result<Plane> {
        let inv = pose
            .linear()
            .try_inverse()
            .ok_or_else(|| Error::InvalidTransform("pose is singular".into()))?;
        let n = inv.transpose() * self.normal;
        let norm = n.norm();
        let distance = (self.distance + n.dot(&pose.translation())) / norm;
        Plane::new(n / norm, distance)
    }

    /// Ray-plane depth at a continuous pixel, if the ray meets the plane in front.
    #[inline]
    pub fn depth_at(&self, intr: &Intrinsics, x: f64, y: f64) -> Option<f64> {
        let denom = self.normal.dot(&intr.ray(x, y));
        let depth = self.distance / denom;
        (denom.abs() > 0.0 && depth > 0.0 && depth.is_finite()).then_some(depth)
    }

    pub fn approx_eq(&self, other: &Plane, tol: f64) -> bool {
        (self.normal - other.normal).abs().max() <= tol
            && (self.distance - other.distance).abs() <= tol * self.distance.abs().max(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlaneKind {
    Vertical,
    Ground,
}

/// Sampling ranges for the bank. Disparities are in pixels, heights in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingParams {
    pub n_vertical: usize,
    pub n_ground: usize,
    pub d_min: f64,
    pub d_max: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub r_max: f64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            n_vertical: 49,
            n_ground: 14,
            d_min: 2.0,
            d_max: 300.0,
            h_min: 1.0,
            h_max: 2.0,
            r_max: 0.5,
        }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_vertical + self.n_ground == 0 {
            return Err(Error::param("n_vertical/n_ground", "bank needs at least one plane"));
        }
        if self.n_vertical == 1 {
            return Err(Error::param("n_vertical", "needs 0 or at least 2 planes"));
        }
        if self.n_ground == 1 {
            return Err(Error::param("n_ground", "needs 0 or at least 2 planes"));
        }
        if !(self.d_min > 0.0 && self.d_min < self.d_max && self.d_max.is_finite()) {
            return Err(Error::param("d_min/d_max", "need 0 < d_min < d_max"));
        }
        if !(self.h_min > 0.0 && self.h_min < self.h_max && self.h_max.is_finite()) {
            return Err(Error::param("h_min/h_max", "need 0 < h_min < h_max"));
        }
        if !(self.r_max >= 0.0 && self.r_max.is_finite()) {
            return Err(Error::param("r_max", "must be non-negative"));
        }
        Ok(())
    }
}

fn check_residual(index: usize, r: f64, r_max: f64) -> Result<()> {
    if !r.is_finite() {
        return Err(Error::InvalidResidual {
            index,
            reason: "residual is not finite".into(),
        });
    }
    if r.abs() > r_max {
        return Err(Error::InvalidResidual {
            index,
            reason: format!("|{r}| exceeds r_max = {r_max}"),
        });
    }
    Ok(())
}

/// Disparities `d_i = d_max (d_min / d_max)^((i + r_i) / (N_v - 1))`.
pub fn vertical_disparities(
    n_vertical: usize,
    d_min: f64,
    d_max: f64,
    residuals: &[f64],
    r_max: f64,
) -> Result<Vec<f64>> {
    if n_vertical < 2 {
        return Err(Error::param("n_vertical", "needs at least 2 planes"));
    }
    if !(d_min > 0.0 && d_min < d_max) {
        return Err(Error::param("d_min/d_max", "need 0 < d_min < d_max"));
    }
    if residuals.len() != n_vertical {
        return Err(Error::ShapeMismatch(format!(
            "{} vertical residuals for {} planes",
            residuals.len(),
            n_vertical
        )));
    }
    let ratio = d_min / d_max;
    let span = (n_vertical - 1) as f64;
    residuals
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            check_residual(i, r, r_max)?;
            let d = d_max * ratio.powf((i as f64 + r) / span);
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::InvalidResidual {
                    index: i,
                    reason: format!("disparity {d} is not positive"),
                });
            }
            Ok(d)
        })
        .collect()
}

/// Fronto-parallel planes `n = [0, 0, 1]`, `delta_i = B f_x / d_i`.
pub fn build_vertical_planes(
    n_vertical: usize,
    d_min: f64,
    d_max: f64,
    rig: &StereoRig,
    intr: &Intrinsics,
    residuals: &[f64],
    r_max: f64,
) -> Result<Vec<Plane>> {
    vertical_disparities(n_vertical, d_min, d_max, residuals, r_max)?
        .into_iter()
        .map(|d| Plane::new(Vector3::z(), rig.baseline * intr.fx / d))
        .collect()
}

/// Ground planes `n = [0, 1, 0]` at heights
/// `delta_i = h_min + (i + r_i) / (N_g - 1) (h_max - h_min)` below the camera.
pub fn build_ground_planes(
    n_ground: usize,
    h_min: f64,
    h_max: f64,
    residuals: &[f64],
    r_max: f64,
) -> Result<Vec<Plane>> {
    if n_ground < 2 {
        return Err(Error::param("n_ground", "needs at least 2 planes"));
    }
    if !(h_min > 0.0 && h_min < h_max) {
        return Err(Error::param("h_min/h_max", "need 0 < h_min < h_max"));
    }
    if residuals.len() != n_ground {
        return Err(Error::ShapeMismatch(format!(
            "{} ground residuals for {} planes",
            residuals.len(),
            n_ground
        )));
    }
    let span = (n_ground - 1) as f64;
    residuals
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            check_residual(i, r, r_max)?;
            let delta = h_min + (i as f64 + r) / span * (h_max - h_min);
            if !(delta > 0.0) {
                return Err(Error::InvalidResidual {
                    index: i,
                    reason: format!("height {delta} is not positive"),
                });
            }
            Plane::new(Vector3::y(), delta)
        })
        .collect()
}

/// Ordered plane set: all vertical planes, then all ground planes.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneBank {
    planes: Vec<Plane>,
    kinds: Vec<PlaneKind>,
    residuals: Vec<f64>,
    params: SamplingParams,
}

impl PlaneBank {
    pub fn build(
        params: SamplingParams,
        rig: &StereoRig,
        intr: &Intrinsics,
        vertical_residuals: &[f64],
        ground_residuals: &[f64],
    ) -> Result<Self> {
        params.validate()?;
        let mut planes = Vec::new();
        let mut kinds = Vec::new();
        if params.n_vertical > 0 {
            planes.extend(build_vertical_planes(
                params.n_vertical,
                params.d_min,
                params.d_max,
                rig,
                intr,
                vertical_residuals,
                params.r_max,
            )?);
            kinds.extend(std::iter::repeat_n(PlaneKind::Vertical, params.n_vertical));
        }
        if params.n_ground > 0 {
            planes.extend(build_ground_planes(
                params.n_ground,
                params.h_min,
                params.h_max,
                ground_residuals,
                params.r_max,
            )?);
            kinds.extend(std::iter::repeat_n(PlaneKind::Ground, params.n_ground));
        }
        let residuals = vertical_residuals
            .iter()
            .chain(ground_residuals)
            .copied()
            .collect();
        Ok(PlaneBank {
            planes,
            kinds,
            residuals,
            params,
        })
    }

    /// Bank with zero residuals.
    pub fn uniform(params: SamplingParams, rig: &StereoRig, intr: &Intrinsics) -> Result<Self> {
        Self::build(
            params,
            rig,
            intr,
            &vec![0.0; params.n_vertical],
            &vec![0.0; params.n_ground],
        )
    }

    pub fn len(&self) -> usize {
        self.planes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.planes.is_empty()
    }

    pub fn planes(&self) -> &[Plane] {
        &self.planes
    }

    pub fn kinds(&self) -> &[PlaneKind] {
        &self.kinds
    }

    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    pub fn params(&self) -> &SamplingParams {
        &self.params
    }

    /// Index of the bank plane matching `plane` within `tol`.
    pub fn find(&self, plane: &Plane, tol: f64) -> Option<usize> {
        self.planes.iter().position(|p| p.approx_eq(plane, tol))
    }

    /// Planes re-expressed in another camera frame.
    pub fn planes_in_frame(&self, pose: &impl Pose) -> Result<Vec<Plane>> {
        self.planes.iter().map(|p| p.transformed(pose)).collect()
    }

    pub fn to_json(&self) -> BankJson {
        BankJson {
            params: self.params,
            planes: self
                .planes
                .iter()
                .zip(&self.kinds)
                .zip(&self.residuals)
                .map(|((p, &kind), &residual)| PlaneEntry {
                    kind,
                    n: [p.normal.x, p.normal.y, p.normal.z],
                    delta: p.distance,
                    residual,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaneEntry {
    pub kind: PlaneKind,
    pub n: [f64; 3],
    pub delta: f64,
    pub residual: f64,
}

/// JSON form of a plane bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankJson {
    pub params: SamplingParams,
    pub planes: Vec<PlaneEntry>,
}

impl TryFrom<BankJson> for PlaneBank {
    type Error = Error;

    fn try_from(json: BankJson) -> Result<Self> {
        json.params.validate()?;
        let mut planes = Vec::with_capacity(json.planes.len());
        let mut kinds = Vec::with_capacity(json.planes.len());
        let mut residuals = Vec::with_capacity(json.planes.len());
        for e in &json.planes {
            planes.push(Plane::new(Vector3::from(e.n), e.delta)?);
            kinds.push(e.kind);
            residuals.push(e.residual);
        }
        let first_ground = kinds.iter().position(|k| *k == PlaneKind::Ground).unwrap_or(kinds.len());
        if kinds[first_ground..].iter().any(|k| *k == PlaneKind::Vertical) {
            return Err(Error::Format("bank must list vertical planes before ground planes".into()));
        }
        if planes.is_empty() {
            return Err(Error::EmptyInput("bank has no planes"));
        }
        Ok(PlaneBank {
            planes,
            kinds,
            residuals,
            params: json.params,
        })
    }
}

/// Clamp range and ray tolerance for rendered plane depths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DepthLimits {
    pub eps_ray: f64,
    pub floor: f64,
    pub ceil: f64,
}

impl Default for DepthLimits {
    fn default() -> Self {
        DepthLimits {
            eps_ray: 1e-6,
            floor: 0.1,
            ceil: 2000.0,
        }
    }
}

/// Per-pixel depth of one plane. Rays that miss the plane (or meet it behind
/// the camera, or outside `[floor, ceil]`) are clamped to the nearer bound and
/// marked invalid.
pub fn render_plane_depth(plane: &Plane, intr: &Intrinsics, limits: &DepthLimits) -> (Map, Mask) {
    let (w, h) = (intr.width, intr.height);
    let mut depth = vec![0.0; w * h];
    let mut valid = vec![false; w * h];
    depth
        .par_chunks_mut(w)
        .zip(valid.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (drow, vrow))| {
            for x in 0..w {
                let denom = plane.normal.dot(&intr.ray(x as f64, y as f64));
                let (d, ok) = if denom.abs() <= limits.eps_ray {
                    (limits.ceil, false)
                } else {
                    let d = plane.distance / denom;
                    if !(d > 0.0) || d > limits.ceil {
                        (limits.ceil, false)
                    } else if d < limits.floor {
                        (limits.floor, false)
                    } else {
                        (d, true)
                    }
                };
                drow[x] = d;
                vrow[x] = ok;
            }
        });
    (
        Map::from_vec(w, h, 1, depth).expect("sized"),
        Mask::from_vec(w, h, valid).expect("sized"),
    )
}

/// `d = f_x B / D` on valid pixels; invalid pixels carry 0.
pub fn plane_disparity(
    plane: &Plane,
    intr: &Intrinsics,
    rig: &StereoRig,
    limits: &DepthLimits,
) -> (Map, Mask) {
    let (depth, valid) = render_plane_depth(plane, intr, limits);
    let mut disp = depth;
    for (d, &ok) in disp.data_mut().iter_mut().zip(valid.data()) {
        *d = if ok { rig.disparity(intr, *d) } else { 0.0 };
    }
    (disp, valid)
}

/// Depth layers for every plane.
pub fn render_depth_stack(planes: &[Plane], intr: &Intrinsics, limits: &DepthLimits) -> Result<PlaneStack> {
    PlaneStack::from_layers(planes.iter().map(|p| render_plane_depth(p, intr, limits)).collect())
}

/// Disparity layers for every plane.
pub fn render_disparity_stack(
    planes: &[Plane],
    intr: &Intrinsics,
    rig: &StereoRig,
    limits: &DepthLimits,
) -> Result<PlaneStack> {
    PlaneStack::from_layers(
        planes
            .iter()
            .map(|p| plane_disparity(p, intr, rig, limits))
            .collect(),
    )
}
