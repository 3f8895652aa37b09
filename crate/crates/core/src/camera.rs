//! Pinhole cameras, relative poses, and the resize-crop transformation.
//!
//! Coordinates are x right, y down, z forward; pixel `(0, 0)` is the centre of
//! the top-left pixel.
//!
//! Resize-crop augmentation is modelled as a change of world coordinates
//! `w~ = R_C w`. A pixel `u` seen at depth `D` reappears at pixel
//! `u~ = c + (u - p) / f_s` with depth `f_s * D`, where `c` is the principal
//! point and `p` the crop centre. Planes and poses are rectified into the
//! augmented frame so plane-induced homographies stay exact.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::planes::Plane;
use crate::raster::Map;

const ORTHO_TOL: f64 = 1e-12;
const SINGULAR_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let intr = Intrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fx.is_finite()) {
            return Err(Error::param("fx", format!("must be positive, got {}", self.fx)));
        }
        if !(self.fy > 0.0 && self.fy.is_finite()) {
            return Err(Error::param("fy", format!("must be positive, got {}", self.fy)));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::param("cx/cy", "principal point must be finite"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::param("width/height", "image must be at least 1x1"));
        }
        Ok(())
    }

    pub fn k(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn k_inv(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Viewing ray `K^-1 [x, y, 1]` (unit z component).
    #[inline]
    pub fn ray(&self, x: f64, y: f64) -> Vector3<f64> {
        Vector3::new((x - self.cx) / self.fx, (y - self.cy) / self.fy, 1.0)
    }

    #[inline]
    pub fn backproject(&self, x: f64, y: f64, depth: f64) -> Vector3<f64> {
        self.ray(x, y) * depth
    }

    /// Projects a camera-frame point; `None` when it is not in front of the camera.
    #[inline]
    pub fn project(&self, w: &Vector3<f64>) -> Option<Vector2<f64>> {
        if w.z <= 0.0 {
            return None;
        }
        Some(Vector2::new(
            self.fx * w.x / w.z + self.cx,
            self.fy * w.y / w.z + self.cy,
        ))
    }
}

/// Common view of rigid and rectified (non-orthogonal) poses: `w' = M w + t`.
pub trait Pose {
    fn linear(&self) -> Matrix3<f64>;
    fn translation(&self) -> Vector3<f64>;

    fn apply(&self, w: &Vector3<f64>) -> Vector3<f64> {
        self.linear() * w + self.translation()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidPose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidPose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if ortho > ORTHO_TOL {
            return Err(Error::InvalidTransform(format!(
                "rotation is not orthonormal (max |R^T R - I| = {ortho:e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ORTHO_TOL {
            return Err(Error::InvalidTransform(format!("rotation has det {det}")));
        }
        Ok(RigidPose {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        RigidPose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        RigidPose {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    /// `w -> next(self(w))`.
    pub fn then(&self, next: &RigidPose) -> RigidPose {
        RigidPose {
            rotation: next.rotation * self.rotation,
            translation: next.rotation * self.translation + next.translation,
        }
    }

    pub fn inverse(&self) -> RigidPose {
        let rt = self.rotation.transpose();
        RigidPose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }
}

impl Pose for RigidPose {
    fn linear(&self) -> Matrix3<f64> {
        self.rotation
    }

    fn translation(&self) -> Vector3<f64> {
        self.translation
    }
}

/// Pose whose linear part need not be orthogonal (a rigid pose seen through `R_C`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneralPose {
    matrix: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl GeneralPose {
    pub fn new(matrix: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let det = matrix.determinant();
        if det.abs() <= SINGULAR_TOL || !det.is_finite() {
            return Err(Error::InvalidTransform(format!("pose matrix is singular (det {det:e})")));
        }
        Ok(GeneralPose {
            matrix,
            translation,
        })
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }
}

impl Pose for GeneralPose {
    fn linear(&self) -> Matrix3<f64> {
        self.matrix
    }

    fn translation(&self) -> Vector3<f64> {
        self.translation
    }
}

/// Resize-crop parameters: scale `fs` and crop centre `(px, py)` in original pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub fs: f64,
    pub px: f64,
    pub py: f64,
}

impl AugmentParams {
    pub fn new(fs: f64, px: f64, py: f64) -> Result<Self> {
        let aug = AugmentParams { fs, px, py };
        aug.validate()?;
        Ok(aug)
    }

    /// No scaling, crop centred on the principal point.
    pub fn identity(intr: &Intrinsics) -> Self {
        AugmentParams {
            fs: 1.0,
            px: intr.cx,
            py: intr.cy,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fs > 0.0 && self.fs.is_finite()) {
            return Err(Error::param("fs", format!("must be positive, got {}", self.fs)));
        }
        if !(self.px.is_finite() && self.py.is_finite()) {
            return Err(Error::param("px/py", "crop centre must be finite"));
        }
        Ok(())
    }

    /// Pixel in the augmented frame that shows original pixel `u`.
    pub fn map_pixel(&self, intr: &Intrinsics, u: Vector2<f64>) -> Vector2<f64> {
        Vector2::new(
            intr.cx + (u.x - self.px) / self.fs,
            intr.cy + (u.y - self.py) / self.fs,
        )
    }

    pub fn unmap_pixel(&self, intr: &Intrinsics, u: Vector2<f64>) -> Vector2<f64> {
        Vector2::new(
            self.px + self.fs * (u.x - intr.cx),
            self.py + self.fs * (u.y - intr.cy),
        )
    }
}

/// Calibrated stereo pair. The target (left) camera sits at the origin and the
/// reference (right) camera is displaced by `+baseline` along x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StereoRig {
    pub baseline: f64,
}

impl StereoRig {
    pub fn new(baseline: f64) -> Result<Self> {
        if !(baseline > 0.0 && baseline.is_finite()) {
            return Err(Error::param("baseline_m", format!("must be positive, got {baseline}")));
        }
        Ok(StereoRig { baseline })
    }

    /// Target -> reference transform: `R = I`, `t = [-B, 0, 0]`.
    pub fn target_to_reference(&self) -> RigidPose {
        RigidPose::from_translation(Vector3::new(-self.baseline, 0.0, 0.0))
    }

    /// `d = f_x B / D`.
    #[inline]
    pub fn disparity(&self, intr: &Intrinsics, depth: f64) -> f64 {
        intr.fx * self.baseline / depth
    }

    #[inline]
    pub fn depth(&self, intr: &Intrinsics, disparity: f64) -> f64 {
        intr.fx * self.baseline / disparity
    }
}

/// World-coordinate transformation induced by resize-crop augmentation.
pub fn compute_rc(intr: &Intrinsics, aug: &AugmentParams) -> Matrix3<f64> {
    Matrix3::new(
        1.0,
        0.0,
        (intr.cx - aug.px) / intr.fx,
        0.0,
        1.0,
        (intr.cy - aug.py) / intr.fy,
        0.0,
        0.0,
        aug.fs,
    )
}

fn checked_inverse(rc: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let det = rc.determinant();
    if det.abs() <= SINGULAR_TOL || !det.is_finite() {
        return Err(Error::InvalidTransform(format!("transform is singular (det {det:e})")));
    }
    rc.try_inverse()
        .ok_or_else(|| Error::InvalidTransform("transform is not invertible".into()))
}

/// Expresses `plane` in the coordinates `w~ = rc * w`.
pub fn rectify_plane(plane: &Plane, rc: &Matrix3<f64>) -> Result<Plane> {
    let inv_t = checked_inverse(rc)?.transpose();
    let n = inv_t * plane.normal();
    let norm = n.norm();
    Plane::new(n / norm, plane.distance() / norm)
}

/// Conjugates a relative pose into the augmented frame: `M = rc R rc^-1`, `t~ = rc t`.
pub fn rectify_pose(pose: &RigidPose, rc: &Matrix3<f64>) -> Result<GeneralPose> {
    let inv = checked_inverse(rc)?;
    GeneralPose::new(rc * pose.rotation() * inv, rc * pose.translation())
}

/// Per-pixel original-image position of an augmented image, normalised so the
/// original corners map to `±1`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentGrid {
    /// Two channels: normalised x, normalised y.
    pub grid: Map,
    /// Set when any value falls outside `[-1, 1]` (crop window leaves the image).
    pub out_of_range: bool,
}

/// Normalised original-image coordinates of every augmented pixel.
///
/// The augmented pixel `u~` samples original pixel `P = P_c + fs (u~ - S_c)`,
/// where `S_c = ((W-1)/2, (H-1)/2)` is the image centre in pixel-centre
/// coordinates. `x in [0, W-1]` maps linearly onto `[-1, 1]`.
pub fn augment_grid(aug: &AugmentParams, intr: &Intrinsics) -> AugmentGrid {
    let (w, h) = (intr.width, intr.height);
    let centre_x = (w as f64 - 1.0) / 2.0;
    let centre_y = (h as f64 - 1.0) / 2.0;
    let norm = |p: f64, len: usize| {
        if len > 1 {
            2.0 * p / (len as f64 - 1.0) - 1.0
        } else {
            0.0
        }
    };
    let mut out_of_range = false;
    let grid = Map::from_fn(w, h, 2, |x, y, c| {
        let g = if c == 0 {
            norm(aug.px + aug.fs * (x as f64 - centre_x), w)
        } else {
            norm(aug.py + aug.fs * (y as f64 - centre_y), h)
        };
        if g.abs() > 1.0 + 1e-12 {
            out_of_range = true;
        }
        g
    });
    AugmentGrid { grid, out_of_range }
}
