//! Synthetic piecewise-planar stereo scenes: z-buffer rendering, brute-force
//! occlusion ground truth, and ideal mixture fields for round-trip tests.
//!
//! Scene geometry lives in the left (target) camera frame. Each patch is a
//! rectangle in its plane's own 2D frame: origin `delta * n`, first axis the
//! plane projection of x (or z when x is the normal), second axis `n x u`.

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{Intrinsics, Pose, RigidPose, StereoRig};
use crate::error::{Error, Result};
use crate::mixture::MixtureField;
use crate::planes::{Plane, PlaneBank, PlaneKind};
use crate::raster::{Map, Mask};

/// Depth gap below which two surfaces are considered the same.
pub const OCCLUSION_GAP: f64 = 1e-3;

/// Reprojections this close (px) outside the image still count as in view,
/// matching the bilinear sampler's border snap.
const EDGE_SNAP: f64 = 1e-9;

/// Tolerance for matching scene planes against bank planes.
pub const BANK_MATCH_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Extent {
    pub u_min: f64,
    pub u_max: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl Extent {
    fn contains(&self, a: f64, b: f64) -> bool {
        a >= self.u_min && a <= self.u_max && b >= self.v_min && b <= self.v_max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Patch {
    pub plane: Plane,
    pub extent: Extent,
    pub texture_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub patches: Vec<Patch>,
    pub background: Plane,
    pub background_seed: u64,
    pub seed: u64,
    pub light: f64,
}

/// In-plane axes `(u, v)` of a plane's rectangle frame.
pub fn plane_basis(plane: &Plane) -> (Vector3<f64>, Vector3<f64>) {
    let n = plane.normal();
    let mut u = Vector3::x() - n * n.x;
    if u.norm() < 1e-6 {
        u = Vector3::z() - n * n.z;
    }
    let u = u.normalize();
    (u, n.cross(&u))
}

/// Rectangle-frame coordinates of a point (assumed on the plane).
pub fn plane_coords(plane: &Plane, w: &Vector3<f64>) -> Vector2<f64> {
    let (u, v) = plane_basis(plane);
    let rel = w - plane.normal() * plane.distance();
    Vector2::new(rel.dot(&u), rel.dot(&v))
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.patches.is_empty() {
            return Err(Error::Scene("scene needs at least one patch".into()));
        }
        for (i, p) in self.patches.iter().enumerate() {
            let e = &p.extent;
            let finite = [e.u_min, e.u_max, e.v_min, e.v_max].iter().all(|v| v.is_finite());
            if !finite || !(e.u_max > e.u_min) || !(e.v_max > e.v_min) {
                return Err(Error::Scene(format!("patch {i}: extent must be finite and positive")));
            }
            if !(p.plane.distance() > 0.0) {
                return Err(Error::Scene(format!("patch {i}: plane must lie in front of the camera")));
            }
        }
        if !(self.background.distance() > 0.0) {
            return Err(Error::Scene("background plane must lie in front of the camera".into()));
        }
        if !(self.light > 0.0 && self.light <= 1.0) {
            return Err(Error::Scene("light must be in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let scene: SceneSpec = serde_json::from_str(text).map_err(|e| Error::Format(format!("scene json: {e}")))?;
        scene.validate()?;
        Ok(scene)
    }
}

/// Band-limited procedural texture: base colour plus 8 sinusoids over the
/// point's normalized projective coordinates in the scene frame.
#[derive(Debug, Clone)]
struct Texture {
    base: [f64; 3],
    gains: [f64; 3],
    waves: [(f64, f64, f64, f64); 8], // (kx, ky, phase, amplitude), k in radians per unit
}

impl Texture {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = [0.0; 3].map(|_| rng.random_range(0.3..0.7));
        let gains = [0.0; 3].map(|_| rng.random_range(0.6..1.0));
        let mut raw = [(0.0, 0.0, 0.0, 0.0); 8];
        let mut total = 0.0;
        for w in raw.iter_mut() {
            let f: f64 = rng.random_range(2.0..25.0);
            let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let amp: f64 = rng.random_range(0.2..1.0);
            total += amp;
            let k = std::f64::consts::TAU * f;
            *w = (k * theta.cos(), k * theta.sin(), phase, amp);
        }
        for w in raw.iter_mut() {
            w.3 *= 0.25 / total;
        }
        Texture { base, gains, waves: raw }
    }

    fn shade(&self, w: &Vector3<f64>, light: f64, out: &mut [f64]) {
        let (px, py) = (w.x / w.z, w.y / w.z);
        let s: f64 = self.waves.iter().map(|&(kx, ky, ph, a)| a * (kx * px + ky * py + ph).sin()).sum();
        for c in 0..3 {
            out[c] = light * (self.base[c] + self.gains[c] * s);
        }
    }
}

/// Which surface a ray hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Surface {
    Patch(usize),
    Background,
    Miss,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub surface: Surface,
    /// View-frame depth (z) of the hit.
    pub depth: f64,
    /// Hit point in the scene frame.
    pub point: Vector3<f64>,
}

/// Scene with textures and plane frames precomputed.
#[derive(Debug, Clone)]
pub struct PreparedScene {
    spec: SceneSpec,
    frames: Vec<(Vector3<f64>, Vector3<f64>)>,
    textures: Vec<Texture>,
    background: Texture,
}

impl PreparedScene {
    pub fn new(spec: &SceneSpec) -> Result<Self> {
        spec.validate()?;
        Ok(PreparedScene {
            spec: spec.clone(),
            frames: spec.patches.iter().map(|p| plane_basis(&p.plane)).collect(),
            textures: spec.patches.iter().map(|p| Texture::new(p.texture_seed)).collect(),
            background: Texture::new(spec.background_seed),
        })
    }

    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }

    /// Nearest hit along the ray through pixel `(x, y)` of the camera whose
    /// scene-to-view transform is `pose`.
    pub fn ray_cast(&self, intr: &Intrinsics, pose: &RigidPose, x: f64, y: f64) -> Hit {
        let rt = pose.rotation().transpose();
        let center = -(rt * pose.translation());
        let dir = rt * intr.ray(x, y);
        let intersect = |plane: &Plane| {
            let denom = plane.normal().dot(&dir);
            if denom.abs() < 1e-12 {
                return None;
            }
            let s = (plane.distance() - plane.normal().dot(&center)) / denom;
            (s > 0.0).then_some(s)
        };
        let mut best = Hit {
            surface: Surface::Miss,
            depth: f64::INFINITY,
            point: Vector3::zeros(),
        };
        for (i, p) in self.spec.patches.iter().enumerate() {
            if let Some(s) = intersect(&p.plane) {
                if s < best.depth {
                    let w = center + dir * s;
                    let rel = w - p.plane.normal() * p.plane.distance();
                    let (u, v) = self.frames[i];
                    if p.extent.contains(rel.dot(&u), rel.dot(&v)) {
                        best = Hit {
                            surface: Surface::Patch(i),
                            depth: s,
                            point: w,
                        };
                    }
                }
            }
        }
        if let Some(s) = intersect(&self.spec.background) {
            if s < best.depth {
                best = Hit {
                    surface: Surface::Background,
                    depth: s,
                    point: center + dir * s,
                };
            }
        }
        best
    }

    fn shade(&self, hit: &Hit, out: &mut [f64]) {
        match hit.surface {
            Surface::Patch(i) => self.textures[i].shade(&hit.point, self.spec.light, out),
            Surface::Background => self.background.shade(&hit.point, self.spec.light, out),
            Surface::Miss => out.fill(0.0),
        }
    }

    pub fn render(&self, intr: &Intrinsics, pose: &RigidPose) -> RenderedView {
        let (w, h) = (intr.width, intr.height);
        let mut image = vec![0.0; w * h * 3];
        let mut depth = vec![0.0; w * h];
        let mut surface = vec![Surface::Miss; w * h];
        image
            .par_chunks_mut(w * 3)
            .zip(depth.par_chunks_mut(w))
            .zip(surface.par_chunks_mut(w))
            .enumerate()
            .for_each(|(y, ((irow, drow), srow))| {
                for x in 0..w {
                    let hit = self.ray_cast(intr, pose, x as f64, y as f64);
                    self.shade(&hit, &mut irow[x * 3..x * 3 + 3]);
                    drow[x] = hit.depth;
                    srow[x] = hit.surface;
                }
            });
        RenderedView {
            image: Map::from_vec(w, h, 3, image).expect("sized"),
            depth: Map::from_vec(w, h, 1, depth).expect("sized"),
            surface,
        }
    }

    /// `true` where a pixel of the `from` camera is hidden (or out of view) in the `to` camera.
    pub fn occluded_in(&self, intr: &Intrinsics, from: &RigidPose, to: &RigidPose) -> Mask {
        let (w, h) = (intr.width, intr.height);
        let relative = from.inverse().then(to);
        let mut occ = vec![false; w * h];
        occ.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
            for x in 0..w {
                let hit = self.ray_cast(intr, from, x as f64, y as f64);
                if hit.surface == Surface::Miss {
                    row[x] = true;
                    continue;
                }
                let p = relative.apply(&intr.backproject(x as f64, y as f64, hit.depth));
                let Some(u) = intr.project(&p) else {
                    row[x] = true;
                    continue;
                };
                let (xmax, ymax) = ((w - 1) as f64 + EDGE_SNAP, (h - 1) as f64 + EDGE_SNAP);
                if !(u.x >= -EDGE_SNAP && u.x <= xmax && u.y >= -EDGE_SNAP && u.y <= ymax) {
                    row[x] = true;
                    continue;
                }
                let other = self.ray_cast(intr, to, u.x, u.y);
                row[x] = other.depth < p.z - OCCLUSION_GAP;
            }
        });
        Mask::from_vec(w, h, occ).expect("sized")
    }
}

#[derive(Debug, Clone)]
pub struct RenderedView {
    pub image: Map,
    pub depth: Map,
    pub surface: Vec<Surface>,
}

impl RenderedView {
    /// Patch index per pixel, `-1` for background and `-2` for no hit.
    pub fn patch_ids(&self) -> Vec<i64> {
        self.surface
            .iter()
            .map(|s| match s {
                Surface::Patch(i) => *i as i64,
                Surface::Background => -1,
                Surface::Miss => -2,
            })
            .collect()
    }
}

pub fn render_view(scene: &SceneSpec, intr: &Intrinsics, pose: &RigidPose) -> Result<RenderedView> {
    Ok(PreparedScene::new(scene)?.render(intr, pose))
}

/// Ground-truth occlusion, `true` = occluded.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleOcclusion {
    /// Left-view pixels not visible in the right view.
    pub left: Mask,
    /// Right-view pixels not visible in the left view.
    pub right: Mask,
}

pub fn oracle_occlusion(scene: &SceneSpec, intr: &Intrinsics, rig: &StereoRig) -> Result<OracleOcclusion> {
    let prepared = PreparedScene::new(scene)?;
    let left = RigidPose::identity();
    let right = rig.target_to_reference();
    Ok(OracleOcclusion {
        left: prepared.occluded_in(intr, &left, &right),
        right: prepared.occluded_in(intr, &right, &left),
    })
}

/// Left-view pixels hidden from a virtual camera one baseline to the left.
/// This is the ground truth for the swapped (right-side) mask.
pub fn oracle_occlusion_virtual_left(scene: &SceneSpec, intr: &Intrinsics, rig: &StereoRig) -> Result<Mask> {
    let prepared = PreparedScene::new(scene)?;
    let virtual_left = RigidPose::from_translation(Vector3::new(rig.baseline, 0.0, 0.0));
    Ok(prepared.occluded_in(intr, &RigidPose::identity(), &virtual_left))
}

/// Settings for the ideal one-hot field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdealFieldParams {
    /// Logit on the visible plane.
    pub logit: f64,
    /// Extra logit per pixel of the visible plane's disparity; orders planes
    /// front to back once warped. 0 gives plain one-hot logits.
    pub depth_gain: f64,
    pub sigma0: f64,
}

impl Default for IdealFieldParams {
    fn default() -> Self {
        IdealFieldParams {
            logit: 30.0,
            depth_gain: 2.0,
            sigma0: 1e-3,
        }
    }
}

/// Bank index of every scene patch, then of the background.
pub fn bank_indices(scene: &SceneSpec, bank: &PlaneBank) -> Result<(Vec<usize>, usize)> {
    let patches = scene
        .patches
        .iter()
        .enumerate()
        .map(|(i, p)| bank.find(&p.plane, BANK_MATCH_TOL).ok_or(Error::PlaneNotInBank { patch: i }))
        .collect::<Result<Vec<_>>>()?;
    let bg = bank
        .find(&scene.background, BANK_MATCH_TOL)
        .ok_or(Error::PlaneNotInBank { patch: scene.patches.len() })?;
    Ok((patches, bg))
}

/// One-hot field selecting, at each left-view pixel, the bank plane of the visible surface.
pub fn scene_mixture_field(
    scene: &SceneSpec,
    bank: &PlaneBank,
    intr: &Intrinsics,
    rig: &StereoRig,
    params: &IdealFieldParams,
) -> Result<MixtureField> {
    let (patch_idx, bg_idx) = bank_indices(scene, bank)?;
    let view = render_view(scene, intr, &RigidPose::identity())?;
    let (w, h, n) = (intr.width, intr.height, bank.len());
    let npx = w * h;
    let mut logits = vec![0.0; n * npx];
    for px in 0..npx {
        let plane = match view.surface[px] {
            Surface::Patch(i) => patch_idx[i],
            Surface::Background => bg_idx,
            Surface::Miss => continue,
        };
        let disp = rig.disparity(intr, view.depth.data()[px]);
        logits[plane * npx + px] = params.logit + params.depth_gain * disp;
    }
    MixtureField::new(w, h, n, logits, vec![params.sigma0; n * npx])
}

/// Peak signal-to-noise ratio (peak 1) over masked pixels.
pub fn psnr(a: &Map, b: &Map, mask: &Mask) -> Result<f64> {
    a.ensure_same_shape(b, "psnr input")?;
    let c = a.channels();
    let sq: Vec<f64> = (0..a.pixel_count())
        .filter(|&px| mask.data()[px])
        .flat_map(|px| (0..c).map(move |ch| px * c + ch))
        .map(|i| (a.data()[i] - b.data()[i]).powi(2))
        .collect();
    if sq.is_empty() {
        return Err(Error::EmptyInput("no pixels selected for psnr"));
    }
    let mse = crate::numeric::pairwise_sum(&sq) / sq.len() as f64;
    Ok(-10.0 * mse.log10())
}

/// Right-view pixels whose left-view correspondence is visible and whose
/// bilinear footprint in the left view lies entirely on the same surface.
/// Pixels on depth discontinuities cannot be reconstructed by resampling.
pub fn reconstructable_mask(scene: &SceneSpec, intr: &Intrinsics, rig: &StereoRig) -> Result<Mask> {
    let prepared = PreparedScene::new(scene)?;
    let left_pose = RigidPose::identity();
    let right_pose = rig.target_to_reference();
    let left = prepared.render(intr, &left_pose);
    let right = prepared.render(intr, &right_pose);
    let occluded = prepared.occluded_in(intr, &right_pose, &left_pose);
    let (w, h) = (intr.width, intr.height);
    let mut out = Mask::new(w, h, false);
    for y in 0..h {
        for x in 0..w {
            let px = y * w + x;
            if occluded.data()[px] || right.surface[px] == Surface::Miss {
                continue;
            }
            let xl = x as f64 + rig.disparity(intr, right.depth.data()[px]);
            if xl > (w - 1) as f64 {
                continue;
            }
            let (x0, x1) = (xl.floor() as usize, (xl.ceil() as usize).min(w - 1));
            let s = right.surface[px];
            if left.surface[y * w + x0] == s && left.surface[y * w + x1] == s {
                out.set(x, y, true);
            }
        }
    }
    Ok(out)
}

/// Options for [`random_bank_scene`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneGenOptions {
    pub min_patches: usize,
    pub max_patches: usize,
    pub ground_probability: f64,
    /// Minimum disparity gap (px) between any two vertical surfaces.
    pub min_disparity_gap: f64,
    pub min_disparity: f64,
    pub max_disparity: f64,
}

impl Default for SceneGenOptions {
    fn default() -> Self {
        SceneGenOptions {
            min_patches: 2,
            max_patches: 4,
            ground_probability: 0.5,
            min_disparity_gap: 4.0,
            min_disparity: 6.0,
            max_disparity: 60.0,
        }
    }
}

/// Random scene whose patches and background all lie on bank planes.
///
/// The background is the farthest vertical plane. Vertical patches are
/// fronto-parallel rectangles covering a random image window; an optional
/// ground patch covers the lower image.
pub fn random_bank_scene(
    bank: &PlaneBank,
    intr: &Intrinsics,
    rig: &StereoRig,
    seed: u64,
    opts: &SceneGenOptions,
) -> Result<SceneSpec> {
    if opts.min_patches == 0 || opts.max_patches < opts.min_patches {
        return Err(Error::param("patches", "need 1 <= min_patches <= max_patches"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vertical: Vec<usize> = (0..bank.len()).filter(|&i| bank.kinds()[i] == PlaneKind::Vertical).collect();
    let ground: Vec<usize> = (0..bank.len()).filter(|&i| bank.kinds()[i] == PlaneKind::Ground).collect();
    let disp_of = |i: usize| rig.disparity(intr, bank.planes()[i].distance());
    let bg = *vertical
        .iter()
        .max_by(|&&a, &&b| bank.planes()[a].distance().total_cmp(&bank.planes()[b].distance()))
        .ok_or(Error::Scene("bank has no vertical plane".into()))?;

    let count = rng.random_range(opts.min_patches..=opts.max_patches);
    let with_ground = !ground.is_empty() && rng.random_bool(opts.ground_probability.clamp(0.0, 1.0));
    let n_vertical = if with_ground { count - 1 } else { count };

    let mut chosen_disps = vec![disp_of(bg)];
    let mut candidates: Vec<usize> = vertical
        .iter()
        .copied()
        .filter(|&i| (opts.min_disparity..=opts.max_disparity).contains(&disp_of(i)))
        .collect();
    let mut patches = Vec::new();
    let (wf, hf) = (intr.width as f64, intr.height as f64);
    while patches.len() < n_vertical && !candidates.is_empty() {
        let k = rng.random_range(0..candidates.len());
        let idx = candidates.swap_remove(k);
        let d = disp_of(idx);
        if chosen_disps.iter().any(|&o| (o - d).abs() < opts.min_disparity_gap) {
            continue;
        }
        chosen_disps.push(d);
        let plane = bank.planes()[idx];
        let depth = plane.distance();
        let x0 = rng.random_range(0.05..0.65) * wf;
        let x1 = x0 + rng.random_range(0.12..0.35) * wf;
        let y0 = rng.random_range(0.05..0.5) * hf;
        let y1 = y0 + rng.random_range(0.2..0.45) * hf;
        let corners = [(x0, y0), (x1, y1)].map(|(x, y)| plane_coords(&plane, &intr.backproject(x, y, depth)));
        patches.push(Patch {
            plane,
            extent: Extent {
                u_min: corners[0].x.min(corners[1].x),
                u_max: corners[0].x.max(corners[1].x),
                v_min: corners[0].y.min(corners[1].y),
                v_max: corners[0].y.max(corners[1].y),
            },
            texture_seed: rng.random(),
        });
    }
    if with_ground {
        let plane = bank.planes()[ground[rng.random_range(0..ground.len())]];
        let h = plane.distance();
        let z_far: f64 = rng.random_range(15.0..50.0);
        let pts = [
            Vector3::new(-40.0, h, 0.5),
            Vector3::new(40.0, h, z_far),
        ]
        .map(|p| plane_coords(&plane, &p));
        patches.push(Patch {
            plane,
            extent: Extent {
                u_min: pts[0].x.min(pts[1].x),
                u_max: pts[0].x.max(pts[1].x),
                v_min: pts[0].y.min(pts[1].y),
                v_max: pts[0].y.max(pts[1].y),
            },
            texture_seed: rng.random(),
        });
    }
    if patches.is_empty() {
        return Err(Error::Scene("no bank plane satisfies the disparity constraints".into()));
    }
    let spec = SceneSpec {
        patches,
        background: bank.planes()[bg],
        background_seed: rng.random(),
        seed,
        light: rng.random_range(0.8..1.0),
    };
    spec.validate()?;
    Ok(spec)
}

/// Intrinsics from normalized KITTI-style ratios `(0.58 W, 1.92 H, W/2, H/2)`.
pub fn default_intrinsics(width: usize, height: usize) -> Result<Intrinsics> {
    Intrinsics::new(
        0.58 * width as f64,
        1.92 * height as f64,
        0.5 * width as f64,
        0.5 * height as f64,
        width,
        height,
    )
}
