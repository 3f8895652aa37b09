//! Python bindings. Maps cross the boundary as flat row-major float lists
//! with explicit shapes.

use nalgebra::{Matrix3, Vector3};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use orthoplane::camera::{self, RigidPose, StereoRig};
use orthoplane::{config, io, loss, metrics, mixture, occlusion, planes, raster, scene, warp};

fn err(e: orthoplane::Error) -> PyErr {
    match e {
        orthoplane::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for orthoplane::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(err)
    }
}

fn mat3(rows: [[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|r, c| rows[r][c])
}

fn rows3(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]))
}

#[pyclass(name = "Intrinsics", frozen, from_py_object)]
#[derive(Clone)]
struct PyIntrinsics(camera::Intrinsics);

#[pymethods]
impl PyIntrinsics {
    #[new]
    fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> PyResult<Self> {
        camera::Intrinsics::new(fx, fy, cx, cy, width, height).py().map(Self)
    }

    /// KITTI-style ratios `(0.58 W, 1.92 H, W/2, H/2)`.
    #[staticmethod]
    fn kitti(width: usize, height: usize) -> PyResult<Self> {
        scene::default_intrinsics(width, height).py().map(Self)
    }

    #[getter]
    fn fx(&self) -> f64 {
        self.0.fx
    }
    #[getter]
    fn fy(&self) -> f64 {
        self.0.fy
    }
    #[getter]
    fn cx(&self) -> f64 {
        self.0.cx
    }
    #[getter]
    fn cy(&self) -> f64 {
        self.0.cy
    }
    #[getter]
    fn width(&self) -> usize {
        self.0.width
    }
    #[getter]
    fn height(&self) -> usize {
        self.0.height
    }

    fn __repr__(&self) -> String {
        let k = &self.0;
        format!("Intrinsics(fx={}, fy={}, cx={}, cy={}, width={}, height={})", k.fx, k.fy, k.cx, k.cy, k.width, k.height)
    }
}

#[pyclass(name = "Map", frozen, from_py_object)]
#[derive(Clone)]
struct PyMap(raster::Map);

#[pymethods]
impl PyMap {
    #[new]
    #[pyo3(signature = (width, height, channels, data))]
    fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> PyResult<Self> {
        raster::Map::from_vec(width, height, channels, data).py().map(Self)
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width()
    }
    #[getter]
    fn height(&self) -> usize {
        self.0.height()
    }
    #[getter]
    fn channels(&self) -> usize {
        self.0.channels()
    }

    fn get(&self, x: usize, y: usize, c: usize) -> PyResult<f64> {
        if x >= self.0.width() || y >= self.0.height() || c >= self.0.channels() {
            return Err(PyValueError::new_err("index out of range"));
        }
        Ok(self.0.get(x, y, c))
    }

    fn tolist(&self) -> Vec<f64> {
        self.0.data().to_vec()
    }

    fn flip_horizontal(&self) -> Self {
        Self(self.0.flip_horizontal())
    }

    fn __repr__(&self) -> String {
        format!("Map({}x{}x{})", self.0.width(), self.0.height(), self.0.channels())
    }
}

#[pyclass(name = "Plane", frozen, from_py_object)]
#[derive(Clone)]
struct PyPlane(planes::Plane);

#[pymethods]
impl PyPlane {
    #[new]
    fn new(normal: [f64; 3], distance: f64) -> PyResult<Self> {
        planes::Plane::new(Vector3::from(normal), distance).py().map(Self)
    }

    #[getter]
    fn normal(&self) -> [f64; 3] {
        self.0.normal().into()
    }

    #[getter]
    fn distance(&self) -> f64 {
        self.0.distance()
    }

    fn __repr__(&self) -> String {
        let n = self.0.normal();
        format!("Plane(normal=[{}, {}, {}], distance={})", n.x, n.y, n.z, self.0.distance())
    }
}

#[pyclass(name = "PlaneBank", frozen)]
struct PyPlaneBank(planes::PlaneBank);

#[pymethods]
impl PyPlaneBank {
    /// Evenly spaced bank; keyword arguments override the default sampling.
    #[staticmethod]
    #[pyo3(signature = (intrinsics, baseline, n_vertical=49, n_ground=14, d_min=2.0, d_max=300.0, h_min=1.0, h_max=2.0))]
    #[allow(clippy::too_many_arguments)]
    fn uniform(
        intrinsics: &PyIntrinsics,
        baseline: f64,
        n_vertical: usize,
        n_ground: usize,
        d_min: f64,
        d_max: f64,
        h_min: f64,
        h_max: f64,
    ) -> PyResult<Self> {
        let params = planes::SamplingParams {
            n_vertical,
            n_ground,
            d_min,
            d_max,
            h_min,
            h_max,
            ..Default::default()
        };
        let rig = StereoRig::new(baseline).py()?;
        planes::PlaneBank::uniform(params, &rig, &intrinsics.0).py().map(Self)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn planes(&self) -> Vec<PyPlane> {
        self.0.planes().iter().copied().map(PyPlane).collect()
    }

    /// `"vertical"` or `"ground"` per plane.
    fn kinds(&self) -> Vec<&'static str> {
        self.0
            .kinds()
            .iter()
            .map(|k| match k {
                planes::PlaneKind::Vertical => "vertical",
                planes::PlaneKind::Ground => "ground",
            })
            .collect()
    }

    /// Per-plane depth layers and validity, each a flat list.
    fn depth_layers(&self, intrinsics: &PyIntrinsics) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<bool>>)> {
        let stack = planes::render_depth_stack(self.0.planes(), &intrinsics.0, &planes::DepthLimits::default()).py()?;
        Ok(split_stack(&stack))
    }

    fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.0.to_json()).expect("bank serializes")
    }
}

fn split_stack(stack: &raster::PlaneStack) -> (Vec<Vec<f64>>, Vec<Vec<bool>>) {
    (0..stack.planes())
        .map(|i| (stack.layer(i).to_vec(), stack.valid(i).to_vec()))
        .unzip()
}

#[pyclass(name = "MixtureField", frozen, from_py_object)]
#[derive(Clone)]
struct PyMixtureField(mixture::MixtureField);

#[pymethods]
impl PyMixtureField {
    /// `logits` and `scales` are plane-major: `planes` blocks of `width * height` values.
    #[new]
    fn new(width: usize, height: usize, planes: usize, logits: Vec<f64>, scales: Vec<f64>) -> PyResult<Self> {
        mixture::MixtureField::new(width, height, planes, logits, scales).py().map(Self)
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width()
    }
    #[getter]
    fn height(&self) -> usize {
        self.0.height()
    }
    #[getter]
    fn planes(&self) -> usize {
        self.0.planes()
    }

    fn logits(&self, plane: usize) -> PyResult<Vec<f64>> {
        self.check(plane)?;
        Ok(self.0.logits(plane).to_vec())
    }

    fn scales(&self, plane: usize) -> PyResult<Vec<f64>> {
        self.check(plane)?;
        Ok(self.0.scales(plane).to_vec())
    }

    fn flip_horizontal(&self) -> Self {
        Self(self.0.flip_horizontal())
    }

    fn save(&self, dir: &str) -> PyResult<()> {
        io::write_field(dir, &self.0).py().map(|_| ())
    }

    #[staticmethod]
    fn load(dir: &str) -> PyResult<Self> {
        io::read_field(dir).py().map(Self)
    }
}

impl PyMixtureField {
    fn check(&self, plane: usize) -> PyResult<()> {
        if plane >= self.0.planes() {
            return Err(PyValueError::new_err(format!("plane {plane} out of range")));
        }
        Ok(())
    }
}

#[pyclass(name = "Metrics", frozen, get_all)]
struct PyMetrics {
    abs_rel: f64,
    sq_rel: f64,
    rmse: f64,
    rmse_log: f64,
    a1: f64,
    a2: f64,
    a3: f64,
    count: usize,
}

#[pymethods]
impl PyMetrics {
    fn __repr__(&self) -> String {
        format!(
            "Metrics(abs_rel={:.6}, sq_rel={:.6}, rmse={:.6}, rmse_log={:.6}, a1={:.4}, a2={:.4}, a3={:.4}, count={})",
            self.abs_rel, self.sq_rel, self.rmse, self.rmse_log, self.a1, self.a2, self.a3, self.count
        )
    }
}

/// A seeded scene built from bank planes, with its renders and ideal field.
#[pyclass(name = "Scene", frozen)]
struct PyScene {
    spec: scene::SceneSpec,
    intr: camera::Intrinsics,
    rig: StereoRig,
}

#[pymethods]
impl PyScene {
    #[staticmethod]
    #[pyo3(signature = (bank, intrinsics, baseline, seed))]
    fn random(bank: &PyPlaneBank, intrinsics: &PyIntrinsics, baseline: f64, seed: u64) -> PyResult<Self> {
        let rig = StereoRig::new(baseline).py()?;
        let spec = scene::random_bank_scene(&bank.0, &intrinsics.0, &rig, seed, &scene::SceneGenOptions::default()).py()?;
        Ok(PyScene {
            spec,
            intr: intrinsics.0,
            rig,
        })
    }

    /// `(image, depth)` of the left (`"left"`) or right (`"right"`) camera.
    fn render(&self, view: &str) -> PyResult<(PyMap, PyMap)> {
        let pose = match view {
            "left" => RigidPose::identity(),
            "right" => self.rig.target_to_reference(),
            _ => return Err(PyValueError::new_err("view must be 'left' or 'right'")),
        };
        let v = scene::render_view(&self.spec, &self.intr, &pose).py()?;
        Ok((PyMap(v.image), PyMap(v.depth)))
    }

    fn ideal_field(&self, bank: &PyPlaneBank) -> PyResult<PyMixtureField> {
        scene::scene_mixture_field(&self.spec, &bank.0, &self.intr, &self.rig, &scene::IdealFieldParams::default())
            .py()
            .map(PyMixtureField)
    }

    /// Ground-truth occlusion of the left view in the right view (`True` = occluded).
    fn oracle_occlusion_left(&self) -> PyResult<Vec<bool>> {
        Ok(scene::oracle_occlusion(&self.spec, &self.intr, &self.rig).py()?.left.data().to_vec())
    }

    fn to_json(&self) -> String {
        self.spec.to_json()
    }
}

fn stack_for(bank: &PyPlaneBank, intr: &camera::Intrinsics) -> PyResult<raster::PlaneStack> {
    planes::render_depth_stack(bank.0.planes(), intr, &planes::DepthLimits::default()).py()
}

/// Mixture depth of a left-view field: `(depth, valid)`.
#[pyfunction]
fn compose_depth(field: &PyMixtureField, bank: &PyPlaneBank, intrinsics: &PyIntrinsics) -> PyResult<(PyMap, Vec<bool>)> {
    let stack = stack_for(bank, &intrinsics.0)?;
    let probs = mixture::mixture_probs(&field.0, &stack).py()?;
    let (d, valid) = mixture::compose_depth(&probs, &stack).py()?;
    Ok((PyMap(d), valid.data().to_vec()))
}

/// Mean maximum plane probability of the mixture.
#[pyfunction]
fn mmp(field: &PyMixtureField, bank: &PyPlaneBank, intrinsics: &PyIntrinsics) -> PyResult<f64> {
    let stack = stack_for(bank, &intrinsics.0)?;
    mixture::mmp(&mixture::mixture_probs(&field.0, &stack).py()?).py()
}

/// Right view synthesized from the left image: `(image, valid)`.
#[pyfunction]
fn synthesize_right(
    field: &PyMixtureField,
    left: &PyMap,
    bank: &PyPlaneBank,
    intrinsics: &PyIntrinsics,
    baseline: f64,
) -> PyResult<(PyMap, Vec<bool>)> {
    let rig = StereoRig::new(baseline).py()?;
    let syn = warp::synthesize_view(
        &field.0,
        &left.0,
        bank.0.planes(),
        &rig.target_to_reference(),
        &intrinsics.0,
        &planes::DepthLimits::default(),
    )
    .py()?;
    Ok((PyMap(syn.image), syn.valid.data().to_vec()))
}

/// `(M_RL, M_LR, M_R)` soft masks of a left-view field.
#[pyfunction]
fn occlusion_masks(
    field: &PyMixtureField,
    bank: &PyPlaneBank,
    intrinsics: &PyIntrinsics,
    baseline: f64,
) -> PyResult<(PyMap, PyMap, PyMap)> {
    let rig = StereoRig::new(baseline).py()?;
    let disps = planes::render_disparity_stack(bank.0.planes(), &intrinsics.0, &rig, &planes::DepthLimits::default()).py()?;
    Ok((
        PyMap(occlusion::occlusion_mask_rl(&field.0, &disps).py()?.values),
        PyMap(occlusion::occlusion_mask_lr(&field.0, &disps).py()?.values),
        PyMap(occlusion::right_view_mask(&field.0, &disps).py()?.values),
    ))
}

#[pyfunction]
fn distill_label(d: &PyMap, d_ff: &PyMap, m_rl: &PyMap, m_lr: &PyMap) -> PyResult<PyMap> {
    let mask = |side, m: &PyMap| occlusion::OcclusionMask {
        side,
        values: m.0.clone(),
    };
    occlusion::distill_label(
        &d.0,
        &d_ff.0,
        &mask(occlusion::MaskSide::Rl, m_rl),
        &mask(occlusion::MaskSide::Lr, m_lr),
    )
    .py()
    .map(PyMap)
}

/// Per-pixel mixture-Laplace loss and its gradients `(loss, d_logits, d_scales)`.
#[pyfunction]
fn mll_pixel(logits: Vec<f64>, scales: Vec<f64>, errors: Vec<f64>) -> PyResult<(f64, Vec<f64>, Vec<f64>)> {
    let n = logits.len();
    if n == 0 || scales.len() != n || errors.len() != n {
        return Err(PyValueError::new_err("logits, scales and errors need the same nonzero length"));
    }
    if scales.iter().any(|&s| !(s >= mixture::SIGMA_MIN)) {
        return Err(PyValueError::new_err(format!("scales must be at least {}", mixture::SIGMA_MIN)));
    }
    let (mut gl, mut gs) = (vec![0.0; n], vec![0.0; n]);
    let l = loss::mll_pixel(&logits, &scales, &errors, &mut gl, &mut gs);
    Ok((l, gl, gs))
}

#[pyfunction]
#[pyo3(signature = (pred, gt, valid=None, clip_max=80.0))]
fn depth_metrics(pred: &PyMap, gt: &PyMap, valid: Option<Vec<bool>>, clip_max: f64) -> PyResult<PyMetrics> {
    let (w, h) = (gt.0.width(), gt.0.height());
    let mask = match valid {
        Some(v) => raster::Mask::from_vec(w, h, v).py()?,
        None => raster::Mask::new(w, h, true),
    };
    let m = metrics::depth_metrics(&pred.0, &gt.0, &mask, clip_max, None).py()?;
    Ok(PyMetrics {
        abs_rel: m.abs_rel,
        sq_rel: m.sq_rel,
        rmse: m.rmse,
        rmse_log: m.rmse_log,
        a1: m.a1,
        a2: m.a2,
        a3: m.a3,
        count: m.count,
    })
}

/// Plane-induced homography from the target to the reference camera.
#[pyfunction]
fn homography(plane: &PyPlane, rotation: [[f64; 3]; 3], translation: [f64; 3], intrinsics: &PyIntrinsics) -> PyResult<[[f64; 3]; 3]> {
    let pose = RigidPose::new(mat3(rotation), Vector3::from(translation)).py()?;
    Ok(rows3(&warp::homography(&plane.0, &pose, &intrinsics.0).py()?))
}

/// Resize-crop world transform for scale `fs` and crop centre `(px, py)`.
#[pyfunction]
fn compute_rc(intrinsics: &PyIntrinsics, fs: f64, px: f64, py: f64) -> PyResult<[[f64; 3]; 3]> {
    let aug = camera::AugmentParams::new(fs, px, py).py()?;
    Ok(rows3(&camera::compute_rc(&intrinsics.0, &aug)))
}

#[pyfunction]
fn rectify_plane(plane: &PyPlane, rc: [[f64; 3]; 3]) -> PyResult<PyPlane> {
    camera::rectify_plane(&plane.0, &mat3(rc)).py().map(PyPlane)
}

#[pyfunction]
fn read_pfm(path: &str) -> PyResult<PyMap> {
    Ok(PyMap(io::read_pfm(path).py()?.to_map()))
}

#[pyfunction]
fn write_pfm(path: &str, map: &PyMap) -> PyResult<()> {
    io::write_pfm(path, &io::PfmImage::from_map(&map.0).py()?).py()
}

/// Validates a run configuration file and returns it, defaults filled in, as JSON.
#[pyfunction]
fn load_run_config(path: &str) -> PyResult<String> {
    let cfg = config::load_run_config(path).py()?;
    Ok(serde_json::to_string(&cfg).expect("config serializes"))
}

#[pymodule]
fn orthoplane_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyIntrinsics>()?;
    m.add_class::<PyMap>()?;
    m.add_class::<PyPlane>()?;
    m.add_class::<PyPlaneBank>()?;
    m.add_class::<PyMixtureField>()?;
    m.add_class::<PyMetrics>()?;
    m.add_class::<PyScene>()?;
    m.add_function(wrap_pyfunction!(compose_depth, m)?)?;
    m.add_function(wrap_pyfunction!(mmp, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize_right, m)?)?;
    m.add_function(wrap_pyfunction!(occlusion_masks, m)?)?;
    m.add_function(wrap_pyfunction!(distill_label, m)?)?;
    m.add_function(wrap_pyfunction!(mll_pixel, m)?)?;
    m.add_function(wrap_pyfunction!(depth_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(homography, m)?)?;
    m.add_function(wrap_pyfunction!(compute_rc, m)?)?;
    m.add_function(wrap_pyfunction!(rectify_plane, m)?)?;
    m.add_function(wrap_pyfunction!(read_pfm, m)?)?;
    m.add_function(wrap_pyfunction!(write_pfm, m)?)?;
    m.add_function(wrap_pyfunction!(load_run_config, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
