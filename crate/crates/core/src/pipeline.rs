//! File-based stages behind the command-line tool.
//!
//! Every stage reads its inputs from disk and writes its outputs under the run
//! directory, then appends a record to `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::camera::{Intrinsics, RigidPose, StereoRig};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io::{read_disparity_png16, read_field, read_pfm, write_disparity_png16, write_field, write_mask_png8, write_pfm, PfmImage};
use crate::loss::{
    combine_losses, distill_l1, mll_loss, perceptual_loss, smoothness_loss, GradientPyramid, LossMode, LossParts,
};
use crate::metrics::{depth_metrics, Metrics};
use crate::mixture::{compose_depth, mixture_probs, mmp, MixtureField};
use crate::occlusion::{distill_label, occlusion_mask_lr, occlusion_mask_rl, right_view_mask, MaskSide, OcclusionMask};
use crate::planes::{render_depth_stack, render_disparity_stack, PlaneBank};
use crate::raster::{Map, Mask, PlaneStack};
use crate::scene::{random_bank_scene, render_view, scene_mixture_field};
use crate::warp::synthesize_view;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Synth,
    Planes,
    Warp,
    Loss,
    Masks,
    Distill,
    Eval,
    Report,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Planes => "planes",
            Stage::Warp => "warp",
            Stage::Loss => "loss",
            Stage::Masks => "masks",
            Stage::Distill => "distill",
            Stage::Eval => "eval",
            Stage::Report => "report",
        }
    }
}

/// Container for disparity outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Pfm,
    Png16,
}

#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub source: Error,
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}] {}", self.stage.name(), self.source)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub config_hash: String,
    pub seed: u64,
    pub seconds: f64,
    pub outputs: Vec<String>,
}

/// `manifest.json`: tool version, latest config, and one record per stage run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub stages: Vec<StageRecord>,
}

/// Metrics file written by `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub name: String,
    pub metrics: Metrics,
    /// Ground-truth pixels skipped because the prediction was not finite.
    pub pred_invalid: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub mode: LossMode,
    pub parts: LossParts,
    pub total: f64,
    pub mmp: f64,
}

/// Inputs of the `loss` stage; the label and mask switch to distillation mode.
#[derive(Debug, Clone)]
pub struct LossInputs {
    pub field: PathBuf,
    pub left: PathBuf,
    pub right: PathBuf,
    pub mask_r: Option<PathBuf>,
    pub label: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct Run {
    pub config: RunConfig,
    pub seed: u64,
    pub out: PathBuf,
    pub format: Format,
}

fn write_map(path: &Path, map: &Map) -> Result<()> {
    write_pfm(path, &PfmImage::from_map(map)?)
}

pub fn read_map(path: impl AsRef<Path>) -> Result<Map> {
    Ok(read_pfm(path)?.to_map())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn nan_outside(map: &Map, valid: &Mask) -> Map {
    let mut out = map.clone();
    for (v, &ok) in out.data_mut().iter_mut().zip(valid.data()) {
        if !ok {
            *v = f64::NAN;
        }
    }
    out
}

/// Depth from a file: PFM holds depth, PNG holds 16-bit disparity.
pub fn read_depth(path: impl AsRef<Path>, intr: &Intrinsics, rig: &StereoRig) -> Result<Map> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
        let (disp, valid) = read_disparity_png16(path)?;
        let depth = disp.map(|d| rig.depth(intr, d));
        Ok(nan_outside(&depth, &valid))
    } else {
        read_map(path)
    }
}

fn read_mask(path: &Path, side: MaskSide) -> Result<OcclusionMask> {
    let values = read_map(path)?;
    if values.channels() != 1 {
        return Err(Error::Format(format!("{}: mask must be single-channel", path.display())));
    }
    Ok(OcclusionMask { side, values })
}

/// Mixture depth and its validity for a left-view field.
fn field_depth(field: &MixtureField, depths: &PlaneStack) -> Result<(Map, Mask)> {
    compose_depth(&mixture_probs(field, depths)?, depths)
}

impl Run {
    pub fn new(config: RunConfig, seed: u64, out: impl Into<PathBuf>, format: Format) -> Self {
        Run {
            config,
            seed,
            out: out.into(),
            format,
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn setup(&self) -> Result<(Intrinsics, StereoRig, PlaneBank)> {
        self.config.validate()?;
        Ok((self.config.intrinsics()?, self.config.rig()?, self.config.bank()?))
    }

    /// Runs one stage and records it in the manifest; errors are tagged with the stage.
    pub fn stage<F>(&self, stage: Stage, body: F) -> std::result::Result<Vec<PathBuf>, StageError>
    where
        F: FnOnce(&Self) -> Result<Vec<PathBuf>>,
    {
        let tag = |source| StageError { stage, source };
        let start = Instant::now();
        fs::create_dir_all(&self.out).map_err(|e| tag(Error::io(&self.out, e)))?;
        let outputs = body(self).map_err(tag)?;
        self.record(stage, start.elapsed().as_secs_f64(), &outputs).map_err(tag)?;
        Ok(outputs)
    }

    fn record(&self, stage: Stage, seconds: f64, outputs: &[PathBuf]) -> Result<()> {
        let path = self.path(MANIFEST);
        let hash = self.config.hash();
        let mut manifest = match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str::<RunManifest>(&text)
                .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?,
            Err(_) => RunManifest {
                tool: env!("CARGO_PKG_NAME").into(),
                version: env!("CARGO_PKG_VERSION").into(),
                config_hash: hash.clone(),
                config: self.config,
                stages: Vec::new(),
            },
        };
        manifest.version = env!("CARGO_PKG_VERSION").into();
        manifest.config_hash = hash.clone();
        manifest.config = self.config;
        manifest.stages.push(StageRecord {
            stage,
            config_hash: hash,
            seed: self.seed,
            seconds,
            outputs: outputs
                .iter()
                .map(|p| p.strip_prefix(&self.out).unwrap_or(p).display().to_string())
                .collect(),
        });
        write_json(&path, &manifest)
    }

    /// Seeded bank scene: stereo images, ground-truth depth and disparity, and the ideal field.
    pub fn synth(&self) -> Result<Vec<PathBuf>> {
        let (intr, rig, bank) = self.setup()?;
        let scene = random_bank_scene(&bank, &intr, &rig, self.seed, &self.config.scene.generator)?;
        let left = render_view(&scene, &intr, &RigidPose::identity())?;
        let right = render_view(&scene, &intr, &rig.target_to_reference())?;
        let field = scene_mixture_field(&scene, &bank, &intr, &rig, &self.config.scene.ideal)?;

        let mut outputs = Vec::new();
        let scene_path = self.path("scene.json");
        fs::write(&scene_path, scene.to_json()).map_err(|e| Error::io(&scene_path, e))?;
        outputs.push(scene_path);
        for (name, map) in [("left.pfm", &left.image), ("right.pfm", &right.image), ("depth_gt.pfm", &left.depth)] {
            let p = self.path(name);
            write_map(&p, map)?;
            outputs.push(p);
        }
        let disp = left.depth.map(|d| rig.disparity(&intr, d));
        outputs.push(self.write_disparity("disp_gt", &disp, None)?);
        let dir = self.path("field");
        write_field(&dir, &field)?;
        outputs.push(dir);
        Ok(outputs)
    }

    fn write_disparity(&self, stem: &str, disp: &Map, valid: Option<&Mask>) -> Result<PathBuf> {
        match self.format {
            Format::Pfm => {
                let p = self.path(&format!("{stem}.pfm"));
                let m = valid.map_or_else(|| disp.clone(), |v| nan_outside(disp, v));
                write_map(&p, &m)?;
                Ok(p)
            }
            Format::Png16 => {
                let p = self.path(&format!("{stem}.png"));
                write_disparity_png16(&p, disp, valid)?;
                Ok(p)
            }
        }
    }

    pub fn planes(&self) -> Result<Vec<PathBuf>> {
        let (_, _, bank) = self.setup()?;
        let p = self.path("planes.json");
        write_json(&p, &bank.to_json())?;
        Ok(vec![p])
    }

    /// Synthesizes the right view from the left image and field.
    pub fn warp(&self, field: &Path, left: &Path) -> Result<Vec<PathBuf>> {
        let (intr, rig, bank) = self.setup()?;
        let field = read_field(field)?;
        let image = read_map(left)?;
        let syn = synthesize_view(&field, &image, bank.planes(), &rig.target_to_reference(), &intr, &self.config.limits)?;
        let (ip, vp) = (self.path("synth_right.pfm"), self.path("synth_valid.png"));
        write_map(&ip, &syn.image)?;
        write_mask_png8(&vp, &syn.valid.to_map())?;
        Ok(vec![ip, vp])
    }

    pub fn loss(&self, inputs: &LossInputs) -> Result<Vec<PathBuf>> {
        let (intr, rig, bank) = self.setup()?;
        let field = read_field(&inputs.field)?;
        let left = read_map(&inputs.left)?;
        let right = read_map(&inputs.right)?;
        let syn = synthesize_view(&field, &left, bank.planes(), &rig.target_to_reference(), &intr, &self.config.limits)?;
        let mask = inputs.mask_r.as_deref().map(|p| read_mask(p, MaskSide::R)).transpose()?;
        let mask_values = mask.as_ref().map(|m| &m.values);

        let depths = render_depth_stack(bank.planes(), &intr, &self.config.limits)?;
        let probs = mixture_probs(&field, &depths)?;
        let (depth, valid) = compose_depth(&probs, &depths)?;
        let disp = depth.map(|d| rig.disparity(&intr, d));

        let mut parts = LossParts {
            mll: mll_loss(&right, &syn.warped_images, &syn.warped_field, mask_values)?.loss,
            perceptual: perceptual_loss(&right, &syn.image, &GradientPyramid::default(), mask_values)?,
            smoothness: smoothness_loss(&disp, &left)?,
            distill: 0.0,
        };
        let mode = match &inputs.label {
            Some(p) => {
                parts.distill = distill_l1(&disp, &read_map(p)?, Some(&valid))?;
                LossMode::Distill
            }
            None => LossMode::Stage1,
        };
        let record = LossRecord {
            mode,
            parts,
            total: combine_losses(&parts, &self.config.loss, mode),
            mmp: mmp(&probs)?,
        };
        let p = self.path("loss.json");
        write_json(&p, &record)?;
        Ok(vec![p])
    }

    /// Soft occlusion masks of a left-view field.
    pub fn masks(&self, field: &Path) -> Result<Vec<PathBuf>> {
        let (intr, rig, bank) = self.setup()?;
        let field = read_field(field)?;
        let disps = render_disparity_stack(bank.planes(), &intr, &rig, &self.config.limits)?;
        let mut outputs = Vec::new();
        for mask in [
            occlusion_mask_rl(&field, &disps)?,
            occlusion_mask_lr(&field, &disps)?,
            right_view_mask(&field, &disps)?,
        ] {
            let stem = match mask.side {
                MaskSide::Rl => "mask_rl",
                MaskSide::Lr => "mask_lr",
                MaskSide::R => "mask_r",
            };
            let (pfm, png) = (self.path(&format!("{stem}.pfm")), self.path(&format!("{stem}.png")));
            write_map(&pfm, &mask.values)?;
            write_mask_png8(&png, &mask.values)?;
            outputs.extend([pfm, png]);
        }
        Ok(outputs)
    }

    /// Disparity of the field, of the flipped field flipped back, the averaged
    /// prediction, and the blended distillation label, plus the label as depth.
    pub fn distill(&self, field: &Path, mask_rl: &Path, mask_lr: &Path) -> Result<Vec<PathBuf>> {
        let (intr, rig, bank) = self.setup()?;
        let field = read_field(field)?;
        let depths = render_depth_stack(bank.planes(), &intr, &self.config.limits)?;
        let (d, dv) = field_depth(&field, &depths)?;
        let (d_ff, dfv) = field_depth(&field.flip_horizontal(), &depths.flip_horizontal())?;
        let (d_ff, dfv) = (d_ff.flip_horizontal(), dfv.flip_horizontal());
        let to_disp = |m: &Map| m.map(|z| rig.disparity(&intr, z));
        let (disp, disp_ff) = (to_disp(&d), to_disp(&d_ff));

        let m_rl = read_mask(mask_rl, MaskSide::Rl)?;
        let m_lr = read_mask(mask_lr, MaskSide::Lr)?;
        let label = distill_label(&disp, &disp_ff, &m_rl, &m_lr)?;
        let pp = crate::occlusion::post_process(&disp, &disp_ff)?;
        let valid = dv.and(&dfv);

        let mut outputs = Vec::new();
        for (name, map) in [("disp.pfm", &disp), ("disp_ff.pfm", &disp_ff), ("disp_pp.pfm", &pp)] {
            let p = self.path(name);
            write_map(&p, &nan_outside(map, &valid))?;
            outputs.push(p);
        }
        outputs.push(self.write_disparity("label", &label, Some(&valid))?);
        let p = self.path("depth_label.pfm");
        write_map(&p, &nan_outside(&label.map(|x| rig.depth(&intr, x)), &valid))?;
        outputs.push(p);
        Ok(outputs)
    }

    /// Depth metrics of a prediction against ground truth.
    pub fn eval(&self, pred: &Path, gt: &Path, name: &str) -> Result<(EvalRecord, Vec<PathBuf>)> {
        let (intr, rig, _) = self.setup()?;
        let pred = read_depth(pred, &intr, &rig)?;
        let gt = read_depth(gt, &intr, &rig)?;
        pred.ensure_same_shape(&gt, "ground truth")?;
        let gt_ok: Vec<bool> = gt.data().iter().map(|&g| g.is_finite() && g > 0.0).collect();
        let pred_ok: Vec<bool> = pred.data().iter().map(|p| p.is_finite()).collect();
        let pred_invalid = gt_ok.iter().zip(&pred_ok).filter(|&(&g, &p)| g && !p).count();
        let valid = Mask::from_vec(
            gt.width(),
            gt.height(),
            gt_ok.iter().zip(&pred_ok).map(|(&g, &p)| g && p).collect(),
        )?;
        let metrics = depth_metrics(&pred, &gt, &valid, self.config.eval.clip_max, self.config.eval.crop.as_ref())?;
        let record = EvalRecord {
            name: name.to_string(),
            metrics,
            pred_invalid,
        };
        let p = self.path(&format!("metrics_{name}.json"));
        write_json(&p, &record)?;
        Ok((record, vec![p]))
    }

    /// Collects metrics files into `report.csv` and `report.json`.
    pub fn report(&self, inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
        if inputs.is_empty() {
            return Err(Error::EmptyInput("report needs at least one metrics file"));
        }
        let records = inputs
            .iter()
            .map(|p| {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_str::<EvalRecord>(&text).map_err(|e| Error::Format(format!("{}: {e}", p.display())))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut csv = format!("name,{},count\n", Metrics::COLUMNS.join(","));
        for r in &records {
            let vals: Vec<String> = r.metrics.values().iter().map(|v| format!("{v:.6}")).collect();
            csv += &format!("{},{},{}\n", r.name, vals.join(","), r.metrics.count);
        }
        let (cp, jp) = (self.path("report.csv"), self.path("report.json"));
        fs::write(&cp, csv).map_err(|e| Error::io(&cp, e))?;
        write_json(&jp, &records)?;
        Ok(vec![cp, jp])
    }
}
