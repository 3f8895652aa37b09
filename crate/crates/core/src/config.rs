//! Run configuration: a nested JSON document with every section optional.
//!
//! Unknown keys are rejected and every value is range-checked; errors carry
//! the dotted key path of the offending entry.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::camera::{AugmentParams, Intrinsics, StereoRig};
use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::metrics::Crop;
use crate::mixture::SIGMA_MIN;
use crate::planes::{DepthLimits, PlaneBank, SamplingParams};
use crate::scene::{IdealFieldParams, SceneGenOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraConfig {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub baseline_m: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        CameraConfig {
            fx: 0.58 * 640.0,
            fy: 1.92 * 192.0,
            cx: 320.0,
            cy: 96.0,
            width: 640,
            height: 192,
            baseline_m: 0.54,
        }
    }
}

/// Resize-crop settings; the crop centre defaults to the principal point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub fs: f64,
    pub px: Option<f64>,
    pub py: Option<f64>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            fs: 1.0,
            px: None,
            py: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub clip_max: f64,
    pub crop: Option<Crop>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            clip_max: 80.0,
            crop: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub ideal: IdealFieldParams,
    pub generator: SceneGenOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub camera: CameraConfig,
    pub augment: AugmentConfig,
    pub planes: SamplingParams,
    pub loss: LossWeights,
    pub eval: EvalConfig,
    pub scene: SceneConfig,
    pub limits: DepthLimits,
}

fn at(section: &str, err: Error) -> Error {
    match err {
        Error::InvalidParameter { name, reason } => Error::Config {
            path: format!("{section}.{name}"),
            message: reason,
        },
        other => Error::Config {
            path: section.to_string(),
            message: other.to_string(),
        },
    }
}

fn check(ok: bool, path: &str, message: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config {
            path: path.to_string(),
            message: message.to_string(),
        })
    }
}

impl RunConfig {
    pub fn intrinsics(&self) -> Result<Intrinsics> {
        let c = &self.camera;
        Intrinsics::new(c.fx, c.fy, c.cx, c.cy, c.width, c.height).map_err(|e| at("camera", e))
    }

    pub fn rig(&self) -> Result<StereoRig> {
        StereoRig::new(self.camera.baseline_m).map_err(|e| at("camera", e))
    }

    pub fn augment(&self) -> Result<AugmentParams> {
        let a = &self.augment;
        AugmentParams::new(a.fs, a.px.unwrap_or(self.camera.cx), a.py.unwrap_or(self.camera.cy))
            .map_err(|e| at("augment", e))
    }

    pub fn bank(&self) -> Result<PlaneBank> {
        PlaneBank::uniform(self.planes, &self.rig()?, &self.intrinsics()?).map_err(|e| at("planes", e))
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics()?;
        self.rig()?;
        self.augment()?;
        self.planes.validate().map_err(|e| at("planes", e))?;
        self.loss.validate().map_err(|e| at("loss", e))?;

        let e = &self.eval;
        check(e.clip_max.is_finite() && e.clip_max > crate::metrics::CLIP_MIN, "eval.clip_max", "must exceed 1e-3")?;
        if let Some(c) = &e.crop {
            c.validate().map_err(|e| at("eval", e))?;
        }

        let s = &self.scene.ideal;
        check(s.logit.is_finite(), "scene.ideal.logit", "must be finite")?;
        check(s.depth_gain.is_finite() && s.depth_gain >= 0.0, "scene.ideal.depth_gain", "must be non-negative")?;
        check(s.sigma0.is_finite() && s.sigma0 >= SIGMA_MIN, "scene.ideal.sigma0", "must be at least 1e-4")?;
        let g = &self.scene.generator;
        check(g.min_patches >= 1, "scene.generator.min_patches", "must be at least 1")?;
        check(g.max_patches >= g.min_patches, "scene.generator.max_patches", "must be at least min_patches")?;
        check(
            (0.0..=1.0).contains(&g.ground_probability),
            "scene.generator.ground_probability",
            "must be in [0, 1]",
        )?;
        check(
            g.min_disparity_gap >= 0.0 && g.min_disparity_gap.is_finite(),
            "scene.generator.min_disparity_gap",
            "must be non-negative",
        )?;
        check(
            g.min_disparity > 0.0 && g.min_disparity < g.max_disparity && g.max_disparity.is_finite(),
            "scene.generator.min_disparity",
            "need 0 < min_disparity < max_disparity",
        )?;

        let l = &self.limits;
        check(l.eps_ray > 0.0 && l.eps_ray.is_finite(), "limits.eps_ray", "must be positive")?;
        check(
            l.floor > 0.0 && l.floor < l.ceil && l.ceil.is_finite(),
            "limits.floor",
            "need 0 < floor < ceil",
        )?;
        Ok(())
    }

    /// Hex SHA-256 of the fully resolved configuration (defaults filled in).
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

/// Parses and validates a configuration document.
pub fn parse_run_config(text: &str) -> Result<RunConfig> {
    let mut de = serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        Error::Config {
            path: if path == "." { "<root>".into() } else { path },
            message: e.into_inner().to_string(),
        }
    })?;
    de.end().map_err(|e| Error::Config {
        path: "<root>".into(),
        message: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_run_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_run_config(&text)
}
