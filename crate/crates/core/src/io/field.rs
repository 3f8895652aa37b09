use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::pfm::{read_pfm, write_pfm, PfmImage};
use crate::error::{Error, Result};
use crate::mixture::{MixtureField, INVALID_LOGIT, SIGMA_MIN};

/// `field.json`: shape plus the per-plane channel files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldManifest {
    pub width: usize,
    pub height: usize,
    pub planes: usize,
    pub logits: Vec<String>,
    pub scales: Vec<String>,
}

/// Writes one PFM per plane for logits and for scales, plus `field.json`.
/// Invalid samples are stored with the invalid-logit surrogate.
pub fn write_field(dir: impl AsRef<Path>, field: &MixtureField) -> Result<FieldManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (w, h, n) = (field.width(), field.height(), field.planes());
    let mut manifest = FieldManifest {
        width: w,
        height: h,
        planes: n,
        logits: Vec::with_capacity(n),
        scales: Vec::with_capacity(n),
    };
    for i in 0..n {
        let logits = field
            .logits(i)
            .iter()
            .zip(field.valid(i))
            .map(|(&l, &ok)| if ok { l as f32 } else { INVALID_LOGIT as f32 })
            .collect();
        let scales = field.scales(i).iter().map(|&s| s as f32).collect();
        let (lname, sname) = (format!("logit_{i:03}.pfm"), format!("scale_{i:03}.pfm"));
        write_pfm(dir.join(&lname), &PfmImage::new(w, h, 1, logits)?)?;
        write_pfm(dir.join(&sname), &PfmImage::new(w, h, 1, scales)?)?;
        manifest.logits.push(lname);
        manifest.scales.push(sname);
    }
    let path = dir.join("field.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Reads a field directory. Scales are floored at the minimum scale to undo
/// single-precision rounding; logits at or below half the surrogate are invalid.
pub fn read_field(dir: impl AsRef<Path>) -> Result<MixtureField> {
    let dir = dir.as_ref();
    let path = dir.join("field.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: FieldManifest =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if m.logits.len() != m.planes || m.scales.len() != m.planes {
        return Err(Error::Format(format!("{}: file lists do not match plane count", path.display())));
    }
    let npx = m.width * m.height;
    let mut logits = Vec::with_capacity(m.planes * npx);
    let mut scales = Vec::with_capacity(m.planes * npx);
    let mut valid = Vec::with_capacity(m.planes * npx);
    for i in 0..m.planes {
        let l = read_pfm(dir.join(&m.logits[i]))?;
        let s = read_pfm(dir.join(&m.scales[i]))?;
        for img in [&l, &s] {
            if img.width != m.width || img.height != m.height || img.channels != 1 {
                return Err(Error::Format(format!("plane {i}: channel file shape differs from manifest")));
            }
        }
        for (&lv, &sv) in l.data.iter().zip(&s.data) {
            let ok = (lv as f64) > INVALID_LOGIT / 2.0;
            logits.push(if ok { lv as f64 } else { INVALID_LOGIT });
            scales.push((sv as f64).max(SIGMA_MIN));
            valid.push(ok);
        }
    }
    MixtureField::with_validity(m.width, m.height, m.planes, logits, scales, valid)
}
