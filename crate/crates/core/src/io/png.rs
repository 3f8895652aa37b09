use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use png::{BitDepth, ColorType, Decoder, Encoder, Transformations};

use crate::error::{Error, Result};
use crate::raster::{Map, Mask};

/// Largest disparity a 16-bit PNG can hold at 1/256 px resolution.
pub const PNG16_MAX_DISPARITY: f64 = 65535.0 / 256.0;

fn encode_gray(path: &Path, width: usize, height: usize, depth: BitDepth, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(ColorType::Grayscale);
    enc.set_depth(depth);
    let fmt = |e: png::EncodingError| Error::Format(format!("{}: {e}", path.display()));
    let mut writer = enc.write_header().map_err(fmt)?;
    writer.write_image_data(bytes).map_err(fmt)?;
    writer.finish().map_err(fmt)
}

fn decode_gray(path: &Path, depth: BitDepth) -> Result<(usize, usize, Vec<u8>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = Decoder::new(BufReader::new(file));
    dec.set_transformations(Transformations::IDENTITY);
    let fmt = |e: png::DecodingError| Error::Format(format!("{}: {e}", path.display()));
    let mut reader = dec.read_info().map_err(fmt)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Format(format!("{}: image too large", path.display())))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(fmt)?;
    if info.color_type != ColorType::Grayscale || info.bit_depth != depth {
        return Err(Error::Format(format!(
            "{}: expected {depth:?} grayscale, found {:?} {:?}",
            path.display(),
            info.bit_depth,
            info.color_type
        )));
    }
    buf.truncate(info.line_size * info.height as usize);
    Ok((info.width as usize, info.height as usize, buf))
}

/// Stores `round(256 d)` as 16-bit grayscale; invalid pixels (and values
/// that round to 0) are stored as 0.
pub fn write_disparity_png16(path: impl AsRef<Path>, disp: &Map, valid: Option<&Mask>) -> Result<()> {
    let path = path.as_ref();
    if disp.channels() != 1 {
        return Err(Error::Format("disparity png needs a single-channel map".into()));
    }
    let mut bytes = Vec::with_capacity(disp.data().len() * 2);
    for (i, &d) in disp.data().iter().enumerate() {
        let ok = valid.is_none_or(|m| m.data()[i]);
        let stored = if !ok || !(d > 0.0) {
            0u16
        } else if d > PNG16_MAX_DISPARITY {
            return Err(Error::Format(format!(
                "disparity {d} exceeds the 16-bit png range {PNG16_MAX_DISPARITY}"
            )));
        } else {
            (256.0 * d).round() as u16
        };
        bytes.extend_from_slice(&stored.to_be_bytes());
    }
    encode_gray(path, disp.width(), disp.height(), BitDepth::Sixteen, &bytes)
}

/// Reads a 16-bit disparity png; stored 0 means invalid.
pub fn read_disparity_png16(path: impl AsRef<Path>) -> Result<(Map, Mask)> {
    let (w, h, buf) = decode_gray(path.as_ref(), BitDepth::Sixteen)?;
    let raw: Vec<u16> = buf.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
    let disp = raw.iter().map(|&v| v as f64 / 256.0).collect();
    let valid = raw.iter().map(|&v| v != 0).collect();
    Ok((Map::from_vec(w, h, 1, disp)?, Mask::from_vec(w, h, valid)?))
}

/// Stores `round(255 m)` for a soft mask in `[0, 1]`.
pub fn write_mask_png8(path: impl AsRef<Path>, mask: &Map) -> Result<()> {
    if mask.channels() != 1 {
        return Err(Error::Format("mask png needs a single-channel map".into()));
    }
    let bytes: Vec<u8> = mask.data().iter().map(|&m| (255.0 * m.clamp(0.0, 1.0)).round() as u8).collect();
    encode_gray(path.as_ref(), mask.width(), mask.height(), BitDepth::Eight, &bytes)
}

pub fn read_mask_png8(path: impl AsRef<Path>) -> Result<Map> {
    let (w, h, buf) = decode_gray(path.as_ref(), BitDepth::Eight)?;
    Map::from_vec(w, h, 1, buf.iter().map(|&v| v as f64 / 255.0).collect())
}
