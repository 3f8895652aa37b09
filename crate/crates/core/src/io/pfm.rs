use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::Map;

/// Single-precision float image in top-to-bottom row order, interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct PfmImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl PfmImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Format(format!("pfm supports 1 or 3 channels, got {channels}")));
        }
        if width == 0 || height == 0 || data.len() != width * height * channels {
            return Err(Error::Format(format!(
                "pfm data length {} does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(PfmImage {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_map(map: &Map) -> Result<Self> {
        PfmImage::new(
            map.width(),
            map.height(),
            map.channels(),
            map.data().iter().map(|&v| v as f32).collect(),
        )
    }

    pub fn to_map(&self) -> Map {
        Map::from_vec(
            self.width,
            self.height,
            self.channels,
            self.data.iter().map(|&v| v as f64).collect(),
        )
        .expect("validated shape")
    }

    /// Little-endian encoding (negative scale), rows bottom to top.
    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 3 { "PF" } else { "Pf" };
        let mut out = format!("{magic}\n{} {}\n-1\n", self.width, self.height).into_bytes();
        let row = self.width * self.channels;
        out.reserve(self.data.len() * 4);
        for y in (0..self.height).rev() {
            for v in &self.data[y * row..(y + 1) * row] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut line = || -> Result<&str> {
            let rest = &bytes[pos..];
            let end = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| Error::Format("pfm header truncated".into()))?;
            pos += end + 1;
            std::str::from_utf8(&rest[..end])
                .map(str::trim)
                .map_err(|_| Error::Format("pfm header is not ASCII".into()))
        };
        let channels = match line()? {
            "PF" => 3,
            "Pf" => 1,
            other => return Err(Error::Format(format!("bad pfm magic {other:?}"))),
        };
        let dims: Vec<&str> = line()?.split_whitespace().collect();
        let parse_dim = |s: &str| {
            s.parse::<usize>()
                .ok()
                .filter(|&v| v > 0)
                .ok_or_else(|| Error::Format(format!("bad pfm dimension {s:?}")))
        };
        if dims.len() != 2 {
            return Err(Error::Format("pfm dimension line needs width and height".into()));
        }
        let (width, height) = (parse_dim(dims[0])?, parse_dim(dims[1])?);
        let scale_text = line()?;
        let scale: f64 = scale_text
            .parse()
            .map_err(|_| Error::Format(format!("bad pfm scale {scale_text:?}")))?;
        if scale == 0.0 || !scale.is_finite() {
            return Err(Error::Format(format!("bad pfm scale {scale}")));
        }
        let little = scale < 0.0;
        let count = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| Error::Format("pfm dimensions overflow".into()))?;
        let payload = &bytes[pos..];
        if payload.len() < count * 4 {
            return Err(Error::Format(format!(
                "pfm payload truncated: {} bytes, expected {}",
                payload.len(),
                count * 4
            )));
        }
        if payload.len() > count * 4 {
            return Err(Error::Format(format!(
                "pfm payload has {} trailing bytes",
                payload.len() - count * 4
            )));
        }
        let row = width * channels;
        let mut data = vec![0.0f32; count];
        for (i, chunk) in payload.chunks_exact(4).enumerate() {
            let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
            let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
            let (file_row, col) = (i / row, i % row);
            data[(height - 1 - file_row) * row + col] = v;
        }
        PfmImage::new(width, height, channels, data)
    }
}

pub fn write_pfm(path: impl AsRef<Path>, image: &PfmImage) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, image.encode()).map_err(|e| Error::io(path, e))
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<PfmImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    PfmImage::decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_pixel_layout() {
        let img = PfmImage::new(1, 1, 1, vec![0.5]).unwrap();
        let bytes = img.encode();
        let header = b"Pf\n1 1\n-1\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..], &0.5f32.to_le_bytes());
        assert_eq!(PfmImage::decode(&bytes).unwrap(), img);
    }

    #[test]
    fn rows_are_bottom_to_top() {
        let img = PfmImage::new(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let bytes = img.encode();
        let payload = &bytes[b"Pf\n2 2\n-1\n".len()..];
        let first = f32::from_le_bytes(payload[..4].try_into().unwrap());
        assert_eq!(first, 3.0);
    }

    #[test]
    fn big_endian_read() {
        let mut bytes = b"PF\n1 1\n1.0\n".to_vec();
        for v in [1.5f32, -2.0, 0.25] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        let img = PfmImage::decode(&bytes).unwrap();
        assert_eq!(img.data, vec![1.5, -2.0, 0.25]);
    }

    #[test]
    fn malformed_inputs() {
        assert!(matches!(PfmImage::decode(b"P6\n1 1\n-1\n\0\0\0\0"), Err(Error::Format(_))));
        assert!(PfmImage::decode(b"Pf\n1 1\n-1\n\0\0").is_err());
        assert!(PfmImage::decode(b"Pf\n1 x\n-1\n\0\0\0\0").is_err());
        assert!(PfmImage::decode(b"Pf\n1 1\n0\n\0\0\0\0").is_err());
        assert!(PfmImage::decode(b"Pf\n1 1\n-1\n\0\0\0\0\0").is_err());
        assert!(PfmImage::decode(b"Pf\n1 1").is_err());
        assert!(PfmImage::new(1, 1, 2, vec![0.0, 0.0]).is_err());
    }
}
