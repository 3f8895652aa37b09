//! Dense row-major rasters used throughout the crate.
//!
//! [`Map`] stores interleaved channels (`data[(y * width + x) * channels + c]`).
//! [`PlaneStack`] stores one single-channel layer per plane, plane-major, with
//! a per-sample validity flag.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Map {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Map {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Map {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::ShapeMismatch(format!(
                "{}x{}x{} map needs {} values, got {}",
                width,
                height,
                channels,
                width * height * channels,
                data.len()
            )));
        }
        Ok(Map {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds a map by evaluating `f(x, y, c)` at every sample.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Map {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, value: f64) {
        self.data[(y * self.width + x) * self.channels + c] = value;
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let start = (y * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn same_shape(&self, other: &Map) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn ensure_same_shape(&self, other: &Map, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Map {
        Map {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Mirror left-right.
    pub fn flip_horizontal(&self) -> Map {
        Map::from_fn(self.width, self.height, self.channels, |x, y, c| {
            self.get(self.width - 1 - x, y, c)
        })
    }

    /// Extracts one channel as a single-channel map.
    pub fn channel(&self, c: usize) -> Map {
        Map::from_fn(self.width, self.height, 1, |x, y, _| self.get(x, y, c))
    }

    /// Bilinear sample at a continuous pixel position.
    ///
    /// Returns `None` when the position lies outside `[0, w-1] x [0, h-1]`.
    /// Positions within 1e-9 px of the border are snapped onto it.
    pub fn sample_bilinear(&self, x: f64, y: f64, out: &mut [f64]) -> bool {
        let (Some((x0, x1, fx)), Some((y0, y1, fy))) =
            (bilinear_axis(x, self.width), bilinear_axis(y, self.height))
        else {
            return false;
        };
        for (c, o) in out.iter_mut().enumerate().take(self.channels) {
            let v00 = self.get(x0, y0, c);
            let v10 = self.get(x1, y0, c);
            let v01 = self.get(x0, y1, c);
            let v11 = self.get(x1, y1, c);
            let top = v00 + (v10 - v00) * fx;
            let bottom = v01 + (v11 - v01) * fx;
            *o = top + (bottom - top) * fy;
        }
        true
    }
}

/// Neighbouring indices and fractional weight along one axis.
#[inline]
pub(crate) fn bilinear_axis(pos: f64, len: usize) -> Option<(usize, usize, f64)> {
    const SNAP: f64 = 1e-9;
    if len == 0 || !pos.is_finite() {
        return None;
    }
    let last = (len - 1) as f64;
    let p = if pos < 0.0 && pos > -SNAP {
        0.0
    } else if pos > last && pos < last + SNAP {
        last
    } else {
        pos
    };
    if !(0.0..=last).contains(&p) {
        return None;
    }
    let i0 = p.floor() as usize;
    let frac = p - i0 as f64;
    let i1 = (i0 + 1).min(len - 1);
    Some((i0, i1, frac))
}

/// Per-pixel boolean validity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, value: bool) -> Self {
        Mask {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{width}x{height} mask needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Mask {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [bool] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn and(&self, other: &Mask) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a && b)
                .collect(),
        }
    }

    pub fn flip_horizontal(&self) -> Mask {
        let w = self.width;
        let data = (0..self.data.len()).map(|i| self.data[i - i % w + (w - 1 - i % w)]).collect();
        Mask::from_vec(w, self.height, data).expect("sized")
    }

    pub fn to_map(&self) -> Map {
        Map::from_fn(self.width, self.height, 1, |x, y, _| {
            if self.get(x, y) {
                1.0
            } else {
                0.0
            }
        })
    }
}

/// One single-channel layer per plane (depths, disparities, ...), with validity.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneStack {
    width: usize,
    height: usize,
    planes: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl PlaneStack {
    pub fn new(width: usize, height: usize, planes: usize) -> Self {
        let n = width * height * planes;
        PlaneStack {
            width,
            height,
            planes,
            values: vec![0.0; n],
            valid: vec![true; n],
        }
    }

    /// Stacks single-channel layers that all share one size.
    pub fn from_layers(layers: Vec<(Map, Mask)>) -> Result<Self> {
        let Some((first, _)) = layers.first() else {
            return Err(Error::EmptyInput("plane stack needs at least one layer"));
        };
        let (width, height) = (first.width(), first.height());
        let mut stack = PlaneStack::new(width, height, layers.len());
        for (i, (map, mask)) in layers.into_iter().enumerate() {
            if map.width() != width || map.height() != height || map.channels() != 1 {
                return Err(Error::ShapeMismatch(format!("layer {i} does not match {width}x{height}x1")));
            }
            stack.layer_mut(i).copy_from_slice(map.data());
            stack.valid_mut(i).copy_from_slice(mask.data());
        }
        Ok(stack)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn planes(&self) -> usize {
        self.planes
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn layer(&self, plane: usize) -> &[f64] {
        let n = self.pixel_count();
        &self.values[plane * n..(plane + 1) * n]
    }

    pub fn layer_mut(&mut self, plane: usize) -> &mut [f64] {
        let n = self.pixel_count();
        &mut self.values[plane * n..(plane + 1) * n]
    }

    pub fn valid(&self, plane: usize) -> &[bool] {
        let n = self.pixel_count();
        &self.valid[plane * n..(plane + 1) * n]
    }

    pub fn valid_mut(&mut self, plane: usize) -> &mut [bool] {
        let n = self.pixel_count();
        &mut self.valid[plane * n..(plane + 1) * n]
    }

    #[inline]
    pub fn value(&self, plane: usize, pixel: usize) -> f64 {
        self.values[plane * self.pixel_count() + pixel]
    }

    #[inline]
    pub fn is_valid(&self, plane: usize, pixel: usize) -> bool {
        self.valid[plane * self.pixel_count() + pixel]
    }

    pub fn layer_map(&self, plane: usize) -> Map {
        Map::from_vec(self.width, self.height, 1, self.layer(plane).to_vec())
            .expect("layer length matches")
    }

    pub fn layer_mask(&self, plane: usize) -> Mask {
        Mask::from_vec(self.width, self.height, self.valid(plane).to_vec())
            .expect("layer length matches")
    }

    /// Mirror every layer left-right.
    pub fn flip_horizontal(&self) -> PlaneStack {
        let mut out = self.clone();
        let (w, h) = (self.width, self.height);
        for p in 0..self.planes {
            for y in 0..h {
                for x in 0..w {
                    let src = p * w * h + y * w + (w - 1 - x);
                    let dst = p * w * h + y * w + x;
                    out.values[dst] = self.values[src];
                    out.valid[dst] = self.valid[src];
                }
            }
        }
        out
    }
}
