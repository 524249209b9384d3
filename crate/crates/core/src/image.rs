//! Single-channel intensity images.
//!
//! [`Grid`] is a plain row-major real grid (used for gradients and error maps);
//! [`Image`] adds a peak intensity `M` and guarantees every value is finite and
//! inside `[0, M]`.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// Peak intensity used throughout: intensities are normalized to `[0, 1]`.
pub const DEFAULT_PEAK: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return shape_err(format!("grid must be non-empty, got {height}x{width}"));
        }
        if data.len() != height * width {
            return shape_err(format!(
                "{height}x{width} grid needs {} values, got {}",
                height * width,
                data.len()
            ));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A single-channel intensity image with values in `[0, peak]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    grid: Grid,
    peak: f64,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>, peak: f64) -> Result<Self> {
        if !(peak.is_finite() && peak > 0.0) {
            return Err(Error::Config(format!("peak must be positive, got {peak}")));
        }
        let grid = Grid::new(height, width, data)?;
        if let Some((i, v)) = grid
            .as_slice()
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0 && **v <= peak))
        {
            return Err(Error::Domain(format!(
                "intensity {v} at index {i} outside [0, {peak}]"
            )));
        }
        Ok(Self { grid, peak })
    }

    /// Builds an image in the default `[0, 1]` convention.
    pub fn unit(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(height, width, data, DEFAULT_PEAK)
    }

    /// Clamps every value into `[0, peak]`; non-finite values are rejected.
    pub fn from_clamped(
        height: usize,
        width: usize,
        mut data: Vec<f64>,
        peak: f64,
    ) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite intensity".into()));
        }
        for v in &mut data {
            *v = v.clamp(0.0, peak);
        }
        Self::new(height, width, data, peak)
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::unit(height, width, vec![value; height * width])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        peak: f64,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::new(height, width, data, peak)
    }

    /// Converts 8-bit grayscale samples to `[0, 1]` intensities.
    pub fn from_u8(height: usize, width: usize, pixels: &[u8]) -> Result<Self> {
        Self::unit(
            height,
            width,
            pixels.iter().map(|&p| f64::from(p) / 255.0).collect(),
        )
    }

    /// Quantizes to 8 bits, rounding to nearest.
    pub fn to_u8(&self) -> Vec<u8> {
        self.grid
            .as_slice()
            .iter()
            .map(|v| (v / self.peak * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn peak(&self) -> f64 {
        self.peak
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn height(&self) -> usize {
        self.grid.height
    }

    pub fn width(&self) -> usize {
        self.grid.width
    }

    pub fn dims(&self) -> (usize, usize) {
        self.grid.dims()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.grid.as_slice()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.grid.get(row, col)
    }

    pub fn mean(&self) -> f64 {
        self.grid.mean()
    }
}

/// Checks that two images can be compared pixel-by-pixel.
pub fn check_pair(a: &Image, b: &Image) -> Result<()> {
    if a.dims() != b.dims() {
        return shape_err(format!(
            "dimension mismatch: {:?} vs {:?}",
            a.dims(),
            b.dims()
        ));
    }
    if a.peak() != b.peak() {
        return Err(Error::Config(format!(
            "peak mismatch: {} vs {}",
            a.peak(),
            b.peak()
        )));
    }
    Ok(())
}

/// Checks a pair of equal-length, non-empty batches.
pub fn check_batches(sr: &[Image], hr: &[Image]) -> Result<()> {
    if sr.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    if sr.len() != hr.len() {
        return shape_err(format!(
            "batch length mismatch: {} vs {}",
            sr.len(),
            hr.len()
        ));
    }
    sr.iter().zip(hr).try_for_each(|(a, b)| check_pair(a, b))
}
