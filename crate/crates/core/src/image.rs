//! RGB raster with components in `[0, 1]`.

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const LUMA_R: f64 = 0.299;
pub const LUMA_G: f64 = 0.587;
pub const LUMA_B: f64 = 0.114;

/// Rec.601 luma of an RGB triple.
#[inline]
pub fn luma<T: Real>(p: [T; 3]) -> T {
    T::lit(LUMA_R) * p[0] + T::lit(LUMA_G) * p[1] + T::lit(LUMA_B) * p[2]
}

/// Row-major `height x width` RGB image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer<T> {
    width: usize,
    height: usize,
    pixels: Vec<[T; 3]>,
}

impl<T: Real> ImageBuffer<T> {
    /// Validating constructor: dimensions must be positive and every component in `[0, 1]`.
    pub fn new(width: usize, height: usize, pixels: Vec<[T; 3]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDimensions(format!(
                "image must be non-empty, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::dim("image pixels", width * height, pixels.len()));
        }
        for (idx, p) in pixels.iter().enumerate() {
            for &v in p {
                if !(v >= T::zero() && v <= T::one()) {
                    return Err(Error::InvalidValue(format!(
                        "pixel {idx} component {v} outside [0, 1]"
                    )));
                }
            }
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Builds an image, clamping every component into `[0, 1]`. NaN maps to 0.
    pub fn from_fn_clamped(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [T; 3]) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y).map(clamp01));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn constant(width: usize, height: usize, rgb: [T; 3]) -> Result<Self> {
        Self::new(width, height, vec![rgb; width * height])
    }

    pub(crate) fn from_parts_unchecked(width: usize, height: usize, pixels: Vec<[T; 3]>) -> Self {
        debug_assert_eq!(pixels.len(), width * height);
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[[T; 3]] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [T; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn into_pixels(self) -> Vec<[T; 3]> {
        self.pixels
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for row in self.pixels.chunks(self.width) {
            pixels.extend(row.iter().rev());
        }
        Self::from_parts_unchecked(self.width, self.height, pixels)
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 || x0 + width > self.width || y0 + height > self.height {
            return Err(Error::InvalidDimensions(format!(
                "crop {width}x{height}+{x0}+{y0} outside {}x{} image",
                self.width, self.height
            )));
        }
        let mut pixels = Vec::with_capacity(width * height);
        for y in y0..y0 + height {
            let start = y * self.width + x0;
            pixels.extend_from_slice(&self.pixels[start..start + width]);
        }
        Ok(Self::from_parts_unchecked(width, height, pixels))
    }

    /// Applies a per-pixel map and clamps the result into `[0, 1]`.
    pub fn map_clamped(&self, f: impl Fn([T; 3]) -> [T; 3]) -> Self {
        let pixels = self.pixels.iter().map(|&p| f(p).map(clamp01)).collect();
        Self::from_parts_unchecked(self.width, self.height, pixels)
    }

    pub fn luma_plane(&self) -> Vec<T> {
        self.pixels.iter().map(|&p| luma(p)).collect()
    }

    pub fn cast<U: Real>(&self) -> ImageBuffer<U> {
        let pixels = self
            .pixels
            .iter()
            .map(|p| p.map(|v| clamp01(U::lit(v.as_f64()))))
            .collect();
        ImageBuffer::from_parts_unchecked(self.width, self.height, pixels)
    }

    /// Largest absolute per-component difference between two same-shape images.
    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        if !self.same_shape(other) {
            return Err(Error::dim("image shape", self.len(), other.len()));
        }
        Ok(self
            .pixels
            .iter()
            .zip(&other.pixels)
            .flat_map(|(a, b)| (0..3).map(move |c| (a[c] - b[c]).abs()))
            .fold(T::zero(), T::max))
    }

    pub fn channel_mean(&self, c: usize) -> T {
        self.pixels.iter().map(|p| p[c]).sum::<T>() / T::from_usize_lossy(self.len())
    }
}

#[inline]
pub fn clamp01<T: Real>(v: T) -> T {
    if v > T::one() {
        T::one()
    } else if v >= T::zero() {
        v
    } else {
        T::zero()
    }
}
