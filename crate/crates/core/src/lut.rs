//! Differentiable 3D LUTs: basis fusion, non-uniform sampling coordinates and
//! trilinear lookup, with exact reverse-mode gradients.
//!
//! Storage order is red fastest, then green, then blue: entry `(i, j, k)`
//! lives at `i + n * (j + n * k)`, which is also the `.cube` row order.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{clamp01, luma, ImageBuffer};
use crate::scalar::Real;

/// Default grid points per axis.
pub const DEFAULT_GRID_SIZE: usize = 17;

/// A dense `N x N x N` grid of RGB output values.
#[derive(Debug, Clone, PartialEq)]
pub struct Lut3D<T> {
    size: usize,
    values: Vec<[T; 3]>,
}

impl<T: Real> Lut3D<T> {
    pub fn new(size: usize, values: Vec<[T; 3]>) -> Result<Self> {
        check_grid_size(size)?;
        if values.len() != size * size * size {
            return Err(Error::dim("lut entries", size * size * size, values.len()));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue("lut contains non-finite values".into()));
        }
        Ok(Self { size, values })
    }

    /// Builds a LUT from a function of the grid index `(i, j, k)`.
    pub fn from_fn(size: usize, mut f: impl FnMut(usize, usize, usize) -> [T; 3]) -> Result<Self> {
        check_grid_size(size)?;
        let mut values = Vec::with_capacity(size * size * size);
        for k in 0..size {
            for j in 0..size {
                for i in 0..size {
                    values.push(f(i, j, k));
                }
            }
        }
        Self::new(size, values)
    }

    /// Builds a LUT by evaluating a color map at uniform grid coordinates.
    pub fn from_color_fn(size: usize, f: impl Fn([T; 3]) -> [T; 3]) -> Result<Self> {
        let u = uniform_axis::<T>(size);
        Self::from_fn(size, |i, j, k| f([u[i], u[j], u[k]]))
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn values(&self) -> &[[T; 3]] {
        &self.values
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.size * (j + self.size * k)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> [T; 3] {
        self.values[self.index(i, j, k)]
    }
}

fn check_grid_size(size: usize) -> Result<()> {
    if size < 2 {
        return Err(Error::InvalidDimensions(format!(
            "lut grid size must be at least 2, got {size}"
        )));
    }
    Ok(())
}

/// `u(i) = i / (n - 1)`, with both endpoints exact.
pub fn uniform_axis<T: Real>(n: usize) -> Vec<T> {
    let last = T::from_usize_lossy(n - 1);
    (0..n)
        .map(|i| {
            if i + 1 == n {
                T::one()
            } else {
                T::from_usize_lossy(i) / last
            }
        })
        .collect()
}

pub fn make_identity<T: Real>(size: usize) -> Result<Lut3D<T>> {
    Lut3D::from_color_fn(size, |p| p)
}

/// Per-channel power curve `v^gamma`.
pub fn make_gamma<T: Real>(size: usize, gamma: T) -> Result<Lut3D<T>> {
    if !(gamma.is_finite() && gamma > T::zero()) {
        return Err(Error::InvalidValue(format!("gamma must be positive, got {gamma}")));
    }
    Lut3D::from_color_fn(size, |p: [T; 3]| p.map(|v| v.powf(gamma)))
}

/// Logistic contrast curve centred at 0.5, rescaled so 0 and 1 are fixed points.
pub fn make_contrast_scurve<T: Real>(size: usize, steepness: T) -> Result<Lut3D<T>> {
    if !(steepness.is_finite() && steepness > T::zero()) {
        return Err(Error::InvalidValue(format!(
            "s-curve steepness must be positive, got {steepness}"
        )));
    }
    let half = T::lit(0.5);
    let sigmoid = |x: T| T::one() / (T::one() + (-x).exp());
    let lo = sigmoid(-steepness * half);
    let hi = sigmoid(steepness * half);
    Lut3D::from_color_fn(size, |p: [T; 3]| p.map(|v| (sigmoid(steepness * (v - half)) - lo) / (hi - lo)))
}

/// Moves every entry toward (factor < 1) or away from (factor > 1) its Rec.601 luma.
pub fn make_saturation<T: Real>(size: usize, factor: T) -> Result<Lut3D<T>> {
    if !(factor.is_finite() && factor >= T::zero()) {
        return Err(Error::InvalidValue(format!(
            "saturation factor must be non-negative, got {factor}"
        )));
    }
    Lut3D::from_color_fn(size, |p: [T; 3]| {
        let y = luma(p);
        p.map(|v| clamp01(y + factor * (v - y)))
    })
}

/// Ordered bank of basis LUTs sharing one grid size.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisLutBank<T> {
    luts: Vec<Lut3D<T>>,
}

impl<T: Real> BasisLutBank<T> {
    pub fn new(luts: Vec<Lut3D<T>>) -> Result<Self> {
        let Some(first) = luts.first() else {
            return Err(Error::InvalidDimensions("basis bank must not be empty".into()));
        };
        let n = first.size();
        if let Some(bad) = luts.iter().find(|l| l.size() != n) {
            return Err(Error::dim("basis lut size", n, bad.size()));
        }
        Ok(Self { luts })
    }

    /// `{identity, gamma 0.7, contrast s-curve k = 6}`.
    pub fn standard(size: usize) -> Result<Self> {
        Self::new(vec![
            make_identity(size)?,
            make_gamma(size, T::lit(0.7))?,
            make_contrast_scurve(size, T::lit(6.0))?,
        ])
    }

    pub fn luts(&self) -> &[Lut3D<T>] {
        &self.luts
    }

    pub fn len(&self) -> usize {
        self.luts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.luts.is_empty()
    }

    pub fn grid_size(&self) -> usize {
        self.luts[0].size()
    }
}

/// Per-channel monotone knot positions mapping input values onto the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingCoordinates<T> {
    axes: [Vec<T>; 3],
}

impl<T: Real> SamplingCoordinates<T> {
    /// Requires `x(0) = 0`, `x(N-1) = 1` exactly and strictly increasing knots.
    pub fn new(axes: [Vec<T>; 3]) -> Result<Self> {
        let n = axes[0].len();
        check_grid_size(n)?;
        for (c, axis) in axes.iter().enumerate() {
            if axis.len() != n {
                return Err(Error::dim("sampling coordinate axis", n, axis.len()));
            }
            if axis[0] != T::zero() || axis[n - 1] != T::one() {
                return Err(Error::InvalidCoordinates(format!(
                    "channel {c} endpoints are ({}, {}), expected (0, 1)",
                    axis[0],
                    axis[n - 1]
                )));
            }
            if let Some(i) = axis.windows(2).position(|w| !(w[1] > w[0])) {
                return Err(Error::InvalidCoordinates(format!(
                    "channel {c} not strictly increasing at index {i}: {} -> {}",
                    axis[i],
                    axis[i + 1]
                )));
            }
        }
        Ok(Self { axes })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        check_grid_size(n)?;
        let u = uniform_axis::<T>(n);
        Ok(Self {
            axes: [u.clone(), u.clone(), u],
        })
    }

    pub fn size(&self) -> usize {
        self.axes[0].len()
    }

    pub fn axis(&self, c: usize) -> &[T] {
        &self.axes[c]
    }

    pub fn axes(&self) -> &[Vec<T>; 3] {
        &self.axes
    }
}

/// Basis blending weights; unconstrained reals.
#[derive(Debug, Clone, PartialEq)]
pub struct LutWeights<T>(pub Vec<T>);

impl<T: Real> LutWeights<T> {
    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Weighted sum of the basis LUTs.
pub fn fuse<T: Real>(bank: &BasisLutBank<T>, w: &LutWeights<T>) -> Result<Lut3D<T>> {
    if w.len() != bank.len() {
        return Err(Error::dim("fusion weights", bank.len(), w.len()));
    }
    let n = bank.grid_size();
    let mut values = vec![[T::zero(); 3]; n * n * n];
    for (lut, &wl) in bank.luts().iter().zip(w.as_slice()) {
        for (out, v) in values.iter_mut().zip(lut.values()) {
            for c in 0..3 {
                out[c] += wl * v[c];
            }
        }
    }
    Lut3D::new(n, values)
}

/// Gradient of a scalar objective w.r.t. the fusion weights, given its gradient
/// w.r.t. the fused LUT entries.
pub fn fuse_grad<T: Real>(bank: &BasisLutBank<T>, d_fused: &[[T; 3]]) -> Result<Vec<T>> {
    let n = bank.grid_size();
    if d_fused.len() != n * n * n {
        return Err(Error::dim("fused lut gradient", n * n * n, d_fused.len()));
    }
    Ok(bank
        .luts()
        .iter()
        .map(|lut| {
            lut.values()
                .iter()
                .zip(d_fused)
                .map(|(v, g)| v[0] * g[0] + v[1] * g[1] + v[2] * g[2])
                .sum()
        })
        .collect())
}

/// Locates `v` on a monotone axis: returns the lower cell index, the offset
/// `t` in `[0, 1]` and the cell width.
///
/// A value exactly on an interior knot belongs to the cell starting there
/// (`t = 0`); the upper endpoint belongs to the last cell with `t = 1`.
#[inline]
fn locate<T: Real>(axis: &[T], v: T) -> (usize, T, T) {
    let n = axis.len();
    let cell = axis[..n - 1].partition_point(|&x| x <= v).saturating_sub(1);
    let h = axis[cell + 1] - axis[cell];
    (cell, (v - axis[cell]) / h, h)
}

struct Cell<T> {
    base: [usize; 3],
    t: [T; 3],
    h: [T; 3],
}

impl<T: Real> Cell<T> {
    fn new(coords: &SamplingCoordinates<T>, p: [T; 3]) -> Self {
        let mut base = [0; 3];
        let mut t = [T::zero(); 3];
        let mut h = [T::one(); 3];
        for c in 0..3 {
            (base[c], t[c], h[c]) = locate(coords.axis(c), p[c]);
        }
        Self { base, t, h }
    }

    /// Trilinear weight of corner `(a, b, c)` and its partials w.r.t. `t`.
    #[inline]
    fn corner(&self, corner: usize) -> (usize, usize, usize, T, [T; 3]) {
        let bits = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
        let mut f = [T::zero(); 3];
        let mut df = [T::zero(); 3];
        for c in 0..3 {
            if bits[c] == 1 {
                f[c] = self.t[c];
                df[c] = T::one();
            } else {
                f[c] = T::one() - self.t[c];
                df[c] = -T::one();
            }
        }
        let weight = f[0] * f[1] * f[2];
        let dweight = [df[0] * f[1] * f[2], f[0] * df[1] * f[2], f[0] * f[1] * df[2]];
        (
            self.base[0] + bits[0],
            self.base[1] + bits[1],
            self.base[2] + bits[2],
            weight,
            dweight,
        )
    }
}

fn check_lookup_inputs<T: Real>(lut: &Lut3D<T>, coords: &SamplingCoordinates<T>) -> Result<()> {
    if coords.size() != lut.size() {
        return Err(Error::dim("sampling coordinates vs lut", lut.size(), coords.size()));
    }
    Ok(())
}

/// Unclamped trilinear blend for one pixel.
#[inline]
fn blend<T: Real>(lut: &Lut3D<T>, coords: &SamplingCoordinates<T>, p: [T; 3]) -> [T; 3] {
    let cell = Cell::new(coords, p);
    let mut out = [T::zero(); 3];
    for corner in 0..8 {
        let (i, j, k, w, _) = cell.corner(corner);
        let v = lut.get(i, j, k);
        for c in 0..3 {
            out[c] += w * v[c];
        }
    }
    out
}

/// Trilinear lookup of every pixel through `(lut, coords)`; output clamped to `[0, 1]`.
pub fn lookup<T: Real>(
    lut: &Lut3D<T>,
    coords: &SamplingCoordinates<T>,
    image: &ImageBuffer<T>,
) -> Result<ImageBuffer<T>> {
    check_lookup_inputs(lut, coords)?;
    let pixels = image
        .pixels()
        .par_iter()
        .with_min_len(256)
        .map(|&p| blend(lut, coords, p).map(clamp01))
        .collect();
    Ok(ImageBuffer::from_parts_unchecked(image.width(), image.height(), pixels))
}

/// Lookup without the final clamp, used by tests that check linearity.
pub fn lookup_unclamped<T: Real>(
    lut: &Lut3D<T>,
    coords: &SamplingCoordinates<T>,
    image: &ImageBuffer<T>,
) -> Result<Vec<[T; 3]>> {
    check_lookup_inputs(lut, coords)?;
    Ok(image.pixels().iter().map(|&p| blend(lut, coords, p)).collect())
}

/// Gradients of `sum(upstream * lookup(lut, coords, image))`.
#[derive(Debug, Clone, PartialEq)]
pub struct LookupGrad<T> {
    /// Same layout as [`Lut3D::values`].
    pub lut: Vec<[T; 3]>,
    pub coords: [Vec<T>; 3],
    /// Same layout as [`ImageBuffer::pixels`].
    pub image: Vec<[T; 3]>,
}

/// Reverse-mode gradient of [`lookup`]. Output channels that were clamped
/// contribute nothing.
pub fn lookup_grad<T: Real>(
    lut: &Lut3D<T>,
    coords: &SamplingCoordinates<T>,
    image: &ImageBuffer<T>,
    upstream: &[[T; 3]],
) -> Result<LookupGrad<T>> {
    check_lookup_inputs(lut, coords)?;
    if upstream.len() != image.len() {
        return Err(Error::dim("lookup upstream gradient", image.len(), upstream.len()));
    }
    let n = lut.size();
    let mut d_lut = vec![[T::zero(); 3]; lut.values().len()];
    let mut d_coords = [vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]];
    let mut d_image = vec![[T::zero(); 3]; image.len()];

    for ((&p, up), d_px) in image.pixels().iter().zip(upstream).zip(d_image.iter_mut()) {
        let cell = Cell::new(coords, p);
        let mut raw = [T::zero(); 3];
        for corner in 0..8 {
            let (i, j, k, w, _) = cell.corner(corner);
            let v = lut.get(i, j, k);
            for c in 0..3 {
                raw[c] += w * v[c];
            }
        }
        let mut g = [T::zero(); 3];
        for c in 0..3 {
            if raw[c] >= T::zero() && raw[c] <= T::one() {
                g[c] = up[c];
            }
        }
        if g.iter().all(|v| v.is_zero()) {
            continue;
        }

        let mut d_t = [T::zero(); 3];
        for corner in 0..8 {
            let (i, j, k, w, dw) = cell.corner(corner);
            let idx = lut.index(i, j, k);
            let v = lut.values()[idx];
            let gv = g[0] * v[0] + g[1] * v[1] + g[2] * v[2];
            for c in 0..3 {
                d_lut[idx][c] += w * g[c];
                d_t[c] += dw[c] * gv;
            }
        }

        // t = (v - x_i) / h:  dt/dv = 1/h,  dt/dx_i = (t - 1)/h,  dt/dx_{i+1} = -t/h.
        for c in 0..3 {
            let inv_h = T::one() / cell.h[c];
            d_px[c] = d_t[c] * inv_h;
            let i = cell.base[c];
            d_coords[c][i] += d_t[c] * (cell.t[c] - T::one()) * inv_h;
            d_coords[c][i + 1] -= d_t[c] * cell.t[c] * inv_h;
        }
    }

    Ok(LookupGrad {
        lut: d_lut,
        coords: d_coords,
        image: d_image,
    })
}

/// Resamples `(lut, coords)` onto a uniform grid of the same size, so it can be
/// expressed in interchange formats without non-uniform axes.
pub fn rebake_uniform<T: Real>(lut: &Lut3D<T>, coords: &SamplingCoordinates<T>) -> Result<Lut3D<T>> {
    check_lookup_inputs(lut, coords)?;
    let u = uniform_axis::<T>(lut.size());
    Lut3D::from_fn(lut.size(), |i, j, k| blend(lut, coords, [u[i], u[j], u[k]]).map(clamp01))
}
