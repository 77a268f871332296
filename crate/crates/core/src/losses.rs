//! Training objective: content MSE, embedding directional loss, basis-weight
//! L2 and the sampling interval regularizer, each with its analytic gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::lut::{BasisLutBank, LutWeights, SamplingCoordinates};
use crate::scalar::{dot, norm, Real};

/// Norm below which a direction vector is treated as degenerate.
pub const DIRECTION_EPS: f64 = 1e-8;
/// Smallest admissible sampling interval.
pub const MIN_INTERVAL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub content: f64,
    pub clip: f64,
    pub lut: f64,
    pub weight: f64,
    pub interval: f64,
    pub alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            content: 1.0,
            clip: 1.0,
            lut: 1.0,
            weight: 1e-4,
            interval: 0.5,
            alpha: 0.7,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.content, self.clip, self.lut, self.weight, self.interval, self.alpha];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport<T> {
    pub total: T,
    pub content: T,
    pub clip_directional: T,
    pub weight_l2: T,
    pub interval: T,
}

impl<T: Real> LossReport<T> {
    pub fn is_finite(&self) -> bool {
        [self.total, self.content, self.clip_directional, self.weight_l2, self.interval]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Gradients of the total loss w.r.t. its differentiable inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrads<T> {
    pub adjusted: Vec<[T; 3]>,
    pub delta_image: Vec<T>,
    pub weights: Vec<T>,
    pub coords: [Vec<T>; 3],
}

fn check_shape<T: Real>(a: &ImageBuffer<T>, b: &ImageBuffer<T>) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::InvalidDimensions(format!(
            "image shapes differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// Mean over all pixel components of `(adjusted - source)^2`.
pub fn content_loss<T: Real>(source: &ImageBuffer<T>, adjusted: &ImageBuffer<T>) -> Result<T> {
    check_shape(source, adjusted)?;
    let sum: T = source
        .pixels()
        .iter()
        .zip(adjusted.pixels())
        .map(|(a, b)| (0..3).map(|c| (b[c] - a[c]) * (b[c] - a[c])).sum::<T>())
        .sum();
    Ok(sum / T::from_usize_lossy(3 * source.len()))
}

/// Gradient of [`content_loss`] w.r.t. `adjusted`.
pub fn content_loss_grad<T: Real>(source: &ImageBuffer<T>, adjusted: &ImageBuffer<T>) -> Result<Vec<[T; 3]>> {
    check_shape(source, adjusted)?;
    let k = T::lit(2.0) / T::from_usize_lossy(3 * source.len());
    Ok(source
        .pixels()
        .iter()
        .zip(adjusted.pixels())
        .map(|(a, b)| std::array::from_fn(|c| k * (b[c] - a[c])))
        .collect())
}

fn check_same_len<T>(a: &[T], b: &[T]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::dim("direction vectors", a.len(), b.len()));
    }
    Ok(())
}

fn is_degenerate<T: Real>(v: &[T]) -> bool {
    !(norm(v).as_f64() >= DIRECTION_EPS)
}

/// `1 - cos(delta_image, delta_text)`. A degenerate direction contributes 1.
pub fn clip_directional_loss<T: Real>(delta_image: &[T], delta_text: &[T]) -> Result<T> {
    check_same_len(delta_image, delta_text)?;
    if is_degenerate(delta_image) || is_degenerate(delta_text) {
        return Ok(T::one());
    }
    Ok(T::one() - dot(delta_image, delta_text) / (norm(delta_image) * norm(delta_text)))
}

/// Gradient of [`clip_directional_loss`] w.r.t. `delta_image` (zero when degenerate).
pub fn clip_directional_loss_grad<T: Real>(delta_image: &[T], delta_text: &[T]) -> Result<Vec<T>> {
    check_same_len(delta_image, delta_text)?;
    if is_degenerate(delta_image) || is_degenerate(delta_text) {
        return Ok(vec![T::zero(); delta_image.len()]);
    }
    let ni = norm(delta_image);
    let nt = norm(delta_text);
    let cos = dot(delta_image, delta_text) / (ni * nt);
    Ok(delta_image
        .iter()
        .zip(delta_text)
        .map(|(&i, &t)| -(t / (ni * nt) - cos * i / (ni * ni)))
        .collect())
}

/// `||w||^2`.
pub fn weight_l2<T: Real>(w: &LutWeights<T>) -> T {
    w.as_slice().iter().map(|&v| v * v).sum()
}

pub fn weight_l2_grad<T: Real>(w: &LutWeights<T>) -> Vec<T> {
    w.as_slice().iter().map(|&v| T::lit(2.0) * v).collect()
}

/// Per-axis sums of squared forward differences of the basis bank:
/// `table[a][i]` collects every term whose denominator is the `i`-th interval
/// of axis `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalTable<T> {
    sums: [Vec<T>; 3],
}

impl<T: Real> IntervalTable<T> {
    pub fn new(bank: &BasisLutBank<T>) -> Self {
        let n = bank.grid_size();
        let mut sums = [vec![T::zero(); n - 1], vec![T::zero(); n - 1], vec![T::zero(); n - 1]];
        for lut in bank.luts() {
            for k in 0..n {
                for j in 0..n {
                    for i in 0..n {
                        let here = lut.get(i, j, k);
                        let mut add = |axis: usize, idx: usize, next: [T; 3]| {
                            sums[axis][idx] += (0..3).map(|c| (next[c] - here[c]) * (next[c] - here[c])).sum::<T>();
                        };
                        if i + 1 < n {
                            add(0, i, lut.get(i + 1, j, k));
                        }
                        if j + 1 < n {
                            add(1, j, lut.get(i, j + 1, k));
                        }
                        if k + 1 < n {
                            add(2, k, lut.get(i, j, k + 1));
                        }
                    }
                }
            }
        }
        Self { sums }
    }

    pub fn grid_size(&self) -> usize {
        self.sums[0].len() + 1
    }

    fn intervals(&self, coords: &SamplingCoordinates<T>) -> Result<[Vec<T>; 3]> {
        if coords.size() != self.grid_size() {
            return Err(Error::dim("sampling coordinates vs basis bank", self.grid_size(), coords.size()));
        }
        let min = T::lit(MIN_INTERVAL);
        let mut out: [Vec<T>; 3] = Default::default();
        for (a, slot) in out.iter_mut().enumerate() {
            *slot = coords.axis(a).windows(2).map(|w| w[1] - w[0]).collect();
            if let Some(i) = slot.iter().position(|&h| !(h >= min)) {
                return Err(Error::InvalidCoordinates(format!(
                    "axis {a} interval {i} is {} (minimum {MIN_INTERVAL:e})",
                    slot[i]
                )));
            }
        }
        Ok(out)
    }

    pub fn loss(&self, coords: &SamplingCoordinates<T>, alpha: T) -> Result<T> {
        let h = self.intervals(coords)?;
        let p = T::lit(2.0) * alpha;
        Ok((0..3)
            .map(|a| self.sums[a].iter().zip(&h[a]).map(|(&s, &hi)| s / hi.powf(p)).sum::<T>())
            .sum())
    }

    pub fn loss_grad(&self, coords: &SamplingCoordinates<T>, alpha: T) -> Result<[Vec<T>; 3]> {
        let h = self.intervals(coords)?;
        let p = T::lit(2.0) * alpha;
        let n = self.grid_size();
        let mut grad = [vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]];
        for a in 0..3 {
            for (i, (&s, &hi)) in self.sums[a].iter().zip(&h[a]).enumerate() {
                let dh = -p * s / hi.powf(p + T::one());
                grad[a][i + 1] += dh;
                grad[a][i] -= dh;
            }
        }
        Ok(grad)
    }
}

/// Sampling interval loss over all basis LUTs, channels and grid positions.
pub fn interval_loss<T: Real>(bank: &BasisLutBank<T>, coords: &SamplingCoordinates<T>, alpha: T) -> Result<T> {
    IntervalTable::new(bank).loss(coords, alpha)
}

pub fn interval_loss_grad<T: Real>(
    bank: &BasisLutBank<T>,
    coords: &SamplingCoordinates<T>,
    alpha: T,
) -> Result<[Vec<T>; 3]> {
    IntervalTable::new(bank).loss_grad(coords, alpha)
}

/// Inputs to [`total_loss`].
#[derive(Debug, Clone, Copy)]
pub struct LossInputs<'a, T> {
    pub source: &'a ImageBuffer<T>,
    pub adjusted: &'a ImageBuffer<T>,
    pub delta_image: &'a [T],
    pub delta_text: &'a [T],
    pub weights: &'a LutWeights<T>,
    pub coords: &'a SamplingCoordinates<T>,
}

fn combine<T: Real>(lw: &LossWeights, content: T, clip: T, weight: T, interval: T) -> T {
    T::lit(lw.content) * content
        + T::lit(lw.clip) * clip
        + T::lit(lw.lut) * (T::lit(lw.weight) * weight + T::lit(lw.interval) * interval)
}

/// Weighted objective; the regularizer weights nest inside the LUT term.
pub fn total_loss<T: Real>(
    inputs: &LossInputs<'_, T>,
    table: &IntervalTable<T>,
    lw: &LossWeights,
) -> Result<LossReport<T>> {
    let content = content_loss(inputs.source, inputs.adjusted)?;
    let clip = clip_directional_loss(inputs.delta_image, inputs.delta_text)?;
    let weight = weight_l2(inputs.weights);
    let interval = table.loss(inputs.coords, T::lit(lw.alpha))?;
    Ok(LossReport {
        total: combine(lw, content, clip, weight, interval),
        content,
        clip_directional: clip,
        weight_l2: weight,
        interval,
    })
}

/// [`total_loss`] and its gradient w.r.t. the adjusted image, the image
/// direction, the weights and the coordinates.
pub fn total_loss_with_grad<T: Real>(
    inputs: &LossInputs<'_, T>,
    table: &IntervalTable<T>,
    lw: &LossWeights,
) -> Result<(LossReport<T>, LossGrads<T>)> {
    let report = total_loss(inputs, table, lw)?;
    let mut adjusted = content_loss_grad(inputs.source, inputs.adjusted)?;
    let kc = T::lit(lw.content);
    adjusted.iter_mut().flatten().for_each(|v| *v *= kc);
    let kclip = T::lit(lw.clip);
    let delta_image = clip_directional_loss_grad(inputs.delta_image, inputs.delta_text)?
        .into_iter()
        .map(|v| v * kclip)
        .collect();
    let kw = T::lit(lw.lut * lw.weight);
    let weights = weight_l2_grad(inputs.weights).into_iter().map(|v| v * kw).collect();
    let ki = T::lit(lw.lut * lw.interval);
    let mut coords = table.loss_grad(inputs.coords, T::lit(lw.alpha))?;
    coords.iter_mut().flatten().for_each(|v| *v *= ki);
    Ok((
        report,
        LossGrads {
            adjusted,
            delta_image,
            weights,
            coords,
        },
    ))
}
