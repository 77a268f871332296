//! Differentiable global color statistics used as the backbone feature vector.
//!
//! Layout: per-channel mean (3), per-channel population std (3), then an
//! 8-bin soft histogram per channel (24), red first.

use crate::error::Result;
use crate::image::ImageBuffer;
use crate::scalar::Real;

pub const HIST_BINS: usize = 8;
pub const FEATURE_DIM: usize = 6 + 3 * HIST_BINS;

const MEAN_OFFSET: usize = 0;
const STD_OFFSET: usize = 3;
const HIST_OFFSET: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector<T>(pub Vec<T>);

impl<T: Real> FeatureVector<T> {
    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn mean(&self, c: usize) -> T {
        self.0[MEAN_OFFSET + c]
    }

    pub fn std(&self, c: usize) -> T {
        self.0[STD_OFFSET + c]
    }

    pub fn histogram(&self, c: usize) -> &[T] {
        let start = HIST_OFFSET + c * HIST_BINS;
        &self.0[start..start + HIST_BINS]
    }
}

/// Triangular kernel of bin `k`, centred at `k / 7` with bandwidth `1 / 7`,
/// and its derivative. The kernels form a partition of unity on `[0, 1]`.
#[inline]
fn bin_kernel<T: Real>(v: T, k: usize) -> (T, T) {
    let scale = T::from_usize_lossy(HIST_BINS - 1);
    let u = v * scale - T::from_usize_lossy(k);
    let a = u.abs();
    if a >= T::one() {
        (T::zero(), T::zero())
    } else if u > T::zero() {
        (T::one() - a, -scale)
    } else if u < T::zero() {
        (T::one() - a, scale)
    } else {
        (T::one(), T::zero())
    }
}

#[inline]
fn active_bins<T: Real>(v: T) -> std::ops::RangeInclusive<usize> {
    let scaled = (v * T::from_usize_lossy(HIST_BINS - 1)).floor();
    let lo = scaled.to_usize().unwrap_or(0).min(HIST_BINS - 1);
    lo.saturating_sub(1)..=(lo + 1).min(HIST_BINS - 1)
}

/// Sums per-pixel terms so that mirrored pixels of a row are added pairwise
/// first; the result is bitwise invariant under horizontal flips.
fn sum_flip_symmetric<T: Real, const K: usize>(image: &ImageBuffer<T>, terms: impl Fn([T; 3], &mut [T; K])) -> [T; K] {
    let w = image.width();
    let mut total = [T::zero(); K];
    let mut a = [T::zero(); K];
    let mut b = [T::zero(); K];
    for row in image.pixels().chunks(w) {
        for x in 0..w / 2 {
            a.fill(T::zero());
            b.fill(T::zero());
            terms(row[x], &mut a);
            terms(row[w - 1 - x], &mut b);
            for ((t, &u), &v) in total.iter_mut().zip(&a).zip(&b) {
                *t += u + v;
            }
        }
        if w % 2 == 1 {
            a.fill(T::zero());
            terms(row[w / 2], &mut a);
            for (t, &u) in total.iter_mut().zip(&a) {
                *t += u;
            }
        }
    }
    total
}

pub fn extract_features<T: Real>(image: &ImageBuffer<T>) -> FeatureVector<T> {
    let n = T::from_usize_lossy(image.len());
    let first: [T; FEATURE_DIM] = sum_flip_symmetric(image, |p, acc| {
        for c in 0..3 {
            acc[MEAN_OFFSET + c] = p[c];
            for k in active_bins(p[c]) {
                acc[HIST_OFFSET + c * HIST_BINS + k] = bin_kernel(p[c], k).0;
            }
        }
    });
    let mut f: Vec<T> = first.iter().map(|&v| v / n).collect();
    let means = [f[MEAN_OFFSET], f[MEAN_OFFSET + 1], f[MEAN_OFFSET + 2]];
    let spread: [T; 3] = sum_flip_symmetric(image, |p, acc| {
        for c in 0..3 {
            let d = p[c] - means[c];
            acc[c] = d * d;
        }
    });
    for c in 0..3 {
        f[STD_OFFSET + c] = (spread[c] / n).sqrt();
    }
    FeatureVector(f)
}

/// Gradient w.r.t. pixels of `upstream . extract_features(image)`.
///
/// The std derivative at zero spread and the kernel derivative exactly on a
/// bin centre are taken as zero.
pub fn extract_features_grad<T: Real>(image: &ImageBuffer<T>, upstream: &[T]) -> Result<Vec<[T; 3]>> {
    if upstream.len() != FEATURE_DIM {
        return Err(crate::Error::dim("feature upstream gradient", FEATURE_DIM, upstream.len()));
    }
    let features = extract_features(image);
    let n = T::from_usize_lossy(image.len());
    let mut std_coef = [T::zero(); 3];
    for c in 0..3 {
        let s = features.std(c);
        if s > T::zero() {
            std_coef[c] = upstream[STD_OFFSET + c] / (n * s);
        }
    }
    Ok(image
        .pixels()
        .iter()
        .map(|p| {
            let mut g = [T::zero(); 3];
            for c in 0..3 {
                let mut acc = upstream[MEAN_OFFSET + c] / n;
                acc += std_coef[c] * (p[c] - features.mean(c));
                for k in active_bins(p[c]) {
                    acc += upstream[HIST_OFFSET + c * HIST_BINS + k] * bin_kernel(p[c], k).1 / n;
                }
                g[c] = acc;
            }
            g
        })
        .collect())
}
