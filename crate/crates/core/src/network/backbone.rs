//! Backbone heads: the basis-weight predictor and the adaptive sampling
//! coordinate head, plus parameter modulation.

use crate::error::{Error, Result};
use crate::lut::{LutWeights, SamplingCoordinates};
use crate::network::features::FeatureVector;
use crate::scalar::Real;

/// Dense affine map `y = W x + b` with a row-major `rows x cols` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine<T> {
    rows: usize,
    cols: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Affine<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            weight: vec![T::zero(); rows * cols],
            bias: vec![T::zero(); rows],
        }
    }

    pub fn from_parts(rows: usize, cols: usize, weight: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if weight.len() != rows * cols {
            return Err(Error::dim("affine weight", rows * cols, weight.len()));
        }
        if bias.len() != rows {
            return Err(Error::dim("affine bias", rows, bias.len()));
        }
        Ok(Self {
            rows,
            cols,
            weight,
            bias,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn param_count(&self) -> usize {
        self.rows * self.cols + self.rows
    }

    pub fn apply(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.cols {
            return Err(Error::dim("affine input", self.cols, x.len()));
        }
        Ok(self
            .weight
            .chunks(self.cols)
            .zip(&self.bias)
            .map(|(row, &b)| crate::scalar::dot(row, x) + b)
            .collect())
    }

    /// Accumulates `dW += dy x^T`, `db += dy` and returns `W^T dy`.
    pub(crate) fn backward_into(&self, x: &[T], dy: &[T], grad: &mut Affine<T>) -> Vec<T> {
        let mut dx = vec![T::zero(); self.cols];
        for (r, &g) in dy.iter().enumerate() {
            if g.is_zero() {
                continue;
            }
            grad.bias[r] += g;
            let row = &self.weight[r * self.cols..(r + 1) * self.cols];
            let grow = &mut grad.weight[r * self.cols..(r + 1) * self.cols];
            for ((gw, &xv), (dxv, &w)) in grow.iter_mut().zip(x).zip(dx.iter_mut().zip(row)) {
                *gw += g * xv;
                *dxv += g * w;
            }
        }
        dx
    }

    fn extend_flat(&self, out: &mut Vec<T>) {
        out.extend_from_slice(&self.weight);
        out.extend_from_slice(&self.bias);
    }

    fn read_flat(rows: usize, cols: usize, flat: &[T]) -> (Self, &[T]) {
        let (w, rest) = flat.split_at(rows * cols);
        let (b, rest) = rest.split_at(rows);
        (
            Self {
                rows,
                cols,
                weight: w.to_vec(),
                bias: b.to_vec(),
            },
            rest,
        )
    }
}

/// Parameters the adapter modulates: weight predictor `F -> L` and the
/// coordinate head `F -> 3 (N - 1)`.
///
/// Flattening order: weight-predictor matrix (row-major), its bias, coordinate
/// head matrix (row-major), its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneParams<T> {
    pub weight_predictor: Affine<T>,
    pub adaint_head: Affine<T>,
}

impl<T: Real> BackboneParams<T> {
    /// All-zero coordinate head and a weight predictor that selects basis 0:
    /// the network applies the first basis LUT on a uniform grid.
    pub fn identity(num_basis: usize, grid_size: usize, feature_dim: usize) -> Result<Self> {
        Self::neutral(num_basis, grid_size, feature_dim, T::zero())
    }

    /// Like [`BackboneParams::identity`] but with every coordinate-head bias set
    /// to `adaint_bias`. Equal logits still give uniform coordinates; a nonzero
    /// value lets multiplicative modulation reach the coordinate head.
    pub fn neutral(num_basis: usize, grid_size: usize, feature_dim: usize, adaint_bias: T) -> Result<Self> {
        if num_basis == 0 {
            return Err(Error::InvalidDimensions("need at least one basis lut".into()));
        }
        if grid_size < 2 {
            return Err(Error::InvalidDimensions(format!("grid size {grid_size} < 2")));
        }
        let mut weight_predictor = Affine::zeros(num_basis, feature_dim);
        weight_predictor.bias[0] = T::one();
        let mut adaint_head = Affine::zeros(3 * (grid_size - 1), feature_dim);
        adaint_head.bias.fill(adaint_bias);
        Ok(Self {
            weight_predictor,
            adaint_head,
        })
    }

    pub fn num_basis(&self) -> usize {
        self.weight_predictor.rows()
    }

    pub fn grid_size(&self) -> usize {
        self.adaint_head.rows() / 3 + 1
    }

    pub fn feature_dim(&self) -> usize {
        self.weight_predictor.cols()
    }

    pub fn param_count(&self) -> usize {
        self.weight_predictor.param_count() + self.adaint_head.param_count()
    }

    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        self.weight_predictor.extend_flat(&mut out);
        self.adaint_head.extend_flat(&mut out);
        out
    }

    /// Rebuilds parameters with this layout from a flat vector.
    pub fn unflatten_like(&self, flat: &[T]) -> Result<Self> {
        if flat.len() != self.param_count() {
            return Err(Error::dim("flattened backbone params", self.param_count(), flat.len()));
        }
        let wp = &self.weight_predictor;
        let ah = &self.adaint_head;
        let (weight_predictor, rest) = Affine::read_flat(wp.rows(), wp.cols(), flat);
        let (adaint_head, _) = Affine::read_flat(ah.rows(), ah.cols(), rest);
        Ok(Self {
            weight_predictor,
            adaint_head,
        })
    }

    pub fn new(weight_predictor: Affine<T>, adaint_head: Affine<T>) -> Result<Self> {
        if weight_predictor.cols() != adaint_head.cols() {
            return Err(Error::dim("backbone feature dim", weight_predictor.cols(), adaint_head.cols()));
        }
        if !adaint_head.rows().is_multiple_of(3) || adaint_head.rows() < 3 {
            return Err(Error::InvalidDimensions(format!(
                "coordinate head must emit 3 (N - 1) logits, got {}",
                adaint_head.rows()
            )));
        }
        Ok(Self {
            weight_predictor,
            adaint_head,
        })
    }
}

/// `w = M f + b`.
pub fn predict_weights<T: Real>(params: &BackboneParams<T>, f: &FeatureVector<T>) -> Result<LutWeights<T>> {
    params.weight_predictor.apply(f.as_slice()).map(LutWeights)
}

/// Interval logits for all three channels, red first.
pub fn predict_logits<T: Real>(params: &BackboneParams<T>, f: &FeatureVector<T>) -> Result<Vec<T>> {
    params.adaint_head.apply(f.as_slice())
}

pub fn predict_coords<T: Real>(params: &BackboneParams<T>, f: &FeatureVector<T>) -> Result<SamplingCoordinates<T>> {
    coords_from_logits(&predict_logits(params, f)?)
}

fn softmax<T: Real>(z: &[T]) -> Vec<T> {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = z.iter().map(|&v| (v - max).exp()).collect();
    let total: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / total).collect()
}

/// Softmax intervals followed by a prefix sum; endpoints are pinned to 0 and 1.
pub fn coords_from_logits<T: Real>(logits: &[T]) -> Result<SamplingCoordinates<T>> {
    if logits.is_empty() || !logits.len().is_multiple_of(3) {
        return Err(Error::InvalidDimensions(format!(
            "expected 3 (N - 1) logits, got {}",
            logits.len()
        )));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidCoordinates("non-finite interval logits".into()));
    }
    let m = logits.len() / 3;
    let axes = std::array::from_fn(|c| {
        let d = softmax(&logits[c * m..(c + 1) * m]);
        let mut x = Vec::with_capacity(m + 1);
        let mut acc = T::zero();
        x.push(acc);
        for v in &d[..m - 1] {
            acc += *v;
            x.push(acc);
        }
        x.push(T::one());
        x
    });
    SamplingCoordinates::new(axes)
}

/// Backward pass of [`coords_from_logits`]: maps coordinate gradients to
/// logit gradients.
pub fn coords_logits_grad<T: Real>(logits: &[T], d_coords: &[Vec<T>; 3]) -> Result<Vec<T>> {
    let m = logits.len() / 3;
    if logits.len() != 3 * m || d_coords.iter().any(|a| a.len() != m + 1) {
        return Err(Error::dim("coordinate gradient", m + 1, d_coords[0].len()));
    }
    let mut out = Vec::with_capacity(logits.len());
    for c in 0..3 {
        let d = softmax(&logits[c * m..(c + 1) * m]);
        // x(i) = sum_{j<i} d(j) for 1 <= i <= N-2; the endpoints are constant.
        let mut d_interval = vec![T::zero(); m];
        let mut suffix = T::zero();
        for j in (0..m).rev() {
            if j + 1 < m {
                suffix += d_coords[c][j + 1];
            }
            d_interval[j] = suffix;
        }
        let inner: T = d.iter().zip(&d_interval).map(|(&a, &b)| a * b).sum();
        out.extend(d.iter().zip(&d_interval).map(|(&p, &g)| p * (g - inner)));
    }
    Ok(out)
}

/// Strength of the text-driven modulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModulationConfig<T> {
    pub s: T,
}

impl<T: Real> Default for ModulationConfig<T> {
    fn default() -> Self {
        Self { s: T::one() }
    }
}

/// Hadamard modulation `theta * (1 + s * delta)` in flattening order.
pub fn modulate<T: Real>(theta: &BackboneParams<T>, delta: &[T], cfg: &ModulationConfig<T>) -> Result<BackboneParams<T>> {
    if delta.len() != theta.param_count() {
        return Err(Error::dim("modulation offsets", theta.param_count(), delta.len()));
    }
    let flat: Vec<T> = theta
        .flatten()
        .into_iter()
        .zip(delta)
        .map(|(t, &d)| t * (T::one() + cfg.s * d))
        .collect();
    theta.unflatten_like(&flat)
}

/// Gradient w.r.t. `delta` given the gradient w.r.t. the modulated parameters.
pub fn modulate_grad<T: Real>(theta: &BackboneParams<T>, d_modulated: &[T], cfg: &ModulationConfig<T>) -> Result<Vec<T>> {
    if d_modulated.len() != theta.param_count() {
        return Err(Error::dim("modulated parameter gradient", theta.param_count(), d_modulated.len()));
    }
    Ok(theta
        .flatten()
        .into_iter()
        .zip(d_modulated)
        .map(|(t, &g)| g * t * cfg.s)
        .collect())
}
