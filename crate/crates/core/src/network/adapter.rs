//! Text adapter: a two-layer MLP mapping an embedding direction to
//! per-parameter modulation offsets.

use rand::Rng;

use crate::embed::EmbeddingVector;
use crate::error::{Error, Result};
use crate::network::backbone::Affine;
use crate::scalar::Real;

pub const DEFAULT_SOURCE_PROMPT: &str = "normal photo";

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterNetwork<T> {
    pub layer1: Affine<T>,
    pub layer2: Affine<T>,
    pub source_prompt: String,
}

/// Gradients with the same shapes as the adapter's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterGrads<T> {
    pub layer1: Affine<T>,
    pub layer2: Affine<T>,
}

impl<T: Real> AdapterGrads<T> {
    pub fn zeros_like(adapter: &AdapterNetwork<T>) -> Self {
        Self {
            layer1: Affine::zeros(adapter.layer1.rows(), adapter.layer1.cols()),
            layer2: Affine::zeros(adapter.layer2.rows(), adapter.layer2.cols()),
        }
    }

    /// Parameter tensors in adapter order: layer1 weight, bias, layer2 weight, bias.
    pub fn tensors(&self) -> [&[T]; 4] {
        [&self.layer1.weight, &self.layer1.bias, &self.layer2.weight, &self.layer2.bias]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<T>; 4] {
        [
            &mut self.layer1.weight,
            &mut self.layer1.bias,
            &mut self.layer2.weight,
            &mut self.layer2.bias,
        ]
    }

    pub fn scale(&mut self, k: T) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= k);
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, &y)| *x += y);
        }
    }

    pub fn flatten(&self) -> Vec<T> {
        self.tensors().concat()
    }
}

impl<T: Real> AdapterNetwork<T> {
    pub fn zeros(embed_dim: usize, hidden: usize, param_count: usize) -> Self {
        Self {
            layer1: Affine::zeros(hidden, embed_dim),
            layer2: Affine::zeros(param_count, hidden),
            source_prompt: DEFAULT_SOURCE_PROMPT.to_string(),
        }
    }

    /// Matrices drawn from `U(0, 0.01)`, biases zero.
    pub fn init_uniform<R: Rng + ?Sized>(embed_dim: usize, hidden: usize, param_count: usize, rng: &mut R) -> Self {
        let mut adapter = Self::zeros(embed_dim, hidden, param_count);
        for w in adapter.layer1.weight.iter_mut().chain(adapter.layer2.weight.iter_mut()) {
            *w = T::lit(rng.random::<f64>() * 0.01);
        }
        adapter
    }

    pub fn embed_dim(&self) -> usize {
        self.layer1.cols()
    }

    pub fn hidden(&self) -> usize {
        self.layer1.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layer2.rows()
    }

    pub fn tensors(&self) -> [&[T]; 4] {
        [&self.layer1.weight, &self.layer1.bias, &self.layer2.weight, &self.layer2.bias]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<T>; 4] {
        [
            &mut self.layer1.weight,
            &mut self.layer1.bias,
            &mut self.layer2.weight,
            &mut self.layer2.bias,
        ]
    }

    pub fn direction(&self, e_target: &EmbeddingVector<T>, e_source: &EmbeddingVector<T>) -> Result<Vec<T>> {
        if e_target.dim() != self.embed_dim() || e_source.dim() != self.embed_dim() {
            return Err(Error::dim(
                "adapter embedding",
                self.embed_dim(),
                if e_target.dim() != self.embed_dim() { e_target.dim() } else { e_source.dim() },
            ));
        }
        Ok(e_target.as_slice().iter().zip(e_source.as_slice()).map(|(&a, &b)| a - b).collect())
    }

    fn hidden_activations(&self, direction: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let pre = self.layer1.apply(direction)?;
        let act = pre.iter().map(|&v| v.max(T::zero())).collect();
        Ok((pre, act))
    }

    /// `delta = layer2(relu(layer1(e_target - e_source)))`.
    pub fn forward(&self, e_target: &EmbeddingVector<T>, e_source: &EmbeddingVector<T>) -> Result<Vec<T>> {
        let d = self.direction(e_target, e_source)?;
        let (_, h) = self.hidden_activations(&d)?;
        self.layer2.apply(&h)
    }

    /// Gradient of `d_delta . forward(direction)` w.r.t. every adapter parameter.
    pub fn backward(&self, direction: &[T], d_delta: &[T]) -> Result<AdapterGrads<T>> {
        if d_delta.len() != self.output_dim() {
            return Err(Error::dim("adapter output gradient", self.output_dim(), d_delta.len()));
        }
        let (pre, h) = self.hidden_activations(direction)?;
        let mut grads = AdapterGrads::zeros_like(self);
        let dh = self.layer2.backward_into(&h, d_delta, &mut grads.layer2);
        let dpre: Vec<T> = dh
            .iter()
            .zip(&pre)
            .map(|(&g, &p)| if p > T::zero() { g } else { T::zero() })
            .collect();
        self.layer1.backward_into(direction, &dpre, &mut grads.layer1);
        Ok(grads)
    }
}

/// Free-function form of [`AdapterNetwork::forward`].
pub fn adapter_forward<T: Real>(
    adapter: &AdapterNetwork<T>,
    e_target: &EmbeddingVector<T>,
    e_source: &EmbeddingVector<T>,
) -> Result<Vec<T>> {
    adapter.forward(e_target, e_source)
}
