//! Backbone feature extraction, LUT heads and the text adapter hyper-network.

pub mod adapter;
pub mod backbone;
pub mod features;
pub mod model;

pub use adapter::{adapter_forward, AdapterGrads, AdapterNetwork, DEFAULT_SOURCE_PROMPT};
pub use backbone::{
    coords_from_logits, modulate, predict_coords, predict_weights, Affine, BackboneParams, ModulationConfig,
};
pub use features::{extract_features, extract_features_grad, FeatureVector, FEATURE_DIM};
pub use model::{backward, forward, forward_base, forward_grad, ForwardOutput, ModelBundle, Upstream};
