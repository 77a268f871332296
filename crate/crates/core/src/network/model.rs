//! The full image-text adaptive LUT pipeline and its adapter-only gradient.

use crate::embed::EmbeddingVector;
use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::lut::{fuse, fuse_grad, lookup, lookup_grad, BasisLutBank, Lut3D, LutWeights, SamplingCoordinates};
use crate::network::adapter::{AdapterGrads, AdapterNetwork};
use crate::network::backbone::{
    coords_from_logits, coords_logits_grad, modulate, modulate_grad, predict_logits, predict_weights, BackboneParams,
    ModulationConfig,
};
use crate::network::features::{extract_features, FeatureVector, FEATURE_DIM};
use crate::scalar::Real;

/// Frozen backbone and basis bank plus the trainable adapter.
///
/// `source_embedding` is the embedding of the adapter's source prompt,
/// resolved once by whichever provider built the bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle<T> {
    pub backbone: BackboneParams<T>,
    pub bank: BasisLutBank<T>,
    pub adapter: AdapterNetwork<T>,
    pub source_embedding: EmbeddingVector<T>,
}

impl<T: Real> ModelBundle<T> {
    pub fn new(
        backbone: BackboneParams<T>,
        bank: BasisLutBank<T>,
        adapter: AdapterNetwork<T>,
        source_embedding: EmbeddingVector<T>,
    ) -> Result<Self> {
        if backbone.num_basis() != bank.len() {
            return Err(Error::dim("backbone basis count", bank.len(), backbone.num_basis()));
        }
        if backbone.grid_size() != bank.grid_size() {
            return Err(Error::dim("backbone grid size", bank.grid_size(), backbone.grid_size()));
        }
        if backbone.feature_dim() != FEATURE_DIM {
            return Err(Error::dim("backbone feature dim", FEATURE_DIM, backbone.feature_dim()));
        }
        if adapter.output_dim() != backbone.param_count() {
            return Err(Error::dim("adapter output", backbone.param_count(), adapter.output_dim()));
        }
        if adapter.embed_dim() != source_embedding.dim() {
            return Err(Error::dim("source embedding", adapter.embed_dim(), source_embedding.dim()));
        }
        Ok(Self {
            backbone,
            bank,
            adapter,
            source_embedding,
        })
    }

    pub fn grid_size(&self) -> usize {
        self.bank.grid_size()
    }
}

/// Everything the pipeline computes on the way to the adjusted image.
#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    pub image: ImageBuffer<T>,
    pub weights: LutWeights<T>,
    pub coords: SamplingCoordinates<T>,
    pub fused: Lut3D<T>,
    pub features: FeatureVector<T>,
    pub logits: Vec<T>,
    pub direction: Vec<T>,
    pub delta: Vec<T>,
    pub modulated: BackboneParams<T>,
}

/// Output image, weights, coordinates, fused LUT, features and head logits.
type BackbonePass<T> = (ImageBuffer<T>, LutWeights<T>, SamplingCoordinates<T>, Lut3D<T>, FeatureVector<T>, Vec<T>);

fn run_backbone<T: Real>(
    bank: &BasisLutBank<T>,
    params: &BackboneParams<T>,
    image: &ImageBuffer<T>,
    features: FeatureVector<T>,
) -> Result<BackbonePass<T>> {
    let weights = predict_weights(params, &features)?;
    let logits = predict_logits(params, &features)?;
    let coords = coords_from_logits(&logits)?;
    let fused = fuse(bank, &weights)?;
    let out = lookup(&fused, &coords, image)?;
    Ok((out, weights, coords, fused, features, logits))
}

/// Features -> adapter offsets -> modulation -> heads -> fusion -> lookup.
pub fn forward<T: Real>(
    bundle: &ModelBundle<T>,
    image: &ImageBuffer<T>,
    e_target: &EmbeddingVector<T>,
    cfg: &ModulationConfig<T>,
) -> Result<ForwardOutput<T>> {
    let features = extract_features(image);
    let direction = bundle.adapter.direction(e_target, &bundle.source_embedding)?;
    let delta = bundle.adapter.forward(e_target, &bundle.source_embedding)?;
    let modulated = modulate(&bundle.backbone, &delta, cfg)?;
    let (out, weights, coords, fused, features, logits) = run_backbone(&bundle.bank, &modulated, image, features)?;
    Ok(ForwardOutput {
        image: out,
        weights,
        coords,
        fused,
        features,
        logits,
        direction,
        delta,
        modulated,
    })
}

/// The unmodulated backbone applied to `image`.
pub fn forward_base<T: Real>(bundle: &ModelBundle<T>, image: &ImageBuffer<T>) -> Result<ImageBuffer<T>> {
    let features = extract_features(image);
    Ok(run_backbone(&bundle.bank, &bundle.backbone, image, features)?.0)
}

/// Upstream gradients flowing into the forward pass outputs.
#[derive(Debug, Clone, Copy)]
pub struct Upstream<'a, T> {
    pub image: &'a [[T; 3]],
    pub weights: Option<&'a [T]>,
    pub coords: Option<&'a [Vec<T>; 3]>,
}

/// Reverse pass through a completed forward pass, accumulating only into the
/// adapter. The backbone, basis bank and feature extractor stay frozen.
pub fn backward<T: Real>(
    bundle: &ModelBundle<T>,
    input: &ImageBuffer<T>,
    fwd: &ForwardOutput<T>,
    cfg: &ModulationConfig<T>,
    upstream: Upstream<'_, T>,
) -> Result<AdapterGrads<T>> {
    let lg = lookup_grad(&fwd.fused, &fwd.coords, input, upstream.image)?;

    let mut d_weights = fuse_grad(&bundle.bank, &lg.lut)?;
    if let Some(extra) = upstream.weights {
        if extra.len() != d_weights.len() {
            return Err(Error::dim("weight upstream gradient", d_weights.len(), extra.len()));
        }
        d_weights.iter_mut().zip(extra).for_each(|(a, &b)| *a += b);
    }
    let mut d_coords = lg.coords;
    if let Some(extra) = upstream.coords {
        for (a, b) in d_coords.iter_mut().zip(extra) {
            if a.len() != b.len() {
                return Err(Error::dim("coordinate upstream gradient", a.len(), b.len()));
            }
            a.iter_mut().zip(b).for_each(|(x, &y)| *x += y);
        }
    }
    let d_logits = coords_logits_grad(&fwd.logits, &d_coords)?;

    let f = fwd.features.as_slice();
    let mut d_params = BackboneParams {
        weight_predictor: crate::network::backbone::Affine::zeros(
            fwd.modulated.weight_predictor.rows(),
            fwd.modulated.weight_predictor.cols(),
        ),
        adaint_head: crate::network::backbone::Affine::zeros(
            fwd.modulated.adaint_head.rows(),
            fwd.modulated.adaint_head.cols(),
        ),
    };
    fwd.modulated
        .weight_predictor
        .backward_into(f, &d_weights, &mut d_params.weight_predictor);
    fwd.modulated.adaint_head.backward_into(f, &d_logits, &mut d_params.adaint_head);

    let d_delta = modulate_grad(&bundle.backbone, &d_params.flatten(), cfg)?;
    bundle.adapter.backward(&fwd.direction, &d_delta)
}

/// Adapter gradients of `sum(upstream * forward(...).image)`.
pub fn forward_grad<T: Real>(
    bundle: &ModelBundle<T>,
    image: &ImageBuffer<T>,
    e_target: &EmbeddingVector<T>,
    cfg: &ModulationConfig<T>,
    upstream: &[[T; 3]],
) -> Result<AdapterGrads<T>> {
    let fwd = forward(bundle, image, e_target, cfg)?;
    backward(
        bundle,
        image,
        &fwd,
        cfg,
        Upstream {
            image: upstream,
            weights: None,
            coords: None,
        },
    )
}
