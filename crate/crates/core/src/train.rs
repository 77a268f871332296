//! Unsupervised adapter training: random (text, image) pairs, augmentation,
//! the combined objective, and Adam updates on adapter parameters only.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::{embed_image_toy, embed_image_toy_grad, EmbeddingProvider, EmbeddingVector, ToyEmbedder, ANCHOR_TEXT};
use crate::error::{Error, Result};
use crate::image::{clamp01, luma, ImageBuffer};
use crate::losses::{total_loss_with_grad, IntervalTable, LossInputs, LossReport, LossWeights};
use crate::lut::{BasisLutBank, DEFAULT_GRID_SIZE};
use crate::network::{
    backward, forward, AdapterGrads, AdapterNetwork, BackboneParams, ModelBundle, ModulationConfig, Upstream,
    FEATURE_DIM,
};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub crop_fraction: f64,
    pub flip_probability: f64,
    pub brightness_range: (f64, f64),
    pub saturation_range: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            crop_fraction: 0.9,
            flip_probability: 0.5,
            brightness_range: (0.8, 1.2),
            saturation_range: (0.8, 1.2),
        }
    }
}

impl AugmentConfig {
    /// No crop, no flip, no jitter.
    pub fn identity() -> Self {
        Self {
            crop_fraction: 1.0,
            flip_probability: 0.0,
            brightness_range: (1.0, 1.0),
            saturation_range: (1.0, 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok_range = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi;
        if !(self.crop_fraction > 0.0 && self.crop_fraction <= 1.0) {
            return Err(Error::Config(format!("crop fraction {} not in (0, 1]", self.crop_fraction)));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::Config(format!("flip probability {} not in [0, 1]", self.flip_probability)));
        }
        if !ok_range(self.brightness_range) || !ok_range(self.saturation_range) {
            return Err(Error::Config("jitter ranges must satisfy 0 <= lo <= hi".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub steps: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub augment: AugmentConfig,
    /// Modulation strength used during training.
    pub s: f64,
    pub loss: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            steps: 300,
            batch_size: 1,
            seed: 0,
            augment: AugmentConfig::default(),
            s: 1.0,
            loss: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} = {b} not in [0, 1)")));
            }
        }
        if !(self.adam_epsilon > 0.0) {
            return Err(Error::Config("adam epsilon must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !self.s.is_finite() {
            return Err(Error::Config("modulation scale must be finite".into()));
        }
        self.augment.validate()?;
        self.loss.validate()
    }
}

/// Architecture choices for a freshly initialized bundle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BundleOptions {
    pub grid_size: usize,
    pub hidden: usize,
    /// Constant bias of the coordinate head. Any value keeps the initial
    /// coordinates uniform; with the default of zero, modulation can never
    /// move them.
    pub adaint_bias: f64,
}

impl Default for BundleOptions {
    fn default() -> Self {
        Self {
            grid_size: DEFAULT_GRID_SIZE,
            hidden: 64,
            adaint_bias: 0.0,
        }
    }
}

/// Adapter with matrices from `U(0, 0.01)` and zero biases.
pub fn init_adapter<T: Real>(seed: u64, embed_dim: usize, hidden: usize, param_count: usize) -> AdapterNetwork<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    AdapterNetwork::init_uniform(embed_dim, hidden, param_count, &mut rng)
}

/// Standard bank, neutral backbone and a seeded adapter in the toy embedding space.
pub fn build_toy_bundle<T: Real>(opts: &BundleOptions, seed: u64) -> Result<ModelBundle<T>> {
    let bank = BasisLutBank::standard(opts.grid_size)?;
    let backbone = BackboneParams::neutral(bank.len(), opts.grid_size, FEATURE_DIM, T::lit(opts.adaint_bias))?;
    let toy = ToyEmbedder::default();
    let adapter = init_adapter(seed, toy.dim(), opts.hidden, backbone.param_count());
    let source = toy.embed_text(&adapter.source_prompt)?;
    ModelBundle::new(backbone, bank, adapter, source)
}

/// Random crop, horizontal flip, brightness and saturation jitter.
pub fn augment<T: Real, R: Rng + ?Sized>(image: &ImageBuffer<T>, cfg: &AugmentConfig, rng: &mut R) -> Result<ImageBuffer<T>> {
    cfg.validate()?;
    let cw = ((image.width() as f64) * cfg.crop_fraction).floor() as usize;
    let ch = ((image.height() as f64) * cfg.crop_fraction).floor() as usize;
    if cw == 0 || ch == 0 {
        return Err(Error::InvalidDimensions(format!(
            "{}x{} image too small for crop fraction {}",
            image.width(),
            image.height(),
            cfg.crop_fraction
        )));
    }
    let x0 = rng.random_range(0..=image.width() - cw);
    let y0 = rng.random_range(0..=image.height() - ch);
    let flip = rng.random::<f64>() < cfg.flip_probability;
    let brightness = sample_range(rng, cfg.brightness_range);
    let saturation = sample_range(rng, cfg.saturation_range);

    let mut out = image.crop(x0, y0, cw, ch)?;
    if flip {
        out = out.flip_horizontal();
    }
    Ok(jitter(&out, T::lit(brightness), T::lit(saturation)))
}

fn sample_range<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    let u: f64 = rng.random();
    lo + (hi - lo) * u
}

/// Brightness scale then saturation scale around Rec.601 luma, each clamped.
pub fn jitter<T: Real>(image: &ImageBuffer<T>, brightness: T, saturation: T) -> ImageBuffer<T> {
    if brightness == T::one() && saturation == T::one() {
        return image.clone();
    }
    image.map_clamped(|p| {
        let b = p.map(|v| clamp01(v * brightness));
        let y = luma(b);
        b.map(|v| y + saturation * (v - y))
    })
}

/// First and second moments for every adapter parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: [Vec<T>; 4],
    pub v: [Vec<T>; 4],
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(adapter: &AdapterNetwork<T>) -> Self {
        let zeros = adapter.tensors().map(|t| vec![T::zero(); t.len()]);
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().chain(&self.v).flatten().all(|v| v.is_finite())
    }
}

/// Bias-corrected Adam update applied in place.
pub fn adam_step<T: Real>(
    state: &mut AdamState<T>,
    adapter: &mut AdapterNetwork<T>,
    grads: &AdapterGrads<T>,
    cfg: &TrainConfig,
) -> Result<()> {
    let step = state.t + 1;
    for (p, g) in adapter.tensors().iter().zip(grads.tensors()) {
        if p.len() != g.len() {
            return Err(Error::dim("adam gradient", p.len(), g.len()));
        }
    }
    if grads.tensors().iter().any(|g| g.iter().any(|v| !v.is_finite())) {
        return Err(Error::Training {
            step,
            message: "non-finite gradient".into(),
        });
    }
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let lr = T::lit(cfg.learning_rate);
    let eps = T::lit(cfg.adam_epsilon);
    let bc1 = T::one() - b1.powi(step.min(i32::MAX as u64) as i32);
    let bc2 = T::one() - b2.powi(step.min(i32::MAX as u64) as i32);
    for (((p, g), m), v) in adapter
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (T::one() - b1) * g[i];
            v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    state.t = step;
    Ok(())
}

/// Training objective on one (image, text) pair and its gradient with
/// respect to the adapter parameters.
pub fn objective<T: Real>(
    bundle: &ModelBundle<T>,
    table: &IntervalTable<T>,
    source: &ImageBuffer<T>,
    target: &EmbeddingVector<T>,
    modulation: &ModulationConfig<T>,
    weights: &LossWeights,
) -> Result<(LossReport<T>, AdapterGrads<T>)> {
    let fwd = forward(bundle, source, target, modulation)?;
    let e_in = embed_image_toy(source)?;
    let e_out = embed_image_toy(&fwd.image)?;
    let delta_image: Vec<T> = e_out.as_slice().iter().zip(e_in.as_slice()).map(|(&a, &b)| a - b).collect();
    let delta_text: Vec<T> = target
        .as_slice()
        .iter()
        .zip(bundle.source_embedding.as_slice())
        .map(|(&a, &b)| a - b)
        .collect();

    let inputs = LossInputs {
        source,
        adjusted: &fwd.image,
        delta_image: &delta_image,
        delta_text: &delta_text,
        weights: &fwd.weights,
        coords: &fwd.coords,
    };
    let (report, grads) = total_loss_with_grad(&inputs, table, weights)?;

    let mut d_image = grads.adjusted;
    let via_embedding = embed_image_toy_grad(&fwd.image, &grads.delta_image)?;
    for (a, b) in d_image.iter_mut().zip(&via_embedding) {
        for c in 0..3 {
            a[c] += b[c];
        }
    }
    let adapter_grads = backward(
        bundle,
        source,
        &fwd,
        modulation,
        Upstream {
            image: &d_image,
            weights: Some(&grads.weights),
            coords: Some(&grads.coords),
        },
    )?;
    Ok((report, adapter_grads))
}

/// Unpaired images and prompts.
#[derive(Debug, Clone)]
pub struct TrainCorpus<T> {
    pub images: Vec<ImageBuffer<T>>,
    pub texts: Vec<String>,
}

impl<T: Real> TrainCorpus<T> {
    pub fn new(images: Vec<ImageBuffer<T>>, texts: Vec<String>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Config("training corpus needs at least one image".into()));
        }
        if texts.is_empty() {
            return Err(Error::Config("training corpus needs at least one text".into()));
        }
        Ok(Self { images, texts })
    }
}

/// Serializable ChaCha position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Everything needed to continue training bit-identically.
#[derive(Debug, Clone)]
pub struct TrainState<T> {
    pub bundle: ModelBundle<T>,
    pub adam: AdamState<T>,
    pub rng: RngState,
    pub step: u64,
}

impl<T: Real> TrainState<T> {
    pub fn fresh(bundle: ModelBundle<T>, seed: u64) -> Self {
        let adam = AdamState::new(&bundle.adapter);
        Self {
            bundle,
            adam,
            rng: RngState::capture(&ChaCha8Rng::seed_from_u64(seed)),
            step: 0,
        }
    }
}

/// Stepwise trainer over a fixed corpus.
pub struct Trainer<T: Real> {
    cfg: TrainConfig,
    corpus: TrainCorpus<T>,
    targets: Vec<EmbeddingVector<T>>,
    table: IntervalTable<T>,
    bundle: ModelBundle<T>,
    adam: AdamState<T>,
    rng: ChaCha8Rng,
    step: u64,
}

impl<T: Real> Trainer<T> {
    /// Fails unless the provider is differentiable (toy mode).
    pub fn new(state: TrainState<T>, corpus: TrainCorpus<T>, provider: &EmbeddingProvider<T>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if !provider.is_differentiable() {
            return Err(Error::Config(
                "training needs a differentiable image embedder; the embedding store is inference-only".into(),
            ));
        }
        if provider.dim() != state.bundle.adapter.embed_dim() {
            return Err(Error::dim("provider embedding", state.bundle.adapter.embed_dim(), provider.dim()));
        }
        let source = provider.embed_text(ANCHOR_TEXT)?;
        if state.bundle.adapter.source_prompt == ANCHOR_TEXT && source != state.bundle.source_embedding {
            return Err(Error::Config("bundle source embedding does not match the provider".into()));
        }
        let targets = corpus
            .texts
            .iter()
            .map(|t| provider.embed_text(t))
            .collect::<Result<Vec<_>>>()?;
        for (img_idx, img) in corpus.images.iter().enumerate() {
            let cw = (img.width() as f64 * cfg.augment.crop_fraction).floor();
            let ch = (img.height() as f64 * cfg.augment.crop_fraction).floor();
            if cw < 1.0 || ch < 1.0 {
                return Err(Error::InvalidDimensions(format!("corpus image {img_idx} too small to crop")));
            }
        }
        Ok(Self {
            table: IntervalTable::new(&state.bundle.bank),
            rng: state.rng.restore(),
            cfg,
            corpus,
            targets,
            bundle: state.bundle,
            adam: state.adam,
            step: state.step,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn bundle(&self) -> &ModelBundle<T> {
        &self.bundle
    }

    pub fn state(&self) -> TrainState<T> {
        TrainState {
            bundle: self.bundle.clone(),
            adam: self.adam.clone(),
            rng: RngState::capture(&self.rng),
            step: self.step,
        }
    }

    pub fn into_state(self) -> TrainState<T> {
        TrainState {
            rng: RngState::capture(&self.rng),
            bundle: self.bundle,
            adam: self.adam,
            step: self.step,
        }
    }

    fn sample_loss(&mut self) -> Result<(LossReport<T>, AdapterGrads<T>)> {
        let text_idx = self.rng.random_range(0..self.corpus.texts.len());
        let image_idx = self.rng.random_range(0..self.corpus.images.len());
        let source = augment(&self.corpus.images[image_idx], &self.cfg.augment, &mut self.rng)?;
        let modulation = ModulationConfig { s: T::lit(self.cfg.s) };
        objective(&self.bundle, &self.table, &source, &self.targets[text_idx], &modulation, &self.cfg.loss)
    }

    /// One optimizer step; returns the (batch-mean) loss report.
    pub fn step(&mut self) -> Result<LossReport<T>> {
        let step = self.step + 1;
        let wrap = |e: Error| match e {
            Error::Training { .. } => e,
            other => Error::Training {
                step,
                message: other.to_string(),
            },
        };
        let batch = self.cfg.batch_size;
        let (mut report, mut grads) = self.sample_loss().map_err(wrap)?;
        for _ in 1..batch {
            let (r, g) = self.sample_loss().map_err(wrap)?;
            report.total += r.total;
            report.content += r.content;
            report.clip_directional += r.clip_directional;
            report.weight_l2 += r.weight_l2;
            report.interval += r.interval;
            grads.add_assign(&g);
        }
        if batch > 1 {
            let k = T::one() / T::from_usize_lossy(batch);
            for v in [
                &mut report.total,
                &mut report.content,
                &mut report.clip_directional,
                &mut report.weight_l2,
                &mut report.interval,
            ] {
                *v *= k;
            }
            grads.scale(k);
        }
        if !report.is_finite() {
            return Err(Error::Training {
                step,
                message: format!("non-finite loss {report:?}"),
            });
        }
        adam_step(&mut self.adam, &mut self.bundle.adapter, &grads, &self.cfg).map_err(wrap)?;
        self.step = step;
        Ok(report)
    }

    /// Runs `steps` steps, calling `on_step(step, report, trainer)` after each.
    pub fn run(
        &mut self,
        steps: u64,
        mut on_step: impl FnMut(u64, &LossReport<T>, &Self) -> Result<()>,
    ) -> Result<Vec<LossReport<T>>> {
        let mut history = Vec::with_capacity(steps as usize);
        for _ in 0..steps {
            let report = self.step()?;
            on_step(self.step, &report, self)?;
            history.push(report);
        }
        Ok(history)
    }
}

/// Trains `bundle` for `cfg.steps` steps from a fresh optimizer state seeded by `cfg.seed`.
pub fn train_loop<T: Real>(
    corpus: TrainCorpus<T>,
    cfg: &TrainConfig,
    bundle: ModelBundle<T>,
) -> Result<(ModelBundle<T>, Vec<LossReport<T>>)> {
    let provider = EmbeddingProvider::toy();
    let mut trainer = Trainer::new(TrainState::fresh(bundle, cfg.seed), corpus, &provider, cfg.clone())?;
    let history = trainer.run(cfg.steps, |_, _, _| Ok(()))?;
    Ok((trainer.into_state().bundle, history))
}

/// `step=<n> total=<f> content=<f> clip=<f> weight=<f> interval=<f>`
pub fn format_progress<T: Real>(step: u64, r: &LossReport<T>) -> String {
    format!(
        "step={step} total={:.6} content={:.6} clip={:.6} weight={:.6} interval={:.6}",
        r.total, r.content, r.clip_directional, r.weight_l2, r.interval
    )
}
