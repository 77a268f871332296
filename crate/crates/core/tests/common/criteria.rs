//! Desk-scale checks behind the acceptance criteria. Each returns the measured
//! quantities so callers can print them next to the pinned tolerance.

use std::f64::consts::PI;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use tonelut_core::corpus::default_corpus;
use tonelut_core::embed::{relative_similarity, EmbeddingProvider, EmbeddingStore, ToyEmbedder};
use tonelut_core::eval::{assess_filters, filter_registry, strength_sweep, FilterAssessment};
use tonelut_core::formats::{
    checkpoint_from_bytes, checkpoint_to_bytes, decode_image, embedding_store_to_string, encode_png, parse_cube,
    parse_embedding_store, to_cube_string, Checkpoint,
};
use tonelut_core::image::ImageBuffer;
use tonelut_core::losses::{content_loss, IntervalTable, LossReport};
use tonelut_core::lut::{lookup, make_identity, uniform_axis, BasisLutBank, Lut3D, SamplingCoordinates};
use tonelut_core::network::{forward, forward_base, ModelBundle, ModulationConfig};
use tonelut_core::train::{build_toy_bundle, BundleOptions, TrainConfig, TrainCorpus, TrainState, Trainer};

use super::{interval_loss_oracle, random_bank, random_coords, random_embedding, random_image, random_lut, rng};

pub const IDENTITY_TOL: f64 = 1e-6;
pub const INTERVAL_ORACLE_TOL: f64 = 1e-10;
/// Identity LUT, N = 2, uniform coordinates: 4 unit differences per axis.
pub const INTERVAL_N2_IDENTITY: f64 = 12.0;
pub const SIMILARITY_TOL: f64 = 1e-12;
pub const ASSESS_MAX_SECONDS: f64 = 30.0;
pub const TRAIN_STEPS: u64 = 300;
pub const TRAIN_SEED: u64 = 7;
pub const TRAIN_TEXT: &str = "red photo";
/// The training corpus is the first 16 default-corpus images.
pub const TRAIN_IMAGES: usize = 16;
pub const RED_RISE_MIN: f64 = 0.02;
pub const CONTENT_MSE_MAX: f64 = 0.05;
pub const TRAIN_MAX_SECONDS: f64 = 120.0;
pub const TRADEOFF_LAMBDA: f64 = 100.0;
pub const CUBE_TOL: f64 = 5e-7;
pub const REBAKE_TOL: f64 = 0.01;
/// Largest relative change of knot density in the rebake check.
pub const REBAKE_WARP: f64 = 0.2;
pub const STORE_TOL: f64 = 1e-9;
pub const IMAGE_TOL: f64 = 1.0 / 510.0;
pub const RESUME_SPLIT: u64 = 10;
pub const SWEEP_STEPS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
pub const SWEEP_MAX_DELTA: f64 = 0.2;

/// Worst deviation from the input over the default corpus, for several `s`
/// with `e_target = e_source` and for `s = 0` with every lexicon text.
pub fn identity_chain() -> (f64, f64) {
    let bundle = build_toy_bundle::<f64>(&BundleOptions::default(), 0).unwrap();
    let images = default_corpus::<f64>().unwrap();
    let toy = ToyEmbedder::default();
    let source = bundle.source_embedding.clone();
    let mut same_text = 0.0f64;
    let mut zero_s = 0.0f64;
    for img in &images {
        for s in [-2.0, -0.5, 0.5, 1.0, 3.7] {
            let out = forward(&bundle, img, &source, &ModulationConfig { s }).unwrap();
            same_text = same_text.max(out.image.max_abs_diff(img).unwrap());
        }
    }
    for img in images.iter().take(4) {
        for text in toy.texts() {
            let target = toy.embed_text(&text).unwrap();
            let out = forward(&bundle, img, &target, &ModulationConfig { s: 0.0 }).unwrap();
            zero_s = zero_s.max(out.image.max_abs_diff(img).unwrap());
        }
    }
    (same_text, zero_s)
}

/// Worst absolute gap between the interval loss and the brute-force sum on
/// random small banks, plus the value of the identity N = 2 case.
pub fn interval_oracle() -> (f64, f64) {
    let mut r = rng(31);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = r.random_range(2..=5);
        let l = r.random_range(1..=3);
        let bank = random_bank(&mut r, l, n);
        let coords = random_coords(&mut r, n);
        let alpha = r.random_range(0.1..1.5);
        let fast = IntervalTable::new(&bank).loss(&coords, alpha).unwrap();
        let slow = interval_loss_oracle(&bank, &coords, alpha);
        worst = worst.max((fast - slow).abs() / slow.abs().max(1.0));
    }
    let id = BasisLutBank::new(vec![make_identity::<f64>(2).unwrap()]).unwrap();
    let n2 = IntervalTable::new(&id).loss(&SamplingCoordinates::uniform(2).unwrap(), 0.7).unwrap();
    (worst, n2)
}

/// Worst violations of the three relative-similarity properties: equal
/// similarities give 0.5, swapping target and anchor complements, and every
/// value lies strictly inside (0, 1).
pub fn similarity_properties() -> (f64, f64, bool) {
    let mut r = rng(41);
    let (mut half, mut swap) = (0.0f64, 0.0f64);
    let mut open_interval = true;
    for _ in 0..200 {
        let d = r.random_range(2..=32);
        let (img, t, a) = (random_embedding(&mut r, d), random_embedding(&mut r, d), random_embedding(&mut r, d));
        let s = relative_similarity(&img, &t, &a).unwrap();
        let swapped = relative_similarity(&img, &a, &t).unwrap();
        swap = swap.max((s + swapped - 1.0).abs());
        open_interval &= s > 0.0 && s < 1.0;
        half = half.max((relative_similarity(&img, &t, &t).unwrap() - 0.5).abs());
    }
    (half, swap, open_interval)
}

pub fn filter_assessment() -> (Vec<FilterAssessment>, f64) {
    let start = Instant::now();
    let images = default_corpus::<f64>().unwrap();
    let rows = assess_filters(&images, &filter_registry(), &EmbeddingProvider::toy()).unwrap();
    (rows, start.elapsed().as_secs_f64())
}

pub struct TrainingRun {
    pub bundle: ModelBundle<f64>,
    pub history: Vec<LossReport<f64>>,
    pub seconds: f64,
}

impl TrainingRun {
    fn mean_clip(reports: &[LossReport<f64>]) -> f64 {
        reports.iter().map(|r| r.clip_directional).sum::<f64>() / reports.len() as f64
    }

    pub fn clip_first20(&self) -> f64 {
        Self::mean_clip(&self.history[..20])
    }

    pub fn clip_last20(&self) -> f64 {
        Self::mean_clip(&self.history[self.history.len() - 20..])
    }
}

pub fn train_images() -> Vec<ImageBuffer<f64>> {
    let mut images = default_corpus::<f64>().unwrap();
    images.truncate(TRAIN_IMAGES);
    images
}

pub fn train_toy(seed: u64, steps: u64, content_weight: f64) -> TrainingRun {
    let start = Instant::now();
    let mut cfg = TrainConfig {
        steps,
        seed,
        ..TrainConfig::default()
    };
    cfg.loss.content = content_weight;
    let bundle = build_toy_bundle::<f64>(&BundleOptions::default(), seed).unwrap();
    let corpus = TrainCorpus::new(train_images(), vec![TRAIN_TEXT.to_string()]).unwrap();
    let mut trainer = Trainer::new(TrainState::fresh(bundle, seed), corpus, &EmbeddingProvider::toy(), cfg).unwrap();
    let history = trainer.run(steps, |_, _, _| Ok(())).unwrap();
    TrainingRun {
        bundle: trainer.into_state().bundle,
        history,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Mean red-channel rise and mean content loss of the trained model's outputs
/// over the training images at `s = 1`.
pub fn red_rise_and_mse(bundle: &ModelBundle<f64>) -> (f64, f64) {
    let images = train_images();
    let target = ToyEmbedder::default().embed_text::<f64>(TRAIN_TEXT).unwrap();
    let (mut red, mut mse) = (0.0, 0.0);
    for img in &images {
        let out = forward(bundle, img, &target, &ModulationConfig::default()).unwrap();
        red += out.image.channel_mean(0) - img.channel_mean(0);
        mse += content_loss(img, &out.image).unwrap();
    }
    let n = images.len() as f64;
    (red / n, mse / n)
}

pub fn same_run(a: &TrainingRun, b: &TrainingRun) -> bool {
    a.history == b.history && a.bundle.adapter == b.bundle.adapter
}

/// Worst cube round-trip error on random LUTs and the worst rebake error for
/// smoothly non-uniform coordinates at N = 17.
pub fn cube_roundtrip() -> (f64, f64) {
    let mut r = rng(51);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let n = r.random_range(2..=9);
        let lut = random_lut(&mut r, n, -0.2, 1.2);
        let text = to_cube_string(&lut, &SamplingCoordinates::uniform(n).unwrap(), None).unwrap();
        let back = parse_cube::<f64>(&text).unwrap().lut;
        worst = worst.max(max_lut_diff(&lut, &back));
    }
    let n = 17;
    let lut = Lut3D::<f64>::from_color_fn(n, |p| [p[0].powf(0.8), (p[1] * 1.1).min(1.0), p[2] * p[2]]).unwrap();
    let images = default_corpus::<f64>().unwrap();
    let mut rebake = 0.0f64;
    for _ in 0..10 {
        let coords = smooth_warp_coords(&mut r, n, REBAKE_WARP);
        let text = to_cube_string(&lut, &coords, Some("rebake")).unwrap();
        let (baked, uniform) = parse_cube::<f64>(&text).unwrap().into_parts().unwrap();
        for img in images.iter().take(6) {
            let direct = lookup(&lut, &coords, img).unwrap();
            let via_file = lookup(&baked, &uniform, img).unwrap();
            rebake = rebake.max(direct.max_abs_diff(&via_file).unwrap());
        }
    }
    (worst, rebake)
}

/// Knots `x = u + a sin(k pi u) / (k pi)` per channel, `|a| <= amplitude`,
/// `k` in {1, 2}: knot density varies smoothly by up to `amplitude`.
pub fn smooth_warp_coords(r: &mut ChaCha8Rng, n: usize, amplitude: f64) -> SamplingCoordinates<f64> {
    let axes = std::array::from_fn(|_| {
        let a = r.random_range(-amplitude..=amplitude);
        let k = PI * f64::from(r.random_range(1..=2u8));
        uniform_axis::<f64>(n)
            .into_iter()
            .enumerate()
            .map(|(i, u)| if i == 0 || i == n - 1 { u } else { u + a * (k * u).sin() / k })
            .collect()
    });
    SamplingCoordinates::new(axes).unwrap()
}

pub fn max_lut_diff(a: &Lut3D<f64>, b: &Lut3D<f64>) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .flat_map(|(x, y)| (0..3).map(move |c| (x[c] - y[c]).abs()))
        .fold(0.0, f64::max)
}

/// Worst vector error after an embedding-store write/read cycle.
pub fn store_roundtrip() -> f64 {
    let mut r = rng(61);
    let mut worst = 0.0f64;
    for d in [3, 30, 1024] {
        let mut store = EmbeddingStore::<f64>::new(Some("test-model".into()), Some(d));
        for i in 0..8 {
            let v = random_embedding(&mut r, d);
            store.insert(format!("text {i}"), v.as_slice().to_vec()).unwrap();
        }
        let back: EmbeddingStore<f64> = parse_embedding_store(&embedding_store_to_string(&store).unwrap()).unwrap();
        assert_eq!(back.keys().collect::<Vec<_>>(), store.keys().collect::<Vec<_>>());
        for ((_, a), (_, b)) in store.entries().zip(back.entries()) {
            worst = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(worst, f64::max);
        }
    }
    worst
}

/// Worst component error of a PNG write/read cycle on random images.
pub fn image_roundtrip() -> f64 {
    let mut r = rng(71);
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let (w, h) = (r.random_range(1..=20), r.random_range(1..=20));
        let img = random_image(&mut r, w, h);
        let back: ImageBuffer<f64> = decode_image(&encode_png(&img).unwrap()).unwrap();
        worst = worst.max(img.max_abs_diff(&back).unwrap());
    }
    worst
}

/// Trains 10 + 10 steps through a checkpoint and 20 steps straight.
/// Returns whether the second half of the loss history and the final
/// checkpoint bytes are identical, and whether save/load/save is stable.
pub fn resume_equivalence() -> (bool, bool) {
    let cfg = TrainConfig {
        steps: 2 * RESUME_SPLIT,
        seed: 3,
        ..TrainConfig::default()
    };
    let provider = EmbeddingProvider::toy();
    let images = tonelut_core::corpus::generate::<f64>(6, 24, 24, 5).unwrap();
    let corpus = TrainCorpus::new(images, vec!["red photo".into(), "warm photo".into()]).unwrap();
    let opts = BundleOptions {
        grid_size: 9,
        hidden: 16,
        adaint_bias: 0.0,
    };
    let config = serde_json::json!({ "seed": cfg.seed });
    let fresh = || TrainState::fresh(build_toy_bundle::<f64>(&opts, cfg.seed).unwrap(), cfg.seed);

    let mut straight = Trainer::new(fresh(), corpus.clone(), &provider, cfg.clone()).unwrap();
    let full = straight.run(2 * RESUME_SPLIT, |_, _, _| Ok(())).unwrap();

    let mut first = Trainer::new(fresh(), corpus.clone(), &provider, cfg.clone()).unwrap();
    first.run(RESUME_SPLIT, |_, _, _| Ok(())).unwrap();
    let bytes = checkpoint_to_bytes(&Checkpoint::from_train_state(first.into_state(), config.clone())).unwrap();
    let loaded = checkpoint_from_bytes::<f64>(&bytes).unwrap();
    let stable = checkpoint_to_bytes(&loaded).unwrap() == bytes;
    let mut second = Trainer::new(loaded.into_train_state(cfg.seed), corpus, &provider, cfg).unwrap();
    let tail = second.run(RESUME_SPLIT, |_, _, _| Ok(())).unwrap();

    let end_a = checkpoint_to_bytes(&Checkpoint::from_train_state(straight.into_state(), config.clone())).unwrap();
    let end_b = checkpoint_to_bytes(&Checkpoint::from_train_state(second.into_state(), config)).unwrap();
    (tail == full[RESUME_SPLIT as usize..] && end_a == end_b, stable)
}

/// Largest per-component jump between consecutive strengths over several
/// images, and whether `s = 0` reproduced the base output exactly.
pub fn sweep_smoothness(bundle: &ModelBundle<f64>) -> (f64, bool) {
    let target = ToyEmbedder::default().embed_text::<f64>(TRAIN_TEXT).unwrap();
    let mut worst = 0.0f64;
    let mut exact = true;
    for img in default_corpus::<f64>().unwrap().iter().take(8) {
        let report = strength_sweep(bundle, img, &target, &SWEEP_STEPS, None).unwrap();
        worst = worst.max(report.max_consecutive_delta);
        exact &= report.entries[0].image == forward_base(bundle, img).unwrap();
    }
    (worst, exact)
}
