//! Shared fixtures and checks used by several test targets, including the
//! acceptance suite.
#![allow(dead_code)]

pub mod criteria;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tonelut_core::embed::{embed_image_toy, embed_image_toy_grad, EmbeddingVector, ToyEmbedder};
use tonelut_core::image::ImageBuffer;
use tonelut_core::losses::{
    clip_directional_loss, clip_directional_loss_grad, content_loss, content_loss_grad, total_loss,
    total_loss_with_grad, weight_l2, weight_l2_grad, IntervalTable, LossInputs, LossWeights,
};
use tonelut_core::lut::{fuse, fuse_grad, lookup, lookup_grad, BasisLutBank, Lut3D, LutWeights, SamplingCoordinates};
use tonelut_core::network::backbone::coords_logits_grad;
use tonelut_core::network::{
    coords_from_logits, extract_features, extract_features_grad, forward, forward_grad, modulate, predict_coords,
    Affine, AdapterNetwork, BackboneParams, ModelBundle, ModulationConfig, FEATURE_DIM,
};
use tonelut_core::train::objective;

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
pub const FD_INSTANCES: usize = 20;
/// Relative-error denominator floor, so vanishing derivatives compare absolutely.
pub const FD_FLOOR: f64 = 1e-8;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> ImageBuffer<f64> {
    let px = (0..w * h)
        .map(|_| [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()])
        .collect();
    ImageBuffer::new(w, h, px).unwrap()
}

/// LUT entries in `[lo, hi)`.
pub fn random_lut(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Lut3D<f64> {
    Lut3D::from_fn(n, |_, _, _| {
        [rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi)]
    })
    .unwrap()
}

pub fn random_bank(rng: &mut ChaCha8Rng, l: usize, n: usize) -> BasisLutBank<f64> {
    BasisLutBank::new((0..l).map(|_| random_lut(rng, n, 0.0, 1.0)).collect()).unwrap()
}

pub fn random_coords(rng: &mut ChaCha8Rng, n: usize) -> SamplingCoordinates<f64> {
    coords_from_logits(&uniform_vec(rng, 3 * (n - 1), -1.0, 1.0)).unwrap()
}

pub fn random_embedding(rng: &mut ChaCha8Rng, d: usize) -> EmbeddingVector<f64> {
    EmbeddingVector::normalized(uniform_vec(rng, d, -1.0, 1.0)).unwrap()
}

pub fn random_affine(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Affine<f64> {
    let w = uniform_vec(rng, rows * cols, -scale, scale);
    let b = uniform_vec(rng, rows, -scale, scale);
    Affine::from_parts(rows, cols, w, b).unwrap()
}

pub fn random_backbone(rng: &mut ChaCha8Rng, l: usize, n: usize, scale: f64) -> BackboneParams<f64> {
    BackboneParams::new(
        random_affine(rng, l, FEATURE_DIM, scale),
        random_affine(rng, 3 * (n - 1), FEATURE_DIM, scale),
    )
    .unwrap()
}

pub fn random_adapter(rng: &mut ChaCha8Rng, d: usize, h: usize, p: usize, scale: f64) -> AdapterNetwork<f64> {
    let mut a = AdapterNetwork::zeros(d, h, p);
    for t in a.tensors_mut() {
        t.iter_mut().for_each(|v| *v = rng.random_range(-scale..scale));
    }
    a
}

/// Fully random bundle: bank, backbone, adapter and source embedding.
pub fn random_bundle(rng: &mut ChaCha8Rng, l: usize, n: usize, d: usize, h: usize) -> ModelBundle<f64> {
    let bank = BasisLutBank::new((0..l).map(|_| random_lut(rng, n, 0.1, 0.9)).collect()).unwrap();
    let backbone = random_backbone(rng, l, n, 0.3);
    let adapter = random_adapter(rng, d, h, backbone.param_count(), 0.5);
    let source = random_embedding(rng, d);
    ModelBundle::new(backbone, bank, adapter, source).unwrap()
}

fn flat3(v: &[[f64; 3]]) -> Vec<f64> {
    v.iter().flatten().copied().collect()
}

fn unflat3(v: &[f64]) -> Vec<[f64; 3]> {
    v.chunks(3).map(|c| [c[0], c[1], c[2]]).collect()
}

/// Directional central difference of `f` at `x` along a random direction
/// (zero where `mask` is false), compared with `grad . v`.
fn directional_error(
    rng: &mut ChaCha8Rng,
    f: &dyn Fn(&[f64]) -> f64,
    x: &[f64],
    grad: &[f64],
    mask: Option<&[bool]>,
) -> f64 {
    assert_eq!(x.len(), grad.len());
    let v: Vec<f64> = (0..x.len())
        .map(|i| {
            if mask.is_some_and(|m| !m[i]) {
                0.0
            } else {
                rng.random_range(-1.0..1.0)
            }
        })
        .collect();
    let shifted = |k: f64| -> Vec<f64> { x.iter().zip(&v).map(|(a, b)| a + k * b).collect() };
    let fd = (f(&shifted(FD_STEP)) - f(&shifted(-FD_STEP))) / (2.0 * FD_STEP);
    let an: f64 = grad.iter().zip(&v).map(|(a, b)| a * b).sum();
    (fd - an).abs() / fd.abs().max(an.abs()).max(FD_FLOOR)
}

fn coords_from_flat(x: &[f64], n: usize) -> SamplingCoordinates<f64> {
    SamplingCoordinates::new(std::array::from_fn(|c| x[c * n..(c + 1) * n].to_vec())).unwrap()
}

fn interior_mask(n: usize) -> Vec<bool> {
    (0..3 * n).map(|i| i % n != 0 && i % n != n - 1).collect()
}

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub op: &'static str,
    pub instances: usize,
    pub worst: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.instances >= FD_INSTANCES && self.worst < FD_REL_TOL
    }
}

fn run(op: &'static str, seed: u64, mut instance: impl FnMut(&mut ChaCha8Rng) -> f64) -> GradCheck {
    let mut r = rng(seed);
    let worst = (0..FD_INSTANCES).map(|_| instance(&mut r)).fold(0.0, f64::max);
    GradCheck {
        op,
        instances: FD_INSTANCES,
        worst,
    }
}

pub fn check_lookup() -> GradCheck {
    run("lookup", 1, |r| {
        let n = r.random_range(2..=5);
        // Entries away from 0 and 1 keep the output clamp inactive.
        let lut = random_lut(r, n, 0.1, 0.9);
        let coords = random_coords(r, n);
        let img = random_image(r, 3, 2);
        let up = unflat3(&uniform_vec(r, img.len() * 3, -1.0, 1.0));
        let g = lookup_grad(&lut, &coords, &img, &up).unwrap();
        let (nl, nc) = (lut.values().len() * 3, 3 * n);
        let mut x = flat3(lut.values());
        x.extend(coords.axes().concat());
        x.extend(flat3(img.pixels()));
        let mut grad = flat3(&g.lut);
        grad.extend(g.coords.concat());
        grad.extend(flat3(&g.image));
        let mut mask = vec![true; nl];
        mask.extend(interior_mask(n));
        mask.extend(vec![true; img.len() * 3]);
        let (w, h) = (img.width(), img.height());
        let f = |x: &[f64]| {
            let lut = Lut3D::new(n, unflat3(&x[..nl])).unwrap();
            let coords = coords_from_flat(&x[nl..nl + nc], n);
            let img = ImageBuffer::new(w, h, unflat3(&x[nl + nc..])).unwrap();
            let out = lookup(&lut, &coords, &img).unwrap();
            flat3(out.pixels()).iter().zip(flat3(&up)).map(|(a, b)| a * b).sum()
        };
        directional_error(r, &f, &x, &grad, Some(&mask))
    })
}

pub fn check_fuse() -> GradCheck {
    run("fuse", 2, |r| {
        let (l, n) = (r.random_range(1..=3), r.random_range(2..=4));
        let bank = random_bank(r, l, n);
        let w = uniform_vec(r, l, -1.0, 1.0);
        let up = unflat3(&uniform_vec(r, n * n * n * 3, -1.0, 1.0));
        let grad = fuse_grad(&bank, &up).unwrap();
        let f = |x: &[f64]| {
            let fused = fuse(&bank, &LutWeights(x.to_vec())).unwrap();
            flat3(fused.values()).iter().zip(flat3(&up)).map(|(a, b)| a * b).sum()
        };
        directional_error(r, &f, &w, &grad, None)
    })
}

/// Coordinate head parameters through softmax and prefix sum.
pub fn check_predict_coords() -> GradCheck {
    run("predict_coords", 3, |r| {
        let n = r.random_range(2..=6);
        let params = random_backbone(r, 2, n, 0.5);
        let feats = extract_features(&random_image(r, 4, 4));
        let up: [Vec<f64>; 3] = std::array::from_fn(|_| uniform_vec(r, n, -1.0, 1.0));
        let logits = params.adaint_head.apply(feats.as_slice()).unwrap();
        let d_logits = coords_logits_grad(&logits, &up).unwrap();
        let fv = feats.as_slice();
        let mut grad: Vec<f64> = d_logits.iter().flat_map(|&g| fv.iter().map(move |&f| g * f)).collect();
        grad.extend(&d_logits);
        let head = &params.adaint_head;
        let mut x = head.weight.clone();
        x.extend(&head.bias);
        let (rows, cols) = (head.rows(), head.cols());
        let f = |x: &[f64]| {
            let mut p = params.clone();
            p.adaint_head = Affine::from_parts(rows, cols, x[..rows * cols].to_vec(), x[rows * cols..].to_vec()).unwrap();
            let c = predict_coords(&p, &feats).unwrap();
            (0..3).map(|a| c.axis(a).iter().zip(&up[a]).map(|(x, u)| x * u).sum::<f64>()).sum()
        };
        directional_error(r, &f, &x, &grad, None)
    })
}

pub fn check_adapter_forward() -> GradCheck {
    run("adapter_forward", 4, |r| {
        let (d, h, p) = (r.random_range(3..=8), r.random_range(2..=8), r.random_range(4..=12));
        let adapter = random_adapter(r, d, h, p, 1.0);
        let (et, es) = (random_embedding(r, d), random_embedding(r, d));
        let up = uniform_vec(r, p, -1.0, 1.0);
        let dir = adapter.direction(&et, &es).unwrap();
        let grad = adapter.backward(&dir, &up).unwrap().flatten();
        let x = adapter.tensors().concat();
        let f = |x: &[f64]| {
            let mut a = adapter.clone();
            let mut off = 0;
            for t in a.tensors_mut() {
                let len = t.len();
                t.copy_from_slice(&x[off..off + len]);
                off += len;
            }
            a.forward(&et, &es).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum()
        };
        directional_error(r, &f, &x, &grad, None)
    })
}

pub fn check_modulate() -> GradCheck {
    use tonelut_core::network::backbone::modulate_grad;
    run("modulate", 5, |r| {
        let n = r.random_range(2..=4);
        let l = r.random_range(1..=3);
        let theta = random_backbone(r, l, n, 1.0);
        let cfg = ModulationConfig {
            s: r.random_range(-2.0..2.0),
        };
        let p = theta.param_count();
        let delta = uniform_vec(r, p, -1.0, 1.0);
        let up = uniform_vec(r, p, -1.0, 1.0);
        let grad = modulate_grad(&theta, &up, &cfg).unwrap();
        let f = |x: &[f64]| {
            let m = modulate(&theta, x, &cfg).unwrap();
            m.flatten().iter().zip(&up).map(|(a, b)| a * b).sum()
        };
        directional_error(r, &f, &delta, &grad, None)
    })
}

pub fn check_content_loss() -> GradCheck {
    run("content_loss", 6, |r| {
        let (w, h) = (r.random_range(1..=5), r.random_range(1..=5));
        let src = random_image(r, w, h);
        let adj = random_image(r, w, h);
        let grad = flat3(&content_loss_grad(&src, &adj).unwrap());
        let f = |x: &[f64]| content_loss(&src, &ImageBuffer::new(w, h, unflat3(x)).unwrap()).unwrap();
        directional_error(r, &f, &flat3(adj.pixels()), &grad, None)
    })
}

pub fn check_clip_directional_loss() -> GradCheck {
    run("clip_directional_loss", 7, |r| {
        let d = r.random_range(2..=32);
        let di = uniform_vec(r, d, -1.0, 1.0);
        let dt = uniform_vec(r, d, -1.0, 1.0);
        let grad = clip_directional_loss_grad(&di, &dt).unwrap();
        let f = |x: &[f64]| clip_directional_loss(x, &dt).unwrap();
        directional_error(r, &f, &di, &grad, None)
    })
}

pub fn check_weight_l2() -> GradCheck {
    run("weight_l2", 8, |r| {
        let len = r.random_range(1..=6);
        let w = uniform_vec(r, len, -2.0, 2.0);
        let grad = weight_l2_grad(&LutWeights(w.clone()));
        let f = |x: &[f64]| weight_l2(&LutWeights(x.to_vec()));
        directional_error(r, &f, &w, &grad, None)
    })
}

pub fn check_interval_loss() -> GradCheck {
    run("interval_loss", 9, |r| {
        let n = r.random_range(2..=6);
        let l = r.random_range(1..=3);
        let bank = random_bank(r, l, n);
        let table = IntervalTable::new(&bank);
        let coords = random_coords(r, n);
        let alpha = r.random_range(0.3..1.0);
        let grad = table.loss_grad(&coords, alpha).unwrap().concat();
        let f = |x: &[f64]| table.loss(&coords_from_flat(x, n), alpha).unwrap();
        directional_error(r, &f, &coords.axes().concat(), &grad, Some(&interior_mask(n)))
    })
}

/// The weighted sum of all four terms, differentiated jointly.
pub fn check_total_loss() -> GradCheck {
    run("total_loss", 10, |r| {
        let n = r.random_range(2..=5);
        let l = r.random_range(1..=3);
        let d = r.random_range(2..=12);
        let bank = random_bank(r, l, n);
        let table = IntervalTable::new(&bank);
        let (w, h) = (3, 2);
        let src = random_image(r, w, h);
        let adj = random_image(r, w, h);
        let di = uniform_vec(r, d, -1.0, 1.0);
        let dt = uniform_vec(r, d, -1.0, 1.0);
        let weights = LutWeights(uniform_vec(r, l, -1.0, 1.0));
        let coords = random_coords(r, n);
        let lw = LossWeights {
            content: r.random_range(0.5..2.0),
            clip: r.random_range(0.5..2.0),
            lut: r.random_range(0.5..2.0),
            weight: r.random_range(0.1..1.0),
            interval: r.random_range(1e-3..1e-2),
            alpha: r.random_range(0.3..1.0),
        };
        let inputs = LossInputs {
            source: &src,
            adjusted: &adj,
            delta_image: &di,
            delta_text: &dt,
            weights: &weights,
            coords: &coords,
        };
        let (_, g) = total_loss_with_grad(&inputs, &table, &lw).unwrap();
        let np = w * h * 3;
        let mut x = flat3(adj.pixels());
        x.extend(&di);
        x.extend(weights.as_slice());
        x.extend(coords.axes().concat());
        let mut grad = flat3(&g.adjusted);
        grad.extend(&g.delta_image);
        grad.extend(&g.weights);
        grad.extend(g.coords.concat());
        let mut mask = vec![true; np + d + l];
        mask.extend(interior_mask(n));
        let f = |x: &[f64]| {
            let adj = ImageBuffer::new(w, h, unflat3(&x[..np])).unwrap();
            let wts = LutWeights(x[np + d..np + d + l].to_vec());
            let coords = coords_from_flat(&x[np + d + l..], n);
            let inputs = LossInputs {
                source: &src,
                adjusted: &adj,
                delta_image: &x[np..np + d],
                delta_text: &dt,
                weights: &wts,
                coords: &coords,
            };
            total_loss(&inputs, &table, &lw).unwrap().total
        };
        directional_error(r, &f, &x, &grad, Some(&mask))
    })
}

pub fn check_features() -> GradCheck {
    run("extract_features", 11, |r| {
        let (w, h) = (r.random_range(2..=6), r.random_range(2..=6));
        let img = random_image(r, w, h);
        let up = uniform_vec(r, FEATURE_DIM, -1.0, 1.0);
        let grad = flat3(&extract_features_grad(&img, &up).unwrap());
        let (w, h) = (img.width(), img.height());
        let f = |x: &[f64]| {
            let feats = extract_features(&ImageBuffer::new(w, h, unflat3(x)).unwrap());
            feats.as_slice().iter().zip(&up).map(|(a, b)| a * b).sum()
        };
        directional_error(r, &f, &flat3(img.pixels()), &grad, None)
    })
}

pub fn check_embed_image_toy() -> GradCheck {
    run("embed_image_toy", 12, |r| {
        let (w, h) = (r.random_range(2..=6), r.random_range(2..=6));
        let img = random_image(r, w, h);
        let up = uniform_vec(r, FEATURE_DIM, -1.0, 1.0);
        let grad = flat3(&embed_image_toy_grad(&img, &up).unwrap());
        let (w, h) = (img.width(), img.height());
        let f = |x: &[f64]| {
            let e = embed_image_toy(&ImageBuffer::new(w, h, unflat3(x)).unwrap()).unwrap();
            e.as_slice().iter().zip(&up).map(|(a, b)| a * b).sum()
        };
        directional_error(r, &f, &flat3(img.pixels()), &grad, None)
    })
}

fn set_adapter(bundle: &ModelBundle<f64>, x: &[f64]) -> ModelBundle<f64> {
    let mut b = bundle.clone();
    let mut off = 0;
    for t in b.adapter.tensors_mut() {
        let len = t.len();
        t.copy_from_slice(&x[off..off + len]);
        off += len;
    }
    b
}

/// Adapter gradients through modulation, both heads, fusion and lookup.
pub fn check_forward_grad() -> GradCheck {
    run("forward_grad", 13, |r| {
        let n = r.random_range(2..=5);
        let (l, d, h) = (r.random_range(1..=3), r.random_range(3..=8), r.random_range(2..=6));
        let bundle = random_bundle(r, l, n, d, h);
        let img = random_image(r, 4, 4);
        let target = random_embedding(r, bundle.adapter.embed_dim());
        let cfg = ModulationConfig {
            s: r.random_range(0.5..1.5),
        };
        let up = unflat3(&uniform_vec(r, img.len() * 3, -1.0, 1.0));
        let grad = forward_grad(&bundle, &img, &target, &cfg, &up).unwrap().flatten();
        let f = |x: &[f64]| {
            let out = forward(&set_adapter(&bundle, x), &img, &target, &cfg).unwrap();
            flat3(out.image.pixels()).iter().zip(flat3(&up)).map(|(a, b)| a * b).sum()
        };
        directional_error(r, &f, &bundle.adapter.tensors().concat(), &grad, None)
    })
}

/// The full training objective on a random bundle and the toy embedder.
pub fn check_objective() -> GradCheck {
    run("objective", 14, |r| {
        let n = r.random_range(2..=5);
        let (l, h) = (r.random_range(1..=3), r.random_range(2..=6));
        let mut bundle = random_bundle(r, l, n, FEATURE_DIM, h);
        let toy = ToyEmbedder::default();
        bundle.source_embedding = toy.embed_text("normal photo").unwrap();
        let texts = toy.texts();
        let target = toy.embed_text(&texts[r.random_range(0..texts.len())]).unwrap();
        let table = IntervalTable::new(&bundle.bank);
        let img = random_image(r, 5, 4);
        let cfg = ModulationConfig {
            s: r.random_range(0.5..1.5),
        };
        let lw = LossWeights {
            interval: 1e-3,
            ..LossWeights::default()
        };
        let grad = objective(&bundle, &table, &img, &target, &cfg, &lw).unwrap().1.flatten();
        let f = |x: &[f64]| objective(&set_adapter(&bundle, x), &table, &img, &target, &cfg, &lw).unwrap().0.total;
        directional_error(r, &f, &bundle.adapter.tensors().concat(), &grad, None)
    })
}

pub fn gradient_suite() -> Vec<GradCheck> {
    vec![
        check_lookup(),
        check_fuse(),
        check_predict_coords(),
        check_adapter_forward(),
        check_modulate(),
        check_content_loss(),
        check_clip_directional_loss(),
        check_weight_l2(),
        check_interval_loss(),
        check_total_loss(),
        check_features(),
        check_embed_image_toy(),
        check_forward_grad(),
        check_objective(),
    ]
}

/// Independent brute-force interval loss: every `(l, i, j, k, c)` term with
/// its own forward difference and denominator.
pub fn interval_loss_oracle(bank: &BasisLutBank<f64>, coords: &SamplingCoordinates<f64>, alpha: f64) -> f64 {
    let n = bank.grid_size();
    let mut total = 0.0;
    for lut in bank.luts() {
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    for c in 0..3 {
                        let here = lut.get(i, j, k)[c];
                        let steps = [(i, 0usize), (j, 1), (k, 2)];
                        for (idx, axis) in steps {
                            if idx + 1 >= n {
                                continue;
                            }
                            let next = match axis {
                                0 => lut.get(i + 1, j, k)[c],
                                1 => lut.get(i, j + 1, k)[c],
                                _ => lut.get(i, j, k + 1)[c],
                            };
                            let hgap = coords.axis(axis)[idx + 1] - coords.axis(axis)[idx];
                            total += (next - here).powi(2) / hgap.powf(2.0 * alpha);
                        }
                    }
                }
            }
        }
    }
    total
}
