//! Evaluation metrics, the filter-assessment experiment and strength sweeps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::{relative_similarity, EmbeddingProvider, EmbeddingVector, ANCHOR_TEXT};
use crate::error::{Error, Result};
use crate::image::{luma, ImageBuffer};
use crate::losses::DIRECTION_EPS;
use crate::network::{forward, ModelBundle, ModulationConfig};
use crate::scalar::{dot, norm, Real};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = w.iter().sum();
    w.map(|v| v / total)
}

/// Separable "valid" filtering of a `width`-wide plane.
fn filter_valid(plane: &[f64], width: usize, height: usize, w: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = width + 1 - SSIM_WINDOW;
    let oh = height + 1 - SSIM_WINDOW;
    let mut rows = vec![0.0; ow * height];
    for y in 0..height {
        let src = &plane[y * width..(y + 1) * width];
        for x in 0..ow {
            rows[y * ow + x] = w.iter().zip(&src[x..x + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|k| w[k] * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// SSIM of the Rec.601 luma planes: 11x11 Gaussian window (sigma 1.5),
/// C1 = 0.01², C2 = 0.03², averaged over window positions fully inside the image.
pub fn grayscale_ssim<T: Real>(a: &ImageBuffer<T>, b: &ImageBuffer<T>) -> Result<T> {
    if !a.same_shape(b) {
        return Err(Error::InvalidDimensions(format!(
            "ssim of {}x{} and {}x{} images",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::InvalidDimensions(format!(
            "{w}x{h} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} ssim window"
        )));
    }
    let ya: Vec<f64> = a.pixels().iter().map(|&p| luma(p).as_f64()).collect();
    let yb: Vec<f64> = b.pixels().iter().map(|&p| luma(p).as_f64()).collect();
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let win = gaussian_window();
    let mu_a = filter_valid(&ya, w, h, &win);
    let mu_b = filter_valid(&yb, w, h, &win);
    let aa = filter_valid(&prod(&ya, &ya), w, h, &win);
    let bb = filter_valid(&prod(&yb, &yb), w, h, &win);
    let ab = filter_valid(&prod(&ya, &yb), w, h, &win);
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2))
        })
        .sum();
    Ok(T::lit(total / mu_a.len() as f64))
}

/// Cosine of two unit embeddings.
pub fn image_similarity<T: Real>(a: &EmbeddingVector<T>, b: &EmbeddingVector<T>) -> Result<T> {
    a.cosine(b)
}

/// Cosine between the image change and the text change.
pub fn directional_similarity<T: Real>(
    image_in: &EmbeddingVector<T>,
    image_out: &EmbeddingVector<T>,
    text_source: &EmbeddingVector<T>,
    text_target: &EmbeddingVector<T>,
) -> Result<T> {
    let d = image_in.dim();
    for e in [image_out, text_source, text_target] {
        if e.dim() != d {
            return Err(Error::dim("embedding", d, e.dim()));
        }
    }
    let di: Vec<T> = image_out.as_slice().iter().zip(image_in.as_slice()).map(|(&a, &b)| a - b).collect();
    let dt: Vec<T> = text_target.as_slice().iter().zip(text_source.as_slice()).map(|(&a, &b)| a - b).collect();
    let (ni, nt) = (norm(&di), norm(&dt));
    let eps = T::lit(DIRECTION_EPS);
    if ni < eps {
        return Err(Error::DegenerateDirection(ni.as_f64()));
    }
    if nt < eps {
        return Err(Error::DegenerateDirection(nt.as_f64()));
    }
    Ok(dot(&di, &dt) / (ni * nt))
}

/// One step of an analytic filter; every step clamps to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterOp {
    /// `v^g` per channel.
    Gamma(f64),
    /// Per-channel multiplicative gains (white balance).
    Gain([f64; 3]),
    /// Scale of the distance from luma.
    Saturation(f64),
    /// Scale of the distance from 0.5.
    Contrast(f64),
    /// `lift + (1 - lift) * v`, raising the black point.
    Lift(f64),
}

impl FilterOp {
    fn apply<T: Real>(&self, p: [T; 3]) -> [T; 3] {
        let half = T::lit(0.5);
        let out = match *self {
            FilterOp::Gamma(g) => p.map(|v| v.powf(T::lit(g))),
            FilterOp::Gain(g) => [p[0] * T::lit(g[0]), p[1] * T::lit(g[1]), p[2] * T::lit(g[2])],
            FilterOp::Saturation(s) => {
                let y = luma(p);
                p.map(|v| y + T::lit(s) * (v - y))
            }
            FilterOp::Contrast(k) => p.map(|v| half + T::lit(k) * (v - half)),
            FilterOp::Lift(l) => p.map(|v| T::lit(l) + T::lit(1.0 - l) * v),
        };
        out.map(crate::image::clamp01)
    }
}

/// A named chain of [`FilterOp`]s; the name is the text token it should match.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub name: String,
    pub ops: Vec<FilterOp>,
}

impl FilterSpec {
    pub fn new(name: impl Into<String>, ops: Vec<FilterOp>) -> Self {
        Self { name: name.into(), ops }
    }

    pub fn apply<T: Real>(&self, image: &ImageBuffer<T>) -> ImageBuffer<T> {
        image.map_clamped(|p| self.ops.iter().fold(p, |acc, op| op.apply(acc)))
    }
}

/// The nine stand-in photo filters, each bound to a lexicon token.
pub fn filter_registry() -> Vec<FilterSpec> {
    use FilterOp::*;
    vec![
        FilterSpec::new("bright", vec![Gamma(0.6)]),
        FilterSpec::new("dark", vec![Gamma(1.7)]),
        FilterSpec::new("warm", vec![Gain([1.15, 1.0, 0.8])]),
        FilterSpec::new("cold", vec![Gain([0.82, 0.97, 1.15])]),
        FilterSpec::new("aged", vec![Saturation(0.4), Gain([1.15, 1.0, 0.75]), Contrast(0.8), Lift(0.06)]),
        FilterSpec::new("cinematic", vec![Gamma(1.3), Gain([0.8, 1.0, 1.05]), Contrast(1.15)]),
        FilterSpec::new("faded", vec![Contrast(0.55), Lift(0.2), Saturation(0.5)]),
        FilterSpec::new("vivid", vec![Saturation(1.7), Contrast(1.15)]),
        FilterSpec::new("moonlight", vec![Gamma(1.5), Saturation(0.6), Gain([0.78, 0.88, 1.12])]),
    ]
}

/// Mean relative similarity of sources and filtered images for one filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterAssessment {
    pub filter: String,
    pub text: String,
    pub mean_source: f64,
    pub mean_filtered: f64,
    pub images: usize,
}

impl FilterAssessment {
    pub fn improved(&self) -> bool {
        self.mean_filtered > self.mean_source
    }
}

/// Applies every filter to every image and scores both against the filter's
/// text, with `"normal photo"` as the anchor.
pub fn assess_filters<T: Real>(
    corpus: &[ImageBuffer<T>],
    filters: &[FilterSpec],
    provider: &EmbeddingProvider<T>,
) -> Result<Vec<FilterAssessment>> {
    if corpus.is_empty() {
        return Err(Error::Config("filter assessment needs at least one image".into()));
    }
    let anchor = provider.embed_text(ANCHOR_TEXT)?;
    let targets = filters
        .iter()
        .map(|f| provider.embed_text(&f.name))
        .collect::<Result<Vec<_>>>()?;
    let source_embeddings = corpus
        .par_iter()
        .map(|img| provider.embed_image(img))
        .collect::<Result<Vec<_>>>()?;

    filters
        .iter()
        .zip(&targets)
        .map(|(filter, target)| {
            let scores = corpus
                .par_iter()
                .zip(&source_embeddings)
                .map(|(img, e_src)| {
                    let e_filtered = provider.embed_image(&filter.apply(img))?;
                    Ok((
                        relative_similarity(e_src, target, &anchor)?.as_f64(),
                        relative_similarity(&e_filtered, target, &anchor)?.as_f64(),
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            let n = scores.len() as f64;
            Ok(FilterAssessment {
                filter: filter.name.clone(),
                text: crate::embed::with_photo_suffix(&filter.name),
                mean_source: scores.iter().map(|s| s.0).sum::<f64>() / n,
                mean_filtered: scores.iter().map(|s| s.1).sum::<f64>() / n,
                images: scores.len(),
            })
        })
        .collect()
}

/// Tab-separated table with one row per filter.
pub fn assessment_table(rows: &[FilterAssessment]) -> String {
    let mut out = String::from("filter\tmean_s_source\tmean_s_filtered\n");
    for r in rows {
        out.push_str(&format!("{}\t{:.6}\t{:.6}\n", r.filter, r.mean_source, r.mean_filtered));
    }
    out
}

/// Metric trio for one (image, text) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub image: String,
    pub text: String,
    /// `None` for images smaller than the SSIM window.
    pub grayscale_ssim: Option<f64>,
    pub image_similarity: f64,
    /// `None` when the output embedding did not move.
    pub directional_similarity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub s: f64,
    pub rows: Vec<EvalRow>,
    pub mean_grayscale_ssim: Option<f64>,
    pub mean_image_similarity: f64,
    pub mean_directional_similarity: Option<f64>,
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
        let mut out = String::from("image\ttext\tgrayscale_ssim\timage_similarity\tdirectional_similarity\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{:.6}\t{}\n",
                r.image,
                r.text,
                opt(r.grayscale_ssim),
                r.image_similarity,
                opt(r.directional_similarity)
            ));
        }
        out.push_str(&format!(
            "mean\t-\t{}\t{:.6}\t{}\n",
            opt(self.mean_grayscale_ssim),
            self.mean_image_similarity,
            opt(self.mean_directional_similarity)
        ));
        out
    }
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Adjusts every named image for every text and scores the results.
/// Image embeddings come from `provider`, so this needs the toy embedder.
pub fn evaluate<T: Real>(
    bundle: &ModelBundle<T>,
    images: &[(String, ImageBuffer<T>)],
    texts: &[String],
    provider: &EmbeddingProvider<T>,
    s: T,
) -> Result<EvalReport> {
    let cfg = ModulationConfig { s };
    let source_text = provider.embed_text(ANCHOR_TEXT)?;
    let mut rows = Vec::with_capacity(images.len() * texts.len());
    for (name, img) in images {
        let e_in = provider.embed_image(img)?;
        for text in texts {
            let target = provider.embed_text(text)?;
            let out = forward(bundle, img, &target, &cfg)?.image;
            let e_out = provider.embed_image(&out)?;
            let ssim = match grayscale_ssim(img, &out) {
                Ok(v) => Some(v.as_f64()),
                Err(Error::InvalidDimensions(_)) => None,
                Err(e) => return Err(e),
            };
            let directional = match directional_similarity(&e_in, &e_out, &source_text, &target) {
                Ok(v) => Some(v.as_f64()),
                Err(Error::DegenerateDirection(_)) => None,
                Err(e) => return Err(e),
            };
            rows.push(EvalRow {
                image: name.clone(),
                text: text.clone(),
                grayscale_ssim: ssim,
                image_similarity: image_similarity(&e_in, &e_out)?.as_f64(),
                directional_similarity: directional,
            });
        }
    }
    let n = rows.len().max(1) as f64;
    Ok(EvalReport {
        s: s.as_f64(),
        mean_grayscale_ssim: mean_of(rows.iter().map(|r| r.grayscale_ssim)),
        mean_image_similarity: rows.iter().map(|r| r.image_similarity).sum::<f64>() / n,
        mean_directional_similarity: mean_of(rows.iter().map(|r| r.directional_similarity)),
        rows,
    })
}

/// One strength value of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepEntry<T> {
    pub s: T,
    pub image: ImageBuffer<T>,
    pub weights: Vec<T>,
    /// Relative similarity of the output to the text, when the provider can embed images.
    pub relative_similarity: Option<T>,
    pub grayscale_ssim: Option<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport<T> {
    pub entries: Vec<SweepEntry<T>>,
    /// Largest per-component change between outputs at consecutive `s`.
    pub max_consecutive_delta: T,
}

impl<T: Real> SweepReport<T> {
    pub fn to_table(&self) -> String {
        let opt = |v: Option<T>| v.map_or_else(|| "-".to_string(), |v| format!("{:.6}", v.as_f64()));
        let mut out = String::from("s\tweights\trelative_similarity\tgrayscale_ssim\n");
        for e in &self.entries {
            let w: Vec<String> = e.weights.iter().map(|v| format!("{:.6}", v.as_f64())).collect();
            out.push_str(&format!(
                "{:.4}\t{}\t{}\t{}\n",
                e.s.as_f64(),
                w.join(","),
                opt(e.relative_similarity),
                opt(e.grayscale_ssim)
            ));
        }
        out.push_str(&format!("max_consecutive_delta\t{:.6}\n", self.max_consecutive_delta.as_f64()));
        out
    }
}

/// Runs the adjustment at each strength in order.
pub fn strength_sweep<T: Real>(
    bundle: &ModelBundle<T>,
    image: &ImageBuffer<T>,
    target: &EmbeddingVector<T>,
    s_values: &[T],
    provider: Option<&EmbeddingProvider<T>>,
) -> Result<SweepReport<T>> {
    if let Some(s) = s_values.iter().find(|s| !s.is_finite()) {
        return Err(Error::InvalidValue(format!("strength {s} is not finite")));
    }
    let anchor = provider.map(|p| p.embed_text(ANCHOR_TEXT)).transpose()?;
    let entries = s_values
        .iter()
        .map(|&s| {
            let out = forward(bundle, image, target, &ModulationConfig { s })?;
            let relative = match (provider, &anchor) {
                (Some(p), Some(a)) if p.is_differentiable() => {
                    Some(relative_similarity(&p.embed_image(&out.image)?, target, a)?)
                }
                _ => None,
            };
            let ssim = grayscale_ssim(image, &out.image).ok();
            Ok(SweepEntry {
                s,
                weights: out.weights.0,
                image: out.image,
                relative_similarity: relative,
                grayscale_ssim: ssim,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let max_delta = entries
        .windows(2)
        .map(|w| w[0].image.max_abs_diff(&w[1].image))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(T::zero(), |m, d| if d > m { d } else { m });
    Ok(SweepReport {
        entries,
        max_consecutive_delta: max_delta,
    })
}
