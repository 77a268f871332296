//! Shared image/text embedding space.
//!
//! Two providers exist: a deterministic toy embedder whose image embedding is
//! the normalized color-statistics feature vector (and is differentiable), and
//! a file-backed store of externally computed embeddings, usable for
//! inference and evaluation only.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::network::features::{extract_features, extract_features_grad, FEATURE_DIM};
use crate::scalar::{dot, norm, Real};

/// Neutral anchor / source description.
pub const ANCHOR_TEXT: &str = "normal photo";
pub const PHOTO_SUFFIX: &str = " photo";
const UNIT_TOLERANCE: f64 = 1e-6;

/// Unit-norm embedding vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector<T>(Vec<T>);

impl<T: Real> EmbeddingVector<T> {
    /// Accepts `v` only if it is finite and already unit-norm within 1e-6.
    pub fn new(v: Vec<T>) -> Result<Self> {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidValue("embedding contains non-finite values".into()));
        }
        let n = norm(&v).as_f64();
        if (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::InvalidValue(format!("embedding norm {n} is not 1")));
        }
        Ok(Self(v))
    }

    pub fn normalized(v: Vec<T>) -> Result<Self> {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidValue("embedding contains non-finite values".into()));
        }
        let n = norm(&v);
        if !(n > T::zero()) {
            return Err(Error::Normalization);
        }
        Ok(Self(v.into_iter().map(|x| x / n).collect()))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn cosine(&self, other: &Self) -> Result<T> {
        if self.dim() != other.dim() {
            return Err(Error::dim("embedding", self.dim(), other.dim()));
        }
        Ok(dot(&self.0, &other.0))
    }
}

/// Appends the `" photo"` suffix unless already present.
pub fn with_photo_suffix(text: &str) -> String {
    let t = text.trim();
    if t.ends_with(PHOTO_SUFFIX) || t == "photo" {
        t.to_string()
    } else {
        format!("{t}{PHOTO_SUFFIX}")
    }
}

fn strip_photo_suffix(text: &str) -> &str {
    let t = text.trim();
    t.strip_suffix(PHOTO_SUFFIX).map(str::trim_end).unwrap_or(t)
}

/// Built-in vocabulary: token and canonical swatch color.
pub const TOY_LEXICON: [(&str, [f64; 3]); 64] = [
    ("normal", [0.5, 0.5, 0.5]),
    ("red", [0.85, 0.12, 0.12]),
    ("green", [0.15, 0.75, 0.2]),
    ("blue", [0.12, 0.2, 0.85]),
    ("yellow", [0.9, 0.85, 0.15]),
    ("cyan", [0.15, 0.8, 0.85]),
    ("magenta", [0.8, 0.15, 0.8]),
    ("orange", [0.95, 0.55, 0.12]),
    ("purple", [0.5, 0.2, 0.7]),
    ("pink", [0.95, 0.6, 0.75]),
    ("brown", [0.5, 0.32, 0.18]),
    ("teal", [0.1, 0.5, 0.5]),
    ("navy", [0.1, 0.12, 0.4]),
    ("olive", [0.5, 0.5, 0.15]),
    ("maroon", [0.5, 0.1, 0.15]),
    ("lime", [0.6, 0.9, 0.2]),
    ("turquoise", [0.25, 0.85, 0.78]),
    ("violet", [0.55, 0.35, 0.85]),
    ("indigo", [0.3, 0.2, 0.55]),
    ("gold", [0.85, 0.68, 0.2]),
    ("silver", [0.75, 0.75, 0.78]),
    ("crimson", [0.8, 0.08, 0.24]),
    ("coral", [0.95, 0.5, 0.4]),
    ("salmon", [0.95, 0.55, 0.5]),
    ("lavender", [0.72, 0.65, 0.9]),
    ("beige", [0.88, 0.83, 0.7]),
    ("ivory", [0.95, 0.94, 0.85]),
    ("khaki", [0.76, 0.72, 0.5]),
    ("mint", [0.6, 0.92, 0.72]),
    ("peach", [0.98, 0.75, 0.6]),
    ("amber", [0.95, 0.7, 0.1]),
    ("emerald", [0.1, 0.7, 0.4]),
    ("sapphire", [0.1, 0.25, 0.65]),
    ("ruby", [0.75, 0.08, 0.3]),
    ("rose", [0.92, 0.45, 0.55]),
    ("charcoal", [0.22, 0.23, 0.25]),
    ("white", [0.95, 0.95, 0.95]),
    ("black", [0.05, 0.05, 0.05]),
    ("bright", [0.85, 0.85, 0.85]),
    ("dark", [0.15, 0.15, 0.15]),
    ("warm", [0.85, 0.6, 0.38]),
    ("cold", [0.38, 0.55, 0.85]),
    ("saturated", [0.95, 0.15, 0.45]),
    ("faded", [0.62, 0.6, 0.58]),
    ("desaturated", [0.45, 0.45, 0.47]),
    ("vivid", [0.9, 0.2, 0.7]),
    ("aged", [0.72, 0.6, 0.42]),
    ("vintage", [0.7, 0.58, 0.45]),
    ("sepia", [0.62, 0.46, 0.3]),
    ("cinematic", [0.2, 0.33, 0.38]),
    ("moonlight", [0.22, 0.28, 0.45]),
    ("sunset", [0.95, 0.45, 0.25]),
    ("autumn", [0.75, 0.42, 0.15]),
    ("spring", [0.55, 0.85, 0.45]),
    ("winter", [0.75, 0.82, 0.92]),
    ("summer", [0.95, 0.8, 0.35]),
    ("night", [0.08, 0.1, 0.2]),
    ("dawn", [0.85, 0.65, 0.6]),
    ("dusk", [0.4, 0.3, 0.45]),
    ("pastel", [0.85, 0.78, 0.85]),
    ("gloomy", [0.3, 0.32, 0.35]),
    ("sunny", [0.95, 0.88, 0.55]),
    ("foggy", [0.75, 0.76, 0.78]),
    ("cyberpunk", [0.7, 0.15, 0.85]),
];

const SWATCH_SIZE: usize = 8;
const SWATCH_CHECKER: f64 = 0.1;

/// 8x8 swatch of `rgb` with a +/-0.1 two-tone checker so spread features are nonzero.
pub fn swatch<T: Real>(rgb: [f64; 3]) -> ImageBuffer<T> {
    ImageBuffer::from_fn_clamped(SWATCH_SIZE, SWATCH_SIZE, |x, y| {
        let sign = if (x + y) % 2 == 0 { 1.0 } else { -1.0 };
        rgb.map(|v| T::lit(v + sign * SWATCH_CHECKER))
    })
    .expect("swatch dimensions are positive")
}

/// Differentiable color-statistics embedder with a fixed text lexicon.
#[derive(Debug, Clone)]
pub struct ToyEmbedder {
    lexicon: IndexMap<String, [f64; 3]>,
}

impl Default for ToyEmbedder {
    fn default() -> Self {
        Self::new(TOY_LEXICON.iter().map(|(k, v)| (k.to_string(), *v))).expect("built-in lexicon is valid")
    }
}

impl ToyEmbedder {
    pub fn new(entries: impl IntoIterator<Item = (String, [f64; 3])>) -> Result<Self> {
        let lexicon: IndexMap<String, [f64; 3]> = entries.into_iter().collect();
        if !lexicon.contains_key(strip_photo_suffix(ANCHOR_TEXT)) {
            return Err(Error::Config("toy lexicon must contain the \"normal\" token".into()));
        }
        Ok(Self { lexicon })
    }

    pub fn dim(&self) -> usize {
        FEATURE_DIM
    }

    /// Prompts the lexicon can embed, with the photo suffix applied.
    pub fn texts(&self) -> Vec<String> {
        self.lexicon.keys().map(|k| with_photo_suffix(k)).collect()
    }

    pub fn swatch_color(&self, text: &str) -> Option<[f64; 3]> {
        self.lexicon.get(strip_photo_suffix(text)).copied()
    }

    pub fn embed_image<T: Real>(&self, image: &ImageBuffer<T>) -> Result<EmbeddingVector<T>> {
        embed_image_toy(image)
    }

    pub fn embed_text<T: Real>(&self, text: &str) -> Result<EmbeddingVector<T>> {
        let color = self.swatch_color(text).ok_or_else(|| Error::UnknownText {
            text: text.to_string(),
            available: self.texts(),
        })?;
        embed_image_toy(&swatch::<T>(color))
    }
}

/// Normalized feature vector of `image`.
pub fn embed_image_toy<T: Real>(image: &ImageBuffer<T>) -> Result<EmbeddingVector<T>> {
    EmbeddingVector::normalized(extract_features(image).0)
}

/// Pixel gradient of `upstream . embed_image_toy(image)`.
pub fn embed_image_toy_grad<T: Real>(image: &ImageBuffer<T>, upstream: &[T]) -> Result<Vec<[T; 3]>> {
    let f = extract_features(image).0;
    let n = norm(&f);
    if !(n > T::zero()) {
        return Err(Error::Normalization);
    }
    if upstream.len() != f.len() {
        return Err(Error::dim("embedding upstream gradient", f.len(), upstream.len()));
    }
    // d(f/|f|) = (I - e e^T) df / |f|
    let e: Vec<T> = f.iter().map(|&v| v / n).collect();
    let proj = dot(&e, upstream);
    let d_features: Vec<T> = upstream.iter().zip(&e).map(|(&g, &ev)| (g - ev * proj) / n).collect();
    extract_features_grad(image, &d_features)
}

/// Store of externally computed embeddings keyed by text or image key.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore<T> {
    pub model: Option<String>,
    dim: Option<usize>,
    entries: IndexMap<String, Vec<T>>,
}

impl<T: Real> Default for EmbeddingStore<T> {
    fn default() -> Self {
        Self {
            model: None,
            dim: None,
            entries: IndexMap::new(),
        }
    }
}

impl<T: Real> EmbeddingStore<T> {
    pub fn new(model: Option<String>, dim: Option<usize>) -> Self {
        Self {
            model,
            dim,
            entries: IndexMap::new(),
        }
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Raw stored vectors, in insertion order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &[T])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn insert(&mut self, key: String, values: Vec<T>) -> Result<()> {
        match self.dim {
            Some(d) if d != values.len() => return Err(Error::dim("embedding store entry", d, values.len())),
            None => self.dim = Some(values.len()),
            _ => {}
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format(format!("embedding {key:?} has non-finite values")));
        }
        if self.entries.contains_key(&key) {
            return Err(Error::Format(format!("duplicate embedding key {key:?}")));
        }
        self.entries.insert(key, values);
        Ok(())
    }

    /// Stored vector for `key`, renormalized.
    pub fn lookup(&self, key: &str) -> Result<EmbeddingVector<T>> {
        let v = self.entries.get(key).ok_or_else(|| Error::NotFound(key.to_string()))?;
        EmbeddingVector::normalized(v.clone())
    }
}

/// Either embedding backend.
#[derive(Debug, Clone)]
pub enum EmbeddingProvider<T> {
    Toy(ToyEmbedder),
    Store(EmbeddingStore<T>),
}

impl<T: Real> EmbeddingProvider<T> {
    pub fn toy() -> Self {
        Self::Toy(ToyEmbedder::default())
    }

    pub fn mode(&self) -> &'static str {
        match self {
            Self::Toy(_) => "toy",
            Self::Store(_) => "file-store",
        }
    }

    pub fn is_differentiable(&self) -> bool {
        matches!(self, Self::Toy(_))
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Toy(t) => t.dim(),
            Self::Store(s) => s.dim().unwrap_or(0),
        }
    }

    pub fn texts(&self) -> Vec<String> {
        match self {
            Self::Toy(t) => t.texts(),
            Self::Store(s) => s.keys().map(str::to_string).collect(),
        }
    }

    /// Text embedding. The store is searched for the text as given, then with
    /// the photo suffix.
    pub fn embed_text(&self, text: &str) -> Result<EmbeddingVector<T>> {
        match self {
            Self::Toy(t) => t.embed_text(text),
            Self::Store(s) => s
                .lookup(text.trim())
                .or_else(|_| s.lookup(&with_photo_suffix(text)))
                .map_err(|_| Error::UnknownText {
                    text: text.to_string(),
                    available: self.texts(),
                }),
        }
    }

    pub fn embed_image(&self, image: &ImageBuffer<T>) -> Result<EmbeddingVector<T>> {
        match self {
            Self::Toy(t) => t.embed_image(image),
            Self::Store(_) => Err(Error::Config(
                "the embedding store cannot embed new images; use stored image keys or the toy embedder".into(),
            )),
        }
    }

    /// Stored embedding by key (file-store mode only).
    pub fn embed_key(&self, key: &str) -> Result<EmbeddingVector<T>> {
        match self {
            Self::Store(s) => s.lookup(key),
            Self::Toy(_) => Err(Error::Config("key lookup requires an embedding store".into())),
        }
    }
}

/// Two-way softmax of cosine similarities: `exp(a) / (exp(a) + exp(b))` with
/// `a = cos(image, target)` and `b = cos(image, anchor)`.
pub fn relative_similarity<T: Real>(
    e_image: &EmbeddingVector<T>,
    e_target: &EmbeddingVector<T>,
    e_anchor: &EmbeddingVector<T>,
) -> Result<T> {
    relative_similarity_scaled(e_image, e_target, e_anchor, T::one())
}

/// [`relative_similarity`] with the cosines multiplied by `scale` (a logit scale
/// of 100 mirrors CLIP's usual temperature).
pub fn relative_similarity_scaled<T: Real>(
    e_image: &EmbeddingVector<T>,
    e_target: &EmbeddingVector<T>,
    e_anchor: &EmbeddingVector<T>,
    scale: T,
) -> Result<T> {
    let a = e_image.cosine(e_target)? * scale;
    let b = e_image.cosine(e_anchor)? * scale;
    Ok(T::one() / (T::one() + (b - a).exp()))
}
