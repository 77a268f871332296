//! Binary checkpoints holding a full model bundle plus optional optimizer and
//! RNG state.
//!
//! Layout (little-endian): the 8-byte magic `TLUTCKPT`, a `u32` version, the
//! scalar width in bytes, a length-prefixed JSON config echo, the step count,
//! then the backbone heads, basis bank, adapter (with its source prompt and
//! embedding), optional Adam moments and optional RNG position. Parameters
//! are stored as raw bit patterns, so a load/save cycle reproduces the input
//! byte for byte.

use std::path::Path;

use crate::embed::EmbeddingVector;
use crate::error::{Error, Result};
use crate::lut::{BasisLutBank, Lut3D};
use crate::network::{AdapterNetwork, Affine, BackboneParams, ModelBundle};
use crate::scalar::Real;
use crate::train::{AdamState, RngState, TrainState};

pub const MAGIC: &[u8; 8] = b"TLUTCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    /// Free-form echo of the settings that produced the checkpoint.
    pub config: serde_json::Value,
    pub bundle: ModelBundle<T>,
    pub adam: Option<AdamState<T>>,
    pub rng: Option<RngState>,
    pub step: u64,
}

impl<T: Real> Checkpoint<T> {
    /// Inference-only checkpoint.
    pub fn from_bundle(bundle: ModelBundle<T>, config: serde_json::Value) -> Self {
        Self {
            config,
            bundle,
            adam: None,
            rng: None,
            step: 0,
        }
    }

    pub fn from_train_state(state: TrainState<T>, config: serde_json::Value) -> Self {
        Self {
            config,
            bundle: state.bundle,
            adam: Some(state.adam),
            rng: Some(state.rng),
            step: state.step,
        }
    }

    /// Training state to resume from; a fresh optimizer and `fallback_seed`
    /// are used when the checkpoint carries none.
    pub fn into_train_state(self, fallback_seed: u64) -> TrainState<T> {
        let fresh = TrainState::fresh(self.bundle, fallback_seed);
        TrainState {
            adam: self.adam.unwrap_or(fresh.adam),
            rng: self.rng.unwrap_or(fresh.rng),
            step: self.step,
            bundle: fresh.bundle,
        }
    }
}

struct Writer<T> {
    buf: Vec<u8>,
    _scalar: std::marker::PhantomData<T>,
}

impl<T: Real> Writer<T> {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn len(&mut self, v: usize) {
        self.u64(v as u64);
    }

    fn bytes(&mut self, v: &[u8]) {
        self.len(v.len());
        self.buf.extend_from_slice(v);
    }

    fn scalars(&mut self, v: &[T]) {
        self.len(v.len());
        for &x in v {
            x.write_le(&mut self.buf);
        }
    }

    fn affine(&mut self, a: &Affine<T>) {
        self.len(a.rows());
        self.len(a.cols());
        self.scalars(&a.weight);
        self.scalars(&a.bias);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!("checkpoint truncated while reading {what} at byte {}", self.pos)));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        let v = self.u64(what)?;
        usize::try_from(v).map_err(|_| Error::Format(format!("{what} length {v} does not fit in memory")))
    }

    fn bytes(&mut self, what: &str) -> Result<&'a [u8]> {
        let n = self.len(what)?;
        self.take(n, what)
    }

    fn scalars<T: Real>(&mut self, what: &str) -> Result<Vec<T>> {
        let n = self.len(what)?;
        let width = usize::from(T::BYTES);
        let total = n
            .checked_mul(width)
            .ok_or_else(|| Error::Format(format!("{what} length {n} overflows")))?;
        let raw = self.take(total, what)?;
        Ok(raw.chunks_exact(width).map(T::read_le).collect())
    }

    fn affine<T: Real>(&mut self, what: &str) -> Result<Affine<T>> {
        let rows = self.len(what)?;
        let cols = self.len(what)?;
        let weight = self.scalars(what)?;
        let bias = self.scalars(what)?;
        Affine::from_parts(rows, cols, weight, bias)
    }

    fn flag(&mut self, what: &str) -> Result<bool> {
        match self.u8(what)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::Format(format!("invalid {what} flag {other}"))),
        }
    }
}

pub fn checkpoint_to_bytes<T: Real>(ckpt: &Checkpoint<T>) -> Result<Vec<u8>> {
    let mut w = Writer::<T> {
        buf: Vec::new(),
        _scalar: std::marker::PhantomData,
    };
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.u8(T::BYTES);
    let config = serde_json::to_vec(&ckpt.config).map_err(|e| Error::Format(e.to_string()))?;
    w.bytes(&config);
    w.u64(ckpt.step);

    let b = &ckpt.bundle;
    w.affine(&b.backbone.weight_predictor);
    w.affine(&b.backbone.adaint_head);
    w.len(b.bank.len());
    w.len(b.bank.grid_size());
    for lut in b.bank.luts() {
        let flat: Vec<T> = lut.values().iter().flatten().copied().collect();
        w.scalars(&flat);
    }
    w.affine(&b.adapter.layer1);
    w.affine(&b.adapter.layer2);
    w.bytes(b.adapter.source_prompt.as_bytes());
    w.scalars(b.source_embedding.as_slice());

    match &ckpt.adam {
        Some(adam) => {
            w.u8(1);
            w.u64(adam.t);
            for m in adam.m.iter().chain(&adam.v) {
                w.scalars(m);
            }
        }
        None => w.u8(0),
    }
    match &ckpt.rng {
        Some(rng) => {
            w.u8(1);
            w.buf.extend_from_slice(&rng.seed);
            w.u64(rng.stream);
            w.buf.extend_from_slice(&rng.word_pos.to_le_bytes());
        }
        None => w.u8(0),
    }
    Ok(w.buf)
}

pub fn checkpoint_from_bytes<T: Real>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Version("not a checkpoint file (bad magic)".into()));
    }
    r.pos = MAGIC.len();
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Version(format!(
            "checkpoint version {version} is incompatible with supported version {VERSION}"
        )));
    }
    let width = r.u8("scalar width")?;
    if width != T::BYTES {
        return Err(Error::Format(format!(
            "checkpoint stores {width}-byte scalars, expected {}",
            T::BYTES
        )));
    }
    let config = serde_json::from_slice(r.bytes("config")?)
        .map_err(|e| Error::Format(format!("invalid checkpoint config: {e}")))?;
    let step = r.u64("step")?;

    let backbone = BackboneParams::new(r.affine("weight predictor")?, r.affine("adaint head")?)?;
    let count = r.len("bank size")?;
    let n = r.len("grid size")?;
    let mut luts = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let flat: Vec<T> = r.scalars("basis lut")?;
        if !flat.len().is_multiple_of(3) {
            return Err(Error::Format("basis lut length is not a multiple of 3".into()));
        }
        let values = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        luts.push(Lut3D::new(n, values)?);
    }
    let bank = BasisLutBank::new(luts)?;
    let layer1 = r.affine("adapter layer 1")?;
    let layer2 = r.affine("adapter layer 2")?;
    let source_prompt = String::from_utf8(r.bytes("source prompt")?.to_vec())
        .map_err(|_| Error::Format("source prompt is not UTF-8".into()))?;
    let source_embedding = EmbeddingVector::new(r.scalars("source embedding")?)?;
    if layer1.rows() != layer2.cols() {
        return Err(Error::dim("adapter hidden width", layer1.rows(), layer2.cols()));
    }
    let adapter = AdapterNetwork {
        layer1,
        layer2,
        source_prompt,
    };
    let bundle = ModelBundle::new(backbone, bank, adapter, source_embedding)?;

    let adam = if r.flag("optimizer")? {
        let t = r.u64("optimizer step")?;
        let mut read4 = |what: &str| -> Result<[Vec<T>; 4]> {
            Ok([r.scalars(what)?, r.scalars(what)?, r.scalars(what)?, r.scalars(what)?])
        };
        let m = read4("first moments")?;
        let v = read4("second moments")?;
        let shapes = bundle.adapter.tensors().map(<[T]>::len);
        for (i, expected) in shapes.iter().enumerate() {
            if m[i].len() != *expected || v[i].len() != *expected {
                return Err(Error::dim("optimizer moments", *expected, m[i].len().max(v[i].len())));
            }
        }
        Some(AdamState { m, v, t })
    } else {
        None
    };
    let rng = if r.flag("rng")? {
        let seed: [u8; 32] = r.take(32, "rng seed")?.try_into().expect("32 bytes");
        let stream = r.u64("rng stream")?;
        let word_pos = u128::from_le_bytes(r.take(16, "rng position")?.try_into().expect("16 bytes"));
        Some(RngState { seed, stream, word_pos })
    } else {
        None
    };
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after checkpoint payload",
            bytes.len() - r.pos
        )));
    }
    Ok(Checkpoint {
        config,
        bundle,
        adam,
        rng,
        step,
    })
}

pub fn save_checkpoint<T: Real>(ckpt: &Checkpoint<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint_to_bytes(ckpt)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes)
}
