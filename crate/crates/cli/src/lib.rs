//! Command-line drivers and the HTTP inference service.

pub mod commands;
pub mod service;

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use tonelut_core::embed::{EmbeddingProvider, EmbeddingVector};
use tonelut_core::formats::{checkpoint_from_bytes, decode_image, read_embedding_store, to_cube_string};
use tonelut_core::image::ImageBuffer;
use tonelut_core::network::{forward, ForwardOutput, ModelBundle, ModulationConfig};
use tonelut_core::{Error, Result};

/// A checkpoint plus the embedding backend used to resolve texts.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub bundle: ModelBundle<f64>,
    pub provider: EmbeddingProvider<f64>,
    /// Hex SHA-256 of the checkpoint file.
    pub checkpoint_sha256: String,
}

impl LoadedModel {
    pub fn load(checkpoint: &Path, embeddings: Option<&Path>) -> Result<Self> {
        let bytes = std::fs::read(checkpoint).map_err(|e| Error::Io {
            path: checkpoint.to_path_buf(),
            source: e,
        })?;
        let bundle = checkpoint_from_bytes::<f64>(&bytes)?.bundle;
        let provider = match embeddings {
            Some(p) => EmbeddingProvider::Store(read_embedding_store(p)?),
            None => EmbeddingProvider::toy(),
        };
        Ok(Self {
            bundle,
            provider,
            checkpoint_sha256: sha256_hex(&bytes),
        })
    }

    /// Whether provider text embeddings fit the adapter input.
    pub fn can_adjust(&self) -> bool {
        self.provider.dim() == self.bundle.adapter.embed_dim()
    }

    pub fn target(&self, text: &str) -> Result<EmbeddingVector<f64>> {
        let e = self.provider.embed_text(text)?;
        if e.dim() != self.bundle.adapter.embed_dim() {
            return Err(Error::Config(format!(
                "embedding dim {} does not match the checkpoint adapter input dim {}",
                e.dim(),
                self.bundle.adapter.embed_dim()
            )));
        }
        Ok(e)
    }

    pub fn adjust(&self, image: &ImageBuffer<f64>, text: &str, s: f64) -> Result<ForwardOutput<f64>> {
        if !s.is_finite() {
            return Err(Error::InvalidValue(format!("strength {s} is not finite")));
        }
        forward(&self.bundle, image, &self.target(text)?, &ModulationConfig { s })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// The fused LUT of a forward pass as `.cube` text, rebaked when the
/// coordinates are not uniform.
pub fn cube_text(out: &ForwardOutput<f64>, title: &str) -> Result<String> {
    to_cube_string(&out.fused, &out.coords, Some(title))
}

/// Title for an exported LUT; quotes and newlines are not allowed in `.cube` titles.
pub fn cube_title(text: &str, s: f64) -> String {
    let clean: String = text.chars().map(|c| if c == '"' || c.is_control() { ' ' } else { c }).collect();
    format!("{} s={s}", clean.trim())
}

/// Reads every `.png` / `.ppm` file in `dir`, sorted by file name.
pub fn read_image_dir(dir: &Path) -> Result<Vec<(String, ImageBuffer<f64>)>> {
    let io = |e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io)?
        .map(|entry| entry.map(|e| e.path()).map_err(io))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| {
            let ext = p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
            matches!(ext.as_deref(), Some("png" | "ppm"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Config(format!("no .png or .ppm images in {}", dir.display())));
    }
    paths
        .into_iter()
        .map(|p| {
            let bytes = std::fs::read(&p).map_err(|e| Error::Io {
                path: p.clone(),
                source: e,
            })?;
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((name, decode_image(&bytes)?))
        })
        .collect()
}

/// Writes `bytes` next to `path` and renames it into place, so a failed run
/// never leaves a truncated file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.partial", name.to_string_lossy()));
    std::fs::write(&tmp, bytes).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        io(e)
    })
}
