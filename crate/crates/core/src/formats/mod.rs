//! Serialization: images, `.cube` LUTs, the embedding store, checkpoints and
//! JSON reports.

pub mod checkpoint;
pub mod cube;
pub mod embeddings;
pub mod image_io;

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

pub use checkpoint::{checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint, save_checkpoint, Checkpoint};
pub use cube::{parse_cube, read_cube, to_cube_string, write_cube, CubeFile};
pub use embeddings::{embedding_store_to_string, parse_embedding_store, read_embedding_store, write_embedding_store};
pub use image_io::{decode_image, encode_png, encode_ppm, image_dimensions, read_image, write_image};

/// Pretty-printed JSON report.
pub fn write_json<S: Serialize + ?Sized>(value: &S, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
