//! File formats and manifest handling.
//!
//! * MSK1: `"MSK1"`, height and width as `u16` LE, then `height * width`
//!   `f32` LE values, row-major. Masks use the same layout restricted to
//!   `{0.0, 1.0}`.
//! * TNS1: `"TNS1"`, a derivative-order byte (0 for activations), `k`, `u`,
//!   `v` as `u16` LE, then `k * u * v` `f32` LE values, plane-major.
//! * Manifest: versioned JSON, see [`manifest`].
//!
//! Every writer goes through [`write_atomic`].

mod format;
pub mod manifest;
mod render;

use std::io::Write;
use std::path::Path;

pub use format::{
    decode_map, decode_mask, decode_tensor, encode_map, encode_mask, encode_tensor, FormatError,
    MAP_HEADER_LEN, MAP_MAGIC, TENSOR_HEADER_LEN, TENSOR_MAGIC,
};
pub use manifest::{read_manifest, Manifest, ManifestEntry, MANIFEST_SCHEMA};
pub use render::{encode_pgm, render_pgm};

use crate::error::{Error, Result};
use crate::gradcam::TensorStack;
use crate::mask::{BinaryMask, LogitMap};

/// Write to a temporary file next to `path`, then rename over it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn format_err(path: &Path) -> impl FnOnce(FormatError) -> Error + '_ {
    move |source| Error::Format {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_map(path: &Path) -> Result<LogitMap> {
    decode_map(&read_bytes(path)?).map_err(format_err(path))
}

pub fn write_map(map: &LogitMap, path: &Path) -> Result<()> {
    write_atomic(path, &encode_map(map).map_err(format_err(path))?)
}

pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    decode_mask(&read_bytes(path)?).map_err(format_err(path))
}

pub fn write_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    write_atomic(path, &encode_mask(mask).map_err(format_err(path))?)
}

pub fn read_tensor(path: &Path) -> Result<TensorStack> {
    decode_tensor(&read_bytes(path)?).map_err(format_err(path))
}

pub fn write_tensor(stack: &TensorStack, path: &Path) -> Result<()> {
    write_atomic(path, &encode_tensor(stack).map_err(format_err(path))?)
}

pub(crate) fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}
