use std::path::Path;

use crate::error::Result;
use crate::mask::LogitMap;

use super::write_atomic;

/// Binary 8-bit portable graymap; score `s` becomes `round(255 s)`.
pub fn encode_pgm(map: &LogitMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", map.width(), map.height()).into_bytes();
    out.extend(map.values().iter().map(|&v| (v * 255.0).round() as u8));
    out
}

pub fn render_pgm(map: &LogitMap, path: &Path) -> Result<()> {
    write_atomic(path, &encode_pgm(map))
}
