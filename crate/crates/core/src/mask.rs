//! Continuous localization maps, binary masks and the thresholding that
//! connects them.
//!
//! Thresholding is strict: a pixel is positive iff its score is greater than
//! the threshold. A threshold of `1.0` therefore always yields an empty
//! mask, and `0.0` keeps exactly the strictly positive pixels. Scores and
//! thresholds are both compared as `f32`, the storage precision of the map
//! file format.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_dims(height: usize, width: usize, len: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::EmptyDimensions { height, width });
    }
    let expected = height
        .checked_mul(width)
        .ok_or_else(|| Error::DimensionMismatch(format!("{height}x{width} overflows")))?;
    if expected != len {
        return Err(Error::LengthMismatch {
            expected,
            actual: len,
        });
    }
    Ok(())
}

/// A binarization cutoff in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f32", into = "f64")]
pub struct Threshold(f32);

impl Threshold {
    pub const ZERO: Threshold = Threshold(0.0);
    pub const ONE: Threshold = Threshold(1.0);

    pub fn new(value: f32) -> Result<Self> {
        if value.is_finite() && (0.0..=1.0).contains(&value) {
            Ok(Threshold(value))
        } else {
            Err(Error::InvalidThreshold(value))
        }
    }

    pub fn value(self) -> f32 {
        self.0
    }
}

impl TryFrom<f32> for Threshold {
    type Error = Error;

    fn try_from(value: f32) -> Result<Self> {
        Threshold::new(value)
    }
}

impl From<Threshold> for f32 {
    fn from(t: Threshold) -> f32 {
        t.0
    }
}

/// The nearest f64 to the shortest decimal form, so JSON shows `0.1` rather
/// than the widened `0.10000000149011612`. Converts back to the same f32.
impl From<Threshold> for f64 {
    fn from(t: Threshold) -> f64 {
        t.0.to_string().parse().expect("f32 display is a valid f64")
    }
}

impl std::fmt::Display for Threshold {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

/// Row-major map of scores in `[0, 1]`, one per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMap {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl LogitMap {
    /// Rejects non-finite or out-of-range values instead of clamping them.
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        check_dims(height, width, values.len())?;
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && (0.0..=1.0).contains(*v)))
        {
            return Err(Error::ValueOutOfRange { index, value });
        }
        Ok(LogitMap {
            height,
            width,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        LogitMap::new(height, width, vec![0.0; height.saturating_mul(width)])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn binarize(&self, threshold: Threshold) -> BinaryMask {
        binarize(self, threshold)
    }
}

/// Row-major boolean mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    values: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, values: Vec<bool>) -> Result<Self> {
        check_dims(height, width, values.len())?;
        Ok(BinaryMask {
            height,
            width,
            values,
        })
    }

    pub fn empty(height: usize, width: usize) -> Result<Self> {
        BinaryMask::new(height, width, vec![false; height.saturating_mul(width)])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(height.saturating_mul(width));
        for r in 0..height {
            for c in 0..width {
                values.push(f(r, c));
            }
        }
        BinaryMask::new(height, width, values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.values[row * self.width + col]
    }

    pub fn positive_count(&self) -> usize {
        positive_count(self)
    }

    pub fn is_empty(&self) -> bool {
        !self.values.iter().any(|&v| v)
    }

    /// True when every positive pixel of `self` is also positive in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims() == other.dims()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(&a, &b)| !a || b)
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a && b)
    }

    fn zip_with(&self, other: &BinaryMask, f: impl Fn(bool, bool) -> bool) -> Result<BinaryMask> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(BinaryMask {
            height: self.height,
            width: self.width,
            values,
        })
    }

    /// The mask as a `{0.0, 1.0}` map, the on-disk representation of masks.
    pub fn to_logit_map(&self) -> LogitMap {
        LogitMap {
            height: self.height,
            width: self.width,
            values: self
                .values
                .iter()
                .map(|&v| if v { 1.0 } else { 0.0 })
                .collect(),
        }
    }
}

/// Pixel is positive iff `value > threshold`.
pub fn binarize(map: &LogitMap, threshold: Threshold) -> BinaryMask {
    let t = threshold.value();
    BinaryMask {
        height: map.height,
        width: map.width,
        values: map.values.iter().map(|&v| v > t).collect(),
    }
}

pub fn positive_count(mask: &BinaryMask) -> usize {
    mask.values.iter().filter(|&&v| v).count()
}
