//! Dice and mean-IoU for binary segmentation with background (class 0) and
//! foreground (class 1).
//!
//! Empty masks are scored as successes: Dice of two empty masks is 1, and a
//! class absent from both prediction and ground truth contributes IoU 1.
//! Dataset scores are means of per-image scores.

use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

/// `counts[i][j]` = pixels classified as class `i` while labelled class `j`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub counts: [[u64; 2]; 2],
}

impl ConfusionCounts {
    pub const N_CLASSES: usize = 2;

    /// From true positives, false positives, false negatives, true negatives.
    pub fn from_outcomes(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        ConfusionCounts {
            counts: [[tn, fn_], [fp, tp]],
        }
    }

    pub fn get(&self, classified: usize, labelled: usize) -> u64 {
        self.counts[classified][labelled]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn true_positives(&self) -> u64 {
        self.counts[1][1]
    }

    /// Pixels labelled foreground.
    pub fn gt_positives(&self) -> u64 {
        self.counts[0][1] + self.counts[1][1]
    }

    /// Pixels predicted foreground.
    pub fn pred_positives(&self) -> u64 {
        self.counts[1][0] + self.counts[1][1]
    }

    pub fn class_iou(&self, class: usize) -> f64 {
        let diag = self.counts[class][class];
        let row: u64 = self.counts[class].iter().sum();
        let col: u64 = self.counts.iter().map(|r| r[class]).sum();
        let union = row + col - diag;
        if union == 0 {
            1.0
        } else {
            diag as f64 / union as f64
        }
    }

    pub fn dsc(&self) -> f64 {
        let denom = self.gt_positives() + self.pred_positives();
        if denom == 0 {
            1.0
        } else {
            2.0 * self.true_positives() as f64 / denom as f64
        }
    }

    pub fn miou(&self) -> f64 {
        (0..Self::N_CLASSES).map(|c| self.class_iou(c)).sum::<f64>() / Self::N_CLASSES as f64
    }

    pub fn scores(&self) -> ScorePair {
        ScorePair {
            dsc: self.dsc(),
            miou: self.miou(),
        }
    }
}

impl Add for ConfusionCounts {
    type Output = ConfusionCounts;

    fn add(mut self, rhs: ConfusionCounts) -> ConfusionCounts {
        self += rhs;
        self
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, rhs: ConfusionCounts) {
        for (a, b) in self.counts.iter_mut().flatten().zip(rhs.counts.iter().flatten()) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScorePair {
    pub dsc: f64,
    pub miou: f64,
}

impl ScorePair {
    pub fn get(&self, objective: Objective) -> f64 {
        match objective {
            Objective::Dsc => self.dsc,
            Objective::Miou => self.miou,
        }
    }

    /// Arithmetic mean, accumulated in iteration order.
    pub fn mean(scores: impl IntoIterator<Item = ScorePair>) -> Option<ScorePair> {
        let mut n = 0usize;
        let (mut d, mut m) = (0.0, 0.0);
        for s in scores {
            d += s.dsc;
            m += s.miou;
            n += 1;
        }
        (n > 0).then(|| ScorePair {
            dsc: d / n as f64,
            miou: m / n as f64,
        })
    }
}

/// Quantity maximized by threshold search.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    #[default]
    Dsc,
    Miou,
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dsc" => Ok(Objective::Dsc),
            "miou" => Ok(Objective::Miou),
            other => Err(Error::InvalidConfig(format!(
                "unknown objective `{other}` (expected dsc or miou)"
            ))),
        }
    }
}

fn check_same(gt: &BinaryMask, pred: &BinaryMask) -> Result<()> {
    if gt.dims() != pred.dims() {
        return Err(Error::DimensionMismatch(format!(
            "ground truth {}x{}, prediction {}x{}",
            gt.height(),
            gt.width(),
            pred.height(),
            pred.width()
        )));
    }
    Ok(())
}

pub fn accumulate(gt: &BinaryMask, pred: &BinaryMask) -> Result<ConfusionCounts> {
    check_same(gt, pred)?;
    let mut c = ConfusionCounts::default();
    for (&g, &p) in gt.values().iter().zip(pred.values()) {
        c.counts[p as usize][g as usize] += 1;
    }
    Ok(c)
}

pub fn dsc(gt: &BinaryMask, pred: &BinaryMask) -> Result<f64> {
    accumulate(gt, pred).map(|c| c.dsc())
}

pub fn miou(counts: &ConfusionCounts) -> f64 {
    counts.miou()
}

pub fn score(gt: &BinaryMask, pred: &BinaryMask) -> Result<ScorePair> {
    accumulate(gt, pred).map(|c| c.scores())
}
