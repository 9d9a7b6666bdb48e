//! Exhaustive per-member threshold search, validation, and cross-validation.
//!
//! A search scores every tuple in `grid^members` on a training split and
//! keeps the best one. Ties go to the lexicographically smallest threshold
//! tuple. Cells are evaluated in parallel from a read-only cache of packed
//! binarized masks, one per (member, threshold, image), and each cell's mean
//! is accumulated in image order, so results do not depend on the number of
//! worker threads.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Sample};
use crate::ensemble::{combine, EnsembleConfig, EnsembleOp};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::mask::{BinaryMask, LogitMap, Threshold};
use crate::metrics::{self, ConfusionCounts, Objective, ScorePair};
use crate::rng::Rng;

/// Largest search surface accepted.
pub const MAX_SURFACE_CELLS: u128 = 1 << 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Threshold>", into = "Vec<Threshold>")]
pub struct ThresholdGrid {
    values: Vec<Threshold>,
}

impl ThresholdGrid {
    pub fn new(values: Vec<Threshold>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidGrid("no thresholds".into()));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidGrid("thresholds must be strictly increasing".into()));
        }
        Ok(ThresholdGrid { values })
    }

    /// `{0, step, 2 step, ..., 1}`; `1 / step` must be a whole number.
    pub fn with_step(step: f64) -> Result<Self> {
        if !(step.is_finite() && step > 0.0 && step <= 1.0) {
            return Err(Error::InvalidGrid(format!("step {step} is not in (0, 1]")));
        }
        let n = (1.0 / step).round();
        if (n * step - 1.0).abs() > 1e-9 || n > 100_000.0 {
            return Err(Error::InvalidGrid(format!("step {step} does not divide [0, 1] evenly")));
        }
        let n = n as u32;
        let values = (0..=n)
            .map(|i| Threshold::new(i as f32 / n as f32))
            .collect::<Result<_>>()?;
        ThresholdGrid::new(values)
    }

    pub fn values(&self) -> &[Threshold] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl Default for ThresholdGrid {
    /// `{0.0, 0.1, ..., 1.0}`.
    fn default() -> Self {
        ThresholdGrid::with_step(0.1).expect("0.1 divides the unit interval")
    }
}

impl TryFrom<Vec<Threshold>> for ThresholdGrid {
    type Error = Error;

    fn try_from(values: Vec<Threshold>) -> Result<Self> {
        ThresholdGrid::new(values)
    }
}

impl From<ThresholdGrid> for Vec<Threshold> {
    fn from(g: ThresholdGrid) -> Self {
        g.values
    }
}

/// Image id to fold index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    n_folds: usize,
    assignment: BTreeMap<String, usize>,
}

impl FoldSpec {
    pub fn new(n_folds: usize, assignment: BTreeMap<String, usize>) -> Result<Self> {
        if n_folds == 0 {
            return Err(Error::InvalidFolds("at least one fold is required".into()));
        }
        if let Some((id, &f)) = assignment.iter().find(|(_, &f)| f >= n_folds) {
            return Err(Error::InvalidFolds(format!(
                "image `{id}` is assigned fold {f}, but there are only {n_folds} folds"
            )));
        }
        Ok(FoldSpec {
            n_folds,
            assignment,
        })
    }

    /// Seeded shuffle of `ids`, then round-robin assignment so fold sizes
    /// differ by at most one.
    pub fn shuffled<S: AsRef<str>>(ids: &[S], n_folds: usize, seed: u64) -> Result<Self> {
        if n_folds == 0 {
            return Err(Error::InvalidFolds("at least one fold is required".into()));
        }
        let mut order: Vec<&str> = ids.iter().map(|s| s.as_ref()).collect();
        order.sort_unstable();
        Rng::new(seed, 0).shuffle(&mut order);
        let assignment = order
            .into_iter()
            .enumerate()
            .map(|(i, id)| (id.to_string(), i % n_folds))
            .collect();
        FoldSpec::new(n_folds, assignment)
    }

    pub fn n_folds(&self) -> usize {
        self.n_folds
    }

    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.assignment.get(id).copied()
    }

    pub fn assignment(&self) -> &BTreeMap<String, usize> {
        &self.assignment
    }

    /// `(train, validation)` for held-out fold `k`, in dataset order.
    pub fn partition<'a>(&self, dataset: &'a Dataset, k: usize) -> Result<(Vec<&'a Sample>, Vec<&'a Sample>)> {
        let mut train = Vec::new();
        let mut val = Vec::new();
        for s in &dataset.samples {
            match self.fold_of(&s.id) {
                Some(f) if f == k => val.push(s),
                Some(_) => train.push(s),
                None => {
                    return Err(Error::InvalidFolds(format!("image `{}` has no fold", s.id)));
                }
            }
        }
        Ok((train, val))
    }
}

/// What a search explores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchParams {
    pub members: Vec<String>,
    pub op: EnsembleOp,
    pub grid: ThresholdGrid,
    pub objective: Objective,
}

impl SearchParams {
    pub fn new(members: Vec<String>, op: EnsembleOp) -> Self {
        SearchParams {
            members,
            op,
            grid: ThresholdGrid::default(),
            objective: Objective::default(),
        }
    }

    pub fn with_grid(mut self, grid: ThresholdGrid) -> Self {
        self.grid = grid;
        self
    }

    pub fn with_objective(mut self, objective: Objective) -> Self {
        self.objective = objective;
        self
    }

    fn validate(&self) -> Result<u128> {
        // Reuses the config rules for members.
        EnsembleConfig::new(
            self.members.clone(),
            vec![self.grid.values[0]; self.members.len()],
            self.op,
        )?;
        let cells = (self.grid.len() as u128)
            .checked_pow(self.members.len() as u32)
            .unwrap_or(u128::MAX);
        if cells > MAX_SURFACE_CELLS {
            return Err(Error::SearchTooLarge(cells));
        }
        Ok(cells)
    }
}

/// Train scores for every threshold tuple, row-major with member 0 as the
/// slowest-varying axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSurface {
    pub members: Vec<String>,
    pub grid: ThresholdGrid,
    pub cells: Vec<ScorePair>,
}

impl ScoreSurface {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Per-member grid indices of cell `index`.
    pub fn tuple(&self, mut index: usize) -> Vec<usize> {
        let g = self.grid.len();
        let mut t = vec![0; self.members.len()];
        for slot in t.iter_mut().rev() {
            *slot = index % g;
            index /= g;
        }
        t
    }

    pub fn index(&self, tuple: &[usize]) -> usize {
        tuple.iter().fold(0, |acc, &i| acc * self.grid.len() + i)
    }

    pub fn thresholds(&self, index: usize) -> Vec<Threshold> {
        self.tuple(index)
            .into_iter()
            .map(|i| self.grid.values[i])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best_config: EnsembleConfig,
    pub best_index: usize,
    pub train_score: ScorePair,
    pub objective: Objective,
    pub n_images: usize,
    pub surface: ScoreSurface,
}

struct PackedMask {
    words: Vec<u64>,
    count: u64,
    overlap: u64,
}

fn pack(mask: &BinaryMask) -> Vec<u64> {
    let mut words = vec![0u64; mask.values().len().div_ceil(64)];
    for (i, _) in mask.values().iter().enumerate().filter(|(_, &v)| v) {
        words[i / 64] |= 1 << (i % 64);
    }
    words
}

fn pack_binarized(map: &LogitMap, t: Threshold, gt: &[u64]) -> PackedMask {
    let mut words = vec![0u64; gt.len()];
    let t = t.value();
    for (i, _) in map.values().iter().enumerate().filter(|(_, &v)| v > t) {
        words[i / 64] |= 1 << (i % 64);
    }
    let count = words.iter().map(|w| w.count_ones() as u64).sum();
    let overlap = words
        .iter()
        .zip(gt)
        .map(|(a, b)| (a & b).count_ones() as u64)
        .sum();
    PackedMask {
        words,
        count,
        overlap,
    }
}

struct PackedImage {
    gt: Vec<u64>,
    gt_count: u64,
    pixels: u64,
    /// `[member][threshold]`
    masks: Vec<Vec<PackedMask>>,
}

impl PackedImage {
    fn build(sample: &Sample, members: &[String], grid: &ThresholdGrid) -> Result<Self> {
        let maps = sample.member_maps(members)?;
        let gt = pack(&sample.gt);
        let masks = maps
            .iter()
            .map(|m| grid.values.iter().map(|&t| pack_binarized(m, t, &gt)).collect())
            .collect();
        Ok(PackedImage {
            gt_count: sample.gt.positive_count() as u64,
            pixels: sample.gt.values().len() as u64,
            gt,
            masks,
        })
    }

    fn counts(&self, op: EnsembleOp, tuple: &[usize]) -> ConfusionCounts {
        let member = |m: usize| &self.masks[m][tuple[m]];
        let (pred, tp) = match op {
            EnsembleOp::And | EnsembleOp::Or => {
                let mut pred = 0u64;
                let mut tp = 0u64;
                for (w, &g) in self.gt.iter().enumerate() {
                    let mut acc = member(0).words[w];
                    for m in 1..tuple.len() {
                        let x = member(m).words[w];
                        acc = if op == EnsembleOp::And { acc & x } else { acc | x };
                    }
                    pred += acc.count_ones() as u64;
                    tp += (acc & g).count_ones() as u64;
                }
                (pred, tp)
            }
            EnsembleOp::Min | EnsembleOp::Max => {
                let mut best = 0;
                for m in 1..tuple.len() {
                    let better = if op == EnsembleOp::Min {
                        member(m).count < member(best).count
                    } else {
                        member(m).count > member(best).count
                    };
                    if better {
                        best = m;
                    }
                }
                (member(best).count, member(best).overlap)
            }
        };
        let fp = pred - tp;
        let fn_ = self.gt_count - tp;
        ConfusionCounts::from_outcomes(tp, fp, fn_, self.pixels - tp - fp - fn_)
    }
}

/// Score every threshold tuple on `train` and return the best configuration.
pub fn search(train: &[&Sample], params: &SearchParams) -> Result<SearchResult> {
    let n_cells = params.validate()? as usize;
    if train.is_empty() {
        return Err(Error::EmptySet);
    }
    let images = train
        .par_iter()
        .map(|s| PackedImage::build(s, &params.members, &params.grid))
        .collect::<Result<Vec<_>>>()?;

    let mut surface = ScoreSurface {
        members: params.members.clone(),
        grid: params.grid.clone(),
        cells: Vec::new(),
    };
    surface.cells = (0..n_cells)
        .into_par_iter()
        .map(|cell| {
            let tuple = surface.tuple(cell);
            ScorePair::mean(images.iter().map(|img| img.counts(params.op, &tuple).scores()))
                .expect("train set is non-empty")
        })
        .collect();

    let mut best_index = 0;
    for (i, c) in surface.cells.iter().enumerate() {
        if c.get(params.objective) > surface.cells[best_index].get(params.objective) {
            best_index = i;
        }
    }
    let best_config = EnsembleConfig::new(
        params.members.clone(),
        surface.thresholds(best_index),
        params.op,
    )?;
    Ok(SearchResult {
        best_config,
        best_index,
        train_score: surface.cells[best_index],
        objective: params.objective,
        n_images: train.len(),
        surface,
    })
}

/// Mean per-image scores of the configured ensemble.
pub fn evaluate(images: &[&Sample], config: &EnsembleConfig) -> Result<ScorePair> {
    let per_image = images
        .par_iter()
        .map(|s| {
            let maps = s.member_maps(config.members())?;
            let pred = combine(&maps, config)?;
            metrics::score(&s.gt, &pred)
        })
        .collect::<Result<Vec<_>>>()?;
    ScorePair::mean(per_image).ok_or(Error::EmptySet)
}

/// Scores of predicting an all-background mask for every image.
pub fn empty_baseline(images: &[&Sample]) -> Result<ScorePair> {
    let per_image = images
        .iter()
        .map(|s| {
            let empty = BinaryMask::empty(s.gt.height(), s.gt.width())?;
            metrics::score(&s.gt, &empty)
        })
        .collect::<Result<Vec<_>>>()?;
    ScorePair::mean(per_image).ok_or(Error::EmptySet)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub fold: usize,
    pub config: EnsembleConfig,
    pub train_score: ScorePair,
    pub validation: ScorePair,
    pub n_train: usize,
    pub n_validation: usize,
    #[serde(skip)]
    pub train_ids: Vec<String>,
    #[serde(skip)]
    pub validation_ids: Vec<String>,
}

/// Largest absolute deviation of any fold from the mean, per metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Variation {
    pub rule: VariationRule,
    pub dsc: f64,
    pub miou: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariationRule {
    MaxAbsDeviationFromMean,
}

impl Variation {
    pub fn of(scores: &[ScorePair], mean: ScorePair) -> Variation {
        let spread = |f: fn(&ScorePair) -> f64, m: f64| {
            scores.iter().map(|s| (f(s) - m).abs()).fold(0.0, f64::max)
        };
        Variation {
            rule: VariationRule::MaxAbsDeviationFromMean,
            dsc: spread(|s| s.dsc, mean.dsc),
            miou: spread(|s| s.miou, mean.miou),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub params: SearchParams,
    pub n_folds: usize,
    pub per_fold: Vec<FoldOutcome>,
    pub mean: ScorePair,
    pub variation: Variation,
}

impl EvalReport {
    pub fn config_per_fold(&self) -> Vec<&EnsembleConfig> {
        self.per_fold.iter().map(|f| &f.config).collect()
    }

    /// One line per fold plus the aggregate, scores in percent to one decimal.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for f in &self.per_fold {
            let t: Vec<String> = f.config.thresholds().iter().map(|t| t.to_string()).collect();
            let _ = writeln!(
                out,
                "fold {}: DSC {:.1}  mIoU {:.1}  thresholds [{}]",
                f.fold,
                f.validation.dsc * 100.0,
                f.validation.miou * 100.0,
                t.join(", ")
            );
        }
        let _ = writeln!(
            out,
            "mean: DSC {} mIoU {} (± = max deviation from mean)",
            format_pm(self.mean.dsc, self.variation.dsc),
            format_pm(self.mean.miou, self.variation.miou)
        );
        out
    }
}

/// `70.3 ±1.5` style percentage formatting.
pub fn format_pm(mean: f64, spread: f64) -> String {
    format!("{:.1} ±{:.1}", mean * 100.0, spread * 100.0)
}

/// Calibrate on all folds but `k`, evaluate on `k`, for every fold.
pub fn cross_validate(dataset: &Dataset, folds: &FoldSpec, params: &SearchParams) -> Result<EvalReport> {
    let mut per_fold = Vec::with_capacity(folds.n_folds());
    for k in 0..folds.n_folds() {
        let (train, val) = folds.partition(dataset, k)?;
        if val.is_empty() {
            return Err(Error::EmptyFold(k));
        }
        if train.is_empty() {
            return Err(Error::InvalidFolds(format!(
                "holding out fold {k} leaves no training images"
            )));
        }
        let result = search(&train, params)?;
        let validation = evaluate(&val, &result.best_config)?;
        per_fold.push(FoldOutcome {
            fold: k,
            config: result.best_config,
            train_score: result.train_score,
            validation,
            n_train: train.len(),
            n_validation: val.len(),
            train_ids: train.iter().map(|s| s.id.clone()).collect(),
            validation_ids: val.iter().map(|s| s.id.clone()).collect(),
        });
    }
    let vals: Vec<ScorePair> = per_fold.iter().map(|f| f.validation).collect();
    let mean = ScorePair::mean(vals.iter().copied()).ok_or(Error::EmptySet)?;
    Ok(EvalReport {
        params: params.clone(),
        n_folds: folds.n_folds(),
        variation: Variation::of(&vals, mean),
        per_fold,
        mean,
    })
}

/// Check that no fold's training split touches its validation images.
pub fn audit_partitions(report: &EvalReport) -> bool {
    report.per_fold.iter().all(|f| {
        let val: BTreeSet<&String> = f.validation_ids.iter().collect();
        f.train_ids.iter().all(|id| !val.contains(id))
    })
}

/// Heatmap CSV text for a search surface.
///
/// Two members: member 0 down the rows, member 1 across the columns, first
/// row and column are threshold labels. One member: a single labelled row.
/// More members: one `t_0,...,t_n,score` line per cell.
pub fn heatmap_csv(result: &SearchResult) -> String {
    let s = &result.surface;
    let obj = result.objective;
    let labels: Vec<String> = s.grid.values().iter().map(|t| t.to_string()).collect();
    let mut out = String::new();
    match s.members.len() {
        1 => {
            let _ = writeln!(out, "{},{}", s.members[0], labels.join(","));
            let row: Vec<String> = s.cells.iter().map(|c| format!("{:.4}", c.get(obj))).collect();
            let _ = writeln!(out, "{},{}", obj_label(obj), row.join(","));
        }
        2 => {
            let _ = writeln!(out, "{}\\{},{}", s.members[0], s.members[1], labels.join(","));
            for (r, label) in labels.iter().enumerate() {
                let row: Vec<String> = (0..s.grid.len())
                    .map(|c| format!("{:.4}", s.cells[s.index(&[r, c])].get(obj)))
                    .collect();
                let _ = writeln!(out, "{label},{}", row.join(","));
            }
        }
        _ => {
            let _ = writeln!(out, "{},{}", s.members.join(","), obj_label(obj));
            for (i, c) in s.cells.iter().enumerate() {
                let t: Vec<String> = s.thresholds(i).iter().map(|t| t.to_string()).collect();
                let _ = writeln!(out, "{},{:.4}", t.join(","), c.get(obj));
            }
        }
    }
    out
}

fn obj_label(obj: Objective) -> &'static str {
    match obj {
        Objective::Dsc => "dsc",
        Objective::Miou => "miou",
    }
}

pub fn export_heatmap(result: &SearchResult, path: &Path) -> Result<()> {
    write_atomic(path, heatmap_csv(result).as_bytes())
}

/// Run `f` on a dedicated pool of `jobs` threads (`None`: rayon default).
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .expect("thread pool")
            .install(f),
        None => f(),
    }
}
