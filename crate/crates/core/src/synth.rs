//! Synthetic corpora with known ground truth and pseudo-model CAMs.
//!
//! Each non-empty image holds one rotated ellipse. A pseudo-model's map is
//! a plateau of 1.0 over a copy of that ellipse, shifted by the model's
//! center bias and grown by its dilation radius, decaying as
//! `exp(-d / EDGE_FALLOFF_PX)` with approximate distance `d` outside it.
//! Seeded uniform noise is added, the result box-blurred with the
//! smoothing radius and min-max normalized. Model `m` of `n` is shifted
//! along direction `phi + 2 pi m / n`, where `phi` is drawn per image, so
//! different models overshoot on different sides. On empty images every
//! model instead activates on its own small decoy ellipse (semi-axes in
//! `[blob.min / 4, blob.min / 2]`) at an independent random position.
//!
//! Randomness is ChaCha8 via [`crate::rng::Rng`]: stream 1 picks which
//! images are empty (stream 0 is left to the fold shuffler), image `i` draws its geometry from stream `(i+1) << 16`
//! and model `m`'s noise from `((i+1) << 16) | (m+1)`.

use std::f64::consts::PI;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::FoldSpec;
use crate::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::io::{write_json, write_map, write_mask, Manifest, ManifestEntry, MANIFEST_SCHEMA};
use crate::mask::{BinaryMask, LogitMap};
use crate::rng::Rng;

pub const EDGE_FALLOFF_PX: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub name: String,
    /// Center offset in pixels.
    pub center_bias: f64,
    /// Growth of both semi-axes in pixels.
    pub dilation: f64,
    /// Amplitude of uniform per-pixel noise added before smoothing.
    pub noise: f64,
    /// Box-blur radius in pixels.
    pub smoothing: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusRange {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_images: usize,
    pub height: usize,
    pub width: usize,
    pub empty_fraction: f64,
    pub blob: RadiusRange,
    pub models: Vec<ModelProfile>,
    pub n_folds: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_images: 600,
            height: 64,
            width: 64,
            empty_fraction: 0.3,
            blob: RadiusRange { min: 6.0, max: 14.0 },
            models: vec![
                ModelProfile {
                    name: "model_a".into(),
                    center_bias: 4.0,
                    dilation: 4.0,
                    noise: 0.1,
                    smoothing: 1,
                },
                ModelProfile {
                    name: "model_b".into(),
                    center_bias: 4.0,
                    dilation: 3.0,
                    noise: 0.1,
                    smoothing: 2,
                },
            ],
            n_folds: 3,
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSynthSpec(m));
        if self.n_images == 0 {
            return bad("n_images must be positive".into());
        }
        if self.height < 8 || self.width < 8 || self.height > u16::MAX as usize || self.width > u16::MAX as usize {
            return bad(format!("dimensions {}x{} must be in 8..=65535", self.height, self.width));
        }
        if !(0.0..=1.0).contains(&self.empty_fraction) {
            return bad(format!("empty_fraction {} is not in [0, 1]", self.empty_fraction));
        }
        let RadiusRange { min, max } = self.blob;
        if !(min.is_finite() && max.is_finite() && min > 0.0 && min <= max) {
            return bad(format!("blob radius range [{min}, {max}] is invalid"));
        }
        if 2.0 * max + 4.0 > self.height.min(self.width) as f64 {
            return bad(format!("blob radius {max} does not fit a {}x{} image", self.height, self.width));
        }
        if self.models.is_empty() {
            return bad("at least one model profile is required".into());
        }
        let mut names = std::collections::HashSet::new();
        for m in &self.models {
            if !names.insert(m.name.as_str()) || m.name.is_empty() {
                return bad(format!("model name `{}` is empty or repeated", m.name));
            }
            if ![m.center_bias, m.dilation, m.noise].iter().all(|x| x.is_finite() && *x >= 0.0) {
                return bad(format!("model `{}` has a negative or non-finite parameter", m.name));
            }
        }
        if self.n_folds == 0 || self.n_folds > self.n_images {
            return bad(format!("n_folds {} must be in 1..=n_images", self.n_folds));
        }
        Ok(())
    }

    pub fn n_empty(&self) -> usize {
        (self.empty_fraction * self.n_images as f64).round() as usize
    }

    pub fn model_names(&self) -> Vec<String> {
        self.models.iter().map(|m| m.name.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cy: f64,
    cx: f64,
    a: f64,
    b: f64,
    theta: f64,
}

impl Ellipse {
    /// Normalized radius: `<= 1` inside.
    fn rho(&self, y: f64, x: f64) -> f64 {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let (s, c) = self.theta.sin_cos();
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        ((u / self.a).powi(2) + (v / self.b).powi(2)).sqrt()
    }

    fn mean_radius(&self) -> f64 {
        0.5 * (self.a + self.b)
    }

    fn draw(rng: &mut Rng, spec: &SynthSpec) -> Ellipse {
        let margin = spec.blob.max + 2.0;
        Ellipse {
            cy: rng.uniform(margin, spec.height as f64 - margin),
            cx: rng.uniform(margin, spec.width as f64 - margin),
            a: rng.uniform(spec.blob.min, spec.blob.max),
            b: rng.uniform(spec.blob.min, spec.blob.max),
            theta: rng.uniform(0.0, PI),
        }
    }

    fn draw_decoy(rng: &mut Rng, spec: &SynthSpec) -> Ellipse {
        let (lo, hi) = (0.25 * spec.blob.min, 0.5 * spec.blob.min);
        let margin = hi + 1.0;
        Ellipse {
            cy: rng.uniform(margin, spec.height as f64 - margin),
            cx: rng.uniform(margin, spec.width as f64 - margin),
            a: rng.uniform(lo, hi),
            b: rng.uniform(lo, hi),
            theta: rng.uniform(0.0, PI),
        }
    }
}

/// Pixel `(r, c)` is sampled at its center `(r + 0.5, c + 0.5)`.
fn rasterize(e: &Ellipse, h: usize, w: usize) -> BinaryMask {
    BinaryMask::from_fn(h, w, |r, c| e.rho(r as f64 + 0.5, c as f64 + 0.5) <= 1.0)
        .expect("dimensions validated")
}

fn box_blur(values: &[f64], h: usize, w: usize, radius: usize) -> Vec<f64> {
    if radius == 0 {
        return values.to_vec();
    }
    let pass = |src: &[f64], len: usize, stride: usize, lines: usize, line_stride: usize| {
        let mut out = vec![0.0; src.len()];
        for l in 0..lines {
            let base = l * line_stride;
            for i in 0..len {
                let lo = i.saturating_sub(radius);
                let hi = (i + radius).min(len - 1);
                let sum: f64 = (lo..=hi).map(|j| src[base + j * stride]).sum();
                out[base + i * stride] = sum / (hi - lo + 1) as f64;
            }
        }
        out
    };
    let rows = pass(values, w, 1, h, w);
    pass(&rows, h, w, w, 1)
}

fn normalize(h: usize, w: usize, values: &[f64]) -> LogitMap {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let out = if range > 0.0 {
        values.iter().map(|&v| (((v - lo) / range) as f32).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.0; values.len()]
    };
    LogitMap::new(h, w, out).expect("normalized values are in range")
}

fn model_map(target: &Ellipse, profile: &ModelProfile, rng: &mut Rng, h: usize, w: usize) -> LogitMap {
    let mut raw = Vec::with_capacity(h * w);
    let r = target.mean_radius();
    for row in 0..h {
        for col in 0..w {
            let rho = target.rho(row as f64 + 0.5, col as f64 + 0.5);
            let base = if rho <= 1.0 {
                1.0
            } else {
                (-(rho - 1.0) * r / EDGE_FALLOFF_PX).exp()
            };
            let noise = if profile.noise > 0.0 {
                rng.uniform(-profile.noise, profile.noise)
            } else {
                0.0
            };
            raw.push(base + noise);
        }
    }
    normalize(h, w, &box_blur(&raw, h, w, profile.smoothing))
}

fn image_id(i: usize) -> String {
    format!("img{i:05}")
}

fn generate_image(spec: &SynthSpec, i: usize, empty: bool) -> Sample {
    let (h, w) = (spec.height, spec.width);
    let stream = (i as u64 + 1) << 16;
    let mut rng = Rng::new(spec.seed, stream);
    let truth = Ellipse::draw(&mut rng, spec);
    let phi = rng.uniform(0.0, 2.0 * PI);
    let n = spec.models.len() as f64;

    let gt = if empty {
        BinaryMask::empty(h, w).expect("dimensions validated")
    } else {
        rasterize(&truth, h, w)
    };
    let mut sample = Sample::new(image_id(i), gt);
    for (m, profile) in spec.models.iter().enumerate() {
        let mut noise_rng = Rng::new(spec.seed, stream | (m as u64 + 1));
        let target = if empty {
            Ellipse::draw_decoy(&mut noise_rng, spec)
        } else {
            let dir = phi + 2.0 * PI * m as f64 / n;
            Ellipse {
                cy: truth.cy + profile.center_bias * dir.sin(),
                cx: truth.cx + profile.center_bias * dir.cos(),
                a: truth.a + profile.dilation,
                b: truth.b + profile.dilation,
                theta: truth.theta,
            }
        };
        sample = sample.with_map(profile.name.clone(), model_map(&target, profile, &mut noise_rng, h, w));
    }
    sample
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub spec: SynthSpec,
    pub dataset: Dataset,
    pub folds: FoldSpec,
}

pub fn generate(spec: &SynthSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut order: Vec<usize> = (0..spec.n_images).collect();
    Rng::new(spec.seed, 1).shuffle(&mut order);
    let mut empty = vec![false; spec.n_images];
    for &i in &order[..spec.n_empty()] {
        empty[i] = true;
    }
    let samples: Vec<Sample> = (0..spec.n_images)
        .into_par_iter()
        .map(|i| generate_image(spec, i, empty[i]))
        .collect();
    let ids: Vec<&str> = samples.iter().map(|s| s.id.as_str()).collect();
    let folds = FoldSpec::shuffled(&ids, spec.n_folds, spec.seed)?;
    Ok(Corpus {
        dataset: Dataset::new(spec.model_names(), samples),
        folds,
        spec: spec.clone(),
    })
}

impl Corpus {
    /// Writes `gt/`, `maps/<model>/`, `manifest.json` and `synth_spec.json`
    /// under `dir`.
    pub fn write(&self, dir: &Path) -> Result<Manifest> {
        let mk = |p: &Path| std::fs::create_dir_all(p).map_err(|e| Error::io(p, e));
        mk(&dir.join("gt"))?;
        for m in &self.dataset.models {
            mk(&dir.join("maps").join(m))?;
        }
        let entries = self
            .dataset
            .samples
            .par_iter()
            .map(|s| {
                let gt = Path::new("gt").join(format!("{}.msk", s.id));
                write_mask(&s.gt, &dir.join(&gt))?;
                let mut maps = std::collections::BTreeMap::new();
                for (model, map) in &s.maps {
                    let p = Path::new("maps").join(model).join(format!("{}.msk", s.id));
                    write_map(map, &dir.join(&p))?;
                    maps.insert(model.clone(), p);
                }
                Ok(ManifestEntry {
                    id: s.id.clone(),
                    gt,
                    maps,
                    fold: self.folds.fold_of(&s.id),
                    gt_empty: Some(s.gt.is_empty()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = Manifest {
            schema: MANIFEST_SCHEMA.into(),
            height: self.spec.height,
            width: self.spec.width,
            models: self.dataset.models.clone(),
            n_folds: Some(self.folds.n_folds()),
            entries,
            root: dir.to_path_buf(),
        };
        manifest.write(&dir.join("manifest.json"))?;
        write_json(&self.spec, &dir.join("synth_spec.json"))?;
        Ok(manifest)
    }
}
