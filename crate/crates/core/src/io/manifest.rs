//! Corpus manifests.
//!
//! ```json
//! {
//!   "schema": "camcal.manifest/1",
//!   "height": 64,
//!   "width": 64,
//!   "models": ["resnet34", "resnet50"],
//!   "n_folds": 3,
//!   "entries": [
//!     {
//!       "id": "img0000",
//!       "gt": "gt/img0000.msk",
//!       "maps": { "resnet34": "maps/resnet34/img0000.msk", "resnet50": "maps/resnet50/img0000.msk" },
//!       "fold": 0,
//!       "gt_empty": false
//!     }
//!   ]
//! }
//! ```
//!
//! Relative paths resolve against the manifest's directory. `n_folds` is
//! optional and defaults to one more than the largest fold index.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::FoldSpec;
use crate::dataset::{Dataset, Sample};
use crate::error::{Error, Result};

use super::{read_map, read_mask, write_json};

pub const MANIFEST_SCHEMA: &str = "camcal.manifest/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub gt: PathBuf,
    pub maps: BTreeMap<String, PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_empty: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema: String,
    pub height: usize,
    pub width: usize,
    pub models: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_folds: Option<usize>,
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    pub root: PathBuf,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidManifest(msg.into())
}

impl Manifest {
    /// Parse and structurally validate; touches no files.
    pub fn parse(text: &str) -> Result<Manifest> {
        let manifest: Manifest = serde_json::from_str(text).map_err(|source| Error::Json {
            path: PathBuf::from("<manifest>"),
            source,
        })?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != MANIFEST_SCHEMA {
            return Err(invalid(format!(
                "unsupported schema `{}` (expected `{MANIFEST_SCHEMA}`)",
                self.schema
            )));
        }
        if self.height == 0 || self.width == 0 || self.height > u16::MAX as usize || self.width > u16::MAX as usize {
            return Err(invalid(format!("dimensions {}x{} are not in 1..=65535", self.height, self.width)));
        }
        if self.models.is_empty() {
            return Err(invalid("no models declared"));
        }
        let mut seen = HashSet::new();
        if let Some(m) = self.models.iter().find(|m| !seen.insert(m.as_str())) {
            return Err(invalid(format!("model `{m}` declared twice")));
        }
        let mut ids = HashSet::new();
        for e in &self.entries {
            if !ids.insert(e.id.as_str()) {
                return Err(invalid(format!("image id `{}` appears twice", e.id)));
            }
            if let Some(m) = self.models.iter().find(|m| !e.maps.contains_key(*m)) {
                return Err(invalid(format!("image `{}` is missing the `{m}` model column", e.id)));
            }
            if let Some(m) = e.maps.keys().find(|m| !self.models.contains(m)) {
                return Err(invalid(format!("image `{}` has a map for undeclared model `{m}`", e.id)));
            }
            if let (Some(f), Some(n)) = (e.fold, self.n_folds) {
                if f >= n {
                    return Err(invalid(format!(
                        "image `{}` has fold index {f}, out of range for {n} folds",
                        e.id
                    )));
                }
            }
        }
        if self.n_folds == Some(0) {
            return Err(invalid("n_folds must be positive"));
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Every referenced file must exist.
    pub fn check_paths(&self) -> Result<()> {
        for e in &self.entries {
            for p in std::iter::once(&e.gt).chain(e.maps.values()) {
                let full = self.resolve(p);
                if !full.is_file() {
                    return Err(invalid(format!(
                        "image `{}` references missing file {}",
                        e.id,
                        full.display()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Fold assignment if every entry names a fold.
    pub fn fold_spec(&self) -> Result<Option<FoldSpec>> {
        let mut assignment = BTreeMap::new();
        for e in &self.entries {
            match e.fold {
                Some(f) => {
                    assignment.insert(e.id.clone(), f);
                }
                None => return Ok(None),
            }
        }
        if assignment.is_empty() {
            return Ok(None);
        }
        let n = self
            .n_folds
            .unwrap_or_else(|| assignment.values().max().map_or(0, |m| m + 1));
        FoldSpec::new(n, assignment).map(Some)
    }

    /// Read every mask and map; dimensions and emptiness flags are checked
    /// against the manifest.
    pub fn load(&self) -> Result<Dataset> {
        let dims = (self.height, self.width);
        let samples = self
            .entries
            .par_iter()
            .map(|e| {
                let gt_path = self.resolve(&e.gt);
                let gt = read_mask(&gt_path)?;
                if gt.dims() != dims {
                    return Err(invalid(format!(
                        "{} is {}x{}, manifest declares {}x{}",
                        gt_path.display(),
                        gt.height(),
                        gt.width(),
                        dims.0,
                        dims.1
                    )));
                }
                if let Some(flag) = e.gt_empty {
                    if flag != gt.is_empty() {
                        return Err(invalid(format!(
                            "image `{}` declares gt_empty={flag} but its mask disagrees",
                            e.id
                        )));
                    }
                }
                let mut sample = Sample::new(e.id.clone(), gt);
                for model in &self.models {
                    let path = self.resolve(&e.maps[model]);
                    let map = read_map(&path)?;
                    if map.dims() != dims {
                        return Err(invalid(format!(
                            "{} is {}x{}, manifest declares {}x{}",
                            path.display(),
                            map.height(),
                            map.width(),
                            dims.0,
                            dims.1
                        )));
                    }
                    sample = sample.with_map(model.clone(), map);
                }
                Ok(sample)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset::new(self.models.clone(), samples))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(self, path)
    }
}

/// Parse, validate, and check that every referenced file exists.
pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut manifest = Manifest::parse(&text).map_err(|e| match e {
        Error::Json { source, .. } => Error::Json {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })?;
    manifest.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    manifest.check_paths()?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{write_map, write_mask};
    use crate::mask::{BinaryMask, LogitMap};

    fn entry(id: &str, fold: Option<usize>, models: &[&str]) -> serde_json::Value {
        let maps: serde_json::Map<_, _> = models
            .iter()
            .map(|m| (m.to_string(), format!("{m}_{id}.msk").into()))
            .collect();
        let mut e = serde_json::json!({ "id": id, "gt": format!("gt_{id}.msk"), "maps": maps });
        if let Some(f) = fold {
            e["fold"] = f.into();
        }
        e
    }

    fn manifest_json(models: &[&str], entries: Vec<serde_json::Value>) -> serde_json::Value {
        serde_json::json!({
            "schema": MANIFEST_SCHEMA, "height": 2, "width": 2,
            "models": models, "entries": entries,
        })
    }

    fn materialize(dir: &Path, v: &serde_json::Value) -> PathBuf {
        let gt = BinaryMask::new(2, 2, vec![true, false, false, false]).unwrap();
        let map = LogitMap::new(2, 2, vec![0.9, 0.1, 0.0, 0.3]).unwrap();
        for e in v["entries"].as_array().unwrap() {
            write_mask(&gt, &dir.join(e["gt"].as_str().unwrap())).unwrap();
            for p in e["maps"].as_object().unwrap().values() {
                write_map(&map, &dir.join(p.as_str().unwrap())).unwrap();
            }
        }
        let path = dir.join("manifest.json");
        std::fs::write(&path, v.to_string()).unwrap();
        path
    }

    #[test]
    fn minimal_manifest_loads() {
        let dir = tempfile::tempdir().unwrap();
        let v = manifest_json(&["m"], vec![entry("a", None, &["m"])]);
        let path = materialize(dir.path(), &v);
        let m = read_manifest(&path).unwrap();
        let d = m.load().unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.samples[0].map("m").unwrap().get(0, 0), 0.9);
        assert!(m.fold_spec().unwrap().is_none());
    }

    #[test]
    fn missing_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let v = manifest_json(&["m"], vec![entry("a", None, &["m"])]);
        let path = materialize(dir.path(), &v);
        std::fs::remove_file(dir.path().join("m_a.msk")).unwrap();
        let err = read_manifest(&path).unwrap_err().to_string();
        assert!(err.contains("m_a.msk"), "{err}");
    }

    #[test]
    fn three_folds_are_inferred() {
        let entries = (0..6).map(|i| entry(&format!("i{i}"), Some(i % 3), &["m"])).collect();
        let m = Manifest::parse(&manifest_json(&["m"], entries).to_string()).unwrap();
        let folds = m.fold_spec().unwrap().unwrap();
        assert_eq!(folds.n_folds(), 3);
        assert_eq!(folds.fold_of("i4"), Some(1));
    }

    #[test]
    fn structural_errors() {
        let missing_col = manifest_json(&["a", "b"], vec![entry("x", None, &["a"])]);
        let err = Manifest::parse(&missing_col.to_string()).unwrap_err().to_string();
        assert!(err.contains("missing the `b` model column"), "{err}");

        let mut out_of_range = manifest_json(&["a"], vec![entry("x", Some(3), &["a"])]);
        out_of_range["n_folds"] = 3.into();
        let err = Manifest::parse(&out_of_range.to_string()).unwrap_err().to_string();
        assert!(err.contains("out of range"), "{err}");

        let mut bad_schema = manifest_json(&["a"], vec![]);
        bad_schema["schema"] = "other/2".into();
        assert!(Manifest::parse(&bad_schema.to_string()).is_err());

        let dup = manifest_json(&["a"], vec![entry("x", None, &["a"]), entry("x", None, &["a"])]);
        assert!(Manifest::parse(&dup.to_string()).is_err());

        assert!(matches!(Manifest::parse("{"), Err(Error::Json { .. })));
    }

    #[test]
    fn dimension_mismatch_surfaces_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let v = manifest_json(&["m"], vec![entry("a", None, &["m"])]);
        let path = materialize(dir.path(), &v);
        write_map(&LogitMap::zeros(3, 2).unwrap(), &dir.path().join("m_a.msk")).unwrap();
        let m = read_manifest(&path).unwrap();
        let err = m.load().unwrap_err().to_string();
        assert!(err.contains("3x2"), "{err}");
    }

    #[test]
    fn emptiness_flag_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let mut v = manifest_json(&["m"], vec![entry("a", None, &["m"])]);
        v["entries"][0]["gt_empty"] = true.into();
        let path = materialize(dir.path(), &v);
        assert!(read_manifest(&path).unwrap().load().is_err());
    }
}
