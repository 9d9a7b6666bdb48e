//! Ensemble operators over per-model binarized masks.
//!
//! Every member map is binarized at its own threshold first; the operators
//! then act on masks. `Or` is the pixelwise union, `And` the intersection,
//! and `Min`/`Max` select the single member mask with the fewest/most
//! positives (ties go to the lowest member index).

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{binarize, BinaryMask, LogitMap, Threshold};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleOp {
    Or,
    And,
    Min,
    Max,
}

impl EnsembleOp {
    pub const ALL: [EnsembleOp; 4] = [EnsembleOp::Or, EnsembleOp::And, EnsembleOp::Min, EnsembleOp::Max];

    pub fn as_str(self) -> &'static str {
        match self {
            EnsembleOp::Or => "or",
            EnsembleOp::And => "and",
            EnsembleOp::Min => "min",
            EnsembleOp::Max => "max",
        }
    }
}

impl fmt::Display for EnsembleOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnsembleOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "or" => Ok(EnsembleOp::Or),
            "and" => Ok(EnsembleOp::And),
            "min" | "<" => Ok(EnsembleOp::Min),
            "max" | ">" => Ok(EnsembleOp::Max),
            other => Err(Error::InvalidConfig(format!(
                "unknown ensemble operator `{other}` (expected or, and, min, max)"
            ))),
        }
    }
}

/// Members, one threshold per member, and the combining operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawConfig")]
pub struct EnsembleConfig {
    members: Vec<String>,
    thresholds: Vec<Threshold>,
    op: EnsembleOp,
}

#[derive(Deserialize)]
struct RawConfig {
    members: Vec<String>,
    thresholds: Vec<Threshold>,
    op: EnsembleOp,
}

impl TryFrom<RawConfig> for EnsembleConfig {
    type Error = Error;

    fn try_from(raw: RawConfig) -> Result<Self> {
        EnsembleConfig::new(raw.members, raw.thresholds, raw.op)
    }
}

impl EnsembleConfig {
    pub fn new(members: Vec<String>, thresholds: Vec<Threshold>, op: EnsembleOp) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidConfig("no members".into()));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = members.iter().find(|m| !seen.insert(m.as_str())) {
            return Err(Error::InvalidConfig(format!("duplicate member `{dup}`")));
        }
        if thresholds.len() != members.len() {
            return Err(Error::InvalidConfig(format!(
                "{} thresholds for {} members",
                thresholds.len(),
                members.len()
            )));
        }
        Ok(EnsembleConfig {
            members,
            thresholds,
            op,
        })
    }

    pub fn members(&self) -> &[String] {
        &self.members
    }

    pub fn thresholds(&self) -> &[Threshold] {
        &self.thresholds
    }

    pub fn op(&self) -> EnsembleOp {
        self.op
    }
}

/// Combine already-binarized member masks.
pub fn combine_masks(masks: &[BinaryMask], op: EnsembleOp) -> Result<BinaryMask> {
    let first = masks.first().ok_or(Error::NoMaps)?;
    if let Some(m) = masks.iter().find(|m| m.dims() != first.dims()) {
        return Err(Error::DimensionMismatch(format!(
            "member masks are {}x{} and {}x{}",
            first.height(),
            first.width(),
            m.height(),
            m.width()
        )));
    }
    match op {
        EnsembleOp::Or => masks[1..]
            .iter()
            .try_fold(first.clone(), |acc, m| acc.union(m)),
        EnsembleOp::And => masks[1..]
            .iter()
            .try_fold(first.clone(), |acc, m| acc.intersection(m)),
        EnsembleOp::Min | EnsembleOp::Max => {
            let mut best = 0;
            let mut best_count = first.positive_count();
            for (i, m) in masks.iter().enumerate().skip(1) {
                let c = m.positive_count();
                let better = match op {
                    EnsembleOp::Min => c < best_count,
                    _ => c > best_count,
                };
                if better {
                    best = i;
                    best_count = c;
                }
            }
            Ok(masks[best].clone())
        }
    }
}

/// Binarize `maps[i]` at `config.thresholds()[i]` and combine with the
/// configured operator. `maps` must be in member order.
pub fn combine(maps: &[&LogitMap], config: &EnsembleConfig) -> Result<BinaryMask> {
    if maps.len() != config.members.len() {
        return Err(Error::InvalidConfig(format!(
            "{} maps for {} members",
            maps.len(),
            config.members.len()
        )));
    }
    let masks: Vec<_> = maps
        .iter()
        .zip(&config.thresholds)
        .map(|(m, &t)| binarize(m, t))
        .collect();
    combine_masks(&masks, config.op)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask(v: [bool; 4]) -> BinaryMask {
        BinaryMask::new(2, 2, v.to_vec()).unwrap()
    }

    const T: bool = true;
    const F: bool = false;

    #[test]
    fn operator_examples() {
        let a = mask([T, F, T, F]);
        let b = mask([T, T, F, F]);
        let both = [a.clone(), b.clone()];
        assert_eq!(combine_masks(&both, EnsembleOp::And).unwrap(), mask([T, F, F, F]));
        assert_eq!(combine_masks(&both, EnsembleOp::Or).unwrap(), mask([T, T, T, F]));
        assert_eq!(combine_masks(&both, EnsembleOp::Min).unwrap(), a);
        assert_eq!(combine_masks(&both, EnsembleOp::Max).unwrap(), a);
    }

    #[test]
    fn combine_binarizes_per_member() {
        let m1 = LogitMap::new(2, 2, vec![0.9, 0.1, 0.6, 0.2]).unwrap();
        let m2 = LogitMap::new(2, 2, vec![0.8, 0.35, 0.1, 0.0]).unwrap();
        let cfg = EnsembleConfig::new(
            vec!["a".into(), "b".into()],
            vec![Threshold::new(0.5).unwrap(), Threshold::new(0.3).unwrap()],
            EnsembleOp::And,
        )
        .unwrap();
        assert_eq!(combine(&[&m1, &m2], &cfg).unwrap(), mask([T, F, F, F]));
    }

    #[test]
    fn config_validation() {
        let t = Threshold::new(0.5).unwrap();
        assert!(EnsembleConfig::new(vec![], vec![], EnsembleOp::Or).is_err());
        assert!(EnsembleConfig::new(vec!["a".into(), "a".into()], vec![t, t], EnsembleOp::Or).is_err());
        assert!(EnsembleConfig::new(vec!["a".into()], vec![t, t], EnsembleOp::Or).is_err());
        let json = r#"{"members":["a","a"],"thresholds":[0.1,0.2],"op":"and"}"#;
        assert!(serde_json::from_str::<EnsembleConfig>(json).is_err());
        let json = r#"{"members":["a","b"],"thresholds":[0.1,0.2],"op":"and"}"#;
        let cfg: EnsembleConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.op(), EnsembleOp::And);
        assert_eq!(serde_json::to_string(&cfg).unwrap(), json);
    }

    #[test]
    fn combine_errors() {
        let m = LogitMap::zeros(2, 2).unwrap();
        let other = LogitMap::zeros(3, 2).unwrap();
        let t = Threshold::new(0.5).unwrap();
        let cfg = EnsembleConfig::new(vec!["a".into(), "b".into()], vec![t, t], EnsembleOp::Or).unwrap();
        assert!(matches!(combine(&[&m], &cfg), Err(Error::InvalidConfig(_))));
        assert!(matches!(combine(&[&m, &other], &cfg), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn op_names_round_trip() {
        for op in EnsembleOp::ALL {
            assert_eq!(op.as_str().parse::<EnsembleOp>().unwrap(), op);
            assert_eq!(serde_json::to_string(&op).unwrap(), format!("\"{op}\""));
        }
        assert_eq!("<".parse::<EnsembleOp>().unwrap(), EnsembleOp::Min);
        assert!("xor".parse::<EnsembleOp>().is_err());
    }

    fn arb_masks() -> impl Strategy<Value = Vec<BinaryMask>> {
        (1usize..5, 1usize..6, 1usize..6).prop_flat_map(|(n, h, w)| {
            proptest::collection::vec(
                proptest::collection::vec(any::<bool>(), h * w)
                    .prop_map(move |v| BinaryMask::new(h, w, v).unwrap()),
                n,
            )
        })
    }

    proptest! {
        #[test]
        fn set_and_count_ordering(masks in arb_masks()) {
            let and = combine_masks(&masks, EnsembleOp::And).unwrap();
            let or = combine_masks(&masks, EnsembleOp::Or).unwrap();
            let min = combine_masks(&masks, EnsembleOp::Min).unwrap();
            let max = combine_masks(&masks, EnsembleOp::Max).unwrap();
            for m in &masks {
                prop_assert!(and.is_subset_of(m));
                prop_assert!(m.is_subset_of(&or));
            }
            prop_assert!(and.positive_count() <= min.positive_count());
            prop_assert!(min.positive_count() <= max.positive_count());
            prop_assert!(max.positive_count() <= or.positive_count());
            prop_assert!(masks.contains(&min));
            prop_assert!(masks.contains(&max));
        }

        #[test]
        fn single_member_all_ops_agree(masks in arb_masks()) {
            let one = &masks[..1];
            for op in EnsembleOp::ALL {
                prop_assert_eq!(&combine_masks(one, op).unwrap(), &masks[0]);
            }
        }

        #[test]
        fn or_and_are_order_independent(masks in arb_masks()) {
            let mut rev = masks.clone();
            rev.reverse();
            for op in [EnsembleOp::Or, EnsembleOp::And] {
                prop_assert_eq!(combine_masks(&masks, op).unwrap(), combine_masks(&rev, op).unwrap());
            }
        }
    }
}
