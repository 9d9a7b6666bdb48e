//! In-memory corpus: ground truth plus one logit map per model for each image.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::mask::{BinaryMask, LogitMap};

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub gt: BinaryMask,
    pub maps: BTreeMap<String, LogitMap>,
}

impl Sample {
    pub fn new(id: impl Into<String>, gt: BinaryMask) -> Self {
        Sample {
            id: id.into(),
            gt,
            maps: BTreeMap::new(),
        }
    }

    pub fn with_map(mut self, model: impl Into<String>, map: LogitMap) -> Self {
        self.maps.insert(model.into(), map);
        self
    }

    pub fn map(&self, model: &str) -> Result<&LogitMap> {
        self.maps.get(model).ok_or_else(|| Error::MissingMap {
            image: self.id.clone(),
            model: model.to_string(),
        })
    }

    /// Maps for `members`, in member order, checked against the gt size.
    pub fn member_maps(&self, members: &[String]) -> Result<Vec<&LogitMap>> {
        members
            .iter()
            .map(|m| {
                let map = self.map(m)?;
                if map.dims() != self.gt.dims() {
                    return Err(Error::DimensionMismatch(format!(
                        "image `{}`: map for `{m}` is {}x{}, ground truth is {}x{}",
                        self.id,
                        map.height(),
                        map.width(),
                        self.gt.height(),
                        self.gt.width()
                    )));
                }
                Ok(map)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub models: Vec<String>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(models: Vec<String>, samples: Vec<Sample>) -> Self {
        Dataset { models, samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn all(&self) -> Vec<&Sample> {
        self.samples.iter().collect()
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }
}
