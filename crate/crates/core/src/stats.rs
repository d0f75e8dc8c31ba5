//! Streaming per-class moments.
//!
//! Each class keeps its prototype (running mean of features), the running mean
//! of elementwise squared features, and a sample count. Both moments follow the
//! simple moving average `m <- (m * n + x) / (n + 1)` applied per sample, and
//! the per-dimension standard deviation is derived on demand as
//! `sqrt(max(0, E[x^2] - E[x]^2))`.

use std::collections::BTreeMap;

use crate::error::{check_dim, Error, Result};
use crate::Label;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassStatistics {
    pub class_id: Label,
    pub prototype: Vec<f64>,
    pub sq_expectation: Vec<f64>,
    pub count: u64,
}

impl ClassStatistics {
    fn first(class_id: Label, feature: &[f64]) -> Self {
        Self {
            class_id,
            prototype: feature.to_vec(),
            sq_expectation: feature.iter().map(|x| x * x).collect(),
            count: 1,
        }
    }

    fn update(&mut self, feature: &[f64]) {
        let n = self.count as f64;
        let denom = n + 1.0;
        for ((p, s), &x) in self
            .prototype
            .iter_mut()
            .zip(self.sq_expectation.iter_mut())
            .zip(feature)
        {
            *p = (*p * n + x) / denom;
            *s = (*s * n + x * x) / denom;
        }
        self.count += 1;
    }

    /// Per-dimension standard deviation, with negative rounding residue clamped to zero.
    pub fn std(&self) -> Vec<f64> {
        self.prototype
            .iter()
            .zip(&self.sq_expectation)
            .map(|(p, s)| (s - p * p).max(0.0).sqrt())
            .collect()
    }
}

/// All class statistics seen so far. Memory is `O(classes * dim)` regardless
/// of how many samples have streamed through.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StatisticsStore {
    dim: Option<usize>,
    classes: BTreeMap<Label, ClassStatistics>,
}

impl StatisticsStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// A store whose dimension is fixed before any observation.
    pub fn with_dim(dim: usize) -> Self {
        Self {
            dim: Some(dim),
            classes: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn contains(&self, class_id: Label) -> bool {
        self.classes.contains_key(&class_id)
    }

    pub fn observe(&mut self, class_id: Label, feature: &[f64]) -> Result<()> {
        if let Some(dim) = self.dim {
            check_dim(dim, feature.len())?;
        }
        if let Some(index) = feature.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        if feature.is_empty() {
            return Err(Error::invalid_argument("feature vectors must be non-empty"));
        }
        self.dim = Some(feature.len());
        match self.classes.get_mut(&class_id) {
            Some(stats) => stats.update(feature),
            None => {
                self.classes
                    .insert(class_id, ClassStatistics::first(class_id, feature));
            }
        }
        Ok(())
    }

    pub fn get(&self, class_id: Label) -> Result<&ClassStatistics> {
        self.classes
            .get(&class_id)
            .ok_or(Error::UnknownClass(class_id))
    }

    pub fn prototype(&self, class_id: Label) -> Result<&[f64]> {
        Ok(&self.get(class_id)?.prototype)
    }

    pub fn std_of(&self, class_id: Label) -> Result<Vec<f64>> {
        Ok(self.get(class_id)?.std())
    }

    /// Seen classes in ascending label order.
    pub fn seen_classes(&self) -> Vec<Label> {
        self.classes.keys().copied().collect()
    }

    /// Class statistics in ascending label order.
    pub fn iter(&self) -> impl Iterator<Item = &ClassStatistics> {
        self.classes.values()
    }

    /// Rebuilds a store from previously captured class statistics.
    pub fn from_parts(dim: Option<usize>, classes: Vec<ClassStatistics>) -> Result<Self> {
        let mut store = Self {
            dim,
            classes: BTreeMap::new(),
        };
        for stats in classes {
            let dim = *store.dim.get_or_insert(stats.prototype.len());
            check_dim(dim, stats.prototype.len())?;
            check_dim(dim, stats.sq_expectation.len())?;
            if stats.count == 0 {
                return Err(Error::Malformed(format!(
                    "class {} stored with zero count",
                    stats.class_id
                )));
            }
            if store.classes.insert(stats.class_id, stats).is_some() {
                return Err(Error::Malformed("duplicate class in store".into()));
            }
        }
        Ok(store)
    }
}
