//! Intra-class significance analysis.
//!
//! Each class weights its dimensions by a softmax over `max(r) - r`, so
//! low-variance dimensions count more. Distances from a feature to every
//! prototype are weighted row-wise by these significances, and the importance
//! vector `tau_y = sum(gamma) / gamma_y` replaces the classifier bias.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::registry::Registry;
use crate::stats::StatisticsStore;
use crate::Label;

/// Guard for exact prototype hits in the importance normalization.
pub const ZERO_DISTANCE_GUARD: f64 = 1e-12;

/// Per-class significance rows, aligned with ascending class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceMatrix {
    pub labels: Vec<Label>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceVector {
    pub labels: Vec<Label>,
    pub values: Vec<f64>,
}

/// Softmax over dimensions of `max(r) - r`.
pub fn significance_row(std: &[f64]) -> Vec<f64> {
    let max = std.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // Shifted logits are max(r) - r, their own max is max(r) - min(r).
    let min = std.iter().copied().fold(f64::INFINITY, f64::min);
    let top = max - min;
    let exps: Vec<f64> = std.iter().map(|r| ((max - r) - top).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn significance_matrix(store: &StatisticsStore) -> Result<SignificanceMatrix> {
    if store.is_empty() {
        return Err(Error::invalid_state(
            "significance matrix needs at least one observed class",
        ));
    }
    let (labels, rows) = store
        .iter()
        .map(|c| (c.class_id, significance_row(&c.std())))
        .unzip();
    Ok(SignificanceMatrix { labels, rows })
}

/// Per-class distance between a feature and a prototype under per-dimension
/// significance weights.
pub trait DistanceKernel: Send + Sync {
    fn name(&self) -> &'static str;
    fn distance(&self, feature: &[f64], prototype: &[f64], weights: &[f64]) -> f64;
}

/// `sum_i u_i (f_i - p_i)^2`
pub struct WeightedSquared;

impl DistanceKernel for WeightedSquared {
    fn name(&self) -> &'static str {
        "weighted_squared"
    }

    fn distance(&self, feature: &[f64], prototype: &[f64], weights: &[f64]) -> f64 {
        feature
            .iter()
            .zip(prototype)
            .zip(weights)
            .map(|((f, p), u)| {
                let d = f - p;
                u * d * d
            })
            .sum()
    }
}

/// `sum_i u_i |f_i - p_i|`
pub struct WeightedAbsolute;

impl DistanceKernel for WeightedAbsolute {
    fn name(&self) -> &'static str {
        "weighted_absolute"
    }

    fn distance(&self, feature: &[f64], prototype: &[f64], weights: &[f64]) -> f64 {
        feature
            .iter()
            .zip(prototype)
            .zip(weights)
            .map(|((f, p), u)| u * (f - p).abs())
            .sum()
    }
}

/// `sqrt(sum_i u_i (f_i - p_i)^2)`
pub struct WeightedEuclidean;

impl DistanceKernel for WeightedEuclidean {
    fn name(&self) -> &'static str {
        "weighted_euclidean"
    }

    fn distance(&self, feature: &[f64], prototype: &[f64], weights: &[f64]) -> f64 {
        WeightedSquared.distance(feature, prototype, weights).sqrt()
    }
}

pub const DEFAULT_KERNEL: &str = "weighted_squared";

pub type KernelRegistry = Registry<dyn DistanceKernel>;

pub fn kernel_registry() -> KernelRegistry {
    let mut reg = KernelRegistry::new("distance kernel");
    reg.register("weighted_squared", |_: &()| {
        Box::new(WeightedSquared) as Box<dyn DistanceKernel>
    });
    reg.register("weighted_absolute", |_: &()| {
        Box::new(WeightedAbsolute) as Box<dyn DistanceKernel>
    });
    reg.register("weighted_euclidean", |_: &()| {
        Box::new(WeightedEuclidean) as Box<dyn DistanceKernel>
    });
    reg
}

/// Significance-weighted distance from `feature` to every class prototype,
/// in the row order of `significance`.
pub fn weighted_distances(
    feature: &[f64],
    store: &StatisticsStore,
    significance: &SignificanceMatrix,
    kernel: &dyn DistanceKernel,
) -> Result<Vec<f64>> {
    significance
        .labels
        .iter()
        .zip(&significance.rows)
        .map(|(&label, row)| {
            let prototype = store.prototype(label)?;
            check_dim(prototype.len(), feature.len())?;
            check_dim(prototype.len(), row.len())?;
            Ok(kernel.distance(feature, prototype, row))
        })
        .collect()
}

/// `tau_y = sum(gamma) / max(gamma_y, guard)`.
///
/// When every distance is zero the numerator is guarded too, giving a
/// constant vector of ones.
pub fn importance_vector(labels: &[Label], gamma: &[f64]) -> Result<ImportanceVector> {
    if gamma.is_empty() {
        return Err(Error::invalid_argument("empty distance vector"));
    }
    check_dim(labels.len(), gamma.len())?;
    if let Some(bad) = gamma.iter().position(|g| !(*g >= 0.0) || !g.is_finite()) {
        return Err(Error::invalid_argument(format!(
            "distance {bad} is negative or non-finite"
        )));
    }
    let total = gamma.iter().sum::<f64>().max(ZERO_DISTANCE_GUARD);
    Ok(ImportanceVector {
        labels: labels.to_vec(),
        values: gamma
            .iter()
            .map(|g| total / g.max(ZERO_DISTANCE_GUARD))
            .collect(),
    })
}

/// Builds the importance vector of one feature against the current statistics.
pub fn importance_for(
    feature: &[f64],
    store: &StatisticsStore,
    significance: &SignificanceMatrix,
    kernel: &dyn DistanceKernel,
) -> Result<ImportanceVector> {
    let gamma = weighted_distances(feature, store, significance, kernel)?;
    importance_vector(&significance.labels, &gamma)
}

/// Serializable selection of the ISAY distance kernel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KernelName(pub String);

impl Default for KernelName {
    fn default() -> Self {
        KernelName(DEFAULT_KERNEL.to_string())
    }
}
