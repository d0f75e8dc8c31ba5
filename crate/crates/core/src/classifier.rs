//! Linear head over frozen features, trained one SGD step per stream batch.
//!
//! There is no trainable bias: the importance vector from [`crate::isay`] takes
//! its place at prediction time and never enters the gradient path.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::isay::ImportanceVector;
use crate::Label;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Weight of the pseudo-feature loss term.
    pub beta: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.02,
            weight_decay: 5e-5,
            beta: 2.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid_argument("learning_rate must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid_argument("weight_decay must be non-negative"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid_argument("beta must be non-negative"));
        }
        Ok(())
    }
}

/// One labeled feature borrowed from a dataset or pseudo-feature buffer.
pub type Example<'a> = (&'a [f64], Label);

/// `N x D` weight matrix, rows kept in ascending label order.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    dim: usize,
    labels: Vec<Label>,
    weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    /// Weights were updated. Carries the mean real-sample loss before the step.
    Updated { real_loss: f64 },
    /// The batch held no real samples; weights are untouched.
    SkippedEmpty,
}

impl LinearHead {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            labels: Vec::new(),
            weights: Vec::new(),
        }
    }

    pub fn from_parts(dim: usize, labels: Vec<Label>, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != labels.len() * dim {
            return Err(Error::Malformed(format!(
                "{} weights for {} classes of dim {}",
                weights.len(),
                labels.len(),
                dim
            )));
        }
        if !labels.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Malformed("head labels must be strictly ascending".into()));
        }
        Ok(Self {
            dim,
            labels,
            weights,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn row(&self, index: usize) -> &[f64] {
        &self.weights[index * self.dim..(index + 1) * self.dim]
    }

    pub fn index_of(&self, label: Label) -> Option<usize> {
        self.labels.binary_search(&label).ok()
    }

    /// Adds zero-initialized rows for `new_labels`, keeping rows sorted by label.
    pub fn expand_classes(&mut self, new_labels: &[Label]) -> Result<()> {
        let mut sorted = new_labels.to_vec();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid_argument("duplicate label in expansion"));
        }
        if let Some(dup) = sorted.iter().find(|l| self.index_of(**l).is_some()) {
            return Err(Error::invalid_argument(format!(
                "class {dup} already has a row"
            )));
        }
        for label in sorted {
            let at = self.labels.partition_point(|&l| l < label);
            self.labels.insert(at, label);
            let offset = at * self.dim;
            self.weights
                .splice(offset..offset, std::iter::repeat_n(0.0, self.dim));
        }
        Ok(())
    }

    pub fn logits(&self, feature: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, feature.len())?;
        Ok(self
            .weights
            .chunks_exact(self.dim.max(1))
            .take(self.labels.len())
            .map(|row| row.iter().zip(feature).map(|(w, x)| w * x).sum())
            .collect())
    }

    pub fn logits_softmax(&self, feature: &[f64]) -> Result<Vec<f64>> {
        if self.labels.is_empty() {
            return Err(Error::invalid_state("classifier has no classes"));
        }
        let mut z = self.logits(feature)?;
        softmax_in_place(&mut z);
        Ok(z)
    }

    /// Cross-entropy loss of one example and its gradient with respect to the
    /// weights, laid out like the weight matrix.
    pub fn ce_loss_and_grad(&self, feature: &[f64], label: Label) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.weights.len()];
        let loss = self.accumulate_ce_grad(feature, label, 1.0, &mut grad)?;
        Ok((loss, grad))
    }

    fn accumulate_ce_grad(
        &self,
        feature: &[f64],
        label: Label,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        let target = self.index_of(label).ok_or(Error::UnknownClass(label))?;
        let probs = self.logits_softmax(feature)?;
        let loss = -probs[target].ln();
        for (k, (p, row)) in probs
            .iter()
            .zip(grad.chunks_exact_mut(self.dim))
            .enumerate()
        {
            let coeff = scale * (p - if k == target { 1.0 } else { 0.0 });
            for (g, x) in row.iter_mut().zip(feature) {
                *g += coeff * x;
            }
        }
        Ok(loss)
    }

    /// One SGD step on `mean(real CE) + beta * mean(pseudo CE)` with coupled
    /// L2 weight decay.
    pub fn sgd_batch_step(
        &mut self,
        real: &[Example<'_>],
        pseudo: &[Example<'_>],
        cfg: &OptimizerConfig,
    ) -> Result<StepOutcome> {
        if real.is_empty() {
            return Ok(StepOutcome::SkippedEmpty);
        }
        let mut grad = vec![0.0; self.weights.len()];
        let real_scale = 1.0 / real.len() as f64;
        let mut real_loss = 0.0;
        for &(feature, label) in real {
            real_loss += self.accumulate_ce_grad(feature, label, real_scale, &mut grad)?;
        }
        if !pseudo.is_empty() && cfg.beta != 0.0 {
            let pseudo_scale = cfg.beta / pseudo.len() as f64;
            for &(feature, label) in pseudo {
                self.accumulate_ce_grad(feature, label, pseudo_scale, &mut grad)?;
            }
        }
        let lr = cfg.learning_rate;
        let wd = cfg.weight_decay;
        for (w, g) in self.weights.iter_mut().zip(&grad) {
            *w -= lr * (g + wd * *w);
        }
        if let Some(index) = self.weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(StepOutcome::Updated {
            real_loss: real_loss * real_scale,
        })
    }

    /// `softmax(logits) + tau`, argmax with ties resolved to the lowest index.
    /// Without `tau` this is plain softmax prediction.
    pub fn predict(
        &self,
        feature: &[f64],
        tau: Option<&ImportanceVector>,
    ) -> Result<(Label, Vec<f64>)> {
        let mut scores = self.logits_softmax(feature)?;
        if let Some(tau) = tau {
            check_dim(scores.len(), tau.values.len())?;
            if tau.labels != self.labels {
                return Err(Error::invalid_argument(
                    "importance vector is not aligned with classifier rows",
                ));
            }
            for (s, t) in scores.iter_mut().zip(&tau.values) {
                *s += t;
            }
        }
        let best = argmax(&scores);
        Ok((self.labels[best], scores))
    }
}

pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// First index of the maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
