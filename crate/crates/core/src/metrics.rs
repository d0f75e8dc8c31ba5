//! Continual-learning accuracy metrics and report serialization.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::classifier::LinearHead;
use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::isay::{self, DistanceKernel};
use crate::protocol::RunConfig;
use crate::stats::StatisticsStore;
use crate::Label;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointAccuracy {
    pub checkpoint: usize,
    pub seen_classes: usize,
    /// Percent in `[0, 100]`.
    pub accuracy: f64,
}

/// Mean real-sample training loss over one pass of one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassLoss {
    pub session: usize,
    pub epoch: usize,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub session_accuracies: Vec<CheckpointAccuracy>,
    pub last_accuracy: f64,
    pub average_accuracy: f64,
    pub config: RunConfig,
    pub seed: u64,
    #[serde(default)]
    pub training_loss: Vec<PassLoss>,
}

impl RunReport {
    /// A report with no checkpoints yet, used while a run is in flight.
    pub fn empty(config: RunConfig) -> Self {
        let seed = config.seed;
        Self {
            session_accuracies: Vec::new(),
            last_accuracy: 0.0,
            average_accuracy: 0.0,
            config,
            seed,
            training_loss: Vec::new(),
        }
    }

    pub fn push_checkpoint(&mut self, acc: CheckpointAccuracy) {
        self.session_accuracies.push(acc);
        let (last, average) =
            finalize_report(&self.session_accuracies).expect("at least one checkpoint");
        self.last_accuracy = last;
        self.average_accuracy = average;
    }

    /// Plot-ready CSV: a `#` line echoing seed and config, then
    /// `checkpoint,seen_classes,accuracy`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let echo = serde_json::json!({ "seed": self.seed, "config": self.config });
        writeln!(w, "# {echo}")?;
        writeln!(w, "checkpoint,seen_classes,accuracy")?;
        for c in &self.session_accuracies {
            writeln!(w, "{},{},{}", c.checkpoint, c.seen_classes, c.accuracy)?;
        }
        Ok(())
    }

    /// Summary JSON with the accuracies, seed, and config echo.
    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// `(last, average)` over the checkpoint accuracies.
pub fn finalize_report(checkpoints: &[CheckpointAccuracy]) -> Result<(f64, f64)> {
    let last = checkpoints
        .last()
        .ok_or_else(|| Error::UndefinedMetric("no checkpoints recorded".into()))?;
    let average =
        checkpoints.iter().map(|c| c.accuracy).sum::<f64>() / checkpoints.len() as f64;
    Ok((last.accuracy, average))
}

/// Accuracy in percent over the test samples whose label is in `seen`.
///
/// With `kernel` set the importance vector of every sample is added to the
/// softmax scores; without it prediction is plain softmax argmax.
pub fn evaluate_checkpoint(
    head: &LinearHead,
    store: &StatisticsStore,
    test: &Dataset,
    seen: &[Label],
    kernel: Option<&dyn DistanceKernel>,
) -> Result<f64> {
    let significance = match kernel {
        Some(_) => Some(isay::significance_matrix(store)?),
        None => None,
    };
    let mut total = 0usize;
    let mut correct = 0usize;
    for (feature, label) in test.iter() {
        if seen.binary_search(&label).is_err() {
            continue;
        }
        total += 1;
        let tau = match (kernel, &significance) {
            (Some(k), Some(u)) => Some(isay::importance_for(feature, store, u, k)?),
            _ => None,
        };
        let (predicted, _) = head.predict(feature, tau.as_ref())?;
        if predicted == label {
            correct += 1;
        }
    }
    if total == 0 {
        return Err(Error::UndefinedMetric(
            "test set has no samples of the seen classes".into(),
        ));
    }
    Ok(100.0 * correct as f64 / total as f64)
}
