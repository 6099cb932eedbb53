use aiq_core::{EfficiencyReport, Family, Modifier};
use serde::{Deserialize, Serialize};

use crate::error::FailureKind;
use crate::plan::Experiment;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

/// Result row for one trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub cell_id: String,
    pub experiment: Experiment,
    pub family: Family,
    pub layer_sizes: Vec<usize>,
    pub modifier: Modifier,
    pub replicate: usize,
    pub seed: u64,
    pub fraction_randomized: f64,
    pub status: RunStatus,
    pub error: Option<String>,
    /// Exit-code class of `error`.
    pub error_code: Option<i32>,
    pub epochs_trained: usize,
    pub best_epoch: usize,
    /// Accuracy against the labels the model was fit to, at the best epoch.
    pub fit_accuracy_best: f64,
    /// Same, at the last epoch run.
    pub fit_accuracy_final: f64,
    pub parameter_count: usize,
    pub beta: f64,
    /// Metrics on the clean training set.
    pub train: Option<EfficiencyReport>,
    pub test: Option<EfficiencyReport>,
    /// Metrics on an external dataset (generalization runs).
    pub external: Option<EfficiencyReport>,
    pub wall_time_secs: f64,
}

impl RunRecord {
    pub fn is_ok(&self) -> bool {
        self.status == RunStatus::Ok
    }

    pub fn sizes_label(&self) -> String {
        self.layer_sizes
            .iter()
            .map(|n| n.to_string())
            .collect::<Vec<_>>()
            .join("-")
    }

    pub fn test_accuracy(&self) -> Option<f64> {
        self.test.as_ref().map(|r| r.accuracy)
    }

    pub fn test_aiq(&self) -> Option<f64> {
        self.test.as_ref().map(|r| r.aiq)
    }

    pub fn test_eta_n(&self) -> Option<f64> {
        self.test.as_ref().map(|r| r.eta_n)
    }

    pub fn external_accuracy(&self) -> Option<f64> {
        self.external.as_ref().map(|r| r.accuracy)
    }

    pub fn failure_kind(&self) -> Option<FailureKind> {
        match self.error_code? {
            1 => Some(FailureKind::Config),
            2 => Some(FailureKind::Data),
            3 => Some(FailureKind::Numerical),
            _ => None,
        }
    }

    pub fn reports(&self) -> impl Iterator<Item = &EfficiencyReport> {
        [&self.train, &self.test, &self.external]
            .into_iter()
            .flatten()
    }
}
