//! Experiment orchestration on top of `aiq-core`: grids of LeNet
//! architectures with replicates, label-randomization and external-dataset
//! studies, and CSV/JSON reporting.

pub mod error;
pub mod plan;
pub mod record;
pub mod report;
pub mod runner;

pub use error::{FailureKind, HarnessError, Result};
pub use plan::{Cell, DatasetPaths, Experiment, ExperimentPlan};
pub use record::{RunRecord, RunStatus};
pub use report::{emit_report, summarize, top_k, MeanCi, RankBy, ReportFormat, SummaryRow};
pub use runner::{
    run_cells, run_experiment, run_generalization, run_grid, run_memorization, CellStore,
    DataContext,
};
