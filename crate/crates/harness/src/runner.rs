//! Cell execution, the worker pool and on-disk resumability.

use std::borrow::Cow;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use aiq_core::idx::{load_emnist_digits, load_mnist, randomize_labels};
use aiq_core::nn::train::train;
use aiq_core::state_space::{profile_network, Profile};
use aiq_core::{DatasetTag, ImageDataset, LabelRandomizationSpec, ProfileConfig, TrainConfig, TrainedModel};
use rayon::prelude::*;

use crate::error::{HarnessError, Result};
use crate::plan::{Cell, Experiment, ExperimentPlan};
use crate::record::{RunRecord, RunStatus};

/// Datasets shared read-only by every worker.
#[derive(Debug, Clone)]
pub struct DataContext {
    pub train: ImageDataset,
    pub test: ImageDataset,
    pub external: Option<ImageDataset>,
}

impl DataContext {
    pub fn new(train: ImageDataset, test: ImageDataset, external: Option<ImageDataset>) -> Self {
        Self {
            train,
            test,
            external,
        }
    }

    /// Loads MNIST (and EMNIST digits when a directory is configured),
    /// truncated to the plan's limits.
    pub fn load(plan: &ExperimentPlan) -> Result<Self> {
        let (train, test) = load_mnist(&plan.datasets.mnist)
            .map_err(|e| HarnessError::Data(format!("{}: {e}", plan.datasets.mnist.display())))?;
        let external = match &plan.datasets.emnist {
            Some(dir) => load_emnist_digits(dir)
                .map_err(|e| HarnessError::Data(format!("{}: {e}", dir.display())))?,
            None => None,
        };
        Ok(Self::new(train, test, external).limited(plan))
    }

    pub fn limited(self, plan: &ExperimentPlan) -> Self {
        let cut = |d: ImageDataset, limit: Option<usize>| match limit {
            Some(n) if n < d.count() => d.head(n),
            _ => d,
        };
        Self {
            train: cut(self.train, plan.train_limit),
            test: cut(self.test, plan.test_limit),
            external: self.external,
        }
    }
}

/// A finished cell with everything produced along the way.
#[derive(Debug)]
pub struct CellOutcome {
    pub model: TrainedModel,
    pub train: Profile,
    pub test: Profile,
    pub external: Option<Profile>,
}

/// Trains and profiles one cell.
pub fn execute_cell(plan: &ExperimentPlan, data: &DataContext, cell: &Cell) -> Result<CellOutcome> {
    let external = match cell.experiment {
        Experiment::Generalize => Some(data.external.as_ref().ok_or_else(|| {
            HarnessError::Data("generalization needs EMNIST digits; none loaded".into())
        })?),
        _ => None,
    };
    let fit: Cow<'_, ImageDataset> = if cell.fraction > 0.0 {
        let spec = LabelRandomizationSpec::new(cell.fraction, cell.label_seed())?;
        Cow::Owned(randomize_labels(&data.train, &spec))
    } else {
        Cow::Borrowed(&data.train)
    };
    let config = TrainConfig {
        seed: cell.seed,
        ..plan.train_config.clone()
    };
    let model = train(&cell.spec, &fit, &config)?;
    drop(fit);

    let profile = |dataset: &ImageDataset, tag: DatasetTag| {
        let cfg = ProfileConfig {
            beta: plan.beta,
            ..ProfileConfig::new(tag)
        };
        profile_network(&model.network, dataset, &cfg)
    };
    let train = profile(&data.train, DatasetTag::Train)?;
    let test = profile(&data.test, DatasetTag::Test)?;
    let external = external
        .map(|d| profile(d, DatasetTag::External))
        .transpose()?;
    Ok(CellOutcome {
        model,
        train,
        test,
        external,
    })
}

fn blank_record(plan: &ExperimentPlan, cell: &Cell) -> RunRecord {
    RunRecord {
        cell_id: cell.id.clone(),
        experiment: cell.experiment,
        family: cell.spec.family,
        layer_sizes: cell.spec.layer_sizes.clone(),
        modifier: cell.spec.modifier,
        replicate: cell.replicate,
        seed: cell.seed,
        fraction_randomized: cell.fraction,
        status: RunStatus::Failed,
        error: None,
        error_code: None,
        epochs_trained: 0,
        best_epoch: 0,
        fit_accuracy_best: 0.0,
        fit_accuracy_final: 0.0,
        parameter_count: 0,
        beta: plan.beta,
        train: None,
        test: None,
        external: None,
        wall_time_secs: 0.0,
    }
}

/// Runs one cell and folds success or failure into a record.
pub fn run_cell(plan: &ExperimentPlan, data: &DataContext, cell: &Cell) -> (RunRecord, Option<CellOutcome>) {
    let start = Instant::now();
    let mut record = blank_record(plan, cell);
    let outcome = match execute_cell(plan, data, cell) {
        Ok(o) => {
            record.status = RunStatus::Ok;
            record.epochs_trained = o.model.epochs_trained;
            record.best_epoch = o.model.best_epoch;
            record.fit_accuracy_best = o.model.best_train_accuracy;
            record.fit_accuracy_final = o.model.final_train_accuracy;
            record.parameter_count = o.model.network.count_parameters();
            record.train = Some(o.train.report.clone());
            record.test = Some(o.test.report.clone());
            record.external = o.external.as_ref().map(|p| p.report.clone());
            Some(o)
        }
        Err(e) => {
            record.error = Some(e.to_string());
            record.error_code = Some(e.exit_code());
            None
        }
    };
    record.wall_time_secs = start.elapsed().as_secs_f64();
    (record, outcome)
}

/// Completed-cell store under `<out>/cells/`.
#[derive(Debug, Clone)]
pub struct CellStore {
    dir: PathBuf,
}

impl CellStore {
    pub fn open(out_dir: &Path) -> Result<Self> {
        let dir = out_dir.join("cells");
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    fn path(&self, cell: &Cell) -> PathBuf {
        self.dir.join(format!("{}.json", cell.file_stem()))
    }

    /// A previously completed record for `cell`, if one exists and matches.
    pub fn completed(&self, cell: &Cell) -> Option<RunRecord> {
        let bytes = fs::read(self.path(cell)).ok()?;
        let record: RunRecord = serde_json::from_slice(&bytes).ok()?;
        (record.is_ok() && record.cell_id == cell.id && record.seed == cell.seed).then_some(record)
    }

    pub fn save(&self, cell: &Cell, record: &RunRecord) -> Result<()> {
        let path = self.path(cell);
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(record)?)?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    /// Every stored record, ordered by cell id.
    pub fn load_all(&self) -> Result<Vec<RunRecord>> {
        let mut records = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") {
                records.push(serde_json::from_slice(&fs::read(&path)?)?);
            }
        }
        records.sort_by(|a: &RunRecord, b| a.cell_id.cmp(&b.cell_id));
        Ok(records)
    }
}

/// Runs `cells` on a pool of `plan.workers` threads.
///
/// With a store, completed cells are reused and every new record is
/// persisted as soon as it finishes. Failed cells are recorded and retried
/// on the next run. The result is ordered by cell id.
pub fn run_cells(
    plan: &ExperimentPlan,
    data: &DataContext,
    cells: &[Cell],
    store: Option<&CellStore>,
    mut on_record: impl FnMut(&RunRecord) + Send,
) -> Result<Vec<RunRecord>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.workers)
        .build()
        .map_err(|e| HarnessError::Config(format!("worker pool: {e}")))?;
    let sink = Mutex::new((Vec::with_capacity(cells.len()), None::<HarnessError>));
    let callback = Mutex::new(&mut on_record);
    pool.install(|| {
        cells.par_iter().for_each(|cell| {
            let record = match store.and_then(|s| s.completed(cell)) {
                Some(done) => done,
                None => {
                    let (record, _) = run_cell(plan, data, cell);
                    if let Some(s) = store {
                        if let Err(e) = s.save(cell, &record) {
                            sink.lock().expect("record sink").1.get_or_insert(e);
                        }
                    }
                    record
                }
            };
            (callback.lock().expect("progress callback"))(&record);
            sink.lock().expect("record sink").0.push(record);
        })
    });
    let (mut records, io_error) = sink.into_inner().expect("record sink");
    if let Some(e) = io_error {
        return Err(e);
    }
    records.sort_by(|a, b| a.cell_id.cmp(&b.cell_id));
    Ok(records)
}

pub fn run_experiment(
    plan: &ExperimentPlan,
    data: &DataContext,
    experiment: Experiment,
    store: Option<&CellStore>,
    on_record: impl FnMut(&RunRecord) + Send,
) -> Result<Vec<RunRecord>> {
    if experiment == Experiment::Generalize && data.external.is_none() {
        return Err(HarnessError::Data(
            "generalization needs EMNIST digits; none loaded".into(),
        ));
    }
    let cells = plan.cells(experiment)?;
    run_cells(plan, data, &cells, store, on_record)
}

/// Every (architecture, modifier, replicate) cell on clean labels.
pub fn run_grid(plan: &ExperimentPlan, data: &DataContext, store: Option<&CellStore>) -> Result<Vec<RunRecord>> {
    run_experiment(plan, data, Experiment::Grid, store, |_| {})
}

/// Every cell once per randomization fraction, scored on clean labels.
pub fn run_memorization(
    plan: &ExperimentPlan,
    data: &DataContext,
    store: Option<&CellStore>,
) -> Result<Vec<RunRecord>> {
    run_experiment(plan, data, Experiment::Memorize, store, |_| {})
}

/// Like [`run_memorization`], additionally scored on the external dataset.
pub fn run_generalization(
    plan: &ExperimentPlan,
    data: &DataContext,
    store: Option<&CellStore>,
) -> Result<Vec<RunRecord>> {
    run_experiment(plan, data, Experiment::Generalize, store, |_| {})
}
