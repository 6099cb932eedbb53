//! Experiment plans and their expansion into independently runnable cells.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use aiq_core::state_space::DEFAULT_BETA;
use aiq_core::{Family, Modifier, NetworkSpec, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// Per-layer sizes used when no grid is given.
pub const DEFAULT_GRID_VALUES: [usize; 5] = [2, 4, 8, 16, 32];
pub const DEFAULT_REPLICATES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Grid,
    Memorize,
    Generalize,
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Experiment::Grid => "grid",
            Experiment::Memorize => "memorize",
            Experiment::Generalize => "generalize",
        })
    }
}

impl FromStr for Experiment {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid" => Ok(Experiment::Grid),
            "memorize" => Ok(Experiment::Memorize),
            "generalize" => Ok(Experiment::Generalize),
            other => Err(HarnessError::Config(format!("unknown experiment '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetPaths {
    /// Directory holding the four MNIST IDX files.
    pub mnist: PathBuf,
    /// Directory holding EMNIST digits IDX files, if available.
    pub emnist: Option<PathBuf>,
}

impl Default for DatasetPaths {
    fn default() -> Self {
        Self {
            mnist: PathBuf::from("data/mnist"),
            emnist: None,
        }
    }
}

/// Everything needed to enumerate and run a set of training cells.
///
/// Loaded from JSON; every field is optional and falls back to
/// [`ExperimentPlan::default`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentPlan {
    pub family: Family,
    /// Explicit per-layer size tuples. Empty means the cartesian product of
    /// [`DEFAULT_GRID_VALUES`] over the family's hidden layers.
    pub layer_size_grid: Vec<Vec<usize>>,
    pub modifiers: Vec<Modifier>,
    pub replicates: usize,
    pub randomization_fractions: Vec<f64>,
    pub datasets: DatasetPaths,
    pub beta: f64,
    pub train_config: TrainConfig,
    /// Root of every derived seed.
    pub seed: u64,
    pub workers: usize,
    /// Use only the first `n` training examples.
    pub train_limit: Option<usize>,
    /// Use only the first `n` test examples.
    pub test_limit: Option<usize>,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            family: Family::LeNet300100,
            layer_size_grid: Vec::new(),
            modifiers: vec![Modifier::None],
            replicates: DEFAULT_REPLICATES,
            randomization_fractions: vec![0.0],
            datasets: DatasetPaths::default(),
            beta: DEFAULT_BETA,
            train_config: TrainConfig::default(),
            seed: 0,
            workers: 1,
            train_limit: None,
            test_limit: None,
        }
    }
}

/// Cartesian product of `values` over every hidden layer of `family`.
pub fn power_grid(family: Family, values: &[usize]) -> Vec<Vec<usize>> {
    let mut grid: Vec<Vec<usize>> = vec![Vec::new()];
    for _ in 0..family.hidden_layers() {
        grid = grid
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |&v| {
                    let mut t = prefix.clone();
                    t.push(v);
                    t
                })
            })
            .collect();
    }
    grid
}

/// One trainable unit of work.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub id: String,
    pub experiment: Experiment,
    pub spec: NetworkSpec,
    pub replicate: usize,
    pub fraction: f64,
    pub seed: u64,
}

impl Cell {
    /// Seed for the label randomization of this cell.
    pub fn label_seed(&self) -> u64 {
        splitmix64(self.seed ^ 0x6c61_6265_6c73)
    }

    /// File-system friendly form of the id.
    pub fn file_stem(&self) -> String {
        self.id.replace('/', "__")
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for a cell, a pure function of the plan seed and the cell id.
pub fn derive_seed(plan_seed: u64, cell_id: &str) -> u64 {
    splitmix64(plan_seed ^ splitmix64(fnv1a(cell_id.as_bytes())))
}

pub fn cell_id(
    experiment: Experiment,
    spec: &NetworkSpec,
    fraction: f64,
    replicate: usize,
) -> String {
    format!(
        "{experiment}/{}/{}/{}/f{:.4}/r{replicate:02}",
        spec.family,
        spec.sizes_label(),
        spec.modifier,
        fraction
    )
}

impl ExperimentPlan {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }

    /// The explicit grid, or the default power-of-two grid.
    pub fn grid(&self) -> Vec<Vec<usize>> {
        if self.layer_size_grid.is_empty() {
            power_grid(self.family, &DEFAULT_GRID_VALUES)
        } else {
            self.layer_size_grid.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates < 1 {
            return Err(HarnessError::Config("replicates must be at least 1".into()));
        }
        if self.modifiers.is_empty() {
            return Err(HarnessError::Config("no modifiers selected".into()));
        }
        if self.workers < 1 {
            return Err(HarnessError::Config("workers must be at least 1".into()));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(HarnessError::Config(format!("beta must be positive, got {}", self.beta)));
        }
        if let Some(f) = self
            .randomization_fractions
            .iter()
            .find(|f| !(0.0..=1.0).contains(*f))
        {
            return Err(HarnessError::Config(format!("fraction {f} outside [0,1]")));
        }
        if self.train_limit == Some(0) || self.test_limit == Some(0) {
            return Err(HarnessError::Config("dataset limits must be positive".into()));
        }
        for sizes in self.grid() {
            NetworkSpec::new(self.family, &sizes, Modifier::None)
                .map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        self.train_config
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }

    /// Expands the plan into cells for `experiment`, ordered by id.
    ///
    /// Grid runs ignore the randomization fractions and train on clean
    /// labels.
    pub fn cells(&self, experiment: Experiment) -> Result<Vec<Cell>> {
        self.validate()?;
        let fractions = match experiment {
            Experiment::Grid => vec![0.0],
            _ if self.randomization_fractions.is_empty() => {
                return Err(HarnessError::Config("no randomization fractions given".into()))
            }
            _ => self.randomization_fractions.clone(),
        };
        let mut cells = Vec::new();
        for sizes in self.grid() {
            for &modifier in &self.modifiers {
                let spec = NetworkSpec::new(self.family, &sizes, modifier)?;
                for &fraction in &fractions {
                    for replicate in 0..self.replicates {
                        let id = cell_id(experiment, &spec, fraction, replicate);
                        cells.push(Cell {
                            seed: derive_seed(self.seed, &id),
                            id,
                            experiment,
                            spec: spec.clone(),
                            replicate,
                            fraction,
                        });
                    }
                }
            }
        }
        cells.sort_by(|a, b| a.id.cmp(&b.id));
        cells.dedup_by(|a, b| a.id == b.id);
        Ok(cells)
    }
}
