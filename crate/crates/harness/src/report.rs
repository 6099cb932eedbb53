//! CSV/JSON emission, replicate summaries and top-k tables.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use aiq_core::{EfficiencyReport, Family, Modifier};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::statistics::Statistics;

use crate::error::{HarnessError, Result};
use crate::plan::Experiment;
use crate::record::{RunRecord, RunStatus};

/// Flat CSV row; column order is the field order.
#[derive(Debug, Serialize)]
struct CsvRow<'a> {
    cell_id: &'a str,
    experiment: Experiment,
    family: Family,
    layer_sizes: String,
    modifier: Modifier,
    replicate: usize,
    seed: u64,
    fraction_randomized: f64,
    status: RunStatus,
    epochs_trained: usize,
    best_epoch: usize,
    fit_accuracy_best: f64,
    fit_accuracy_final: f64,
    parameter_count: usize,
    beta: f64,
    train_accuracy: Option<f64>,
    train_eta_layers: String,
    train_eta_n: Option<f64>,
    train_aiq: Option<f64>,
    test_accuracy: Option<f64>,
    test_eta_layers: String,
    test_distinct_states: String,
    test_eta_n: Option<f64>,
    test_aiq: Option<f64>,
    test_aiq_x100: Option<f64>,
    external_accuracy: Option<f64>,
    external_eta_n: Option<f64>,
    external_aiq: Option<f64>,
    error: &'a str,
}

fn joined<T: ToString>(items: impl IntoIterator<Item = T>) -> String {
    items
        .into_iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

fn etas(report: Option<&EfficiencyReport>) -> String {
    report.map_or_else(String::new, |r| joined(r.layer_etas()))
}

impl<'a> CsvRow<'a> {
    fn new(r: &'a RunRecord) -> Self {
        let (train, test, ext) = (r.train.as_ref(), r.test.as_ref(), r.external.as_ref());
        Self {
            cell_id: &r.cell_id,
            experiment: r.experiment,
            family: r.family,
            layer_sizes: r.sizes_label(),
            modifier: r.modifier,
            replicate: r.replicate,
            seed: r.seed,
            fraction_randomized: r.fraction_randomized,
            status: r.status,
            epochs_trained: r.epochs_trained,
            best_epoch: r.best_epoch,
            fit_accuracy_best: r.fit_accuracy_best,
            fit_accuracy_final: r.fit_accuracy_final,
            parameter_count: r.parameter_count,
            beta: r.beta,
            train_accuracy: train.map(|t| t.accuracy),
            train_eta_layers: etas(train),
            train_eta_n: train.map(|t| t.eta_n),
            train_aiq: train.map(|t| t.aiq),
            test_accuracy: test.map(|t| t.accuracy),
            test_eta_layers: etas(test),
            test_distinct_states: test.map_or_else(String::new, |t| {
                joined(t.layers.iter().map(|l| l.distinct_states))
            }),
            test_eta_n: test.map(|t| t.eta_n),
            test_aiq: test.map(|t| t.aiq),
            test_aiq_x100: test.map(|t| t.aiq_x100),
            external_accuracy: ext.map(|t| t.accuracy),
            external_eta_n: ext.map(|t| t.eta_n),
            external_aiq: ext.map(|t| t.aiq),
            error: r.error.as_deref().unwrap_or(""),
        }
    }
}

/// Writes one row per record. Wall time is left out so that reruns with
/// the same seeds produce identical bytes.
pub fn write_records_csv<W: std::io::Write>(records: &[RunRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(CsvRow::new(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn records_csv_string(records: &[RunRecord]) -> Result<String> {
    let mut buf = Vec::new();
    write_records_csv(records, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

/// Two-sided 95% Student-t critical value with `df` degrees of freedom.
pub fn t_critical_95(df: u64) -> f64 {
    StudentsT::new(0.0, 1.0, df as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975)
}

/// Sample mean with a 95% t-interval half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    /// Absent for fewer than two samples.
    pub ci95: Option<f64>,
    pub n: usize,
}

impl MeanCi {
    pub fn from_samples(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len();
        let mean = xs.mean();
        let ci95 = (n >= 2).then(|| t_critical_95(n as u64 - 1) * xs.std_dev() / (n as f64).sqrt());
        Some(Self { mean, ci95, n })
    }
}

/// Replicates of one architecture grouped together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub experiment: Experiment,
    pub family: Family,
    pub layer_sizes: String,
    pub modifier: Modifier,
    pub fraction_randomized: f64,
    pub runs: usize,
    pub failed: usize,
    pub parameter_count: usize,
    pub test_accuracy: Option<MeanCi>,
    pub test_aiq_x100: Option<MeanCi>,
    pub test_eta_n: Option<MeanCi>,
    pub test_layer_eta: Vec<MeanCi>,
    pub train_accuracy: Option<MeanCi>,
    pub train_aiq_x100: Option<MeanCi>,
    pub external_accuracy: Option<MeanCi>,
}

type GroupKey = (Experiment, Family, Vec<usize>, Modifier, u64);

pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<GroupKey, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        let key = (
            r.experiment,
            r.family,
            r.layer_sizes.clone(),
            r.modifier,
            r.fraction_randomized.to_bits(),
        );
        groups.entry(key).or_default().push(r);
    }
    groups
        .into_values()
        .map(|rs| {
            let ok: Vec<&RunRecord> = rs.iter().copied().filter(|r| r.is_ok()).collect();
            let stat = |f: &dyn Fn(&RunRecord) -> Option<f64>| {
                let xs: Vec<f64> = ok.iter().filter_map(|r| f(r)).collect();
                MeanCi::from_samples(&xs)
            };
            let layers = ok
                .first()
                .and_then(|r| r.test.as_ref())
                .map_or(0, |t| t.layers.len());
            let first = rs[0];
            SummaryRow {
                experiment: first.experiment,
                family: first.family,
                layer_sizes: first.sizes_label(),
                modifier: first.modifier,
                fraction_randomized: first.fraction_randomized,
                runs: rs.len(),
                failed: rs.len() - ok.len(),
                parameter_count: ok.first().map_or(0, |r| r.parameter_count),
                test_accuracy: stat(&|r| r.test_accuracy()),
                test_aiq_x100: stat(&|r| r.test.as_ref().map(|t| t.aiq_x100)),
                test_eta_n: stat(&|r| r.test_eta_n()),
                test_layer_eta: (0..layers)
                    .filter_map(|l| {
                        stat(&|r| r.test.as_ref().and_then(|t| t.layers.get(l)).map(|x| x.eta))
                    })
                    .collect(),
                train_accuracy: stat(&|r| r.train.as_ref().map(|t| t.accuracy)),
                train_aiq_x100: stat(&|r| r.train.as_ref().map(|t| t.aiq_x100)),
                external_accuracy: stat(&|r| r.external_accuracy()),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankBy {
    Accuracy,
    Aiq,
}

/// Best `k` summary rows per (experiment, family), by mean test accuracy
/// or mean test aIQ. Ties keep summary order.
pub fn top_k(summary: &[SummaryRow], k: usize, by: RankBy) -> Vec<SummaryRow> {
    let key = |s: &SummaryRow| match by {
        RankBy::Accuracy => s.test_accuracy.map(|m| m.mean),
        RankBy::Aiq => s.test_aiq_x100.map(|m| m.mean),
    };
    let mut groups: BTreeMap<(Experiment, Family), Vec<&SummaryRow>> = BTreeMap::new();
    for s in summary.iter().filter(|s| key(s).is_some()) {
        groups.entry((s.experiment, s.family)).or_default().push(s);
    }
    groups
        .into_values()
        .flat_map(|mut rows| {
            rows.sort_by(|a, b| key(b).partial_cmp(&key(a)).expect("finite metric"));
            rows.into_iter().take(k).cloned()
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct TableRow {
    rank: usize,
    experiment: Experiment,
    family: Family,
    layer_sizes: String,
    modifier: Modifier,
    fraction_randomized: f64,
    runs: usize,
    parameter_count: usize,
    accuracy_pct: Option<f64>,
    accuracy_ci95: Option<f64>,
    aiq_x100: Option<f64>,
    aiq_ci95: Option<f64>,
    eta_n: Option<f64>,
    eta_n_ci95: Option<f64>,
    layer_eta: String,
}

fn table_rows(rows: &[SummaryRow]) -> Vec<TableRow> {
    let mut rank = 0;
    let mut prev = None;
    rows.iter()
        .map(|s| {
            let group = (s.experiment, s.family);
            rank = if prev == Some(group) { rank + 1 } else { 1 };
            prev = Some(group);
            TableRow {
                rank,
                experiment: s.experiment,
                family: s.family,
                layer_sizes: s.layer_sizes.clone(),
                modifier: s.modifier,
                fraction_randomized: s.fraction_randomized,
                runs: s.runs,
                parameter_count: s.parameter_count,
                accuracy_pct: s.test_accuracy.map(|m| m.mean * 100.0),
                accuracy_ci95: s.test_accuracy.and_then(|m| m.ci95).map(|c| c * 100.0),
                aiq_x100: s.test_aiq_x100.map(|m| m.mean),
                aiq_ci95: s.test_aiq_x100.and_then(|m| m.ci95),
                eta_n: s.test_eta_n.map(|m| m.mean),
                eta_n_ci95: s.test_eta_n.and_then(|m| m.ci95),
                layer_eta: joined(s.test_layer_eta.iter().map(|m| m.mean)),
            }
        })
        .collect()
}

fn write_table(path: &Path, rows: &[TableRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Both,
}

impl ReportFormat {
    fn csv(self) -> bool {
        matches!(self, ReportFormat::Csv | ReportFormat::Both)
    }

    fn json(self) -> bool {
        matches!(self, ReportFormat::Json | ReportFormat::Both)
    }
}

/// Paths written by [`emit_report`].
#[derive(Debug, Clone, Default)]
pub struct ReportFiles {
    pub files: Vec<PathBuf>,
}

/// Writes records, the replicate summary and top-k tables into `out_dir`.
pub fn emit_report(
    records: &[RunRecord],
    out_dir: &Path,
    format: ReportFormat,
    k: usize,
) -> Result<ReportFiles> {
    if records.is_empty() {
        return Err(HarnessError::EmptyReport);
    }
    fs::create_dir_all(out_dir)?;
    let mut sorted = records.to_vec();
    sorted.sort_by(|a, b| a.cell_id.cmp(&b.cell_id));
    let summary = summarize(&sorted);
    let by_acc = table_rows(&top_k(&summary, k, RankBy::Accuracy));
    let by_aiq = table_rows(&top_k(&summary, k, RankBy::Aiq));

    let mut files = ReportFiles::default();
    let mut put = |name: &str, write: &dyn Fn(&Path) -> Result<()>| -> Result<()> {
        let path = out_dir.join(name);
        write(&path)?;
        files.files.push(path);
        Ok(())
    };
    if format.csv() {
        put("records.csv", &|p| write_records_csv(&sorted, fs::File::create(p)?))?;
        put("summary.csv", &|p| write_table(p, &table_rows(&summary)))?;
        put("top_accuracy.csv", &|p| write_table(p, &by_acc))?;
        put("top_aiq.csv", &|p| write_table(p, &by_aiq))?;
    }
    if format.json() {
        let json = |p: &Path, v: &dyn erased::Json| -> Result<()> {
            fs::write(p, v.to_pretty()?)?;
            Ok(())
        };
        put("records.json", &|p| json(p, &sorted))?;
        put("summary.json", &|p| json(p, &summary))?;
    }
    Ok(files)
}

mod erased {
    use serde::Serialize;

    pub trait Json {
        fn to_pretty(&self) -> serde_json::Result<String>;
    }

    impl<T: Serialize> Json for T {
        fn to_pretty(&self) -> serde_json::Result<String> {
            serde_json::to_string_pretty(self)
        }
    }
}

/// Records from a previous run: `records.json` if present, otherwise the
/// per-cell store.
pub fn load_records(dir: &Path) -> Result<Vec<RunRecord>> {
    let json = dir.join("records.json");
    if json.is_file() {
        return Ok(serde_json::from_slice(&fs::read(json)?)?);
    }
    let cells = dir.join("cells");
    if cells.is_dir() {
        return crate::runner::CellStore::open(dir)?.load_all();
    }
    Err(HarnessError::Data(format!(
        "{} holds neither records.json nor a cells/ directory",
        dir.display()
    )))
}
