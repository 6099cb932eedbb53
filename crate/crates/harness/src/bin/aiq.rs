use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aiq_core::idx::{load_emnist_digits, load_mnist};
use aiq_core::nn::checkpoint::{load_checkpoint, save_checkpoint};
use aiq_core::state_space::{profile_network, Profile};
use aiq_core::{DatasetTag, Family, Modifier, NetworkSpec, ProfileConfig};
use aiq_harness::plan::cell_id;
use aiq_harness::report::load_records;
use aiq_harness::runner::{run_cell, run_experiment};
use aiq_harness::{
    emit_report, Cell, CellStore, DataContext, Experiment, ExperimentPlan, HarnessError,
    ReportFormat, Result, RunRecord,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "aiq", version, about = "Train LeNet networks and measure layer-state efficiency and aIQ")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and profile a single architecture.
    Train(RunArgs),
    /// Train every architecture of a layer-size grid.
    Grid(RunArgs),
    /// Train on partially randomized labels and score on clean labels.
    Memorize(RunArgs),
    /// Train on MNIST and score on EMNIST digits.
    Generalize(RunArgs),
    /// Compute efficiency metrics for a saved checkpoint.
    Profile(ProfileArgs),
    /// Summarize the records of earlier runs.
    Report(ReportArgs),
}

#[derive(Args, Clone)]
struct RunArgs {
    /// JSON experiment plan; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    family: Option<Family>,
    /// Layer sizes of one architecture, e.g. `11,4`. Repeat for several.
    #[arg(long, value_parser = parse_sizes)]
    sizes: Vec<Vec<usize>>,
    /// Per-layer values whose cartesian product forms the grid.
    #[arg(long, value_delimiter = ',')]
    grid_values: Vec<usize>,
    /// Repeat or comma-separate for several.
    #[arg(long, value_delimiter = ',')]
    modifier: Vec<Modifier>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    fractions: Vec<f64>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    emnist_dir: Option<PathBuf>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    train_limit: Option<usize>,
    #[arg(long)]
    test_limit: Option<usize>,
    /// Rows per top-k table.
    #[arg(long, default_value_t = 5)]
    top_k: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetChoice {
    Train,
    Test,
    Emnist,
}

#[derive(Args)]
struct ProfileArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    dataset: DatasetChoice,
    #[arg(long, default_value = "data/mnist")]
    data_dir: PathBuf,
    #[arg(long)]
    emnist_dir: Option<PathBuf>,
    #[arg(long, default_value_t = aiq_core::state_space::DEFAULT_BETA)]
    beta: f64,
    #[arg(long, default_value_t = aiq_core::state_space::DEFAULT_CONV_STATE_CAP)]
    conv_state_cap: usize,
    #[arg(long, default_value = "profile")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Output directory of an earlier run.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    family: Option<Family>,
    #[arg(long, value_parser = parse_size_filter)]
    sizes: Option<SizeFilter>,
    #[arg(long)]
    modifier: Option<Modifier>,
    #[arg(long)]
    experiment: Option<Experiment>,
    #[arg(long, default_value_t = 5)]
    top_k: usize,
}

/// Layer sizes given as a single report filter.
#[derive(Clone)]
struct SizeFilter(Vec<usize>);

fn parse_size_filter(s: &str) -> std::result::Result<SizeFilter, String> {
    parse_sizes(s).map(SizeFilter)
}

fn parse_sizes(s: &str) -> std::result::Result<Vec<usize>, String> {
    s.split([',', 'x', '-'])
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("'{p}': {e}")))
        .collect()
}

impl RunArgs {
    fn plan(&self) -> Result<ExperimentPlan> {
        let mut plan = match &self.config {
            Some(path) => ExperimentPlan::from_json_file(path)?,
            None => ExperimentPlan::default(),
        };
        if let Some(f) = self.family {
            plan.family = f;
        }
        if !self.sizes.is_empty() {
            plan.layer_size_grid = self.sizes.clone();
        } else if !self.grid_values.is_empty() {
            plan.layer_size_grid = aiq_harness::plan::power_grid(plan.family, &self.grid_values);
        }
        if !self.modifier.is_empty() {
            plan.modifiers = self.modifier.clone();
        }
        if let Some(b) = self.beta {
            plan.beta = b;
        }
        if let Some(r) = self.replicates {
            plan.replicates = r;
        }
        if let Some(s) = self.seed {
            plan.seed = s;
        }
        if !self.fractions.is_empty() {
            plan.randomization_fractions = self.fractions.clone();
        }
        if let Some(d) = &self.data_dir {
            plan.datasets.mnist = d.clone();
        }
        if let Some(d) = &self.emnist_dir {
            plan.datasets.emnist = Some(d.clone());
        }
        if let Some(w) = self.workers {
            plan.workers = w;
        }
        if let Some(m) = self.max_epochs {
            plan.train_config.max_epochs = m;
        }
        if self.train_limit.is_some() {
            plan.train_limit = self.train_limit;
        }
        if self.test_limit.is_some() {
            plan.test_limit = self.test_limit;
        }
        plan.validate()?;
        Ok(plan)
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn write_histograms(dir: &Path, prefix: &str, profile: &Profile) -> Result<()> {
    fs::create_dir_all(dir)?;
    for h in &profile.histograms {
        let file = fs::File::create(dir.join(format!("{prefix}_layer{}.csv", h.layer_id)))?;
        h.write_csv(std::io::BufWriter::new(file))?;
    }
    Ok(())
}

fn print_record(r: &RunRecord) {
    match (&r.test, &r.error) {
        (Some(t), _) => eprintln!(
            "{:<48} epochs {:>3}  test acc {:6.2}%  eta_N {:.4}  aIQ {:6.2}",
            r.cell_id,
            r.epochs_trained,
            t.accuracy * 100.0,
            t.eta_n,
            t.aiq_x100
        ),
        (None, Some(e)) => eprintln!("{:<48} FAILED: {e}", r.cell_id),
        (None, None) => eprintln!("{:<48} no result", r.cell_id),
    }
}

fn cmd_train(args: &RunArgs) -> Result<()> {
    let plan = args.plan()?;
    let grid = plan.grid();
    let [sizes] = grid.as_slice() else {
        return Err(HarnessError::Config("train takes exactly one --sizes tuple".into()));
    };
    let [modifier] = plan.modifiers.as_slice() else {
        return Err(HarnessError::Config("train takes exactly one --modifier".into()));
    };
    let fraction = plan.randomization_fractions.first().copied().unwrap_or(0.0);
    let spec = NetworkSpec::new(plan.family, sizes, *modifier)
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let experiment = if fraction > 0.0 {
        Experiment::Memorize
    } else {
        Experiment::Grid
    };
    let id = cell_id(experiment, &spec, fraction, 0);
    let cell = Cell {
        seed: aiq_harness::plan::derive_seed(plan.seed, &id),
        id,
        experiment,
        spec,
        replicate: 0,
        fraction,
    };
    let data = DataContext::load(&plan)?;
    let (record, outcome) = run_cell(&plan, &data, &cell);
    print_record(&record);
    fs::create_dir_all(&args.out)?;
    write_json(&args.out.join("record.json"), &record)?;
    let Some(outcome) = outcome else {
        let code = record.error_code.unwrap_or(1);
        return Err(match code {
            2 => HarnessError::Data(record.error.unwrap_or_default()),
            3 => HarnessError::Numerical(record.error.unwrap_or_default()),
            _ => HarnessError::Config(record.error.unwrap_or_default()),
        });
    };
    save_checkpoint(&outcome.model, &args.out.join("checkpoint.json"))?;
    write_json(&args.out.join("report_train.json"), &outcome.train.report)?;
    write_json(&args.out.join("report_test.json"), &outcome.test.report)?;
    write_histograms(&args.out.join("histograms"), "test", &outcome.test)?;
    println!("{}", serde_json::to_string_pretty(&outcome.test.report)?);
    Ok(())
}

fn cmd_experiment(args: &RunArgs, experiment: Experiment) -> Result<()> {
    let plan = args.plan()?;
    let data = DataContext::load(&plan)?;
    fs::create_dir_all(&args.out)?;
    write_json(&args.out.join("plan.json"), &plan)?;
    let store = CellStore::open(&args.out)?;
    let records = run_experiment(&plan, &data, experiment, Some(&store), print_record)?;
    let files = emit_report(&records, &args.out, ReportFormat::Both, args.top_k)?;
    for f in &files.files {
        eprintln!("wrote {}", f.display());
    }
    let failed: Vec<&RunRecord> = records.iter().filter(|r| !r.is_ok()).collect();
    if let Some(first) = failed.first() {
        eprintln!("{} of {} cells failed", failed.len(), records.len());
        let msg = first.error.clone().unwrap_or_default();
        return Err(match first.error_code {
            Some(2) => HarnessError::Data(msg),
            Some(3) => HarnessError::Numerical(msg),
            _ => HarnessError::Config(msg),
        });
    }
    Ok(())
}

fn cmd_profile(args: &ProfileArgs) -> Result<()> {
    let model = load_checkpoint(&args.checkpoint)?;
    let (dataset, tag) = match args.dataset {
        DatasetChoice::Train => (load_mnist(&args.data_dir)?.0, DatasetTag::Train),
        DatasetChoice::Test => (load_mnist(&args.data_dir)?.1, DatasetTag::Test),
        DatasetChoice::Emnist => {
            let dir = args
                .emnist_dir
                .as_ref()
                .ok_or_else(|| HarnessError::Config("--emnist-dir is required".into()))?;
            let ds = load_emnist_digits(dir)?
                .ok_or_else(|| HarnessError::Data(format!("no EMNIST digits in {}", dir.display())))?;
            (ds, DatasetTag::External)
        }
    };
    let config = ProfileConfig {
        beta: args.beta,
        conv_state_cap: args.conv_state_cap,
        dataset_tag: tag,
    };
    let profile = profile_network(&model.network, &dataset, &config)?;
    fs::create_dir_all(&args.out)?;
    write_json(&args.out.join("report.json"), &profile.report)?;
    write_histograms(&args.out.join("histograms"), "layer_states", &profile)?;
    println!("{}", serde_json::to_string_pretty(&profile.report)?);
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    let records: Vec<RunRecord> = load_records(&args.input)?
        .into_iter()
        .filter(|r| args.family.is_none_or(|f| r.family == f))
        .filter(|r| args.modifier.is_none_or(|m| r.modifier == m))
        .filter(|r| args.experiment.is_none_or(|e| r.experiment == e))
        .filter(|r| args.sizes.as_ref().is_none_or(|s| r.layer_sizes == s.0))
        .collect();
    let out = args.out.clone().unwrap_or_else(|| args.input.join("report"));
    let files = emit_report(&records, &out, ReportFormat::Both, args.top_k)?;
    for f in &files.files {
        eprintln!("wrote {}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Grid(a) => cmd_experiment(a, Experiment::Grid),
        Command::Memorize(a) => cmd_experiment(a, Experiment::Memorize),
        Command::Generalize(a) => cmd_experiment(a, Experiment::Generalize),
        Command::Profile(a) => cmd_profile(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
