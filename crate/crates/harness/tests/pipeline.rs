mod support;

use std::fs;

use aiq_core::state_space::aiq;
use aiq_core::{Family, Modifier};
use aiq_harness::report::{load_records, records_csv_string};
use aiq_harness::runner::run_cells;
use aiq_harness::{
    emit_report, run_generalization, run_grid, run_memorization, summarize, CellStore,
    Experiment, ExperimentPlan, HarnessError, ReportFormat, RunStatus,
};
use support::synthetic_context;

fn tiny_plan() -> ExperimentPlan {
    let mut plan = ExperimentPlan {
        layer_size_grid: vec![vec![4, 2], vec![8, 4]],
        replicates: 2,
        ..ExperimentPlan::default()
    };
    plan.train_config.max_epochs = 3;
    plan
}

#[test]
fn grid_records_are_complete_and_consistent() {
    let data = synthetic_context(200, 80);
    let records = run_grid(&tiny_plan(), &data, None).unwrap();
    assert_eq!(records.len(), 4);
    for r in &records {
        assert_eq!(r.status, RunStatus::Ok, "{:?}", r.error);
        assert!(r.epochs_trained >= 1 && r.epochs_trained <= 3);
        for report in r.reports() {
            let again = aiq(report.accuracy, report.eta_n, report.beta).unwrap();
            assert!((again - report.aiq).abs() <= 1e-12);
            for l in &report.layers {
                assert!((0.0..=1.0).contains(&l.eta));
                assert!(l.distinct_states as u64 <= l.total_observations);
            }
        }
        assert_eq!(r.test.as_ref().unwrap().layers[0].total_observations, 80);
    }
    let ids: Vec<&str> = records.iter().map(|r| r.cell_id.as_str()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
}

#[test]
fn reruns_and_worker_counts_give_identical_csv() {
    let data = synthetic_context(150, 50);
    let plan = tiny_plan();
    let a = records_csv_string(&run_grid(&plan, &data, None).unwrap()).unwrap();
    let b = records_csv_string(&run_grid(&plan, &data, None).unwrap()).unwrap();
    assert_eq!(a, b);
    let parallel = ExperimentPlan { workers: 3, ..plan };
    let c = records_csv_string(&run_grid(&parallel, &data, None).unwrap()).unwrap();
    assert_eq!(a, c);
    assert!(!a.contains("wall_time"));
}

#[test]
fn resuming_after_partial_run_matches_uninterrupted_run() {
    let data = synthetic_context(150, 50);
    let plan = tiny_plan();
    let cells = plan.cells(Experiment::Grid).unwrap();

    let full_dir = tempfile::tempdir().unwrap();
    let full_store = CellStore::open(full_dir.path()).unwrap();
    let full = run_cells(&plan, &data, &cells, Some(&full_store), |_| {}).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let store = CellStore::open(dir.path()).unwrap();
    run_cells(&plan, &data, &cells[..2], Some(&store), |_| {}).unwrap();
    let mut trained = 0;
    let resumed = run_cells(&plan, &data, &cells, Some(&store), |r| {
        if r.cell_id >= cells[2].id {
            trained += 1;
        }
    })
    .unwrap();
    assert_eq!(trained, 2);
    assert_eq!(
        records_csv_string(&full).unwrap(),
        records_csv_string(&resumed).unwrap()
    );
    assert_eq!(store.load_all().unwrap().len(), 4);
}

#[test]
fn failing_cells_are_recorded_and_others_proceed() {
    let data = synthetic_context(60, 30);
    let mut plan = ExperimentPlan {
        family: Family::LeNet5,
        layer_size_grid: vec![vec![2, 2, 2], vec![30, 2, 2]],
        replicates: 1,
        ..ExperimentPlan::default()
    };
    plan.train_config.max_epochs = 1;
    let records = run_grid(&plan, &data, None).unwrap();
    assert_eq!(records.len(), 2);
    let ok = records.iter().find(|r| r.layer_sizes == [2, 2, 2]).unwrap();
    let bad = records.iter().find(|r| r.layer_sizes == [30, 2, 2]).unwrap();
    assert!(ok.is_ok());
    assert_eq!(bad.status, RunStatus::Failed);
    assert!(bad.error.as_ref().unwrap().contains("cap"));
    assert_eq!(bad.error_code, Some(1));
}

#[test]
fn memorization_scores_against_clean_labels() {
    let data = synthetic_context(200, 60);
    let mut plan = ExperimentPlan {
        layer_size_grid: vec![vec![8, 4]],
        modifiers: vec![Modifier::BatchNorm],
        randomization_fractions: vec![0.0, 1.0],
        replicates: 1,
        ..ExperimentPlan::default()
    };
    plan.train_config.max_epochs = 2;
    let records = run_memorization(&plan, &data, None).unwrap();
    assert_eq!(records.len(), 2);
    let random = records.iter().find(|r| r.fraction_randomized == 1.0).unwrap();
    // fit accuracy is measured on the randomized labels, train accuracy on clean ones
    assert_ne!(
        random.fit_accuracy_best,
        random.train.as_ref().unwrap().accuracy
    );
}

#[test]
fn generalization_needs_external_data() {
    let data = synthetic_context(50, 20);
    let err = run_generalization(&tiny_plan(), &data, None).unwrap_err();
    assert!(matches!(err, HarnessError::Data(_)));
    assert_eq!(err.exit_code(), 2);

    let mut with_external = synthetic_context(100, 40);
    with_external.external = Some(support::synthetic_dataset("external", 40, 500));
    let mut plan = tiny_plan();
    plan.layer_size_grid.truncate(1);
    plan.replicates = 1;
    plan.randomization_fractions = vec![0.0, 0.75];
    let records = run_generalization(&plan, &with_external, None).unwrap();
    assert_eq!(records.len(), 2);
    assert!(records.iter().all(|r| r.external.is_some()));
}

#[test]
fn report_files_and_empty_report() {
    let data = synthetic_context(120, 40);
    let records = run_grid(&tiny_plan(), &data, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = emit_report(&records, dir.path(), ReportFormat::Both, 1).unwrap();
    for name in ["records.csv", "records.json", "summary.csv", "summary.json", "top_accuracy.csv", "top_aiq.csv"] {
        assert!(files.files.contains(&dir.path().join(name)), "{name}");
    }
    let csv = fs::read_to_string(dir.path().join("records.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.starts_with("cell_id,experiment,family,layer_sizes,modifier,replicate,seed,"));
    let top = fs::read_to_string(dir.path().join("top_aiq.csv")).unwrap();
    assert_eq!(top.lines().count(), 2);

    let back = load_records(dir.path()).unwrap();
    assert_eq!(back, records);
    assert_eq!(summarize(&back).len(), 2);

    let err = emit_report(&[], dir.path(), ReportFormat::Csv, 1).unwrap_err();
    assert!(matches!(err, HarnessError::EmptyReport));
    assert_eq!(err.exit_code(), 4);
}
