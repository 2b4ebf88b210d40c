//! Behavior tests of the command-line surface: ingestion round trips,
//! exit codes, and the documented pipeline outputs.

use std::fs;
use std::path::Path;
use std::process::Command;

use unmix_cli::tsv::{self, Table};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_unmix"))
}

fn synth(dir: &Path, extra: &[&str]) {
    let status = bin()
        .args([
            "synth",
            "--genes",
            "120",
            "--celltypes",
            "3",
            "--samples",
            "4",
            "--markers-per-type",
            "10",
            "--seed",
            "33",
            "--out",
        ])
        .arg(dir)
        .args(extra)
        .status()
        .unwrap();
    assert!(status.success());
}

#[test]
fn synth_round_trips_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, &["--noise", "gaussian:2"]);

    // Write-then-ingest returns bit-equal values.
    let mixtures = tsv::read_expression(&data.join("mixture.tsv")).unwrap();
    let copy = dir.path().join("copy.tsv");
    tsv::write_expression(&copy, &mixtures).unwrap();
    assert_eq!(
        fs::read(&copy).unwrap(),
        fs::read(data.join("mixture.tsv")).unwrap()
    );

    let truth = tsv::read_concentrations(&data.join("truth.tsv")).unwrap();
    let copy2 = dir.path().join("truth_copy.tsv");
    tsv::write_concentrations(
        &copy2,
        &truth.celltype_labels,
        &truth.sample_labels,
        &truth.values,
    )
    .unwrap();
    assert_eq!(
        fs::read(&copy2).unwrap(),
        fs::read(data.join("truth.tsv")).unwrap()
    );
}

#[test]
fn eval_of_truth_against_itself_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, &[]);
    let output = bin()
        .args([
            "eval",
            "--truth",
            data.join("truth.tsv").to_str().unwrap(),
            "--estimate",
            data.join("truth.tsv").to_str().unwrap(),
            "--baseline-samples",
            "200",
        ])
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("mad\t0\n"));
    assert!(stdout.contains("rmsd\t0\n"));
    assert!(stdout.contains("r2d\t0\n"));
}

#[test]
fn run_emits_16_metric_rows_and_reingestable_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, &["--noise", "gaussian:2"]);
    let out = dir.path().join("out");
    let status = bin()
        .args([
            "run",
            "--mixture",
            data.join("mixture.tsv").to_str().unwrap(),
            "--reference",
            data.join("reference.tsv").to_str().unwrap(),
            "--replicate-map",
            data.join("replicate_map.tsv").to_str().unwrap(),
            "--truth",
            data.join("truth.tsv").to_str().unwrap(),
            "--set",
            "eval.baseline_samples=200",
            "--out",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());

    let metrics = Table::read(&out.join("metrics.tsv")).unwrap();
    assert_eq!(metrics.rows.len(), 16, "4 losses x 2 nn x 2 sto");
    assert_eq!(
        metrics.columns,
        vec![
            "config_id",
            "loss",
            "nn",
            "sto",
            "regularizer",
            "lambda",
            "mad",
            "rmsd",
            "r2d",
            "p_mad",
            "p_rmsd",
            "p_r2d",
            "n_genes_used"
        ]
    );
    // Every emitted table re-ingests with the tool's own parsers.
    for name in [
        "concentrations.tsv",
        "filter_report.tsv",
        "condition_curve.tsv",
        "sorted_expression.tsv",
        "per_sample.tsv",
        "loss_curve.tsv",
    ] {
        Table::read(&out.join(name)).unwrap();
    }
    let manifest = unmix_cli::manifest::Manifest::read(&out.join("manifest.txt")).unwrap();
    assert!(manifest.iter().any(|(k, _)| k == "config_hash"));
    assert!(manifest.iter().any(|(k, _)| k == "seed"));

    // Noiseless synth (exact recovery) end-to-end: mad below 0.5pp.
    let clean = dir.path().join("clean");
    synth(&clean, &[]);
    let out2 = dir.path().join("out2");
    let status = bin()
        .args([
            "run",
            "--mixture",
            clean.join("mixture.tsv").to_str().unwrap(),
            "--reference",
            clean.join("reference.tsv").to_str().unwrap(),
            "--replicate-map",
            clean.join("replicate_map.tsv").to_str().unwrap(),
            "--truth",
            clean.join("truth.tsv").to_str().unwrap(),
            "--set",
            "eval.baseline_samples=200",
            "--out",
        ])
        .arg(&out2)
        .status()
        .unwrap();
    assert!(status.success());
    let metrics = Table::read(&out2.join("metrics.tsv")).unwrap();
    let mad_column = metrics.columns.iter().position(|c| c == "mad").unwrap();
    for row in &metrics.rows {
        let mad: f64 = row[mad_column].parse().unwrap();
        assert!(mad < 0.5, "config {} recovered at {mad}", row[0]);
    }
}

#[test]
fn run_without_truth_leaves_metric_cells_empty() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, &[]);
    let out = dir.path().join("out");
    let status = bin()
        .args([
            "run",
            "--mixture",
            data.join("mixture.tsv").to_str().unwrap(),
            "--reference",
            data.join("reference.tsv").to_str().unwrap(),
            "--set",
            "solver.losses=l2",
            "--out",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let metrics = Table::read(&out.join("metrics.tsv")).unwrap();
    assert_eq!(metrics.rows.len(), 4);
    let mad_column = metrics.columns.iter().position(|c| c == "mad").unwrap();
    let genes_column = metrics
        .columns
        .iter()
        .position(|c| c == "n_genes_used")
        .unwrap();
    for row in &metrics.rows {
        assert!(row[mad_column].is_empty());
        assert!(!row[genes_column].is_empty());
    }
}

#[test]
fn group_regularizer_and_grid_search_modes_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, &["--noise", "gaussian:2"]);

    // Group-lasso over labeled cell-type groups.
    let out = dir.path().join("group");
    let status = bin()
        .args([
            "run",
            "--mixture",
            data.join("mixture.tsv").to_str().unwrap(),
            "--reference",
            data.join("reference.tsv").to_str().unwrap(),
            "--set",
            "solver.losses=l2",
            "--set",
            "solver.nn_modes=explicit",
            "--set",
            "solver.sto_modes=explicit",
            "--set",
            "solver.regularizer=group",
            "--set",
            "solver.groups=t1,t2|t3",
            "--set",
            "solver.lambda=0.5",
            "--out",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let metrics = Table::read(&out.join("metrics.tsv")).unwrap();
    assert_eq!(metrics.rows.len(), 1);
    assert_eq!(metrics.rows[0][4], "group");

    // Grid-searched Huber half-length records the chosen value per sample.
    let out = dir.path().join("grid");
    let status = bin()
        .args([
            "run",
            "--mixture",
            data.join("mixture.tsv").to_str().unwrap(),
            "--reference",
            data.join("reference.tsv").to_str().unwrap(),
            "--truth",
            data.join("truth.tsv").to_str().unwrap(),
            "--set",
            "solver.losses=huber",
            "--set",
            "solver.huber_m=grid",
            "--set",
            "solver.grid_criterion=oracle_mad",
            "--set",
            "solver.nn_modes=explicit",
            "--set",
            "solver.sto_modes=explicit",
            "--set",
            "eval.baseline_samples=200",
            "--out",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let metrics = Table::read(&out.join("metrics.tsv")).unwrap();
    assert_eq!(metrics.rows[0][1], "huber(grid)");
    let per_sample = Table::read(&out.join("per_sample.tsv")).unwrap();
    let chosen = per_sample
        .columns
        .iter()
        .position(|c| c == "chosen_loss_param")
        .unwrap();
    for row in &per_sample.rows {
        let value: f64 = row[chosen].parse().unwrap();
        assert!((1e-7..=1e7).contains(&value));
    }
}

#[test]
fn exit_codes_follow_error_categories() {
    let dir = tempfile::tempdir().unwrap();

    // Usage error: unknown config key.
    let config = dir.path().join("bad.cfg");
    fs::write(&config, "[bogus]\nkey = 1\n").unwrap();
    let status = bin()
        .args(["run", "--config", config.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(1));

    // Usage error: missing required dataset keys.
    let empty = dir.path().join("empty.cfg");
    fs::write(&empty, "[output]\ndir = x\n").unwrap();
    let status = bin()
        .args(["run", "--config", empty.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(1));

    // Data error: malformed numeric cell, reported with its line number.
    let bad = dir.path().join("bad.tsv");
    fs::write(&bad, "gene\ts1\ng1\toops\n").unwrap();
    let output = bin()
        .args([
            "run",
            "--mixture",
            bad.to_str().unwrap(),
            "--reference",
            bad.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8(output.stderr).unwrap();
    assert!(stderr.contains(":2:"), "stderr was: {stderr}");

    // Data error: duplicated gene row names the gene and line.
    let dup = dir.path().join("dup.tsv");
    fs::write(&dup, "gene\ts1\ng1\t1.0\ng1\t2.0\n").unwrap();
    let output = bin()
        .args([
            "run",
            "--mixture",
            dup.to_str().unwrap(),
            "--reference",
            dup.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8(output.stderr).unwrap();
    assert!(stderr.contains("g1") && stderr.contains(":3:"), "stderr was: {stderr}");

    // Unknown flags are usage errors too.
    let status = bin().args(["run", "--bogus"]).output().unwrap();
    assert_eq!(status.status.code(), Some(1));

    // Solver/analysis failure: a flat maximal-expression curve has no
    // knees (references straddle the mixture so the violation stage is
    // clean, but every per-gene maximum is identical).
    let flat_mix = dir.path().join("flat_mix.tsv");
    fs::write(&flat_mix, "gene\ts1\ng1\t8.0\ng2\t8.0\ng3\t8.0\ng4\t8.0\n").unwrap();
    let flat_ref = dir.path().join("flat_ref.tsv");
    fs::write(
        &flat_ref,
        "gene\tA\tB\ng1\t6.0\t10.0\ng2\t6.0\t10.0\ng3\t6.0\t10.0\ng4\t6.0\t10.0\n",
    )
    .unwrap();
    let output = bin()
        .args([
            "filter",
            "--mixture",
            flat_mix.to_str().unwrap(),
            "--reference",
            flat_ref.to_str().unwrap(),
            "--range",
            "adaptive",
            "--out",
        ])
        .arg(dir.path().join("flatout"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(3));
}

#[test]
fn filter_and_markers_subcommands_emit_reports() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let status = bin()
        .args([
            "synth",
            "--genes",
            "150",
            "--celltypes",
            "3",
            "--samples",
            "4",
            "--markers-per-type",
            "12",
            "--replicates",
            "5",
            "--leakage",
            "0.3",
            "--noise",
            "gaussian:3",
            "--seed",
            "33",
            "--out",
        ])
        .arg(&data)
        .status()
        .unwrap();
    assert!(status.success());

    let filter_out = dir.path().join("filter");
    let status = bin()
        .args([
            "filter",
            "--mixture",
            data.join("mixture.tsv").to_str().unwrap(),
            "--reference",
            data.join("reference.tsv").to_str().unwrap(),
            "--replicate-map",
            data.join("replicate_map.tsv").to_str().unwrap(),
            "--range",
            "adaptive",
            "--out",
        ])
        .arg(&filter_out)
        .status()
        .unwrap();
    assert!(status.success());
    let bounds = Table::read(&filter_out.join("adaptive_bounds.tsv")).unwrap();
    let lo: f64 = bounds.rows[0][0].parse().unwrap();
    let hi: f64 = bounds.rows[0][1].parse().unwrap();
    assert!(lo < hi);
    Table::read(&filter_out.join("violation_report.tsv")).unwrap();
    Table::read(&filter_out.join("masks.tsv")).unwrap();

    let marker_out = dir.path().join("markers");
    let status = bin()
        .args([
            "markers",
            "--reference",
            data.join("reference.tsv").to_str().unwrap(),
            "--replicate-map",
            data.join("replicate_map.tsv").to_str().unwrap(),
            "--method",
            "balanced",
            "--q-cut",
            "0.01",
            "--out",
        ])
        .arg(&marker_out)
        .status()
        .unwrap();
    assert!(status.success());
    let scores = Table::read(&marker_out.join("marker_scores.tsv")).unwrap();
    assert_eq!(scores.rows.len(), 150);
    let curve = Table::read(&marker_out.join("condition_curve.tsv")).unwrap();
    assert!(curve.rows.len() >= 2);
    let selected = Table::read(&marker_out.join("selected_markers.tsv")).unwrap();
    assert!(!selected.rows.is_empty());
}
