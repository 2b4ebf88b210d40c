//! The experiment grid: ingest, filter, select markers, sweep solver
//! configurations, evaluate, and emit report files.
//!
//! Stage order: violating-feature filter, range filter, marker selection,
//! then regression and evaluation. Per-sample violation masks intersect
//! with the globally selected genes at solve time.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use unmix_core::{
    adaptive_range_analysis, apply_mask, collapse_replicates, deconvolve_sample, empirical_pvalue,
    fixed_range_mask, grid_search_param, loss_value, mad, optimal_cut, per_sample_qc, r2d, rmsd,
    score_abbas, score_newman, sto_violation_filter, to_percentages, validate_alignment,
    ConcentrationMatrix, ConstraintMode, ConstraintStatus, CutMethod, DeconvolutionConfig,
    EnforcementMode, Error, ExpressionMatrix, FeatureMask, GridCriterion, LossKind, MetricKind,
    PercentageMatrix, RandomBaseline, RangeBounds, RegularizerKind, ReplicateGrouping,
    SolverOptions, ViolationScope,
};

use crate::config::{
    ExperimentConfig, GridCriterionSetting, MarkerMethod, ParamSetting, RangeMode,
};
use crate::manifest::Manifest;
use crate::tsv::{self, num, Table};
use crate::CliError;

/// Everything loaded from the dataset paths.
pub struct Ingested {
    pub mixtures: ExpressionMatrix,
    /// Replicate-level signatures when a replicate map was given.
    pub signatures: Option<(ExpressionMatrix, ReplicateGrouping)>,
    /// Collapsed (per-cell-type) reference.
    pub reference: ExpressionMatrix,
    pub truth: Option<ConcentrationMatrix>,
    pub dropped_mixture: usize,
    pub dropped_reference: usize,
}

pub fn ingest(config: &ExperimentConfig) -> Result<Ingested, CliError> {
    let mixtures = tsv::read_expression(&config.mixture)?;
    let raw_reference = tsv::read_expression(&config.reference)?;
    let aligned = validate_alignment(&mixtures, &raw_reference)
        .map_err(CliError::from_core)?;

    let (signatures, reference) = match &config.replicate_map {
        Some(path) => {
            let grouping = tsv::read_replicate_map(path)?;
            let collapsed = collapse_replicates(&aligned.reference, &grouping)
                .map_err(CliError::from_core)?;
            (Some((aligned.reference.clone(), grouping)), collapsed)
        }
        None => (None, aligned.reference.clone()),
    };

    let truth = match &config.truth {
        Some(path) => {
            let truth = tsv::read_concentrations(path)?;
            if truth.celltype_labels != reference.col_labels() {
                return Err(CliError::data(format!(
                    "truth cell-types {:?} do not match the reference columns {:?}",
                    truth.celltype_labels,
                    reference.col_labels()
                )));
            }
            if truth.sample_labels != mixtures.col_labels() {
                return Err(CliError::data(format!(
                    "truth samples {:?} do not match the mixture columns {:?}",
                    truth.sample_labels,
                    mixtures.col_labels()
                )));
            }
            Some(truth)
        }
        None => None,
    };

    Ok(Ingested {
        mixtures: aligned.mixture,
        signatures,
        reference,
        truth,
        dropped_mixture: aligned.dropped_mixture,
        dropped_reference: aligned.dropped_reference,
    })
}

/// One cell of the configuration grid.
#[derive(Debug, Clone)]
struct GridCell {
    id: String,
    loss: LossKind,
    loss_grid: bool,
    constraints: ConstraintMode,
    regularizer: RegularizerKind,
    lambda_grid: bool,
}

fn mode_name(mode: EnforcementMode) -> &'static str {
    mode.name()
}

fn loss_label(cell: &GridCell) -> String {
    match (cell.loss, cell.loss_grid) {
        (LossKind::Huber { .. }, true) => "huber(grid)".into(),
        (LossKind::Huber { m }, false) => format!("huber({m})"),
        (LossKind::EpsInsensitive { .. }, true) => "eps(grid)".into(),
        (LossKind::EpsInsensitive { epsilon }, false) => format!("eps({epsilon})"),
        (loss, _) => loss.name().into(),
    }
}

fn lambda_label(cell: &GridCell) -> String {
    if cell.regularizer == RegularizerKind::None {
        return String::new();
    }
    if cell.lambda_grid {
        "grid".into()
    } else {
        num(cell.regularizer.lambda().unwrap_or(0.0))
    }
}

/// Per-sample outcome inside one grid cell.
struct SampleOutcome {
    coefficients: DVector<f64>,
    chosen_loss_param: Option<f64>,
    chosen_lambda: Option<f64>,
    n_genes_used: usize,
}

struct CellOutcome {
    cell: GridCell,
    result: Result<Vec<SampleOutcome>, String>,
}

pub fn run_grid(config: &ExperimentConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(&config.out_dir)
        .map_err(|e| CliError::data(format!("cannot create output dir: {e}")))?;
    let mut manifest = Manifest::new(config);

    let data = ingest(config)?;
    manifest.record("genes.aligned", &data.mixtures.n_genes().to_string());
    manifest.record("genes.dropped_mixture", &data.dropped_mixture.to_string());
    manifest.record(
        "genes.dropped_reference",
        &data.dropped_reference.to_string(),
    );

    let mut filter_report = Table::new(&[
        "stage",
        "detail",
        "genes_in",
        "genes_kept",
        "pct_violating_reference",
        "pct_violating_mixture",
    ]);

    // Stage 1: sum-to-one violation filter.
    let n_aligned = data.mixtures.n_genes();
    let mut per_sample_masks: Option<Vec<FeatureMask>> = None;
    let mut global_keep = FeatureMask {
        keep: vec![true; n_aligned],
        provenance: "all".into(),
    };
    if config.sto_violation {
        let filter = sto_violation_filter(&data.reference, &data.mixtures, config.sto_scope)
            .map_err(CliError::from_core)?;
        match config.sto_scope {
            ViolationScope::AnySample => {
                let mask = &filter.masks[0];
                filter_report.push(vec![
                    "sto_violation".into(),
                    "any_sample".into(),
                    n_aligned.to_string(),
                    mask.retained().to_string(),
                    num(filter.report.pct_violating_reference),
                    num(filter.report.pct_violating_mixture),
                ]);
                global_keep = global_keep.and(mask).map_err(CliError::from_core)?;
            }
            ViolationScope::PerSample => {
                for (j, mask) in filter.masks.iter().enumerate() {
                    filter_report.push(vec![
                        "sto_violation".into(),
                        format!("sample={}", data.mixtures.col_labels()[j]),
                        n_aligned.to_string(),
                        mask.retained().to_string(),
                        num(filter.report.per_sample[j].0),
                        num(filter.report.per_sample[j].1),
                    ]);
                }
                per_sample_masks = Some(filter.masks);
            }
        }
    }

    // Stage 2: range filter (global), on the genes surviving stage 1.
    let stage1_mixtures = apply_mask(&data.mixtures, &global_keep)
        .map_err(CliError::from_core)?;
    let stage1_reference = apply_mask(&data.reference, &global_keep)
        .map_err(CliError::from_core)?;

    let mut sorted_expression = Table::new(&["rank", "gene", "log2_max", "lower_knee", "upper_knee"]);
    let range_mask = match config.range_mode {
        RangeMode::None => None,
        RangeMode::Fixed => {
            let bounds = RangeBounds::new(config.range_lo, config.range_hi)
                .map_err(|e| CliError::usage(e.to_string()))?;
            Some((fixed_range_mask(&stage1_mixtures, &stage1_reference, bounds)
                .map_err(CliError::from_core)?, bounds))
        }
        RangeMode::Adaptive => {
            let analysis = adaptive_range_analysis(
                &stage1_mixtures,
                &stage1_reference,
                config.adaptive_normalization,
            )
            .map_err(CliError::from_core)?;
            for (rank, (gene, log2_max)) in analysis.sorted.iter().enumerate() {
                sorted_expression.push(vec![
                    rank.to_string(),
                    gene.clone(),
                    num(*log2_max),
                    ((rank == analysis.lower_knee) as u8).to_string(),
                    ((rank == analysis.upper_knee) as u8).to_string(),
                ]);
            }
            manifest.record("adaptive.lo", &num(analysis.bounds.lo));
            manifest.record("adaptive.hi", &num(analysis.bounds.hi));
            let bounds = analysis.bounds;
            Some((fixed_range_mask(&stage1_mixtures, &stage1_reference, bounds)
                .map_err(CliError::from_core)?, bounds))
        }
    };
    // The sorted curve is informative even without adaptive filtering.
    if config.range_mode != RangeMode::Adaptive {
        if let Ok(analysis) = adaptive_range_analysis(
            &stage1_mixtures,
            &stage1_reference,
            config.adaptive_normalization,
        ) {
            for (rank, (gene, log2_max)) in analysis.sorted.iter().enumerate() {
                sorted_expression.push(vec![
                    rank.to_string(),
                    gene.clone(),
                    num(*log2_max),
                    ((rank == analysis.lower_knee) as u8).to_string(),
                    ((rank == analysis.upper_knee) as u8).to_string(),
                ]);
            }
        }
    }

    let (stage2_mixtures, stage2_reference) = match &range_mask {
        Some((mask, bounds)) => {
            filter_report.push(vec![
                "range".into(),
                format!("lo={} hi={}", bounds.lo, bounds.hi),
                stage1_mixtures.n_genes().to_string(),
                mask.retained().to_string(),
                String::new(),
                String::new(),
            ]);
            (
                apply_mask(&stage1_mixtures, mask).map_err(CliError::from_core)?,
                apply_mask(&stage1_reference, mask).map_err(CliError::from_core)?,
            )
        }
        None => (stage1_mixtures, stage1_reference),
    };

    // Stage 3: marker selection on the surviving genes.
    let mut condition_curve = Table::new(&["step", "n_genes", "kappa", "chosen"]);
    let (final_mixtures, final_reference) = if config.marker_method != MarkerMethod::None {
        let Some((signatures, grouping)) = &data.signatures else {
            return Err(CliError::usage(
                "marker selection needs dataset.replicate_map with at least 2 replicates per cell-type",
            ));
        };
        // Restrict the replicate matrix to the same surviving genes.
        let keep_set: HashMap<&str, usize> = stage2_reference.row_index();
        let keep_mask = FeatureMask {
            keep: signatures
                .row_labels()
                .iter()
                .map(|g| keep_set.contains_key(g.as_str()))
                .collect(),
            provenance: "stage2".into(),
        };
        let filtered_signatures =
            apply_mask(signatures, &keep_mask).map_err(CliError::from_core)?;

        let (scores, method) = match config.marker_method {
            MarkerMethod::Abbas => (
                score_abbas(&filtered_signatures, grouping)
                    .map_err(CliError::from_core)?,
                CutMethod::AbbasGrowOne,
            ),
            MarkerMethod::Newman | MarkerMethod::Balanced => {
                let markers = score_newman(&filtered_signatures, grouping, config.q_cut)
                    .map_err(CliError::from_core)?;
                for label in &markers.empty_types {
                    manifest.record("markers.empty_type", label);
                }
                let flattened: Vec<_> = markers
                    .per_type
                    .into_iter()
                    .flat_map(|(_, list)| list)
                    .collect();
                (
                    flattened,
                    if config.marker_method == MarkerMethod::Newman {
                        CutMethod::NewmanGrowQ
                    } else {
                        CutMethod::BalancedNorm
                    },
                )
            }
            MarkerMethod::None => unreachable!(),
        };
        let cut = optimal_cut(&scores, &stage2_reference, method, config.step_cap)
            .map_err(CliError::from_core)?;
        for point in &cut.curve {
            condition_curve.push(vec![
                point.step.to_string(),
                point.n_genes.to_string(),
                num(point.kappa),
                ((point.step == cut.curve[cut.chosen_step].step) as u8).to_string(),
            ]);
        }
        for label in &cut.exhausted_types {
            manifest.record("markers.exhausted_type", label);
        }
        let index = stage2_reference.row_index();
        let mut keep = vec![false; stage2_reference.n_genes()];
        for gene in &cut.genes {
            keep[index[gene.as_str()]] = true;
        }
        let mask = FeatureMask {
            keep,
            provenance: "markers".into(),
        };
        filter_report.push(vec![
            "markers".into(),
            format!("{:?}", config.marker_method).to_lowercase(),
            stage2_reference.n_genes().to_string(),
            mask.retained().to_string(),
            String::new(),
            String::new(),
        ]);
        (
            apply_mask(&stage2_mixtures, &mask).map_err(CliError::from_core)?,
            apply_mask(&stage2_reference, &mask).map_err(CliError::from_core)?,
        )
    } else {
        (stage2_mixtures, stage2_reference)
    };
    manifest.record("genes.final", &final_reference.n_genes().to_string());

    // Per-sample violation masks restricted to the final gene set.
    let per_sample_keep: Option<Vec<FeatureMask>> = per_sample_masks.map(|masks| {
        let aligned_index = data.mixtures.row_index();
        masks
            .into_iter()
            .map(|mask| FeatureMask {
                keep: final_reference
                    .row_labels()
                    .iter()
                    .map(|g| mask.keep[aligned_index[g.as_str()]])
                    .collect(),
                provenance: mask.provenance,
            })
            .collect()
    });

    // Stage 4: the configuration grid.
    let (regularizer, lambda_grid) = config
        .regularizer_kind(final_reference.col_labels())?;
    let mut cells = Vec::new();
    let mut counter = 0usize;
    for (loss, loss_grid) in config.loss_kinds() {
        for &nn in &config.nn_modes {
            for &sto in &config.sto_modes {
                counter += 1;
                cells.push(GridCell {
                    id: format!("c{counter:02}"),
                    loss,
                    loss_grid,
                    constraints: ConstraintMode::new(nn, sto),
                    regularizer: regularizer.clone(),
                    lambda_grid,
                });
            }
        }
    }

    let truth_percent: Option<PercentageMatrix> = match &data.truth {
        Some(truth) => Some(to_percentages(truth).map_err(CliError::from_core)?),
        None => None,
    };
    let options = SolverOptions {
        max_iterations: config.max_iterations,
        ..Default::default()
    };

    let outcomes: Vec<CellOutcome> = cells
        .par_iter()
        .map(|cell| CellOutcome {
            cell: cell.clone(),
            result: run_cell(
                cell,
                &final_reference,
                &final_mixtures,
                per_sample_keep.as_deref(),
                truth_percent.as_ref(),
                config,
                &options,
            ),
        })
        .collect();

    // Baselines shared across configurations (same truth, same shape).
    let baselines = match &truth_percent {
        Some(truth) => {
            let make = |metric: MetricKind| {
                RandomBaseline::generate(metric, truth, config.baseline_samples, config.seed)
                    .map_err(CliError::from_core)
            };
            Some((make(MetricKind::Mad)?, make(MetricKind::Rmsd)?, make(MetricKind::R2d)?))
        }
        None => None,
    };

    // Emission.
    let mut metrics = Table::new(&[
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
        "n_genes_used",
    ]);
    let mut concentrations = Table::new(
        &std::iter::once("config_id")
            .chain(std::iter::once("celltype"))
            .chain(final_mixtures.col_labels().iter().map(|s| s.as_str()))
            .collect::<Vec<_>>(),
    );
    let mut per_sample_table = Table::new(&[
        "config_id",
        "sample",
        "mad",
        "outlier",
        "chosen_loss_param",
        "chosen_lambda",
        "n_genes_used",
    ]);

    for outcome in &outcomes {
        let cell = &outcome.cell;
        match &outcome.result {
            Err(message) => {
                manifest.record(&format!("error.{}", cell.id), message);
                metrics.push(vec![
                    cell.id.clone(),
                    loss_label(cell),
                    mode_name(cell.constraints.nn).into(),
                    mode_name(cell.constraints.sto).into(),
                    cell.regularizer.name().into(),
                    lambda_label(cell),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                ]);
            }
            Ok(samples) => {
                let q = final_reference.n_cols();
                let p = samples.len();
                let mut estimate = DMatrix::<f64>::zeros(q, p);
                for (j, s) in samples.iter().enumerate() {
                    estimate.column_mut(j).copy_from(&s.coefficients);
                }
                for (i, celltype) in final_reference.col_labels().iter().enumerate() {
                    let mut row = vec![cell.id.clone(), celltype.clone()];
                    for j in 0..p {
                        row.push(num(estimate[(i, j)]));
                    }
                    concentrations.push(row);
                }
                let mean_genes = samples.iter().map(|s| s.n_genes_used).sum::<usize>() as f64
                    / p.max(1) as f64;

                let estimate_percent = to_percentages(&ConcentrationMatrix::new(
                    final_reference.col_labels().to_vec(),
                    final_mixtures.col_labels().to_vec(),
                    estimate,
                    ConstraintStatus {
                        nonneg_satisfied: true,
                        sto_satisfied: true,
                    },
                )
                .map_err(CliError::from_core)?)
                .map_err(CliError::from_core)?;

                let mut row = vec![
                    cell.id.clone(),
                    loss_label(cell),
                    mode_name(cell.constraints.nn).into(),
                    mode_name(cell.constraints.sto).into(),
                    cell.regularizer.name().into(),
                    lambda_label(cell),
                ];
                if let (Some(truth), Some((b_mad, b_rmsd, b_r2d))) =
                    (&truth_percent, &baselines)
                {
                    let mad_v = mad(truth, &estimate_percent)
                        .map_err(CliError::from_core)?;
                    let rmsd_v = rmsd(truth, &estimate_percent)
                        .map_err(CliError::from_core)?;
                    let r2d_v = r2d(truth, &estimate_percent)
                        .map_err(CliError::from_core)?;
                    row.extend([
                        num(mad_v),
                        num(rmsd_v),
                        num(r2d_v),
                        num(empirical_pvalue(mad_v, b_mad)),
                        num(empirical_pvalue(rmsd_v, b_rmsd)),
                        num(empirical_pvalue(r2d_v, b_r2d)),
                        num(mean_genes),
                    ]);
                    let qc = per_sample_qc(truth, &estimate_percent, config.qc_multiplier)
                        .map_err(CliError::from_core)?;
                    for (j, s) in samples.iter().enumerate() {
                        per_sample_table.push(vec![
                            cell.id.clone(),
                            final_mixtures.col_labels()[j].clone(),
                            num(qc.per_sample_mad[j]),
                            (qc.outlier[j] as u8).to_string(),
                            s.chosen_loss_param.map(num).unwrap_or_default(),
                            s.chosen_lambda.map(num).unwrap_or_default(),
                            s.n_genes_used.to_string(),
                        ]);
                    }
                } else {
                    row.extend([
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        num(mean_genes),
                    ]);
                    for (j, s) in samples.iter().enumerate() {
                        per_sample_table.push(vec![
                            cell.id.clone(),
                            final_mixtures.col_labels()[j].clone(),
                            String::new(),
                            String::new(),
                            s.chosen_loss_param.map(num).unwrap_or_default(),
                            s.chosen_lambda.map(num).unwrap_or_default(),
                            s.n_genes_used.to_string(),
                        ]);
                    }
                }
                metrics.push(row);
            }
        }
    }

    metrics.write(&config.out_dir.join("metrics.tsv"))?;
    concentrations.write(&config.out_dir.join("concentrations.tsv"))?;
    filter_report.write(&config.out_dir.join("filter_report.tsv"))?;
    condition_curve.write(&config.out_dir.join("condition_curve.tsv"))?;
    sorted_expression.write(&config.out_dir.join("sorted_expression.tsv"))?;
    per_sample_table.write(&config.out_dir.join("per_sample.tsv"))?;
    write_loss_curve(&config.out_dir.join("loss_curve.tsv"), config)?;
    manifest.write(&config.out_dir.join("manifest.txt"))?;
    Ok(())
}

fn run_cell(
    cell: &GridCell,
    reference: &ExpressionMatrix,
    mixtures: &ExpressionMatrix,
    per_sample_keep: Option<&[FeatureMask]>,
    truth_percent: Option<&PercentageMatrix>,
    config: &ExperimentConfig,
    options: &SolverOptions,
) -> Result<Vec<SampleOutcome>, String> {
    let p = mixtures.n_cols();
    let mut outcomes = Vec::with_capacity(p);
    for j in 0..p {
        let column = mixtures.column(j);
        let (design, target) = match per_sample_keep {
            Some(masks) => {
                let mask = &masks[j];
                let sub = apply_mask(reference, mask).map_err(|e| e.to_string())?;
                let rows: Vec<f64> = (0..reference.n_genes())
                    .filter(|&i| mask.keep[i])
                    .map(|i| column[i])
                    .collect();
                (sub, DVector::from_vec(rows))
            }
            None => (reference.clone(), column),
        };
        let base_config = DeconvolutionConfig::new(
            cell.loss,
            cell.constraints,
            cell.regularizer.clone(),
        );
        let mut chosen_loss_param = None;
        let mut chosen_lambda = None;
        let solve_config = if cell.loss_grid || cell.lambda_grid {
            let truth_column = truth_percent.map(|t| t.values.column(j).into_owned());
            let criterion = match (config.grid_criterion, &truth_column) {
                (GridCriterionSetting::OracleMad, Some(column)) => GridCriterion::OracleMad {
                    true_concentrations: column,
                },
                (GridCriterionSetting::OracleMad, None) => {
                    return Err("grid_criterion=oracle_mad requires a truth file".into())
                }
                _ => GridCriterion::ResidualRmsd,
            };
            let outcome = grid_search_param(&design, &target, &base_config, criterion, options)
                .map_err(|e| e.to_string())?;
            let mut tuned = base_config.clone();
            if cell.loss_grid {
                tuned.loss = match cell.loss {
                    LossKind::Huber { .. } => LossKind::Huber {
                        m: outcome.best_parameter,
                    },
                    LossKind::EpsInsensitive { .. } => LossKind::EpsInsensitive {
                        epsilon: outcome.best_parameter,
                    },
                    other => other,
                };
                chosen_loss_param = Some(outcome.best_parameter);
            } else {
                tuned.regularizer = cell.regularizer.with_lambda(outcome.best_parameter);
                chosen_lambda = Some(outcome.best_parameter);
            }
            tuned
        } else {
            base_config
        };
        let solution = match deconvolve_sample(&design, &target, &solve_config, options) {
            Ok(solution) => solution,
            Err(Error::NonConvergence { .. }) => {
                return Err(format!(
                    "sample {} did not converge within {} iterations",
                    mixtures.col_labels()[j],
                    options.max_iterations
                ))
            }
            Err(other) => return Err(other.to_string()),
        };
        outcomes.push(SampleOutcome {
            coefficients: solution.coefficients,
            chosen_loss_param,
            chosen_lambda,
            n_genes_used: design.n_genes(),
        });
    }
    Ok(outcomes)
}

/// Loss-function sample points over a residual range, for plotting.
pub fn write_loss_curve(path: &Path, config: &ExperimentConfig) -> Result<(), CliError> {
    let m = match config.huber_m {
        ParamSetting::Fixed(v) => v,
        ParamSetting::Grid => 1.0,
    };
    let epsilon = match config.eps_margin {
        ParamSetting::Fixed(v) => v,
        ParamSetting::Grid => 0.5,
    };
    let mut table = Table::new(&["r", "l2", "l1", "huber", "eps"]);
    let points = 241;
    for i in 0..points {
        let r = -3.0 + 6.0 * i as f64 / (points - 1) as f64;
        table.push(vec![
            num(r),
            num(loss_value(LossKind::SquaredL2, r)),
            num(loss_value(LossKind::AbsoluteL1, r)),
            num(loss_value(LossKind::Huber { m }, r)),
            num(loss_value(LossKind::EpsInsensitive { epsilon }, r)),
        ]);
    }
    table.write(path)
}
