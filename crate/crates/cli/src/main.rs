//! Command-line front end for expression-mixture deconvolution.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use unmix_core::{
    adaptive_range_analysis, collapse_replicates, empirical_pvalue, fixed_range_mask, generate,
    kendall_tau, mad, optimal_cut, per_sample_qc, r2d, rmsd, score_abbas, score_newman,
    sto_violation_filter, to_percentages, validate_alignment, ConcentrationScheme, CutMethod,
    KneeNormalization, MetricKind, NoiseKind, NoiseModel, RandomBaseline, RangeBounds,
    SynthSpec, ViolationScope,
};

use unmix_cli::config::{ExperimentConfig, ParamSetting};
use unmix_cli::pipeline;
use unmix_cli::tsv::{self, num, Table};
use unmix_cli::CliError;

#[derive(Parser)]
#[command(
    name = "unmix",
    version,
    about = "Estimate cell-type concentrations from bulk expression mixtures"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full experiment grid from a config file.
    Run(RunArgs),
    /// Emit feature-filter masks and reports.
    Filter(FilterArgs),
    /// Score marker genes and emit the condition-number cut.
    Markers(MarkerArgs),
    /// Score an estimated concentration file against a truth file.
    Eval(EvalArgs),
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Emit loss-function sample points over a residual range.
    Losscurve(LossCurveArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Config file (sections of key = value lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Mixture expression TSV (overrides dataset.mixture).
    #[arg(long)]
    mixture: Option<PathBuf>,
    /// Reference expression TSV (overrides dataset.reference).
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Replicate map TSV (overrides dataset.replicate_map).
    #[arg(long)]
    replicate_map: Option<PathBuf>,
    /// Truth concentration TSV (overrides dataset.truth).
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Output directory (overrides output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Baseline RNG seed (overrides eval.seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Additional config overrides as section.key=value.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long)]
    mixture: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    /// Collapse replicate columns through this map before filtering.
    #[arg(long)]
    replicate_map: Option<PathBuf>,
    /// Violation-filter scope.
    #[arg(long, default_value = "per_sample")]
    scope: String,
    /// Range mode: none, fixed, or adaptive.
    #[arg(long, default_value = "none")]
    range: String,
    #[arg(long, default_value_t = 3.0)]
    range_lo: f64,
    #[arg(long, default_value_t = 12.0)]
    range_hi: f64,
    /// Knee normalization for adaptive mode: unit or none.
    #[arg(long, default_value = "unit")]
    normalization: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MarkerArgs {
    /// Replicate-level reference expression TSV.
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    replicate_map: PathBuf,
    /// Method: abbas, newman, or balanced.
    #[arg(long, default_value = "newman")]
    method: String,
    #[arg(long, default_value_t = 1e-3)]
    q_cut: f64,
    #[arg(long, default_value_t = 1000)]
    step_cap: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Truth concentration TSV.
    #[arg(long)]
    truth: PathBuf,
    /// Estimated concentration TSV.
    #[arg(long)]
    estimate: PathBuf,
    /// Random-baseline draws for empirical p-values.
    #[arg(long, default_value_t = 10_000)]
    baseline_samples: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 3.0)]
    qc_multiplier: f64,
    /// Output directory; stdout summary only when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 500)]
    genes: usize,
    #[arg(long, default_value_t = 4)]
    celltypes: usize,
    #[arg(long, default_value_t = 10)]
    samples: usize,
    #[arg(long, default_value_t = 20)]
    markers_per_type: usize,
    /// Noise: none, gaussian:SIGMA, laplacian:SCALE, or
    /// outliers:FRACTION:SCALE:SIGMA.
    #[arg(long, default_value = "none")]
    noise: String,
    /// Global mixture rescale (values other than 1 break the
    /// equal-cell-quantity assumption).
    #[arg(long, default_value_t = 1.0)]
    scq_scale: f64,
    /// Lognormal sigma perturbing the reference handed to solvers.
    #[arg(long, default_value_t = 0.0)]
    reference_perturbation: f64,
    /// Relative marker expression outside its own cell-type.
    #[arg(long, default_value_t = 0.01)]
    leakage: f64,
    /// Replicate columns to emit per cell-type.
    #[arg(long, default_value_t = 1)]
    replicates: usize,
    /// Lognormal sigma of the per-replicate jitter.
    #[arg(long, default_value_t = 0.05)]
    replicate_noise: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LossCurveArgs {
    #[arg(long, default_value_t = 1.0)]
    huber_m: f64,
    #[arg(long, default_value_t = 0.5)]
    epsilon: f64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    // Usage problems exit 1; clap's default of 2 is reserved for data
    // format errors here.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(error) => {
            let code = if error.use_stderr() { 1 } else { 0 };
            let _ = error.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Filter(args) => filter(args),
        Command::Markers(args) => markers(args),
        Command::Eval(args) => eval(args),
        Command::Synth(args) => synth(args),
        Command::Losscurve(args) => losscurve(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error}");
            ExitCode::from(error.code)
        }
    }
}

fn run(args: RunArgs) -> Result<(), CliError> {
    let mut overrides = Vec::new();
    if let Some(path) = &args.mixture {
        overrides.push(format!("dataset.mixture={}", path.display()));
    }
    if let Some(path) = &args.reference {
        overrides.push(format!("dataset.reference={}", path.display()));
    }
    if let Some(path) = &args.replicate_map {
        overrides.push(format!("dataset.replicate_map={}", path.display()));
    }
    if let Some(path) = &args.truth {
        overrides.push(format!("dataset.truth={}", path.display()));
    }
    if let Some(path) = &args.out {
        overrides.push(format!("output.dir={}", path.display()));
    }
    if let Some(seed) = args.seed {
        overrides.push(format!("eval.seed={seed}"));
    }
    overrides.extend(args.set.clone());
    let config = ExperimentConfig::load(args.config.as_deref(), &overrides)?;
    pipeline::run_grid(&config)
}

fn filter(args: FilterArgs) -> Result<(), CliError> {
    let mixtures = tsv::read_expression(&args.mixture)?;
    let raw_reference = tsv::read_expression(&args.reference)?;
    let aligned =
        validate_alignment(&mixtures, &raw_reference).map_err(CliError::from_core)?;
    let reference = match &args.replicate_map {
        Some(path) => {
            let grouping = tsv::read_replicate_map(path)?;
            collapse_replicates(&aligned.reference, &grouping)
                .map_err(CliError::from_core)?
        }
        None => aligned.reference.clone(),
    };
    let mixtures = aligned.mixture;

    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::data(format!("cannot create output dir: {e}")))?;

    let scope = match args.scope.as_str() {
        "per_sample" => ViolationScope::PerSample,
        "any_sample" => ViolationScope::AnySample,
        other => return Err(CliError::usage(format!("unknown scope '{other}'"))),
    };
    let violation = sto_violation_filter(&reference, &mixtures, scope)
        .map_err(CliError::from_core)?;
    let mut report = Table::new(&["sample", "pct_violating_reference", "pct_violating_mixture"]);
    for (j, (pct_ref, pct_mix)) in violation.report.per_sample.iter().enumerate() {
        report.push(vec![
            mixtures.col_labels()[j].clone(),
            num(*pct_ref),
            num(*pct_mix),
        ]);
    }
    report.push(vec![
        "mean".into(),
        num(violation.report.pct_violating_reference),
        num(violation.report.pct_violating_mixture),
    ]);
    report.write(&args.out.join("violation_report.tsv"))?;

    let mut masks = Table::new(&["gene", "mask", "keep"]);
    for mask in &violation.masks {
        for (i, keep) in mask.keep.iter().enumerate() {
            masks.push(vec![
                mixtures.row_labels()[i].clone(),
                mask.provenance.clone(),
                (*keep as u8).to_string(),
            ]);
        }
    }

    let normalization = match args.normalization.as_str() {
        "unit" => KneeNormalization::Unit,
        "none" => KneeNormalization::None,
        other => return Err(CliError::usage(format!("unknown normalization '{other}'"))),
    };
    match args.range.as_str() {
        "none" => {}
        "fixed" => {
            let bounds = RangeBounds::new(args.range_lo, args.range_hi)
                .map_err(|e| CliError::usage(e.to_string()))?;
            let mask = fixed_range_mask(&mixtures, &reference, bounds)
                .map_err(CliError::from_core)?;
            for (i, keep) in mask.keep.iter().enumerate() {
                masks.push(vec![
                    mixtures.row_labels()[i].clone(),
                    mask.provenance.clone(),
                    (*keep as u8).to_string(),
                ]);
            }
        }
        "adaptive" => {
            let analysis = adaptive_range_analysis(&mixtures, &reference, normalization)
                .map_err(CliError::from_core)?;
            let mut curve = Table::new(&["rank", "gene", "log2_max", "lower_knee", "upper_knee"]);
            for (rank, (gene, log2_max)) in analysis.sorted.iter().enumerate() {
                curve.push(vec![
                    rank.to_string(),
                    gene.clone(),
                    num(*log2_max),
                    ((rank == analysis.lower_knee) as u8).to_string(),
                    ((rank == analysis.upper_knee) as u8).to_string(),
                ]);
            }
            curve.write(&args.out.join("sorted_expression.tsv"))?;
            let mut bounds = Table::new(&["lo", "hi", "lower_fallback", "upper_fallback"]);
            bounds.push(vec![
                num(analysis.bounds.lo),
                num(analysis.bounds.hi),
                (analysis.lower_fallback as u8).to_string(),
                (analysis.upper_fallback as u8).to_string(),
            ]);
            bounds.write(&args.out.join("adaptive_bounds.tsv"))?;
            let mask = fixed_range_mask(&mixtures, &reference, analysis.bounds)
                .map_err(CliError::from_core)?;
            for (i, keep) in mask.keep.iter().enumerate() {
                masks.push(vec![
                    mixtures.row_labels()[i].clone(),
                    mask.provenance.clone(),
                    (*keep as u8).to_string(),
                ]);
            }
        }
        other => return Err(CliError::usage(format!("unknown range mode '{other}'"))),
    }
    masks.write(&args.out.join("masks.tsv"))?;
    Ok(())
}

fn markers(args: MarkerArgs) -> Result<(), CliError> {
    let signatures = tsv::read_expression(&args.reference)?;
    let grouping = tsv::read_replicate_map(&args.replicate_map)?;
    let reference =
        collapse_replicates(&signatures, &grouping).map_err(CliError::from_core)?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::data(format!("cannot create output dir: {e}")))?;

    // The full score table is emitted for every method; the cut then runs
    // on the method's own ordering and prefilter.
    let all_scores = score_abbas(&signatures, &grouping).map_err(CliError::from_core)?;
    let mut score_table = Table::new(&["gene", "celltype", "p_value", "q_value", "fold_ratio"]);
    for score in &all_scores {
        score_table.push(vec![
            score.gene.clone(),
            score.celltype.clone(),
            num(score.p_value),
            num(score.q_value),
            num(score.fold_ratio),
        ]);
    }
    score_table.write(&args.out.join("marker_scores.tsv"))?;

    let (scores, method) = match args.method.as_str() {
        "abbas" => (all_scores, CutMethod::AbbasGrowOne),
        "newman" | "balanced" => {
            let markers = score_newman(&signatures, &grouping, args.q_cut)
                .map_err(CliError::from_core)?;
            (
                markers
                    .per_type
                    .into_iter()
                    .flat_map(|(_, list)| list)
                    .collect(),
                if args.method == "newman" {
                    CutMethod::NewmanGrowQ
                } else {
                    CutMethod::BalancedNorm
                },
            )
        }
        other => return Err(CliError::usage(format!("unknown method '{other}'"))),
    };

    let cut = optimal_cut(&scores, &reference, method, args.step_cap)
        .map_err(CliError::from_core)?;
    let mut curve = Table::new(&["step", "n_genes", "kappa", "chosen"]);
    for point in &cut.curve {
        curve.push(vec![
            point.step.to_string(),
            point.n_genes.to_string(),
            num(point.kappa),
            ((point.step == cut.curve[cut.chosen_step].step) as u8).to_string(),
        ]);
    }
    curve.write(&args.out.join("condition_curve.tsv"))?;
    let mut selected = Table::new(&["gene"]);
    for gene in &cut.genes {
        selected.push(vec![gene.clone()]);
    }
    selected.write(&args.out.join("selected_markers.tsv"))?;
    Ok(())
}

fn eval(args: EvalArgs) -> Result<(), CliError> {
    let truth = tsv::read_concentrations(&args.truth)?;
    let estimate = tsv::read_concentrations(&args.estimate)?;
    if truth.celltype_labels != estimate.celltype_labels
        || truth.sample_labels != estimate.sample_labels
    {
        return Err(CliError::data(
            "truth and estimate must share cell-type and sample labels",
        ));
    }
    let truth_percent = to_percentages(&truth).map_err(CliError::from_core)?;
    let estimate_percent = to_percentages(&estimate).map_err(CliError::from_core)?;

    let mad_v = mad(&truth_percent, &estimate_percent).map_err(CliError::from_core)?;
    let rmsd_v =
        rmsd(&truth_percent, &estimate_percent).map_err(CliError::from_core)?;
    let r2d_v = r2d(&truth_percent, &estimate_percent).map_err(CliError::from_core)?;

    let make = |metric: MetricKind| {
        RandomBaseline::generate(metric, &truth_percent, args.baseline_samples, args.seed)
            .map_err(CliError::from_core)
    };
    let p_mad = empirical_pvalue(mad_v, &make(MetricKind::Mad)?);
    let p_rmsd = empirical_pvalue(rmsd_v, &make(MetricKind::Rmsd)?);
    let p_r2d = empirical_pvalue(r2d_v, &make(MetricKind::R2d)?);

    let qc = per_sample_qc(&truth_percent, &estimate_percent, args.qc_multiplier)
        .map_err(CliError::from_core)?;

    // Rank agreement between the two distance measures over samples.
    let per_sample_rmsd: Vec<f64> = (0..truth_percent.n_samples())
        .map(|j| {
            let d = truth_percent.values.column(j) - estimate_percent.values.column(j);
            (d.norm_squared() / d.len() as f64).sqrt()
        })
        .collect();
    let kendall = kendall_tau(&qc.per_sample_mad, &per_sample_rmsd).ok();

    println!("mad\t{}", num(mad_v));
    println!("rmsd\t{}", num(rmsd_v));
    println!("r2d\t{}", num(r2d_v));
    println!("p_mad\t{}", num(p_mad));
    println!("p_rmsd\t{}", num(p_rmsd));
    println!("p_r2d\t{}", num(p_r2d));
    if let Some((tau, p)) = kendall {
        println!("kendall_mad_rmsd\t{}", num(tau));
        println!("kendall_p\t{}", num(p));
    }

    if let Some(out) = &args.out {
        std::fs::create_dir_all(out)
            .map_err(|e| CliError::data(format!("cannot create output dir: {e}")))?;
        let mut table = Table::new(&["metric", "value", "p_value"]);
        table.push(vec!["mad".into(), num(mad_v), num(p_mad)]);
        table.push(vec!["rmsd".into(), num(rmsd_v), num(p_rmsd)]);
        table.push(vec!["r2d".into(), num(r2d_v), num(p_r2d)]);
        table.write(&out.join("metrics.tsv"))?;
        let mut qc_table = Table::new(&["sample", "mad", "outlier"]);
        for (j, sample) in truth_percent.sample_labels.iter().enumerate() {
            qc_table.push(vec![
                sample.clone(),
                num(qc.per_sample_mad[j]),
                (qc.outlier[j] as u8).to_string(),
            ]);
        }
        qc_table.write(&out.join("per_sample.tsv"))?;
    }
    Ok(())
}

fn synth(args: SynthArgs) -> Result<(), CliError> {
    let noise = parse_noise(&args.noise)?;
    let mut spec = SynthSpec::new(args.genes, args.celltypes, args.samples, args.markers_per_type);
    spec.noise = noise;
    spec.scq_scale = args.scq_scale;
    spec.leakage = args.leakage;
    spec.reference_perturbation_sigma = args.reference_perturbation;
    spec.concentrations = ConcentrationScheme::UniformSimplex;
    let dataset = generate(&spec, args.seed).map_err(CliError::from_core)?;

    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::data(format!("cannot create output dir: {e}")))?;
    tsv::write_expression(&args.out.join("mixture.tsv"), &dataset.mixtures)?;
    tsv::write_concentrations(
        &args.out.join("truth.tsv"),
        &dataset.concentrations_true.celltype_labels,
        &dataset.concentrations_true.sample_labels,
        &dataset.concentrations_true.values,
    )?;

    // The reference file: either the per-type profiles directly, or a
    // jittered replicate matrix when replicates were requested.
    if args.replicates <= 1 {
        tsv::write_expression(&args.out.join("reference.tsv"), &dataset.reference_given)?;
        let pairs: Vec<(String, String)> = dataset
            .reference_given
            .col_labels()
            .iter()
            .map(|t| (t.clone(), t.clone()))
            .collect();
        tsv::write_replicate_map(&args.out.join("replicate_map.tsv"), &pairs)?;
    } else {
        use rand_distr::Distribution;
        let base = dataset.reference_given.values();
        let n = base.nrows();
        let q = base.ncols();
        let mut values = nalgebra::DMatrix::<f64>::zeros(n, q * args.replicates);
        let mut labels = Vec::new();
        let mut pairs = Vec::new();
        let mut rng = unmix_core::synth::seeded_rng(unmix_core::derive_seed(args.seed, 9_000_000));
        for t in 0..q {
            for r in 0..args.replicates {
                let column = q_replicate(base.column(t), args.replicate_noise, &mut rng);
                let label = format!(
                    "{}_r{}",
                    dataset.reference_given.col_labels()[t],
                    r + 1
                );
                values.column_mut(t * args.replicates + r).copy_from(&column);
                pairs.push((label.clone(), dataset.reference_given.col_labels()[t].clone()));
                labels.push(label);
            }
        }
        let replicated = unmix_core::ExpressionMatrix::new(
            dataset.reference_given.row_labels().to_vec(),
            labels,
            values,
        )
        .map_err(CliError::from_core)?;
        tsv::write_expression(&args.out.join("reference.tsv"), &replicated)?;
        tsv::write_replicate_map(&args.out.join("replicate_map.tsv"), &pairs)?;

        fn q_replicate(
            column: nalgebra::DVectorView<'_, f64>,
            sigma: f64,
            rng: &mut impl rand::Rng,
        ) -> nalgebra::DVector<f64> {
            nalgebra::DVector::from_iterator(
                column.len(),
                column.iter().map(|&v| {
                    let z: f64 = rand_distr::StandardNormal.sample(rng);
                    v * (sigma * z).exp()
                }),
            )
        }
    }
    Ok(())
}

fn parse_noise(spec: &str) -> Result<NoiseModel, CliError> {
    let parts: Vec<&str> = spec.split(':').collect();
    let kind = match parts[0] {
        "none" => NoiseKind::None,
        "gaussian" => NoiseKind::Gaussian {
            sigma: parse_part(&parts, 1, "gaussian:SIGMA")?,
        },
        "laplacian" => NoiseKind::Laplacian {
            scale: parse_part(&parts, 1, "laplacian:SCALE")?,
        },
        "outliers" => NoiseKind::OutlierContaminated {
            fraction: parse_part(&parts, 1, "outliers:FRACTION:SCALE:SIGMA")?,
            scale: parse_part(&parts, 2, "outliers:FRACTION:SCALE:SIGMA")?,
            sigma: parse_part(&parts, 3, "outliers:FRACTION:SCALE:SIGMA")?,
        },
        other => return Err(CliError::usage(format!("unknown noise kind '{other}'"))),
    };
    Ok(NoiseModel { kind, baseline: 0.0 })
}

fn parse_part(parts: &[&str], index: usize, usage: &str) -> Result<f64, CliError> {
    parts
        .get(index)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| CliError::usage(format!("noise spec must look like {usage}")))
}

fn losscurve(args: LossCurveArgs) -> Result<(), CliError> {
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::data(format!("cannot create output dir: {e}")))?;
        }
    }
    let config = ExperimentConfig {
        huber_m: ParamSetting::Fixed(args.huber_m),
        eps_margin: ParamSetting::Fixed(args.epsilon),
        ..Default::default()
    };
    pipeline::write_loss_curve(&args.out, &config)
}
