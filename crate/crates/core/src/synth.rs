//! Synthetic dataset generation for desk-scale verification: marker-based
//! reference construction, concentration designs, noise models, and the
//! perturbations that break the equal-cell-quantity and matched-reference
//! assumptions.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::{mad, r2d, rmsd};
use crate::model::{
    to_percentages, ConcentrationMatrix, ConstraintStatus, ExpressionMatrix, PercentageMatrix,
};
use crate::solver::{deconvolve_sample, DeconvolutionConfig, SolverOptions};

/// SplitMix64 step, used to derive independent per-task seeds from one
/// master seed. Identical inputs give identical streams on any thread
/// layout.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn seeded_rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// Additive noise applied entrywise to the clean mixture signal.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseKind {
    None,
    Gaussian {
        sigma: f64,
    },
    Laplacian {
        scale: f64,
    },
    /// Heavy-tail contamination: every entry draws Gaussian noise with
    /// standard deviation `sigma`, inflated by `scale` with probability
    /// `fraction`.
    OutlierContaminated {
        fraction: f64,
        scale: f64,
        sigma: f64,
    },
}

/// Noise model: a stochastic kind plus a constant baseline offset that can
/// be combined with any of them.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub baseline: f64,
}

impl NoiseModel {
    pub fn none() -> Self {
        Self {
            kind: NoiseKind::None,
            baseline: 0.0,
        }
    }

    pub fn gaussian(sigma: f64) -> Self {
        Self {
            kind: NoiseKind::Gaussian { sigma },
            baseline: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            NoiseKind::None => true,
            NoiseKind::Gaussian { sigma } => sigma > 0.0,
            NoiseKind::Laplacian { scale } => scale > 0.0,
            NoiseKind::OutlierContaminated {
                fraction,
                scale,
                sigma,
            } => (0.0..=1.0).contains(&fraction) && scale > 0.0 && sigma > 0.0,
        };
        if !ok || self.baseline < 0.0 {
            return Err(Error::InvalidInput(format!(
                "invalid noise model {self:?}"
            )));
        }
        Ok(())
    }

    fn draw(&self, rng: &mut ChaCha12Rng) -> f64 {
        let stochastic = match self.kind {
            NoiseKind::None => 0.0,
            NoiseKind::Gaussian { sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                sigma * z
            }
            NoiseKind::Laplacian { scale } => {
                // Difference of two unit exponentials.
                let u1 = positive_uniform(rng);
                let u2 = positive_uniform(rng);
                scale * (u1.ln() - u2.ln())
            }
            NoiseKind::OutlierContaminated {
                fraction,
                scale,
                sigma,
            } => {
                let contaminated = rng.random::<f64>() < fraction;
                let z: f64 = StandardNormal.sample(rng);
                if contaminated {
                    sigma * scale * z
                } else {
                    sigma * z
                }
            }
        };
        self.baseline + stochastic
    }
}

fn positive_uniform(rng: &mut ChaCha12Rng) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// How the true concentrations are drawn.
#[derive(Debug, Clone)]
pub enum ConcentrationScheme {
    /// Each column is iid uniform values divided by their sum.
    UniformSimplex,
    /// A fixed cell-type-by-sample design; columns are normalized to unit
    /// sums exactly.
    FixedDesign(DMatrix<f64>),
}

/// Recipe for one synthetic dataset.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub n_genes: usize,
    pub n_celltypes: usize,
    pub n_samples: usize,
    pub markers_per_type: usize,
    /// Linear-scale range of base expression; marker strengths are drawn
    /// log-uniformly inside it.
    pub expression_range: (f64, f64),
    pub concentrations: ConcentrationScheme,
    pub noise: NoiseModel,
    /// Global rescale of the mixtures. Values other than 1 break the
    /// equal-cell-quantity assumption.
    pub scq_scale: f64,
    /// Multiplicative lognormal perturbation applied to the reference
    /// handed to the solver, simulating references from a different study.
    pub reference_perturbation_sigma: f64,
    /// Relative expression of a marker outside its own cell-type.
    pub leakage: f64,
    /// Relative per-type jitter of background genes.
    pub background_jitter: f64,
}

impl SynthSpec {
    pub fn new(n_genes: usize, n_celltypes: usize, n_samples: usize, markers_per_type: usize) -> Self {
        Self {
            n_genes,
            n_celltypes,
            n_samples,
            markers_per_type,
            expression_range: (16.0, 1024.0),
            concentrations: ConcentrationScheme::UniformSimplex,
            noise: NoiseModel::none(),
            scq_scale: 1.0,
            reference_perturbation_sigma: 0.0,
            leakage: 0.01,
            background_jitter: 0.10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_genes < self.n_celltypes * self.markers_per_type {
            return Err(Error::InvalidInput(format!(
                "{} genes cannot host {} cell-types with {} markers each",
                self.n_genes, self.n_celltypes, self.markers_per_type
            )));
        }
        if self.n_celltypes == 0 || self.n_samples == 0 {
            return Err(Error::InvalidInput(
                "need at least one cell-type and one sample".into(),
            ));
        }
        let (lo, hi) = self.expression_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::InvalidInput(format!(
                "invalid expression range ({lo}, {hi})"
            )));
        }
        if self.scq_scale <= 0.0 || self.reference_perturbation_sigma < 0.0 {
            return Err(Error::InvalidInput(
                "scq_scale must be positive and the perturbation sigma non-negative".into(),
            ));
        }
        self.noise.validate()?;
        if let ConcentrationScheme::FixedDesign(design) = &self.concentrations {
            if design.nrows() != self.n_celltypes || design.ncols() != self.n_samples {
                return Err(Error::InvalidInput(format!(
                    "fixed design is {}x{} but the recipe asks for {}x{}",
                    design.nrows(),
                    design.ncols(),
                    self.n_celltypes,
                    self.n_samples
                )));
            }
            for j in 0..design.ncols() {
                let col = design.column(j);
                if col.iter().any(|v| *v < 0.0) || col.sum() <= 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "fixed design column {j} must be non-negative with a positive sum"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One generated dataset: the generating reference and concentrations, the
/// (possibly perturbed) reference handed to solvers, and the mixtures.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub reference_true: ExpressionMatrix,
    pub reference_given: ExpressionMatrix,
    pub concentrations_true: ConcentrationMatrix,
    pub mixtures: ExpressionMatrix,
    /// Fraction of mixture entries clamped at zero after noise.
    pub clamped_fraction: f64,
}

/// Generate a dataset from the recipe, bit-reproducibly for a given seed.
///
/// Marker genes express strongly in their own type with a small leakage
/// elsewhere; background genes share a common level with mild per-type
/// jitter. Mixtures are `scq_scale * (G_true C_true)` plus noise, clamped
/// at zero.
pub fn generate(spec: &SynthSpec, seed: u64) -> Result<SynthDataset> {
    spec.validate()?;
    let n = spec.n_genes;
    let q = spec.n_celltypes;
    let p = spec.n_samples;
    let (lo, hi) = spec.expression_range;
    let (ln_lo, ln_hi) = (lo.ln(), hi.ln());

    // Stage streams keep the pieces independent of each other.
    let mut rng_reference = seeded_rng(derive_seed(seed, 1));
    let mut rng_concentration = seeded_rng(derive_seed(seed, 2));
    let mut rng_perturbation = seeded_rng(derive_seed(seed, 4));

    let mut g_true = DMatrix::<f64>::zeros(n, q);
    let n_markers = q * spec.markers_per_type;
    for gene in 0..n {
        if gene < n_markers {
            let own = gene / spec.markers_per_type;
            let strength =
                (ln_lo + rng_reference.random::<f64>() * (ln_hi - ln_lo)).exp();
            for t in 0..q {
                g_true[(gene, t)] = if t == own {
                    strength
                } else {
                    spec.leakage * strength
                };
            }
        } else {
            let base = (ln_lo + rng_reference.random::<f64>() * (ln_hi - ln_lo)).exp();
            for t in 0..q {
                let jitter = 1.0 + spec.background_jitter * (2.0 * rng_reference.random::<f64>() - 1.0);
                g_true[(gene, t)] = base * jitter;
            }
        }
    }

    let mut c_true = match &spec.concentrations {
        ConcentrationScheme::UniformSimplex => {
            let mut c = DMatrix::<f64>::zeros(q, p);
            for j in 0..p {
                loop {
                    let mut sum = 0.0;
                    for i in 0..q {
                        let v: f64 = rng_concentration.random();
                        c[(i, j)] = v;
                        sum += v;
                    }
                    if sum > 0.0 {
                        c.column_mut(j).scale_mut(1.0 / sum);
                        break;
                    }
                }
            }
            c
        }
        ConcentrationScheme::FixedDesign(design) => {
            let mut c = design.clone();
            for j in 0..p {
                let sum = c.column(j).sum();
                c.column_mut(j).scale_mut(1.0 / sum);
            }
            c
        }
    };
    // Exact unit sums within 1e-12 even after normalization rounding.
    for j in 0..p {
        let sum = c_true.column(j).sum();
        c_true.column_mut(j).scale_mut(1.0 / sum);
    }

    let clean = &g_true * &c_true;
    let mut mixtures = DMatrix::<f64>::zeros(n, p);
    let mut clamped = 0usize;
    for j in 0..p {
        // Per-sample noise stream.
        let mut rng_noise = seeded_rng(derive_seed(seed, 1_000_000 + j as u64));
        for i in 0..n {
            let value = spec.scq_scale * clean[(i, j)] + spec.noise.draw(&mut rng_noise);
            if value < 0.0 {
                clamped += 1;
                mixtures[(i, j)] = 0.0;
            } else {
                mixtures[(i, j)] = value;
            }
        }
    }

    let g_given = if spec.reference_perturbation_sigma > 0.0 {
        let mut g = g_true.clone();
        for v in g.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng_perturbation);
            *v *= (spec.reference_perturbation_sigma * z).exp();
        }
        g
    } else {
        g_true.clone()
    };

    let gene_labels: Vec<String> = (0..n).map(|i| format!("g{:05}", i + 1)).collect();
    let type_labels: Vec<String> = (0..q).map(|t| format!("t{}", t + 1)).collect();
    let sample_labels: Vec<String> = (0..p).map(|j| format!("s{:03}", j + 1)).collect();

    Ok(SynthDataset {
        reference_true: ExpressionMatrix::new(
            gene_labels.clone(),
            type_labels.clone(),
            g_true,
        )?,
        reference_given: ExpressionMatrix::new(
            gene_labels.clone(),
            type_labels.clone(),
            g_given,
        )?,
        concentrations_true: ConcentrationMatrix::new(
            type_labels,
            sample_labels.clone(),
            c_true,
            ConstraintStatus {
                nonneg_satisfied: true,
                sto_satisfied: true,
            },
        )?,
        mixtures: ExpressionMatrix::new(gene_labels, sample_labels, mixtures)?,
        clamped_fraction: clamped as f64 / (n * p) as f64,
    })
}

/// Mean and standard deviation over trials.
#[derive(Debug, Clone, Copy)]
pub struct Summary {
    pub mean: f64,
    pub stdev: f64,
}

fn summarize(values: &[f64]) -> Summary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Summary {
        mean,
        stdev: var.sqrt(),
    }
}

/// Per-configuration aggregate over a trial battery.
#[derive(Debug, Clone)]
pub struct ConfigTrialSummary {
    pub mad: Summary,
    pub rmsd: Summary,
    pub r2d: Summary,
}

/// Run `trials` generate/deconvolve/evaluate rounds for every config and
/// aggregate each error measure. Trials run in parallel on per-trial
/// derived seeds; the aggregation is order-insensitive.
pub fn trial_battery(
    spec: &SynthSpec,
    trials: usize,
    configs: &[DeconvolutionConfig],
    seed: u64,
    options: &SolverOptions,
) -> Result<Vec<ConfigTrialSummary>> {
    if trials == 0 {
        return Err(Error::InvalidInput("need at least one trial".into()));
    }
    let per_trial: Result<Vec<Vec<(f64, f64, f64)>>> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let dataset = generate(spec, derive_seed(seed, trial as u64))?;
            let truth = to_percentages(&dataset.concentrations_true)?;
            configs
                .iter()
                .map(|config| {
                    let estimate = deconvolve_all(&dataset, config, options)?;
                    Ok((
                        mad(&truth, &estimate)?,
                        rmsd(&truth, &estimate)?,
                        r2d(&truth, &estimate)?,
                    ))
                })
                .collect()
        })
        .collect();
    let per_trial = per_trial?;

    Ok((0..configs.len())
        .map(|c| {
            let mads: Vec<f64> = per_trial.iter().map(|t| t[c].0).collect();
            let rmsds: Vec<f64> = per_trial.iter().map(|t| t[c].1).collect();
            let r2ds: Vec<f64> = per_trial.iter().map(|t| t[c].2).collect();
            ConfigTrialSummary {
                mad: summarize(&mads),
                rmsd: summarize(&rmsds),
                r2d: summarize(&r2ds),
            }
        })
        .collect())
}

/// Deconvolve every sample of a dataset with one configuration and return
/// the estimated percentages.
pub fn deconvolve_all(
    dataset: &SynthDataset,
    config: &DeconvolutionConfig,
    options: &SolverOptions,
) -> Result<PercentageMatrix> {
    let q = dataset.reference_given.n_cols();
    let p = dataset.mixtures.n_cols();
    let mut values = DMatrix::<f64>::zeros(q, p);
    for j in 0..p {
        let solution = deconvolve_sample(
            &dataset.reference_given,
            &dataset.mixtures.column(j),
            config,
            options,
        )?;
        values.column_mut(j).copy_from(&solution.coefficients);
    }
    let concentrations = ConcentrationMatrix::new(
        dataset.reference_given.col_labels().to_vec(),
        dataset.mixtures.col_labels().to_vec(),
        values,
        ConstraintStatus {
            nonneg_satisfied: true,
            sto_satisfied: true,
        },
    )?;
    to_percentages(&concentrations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::{sto_violation_categorize, ViolationCategory};
    use crate::solver::{ConstraintMode, EnforcementMode, LossKind, RegularizerKind};

    #[test]
    fn noiseless_generation_is_exact() {
        let spec = SynthSpec::new(60, 3, 4, 5);
        let ds = generate(&spec, 11).unwrap();
        let reconstructed =
            ds.reference_true.values() * &ds.concentrations_true.values;
        assert_eq!(ds.mixtures.values(), &reconstructed);
        assert_eq!(ds.clamped_fraction, 0.0);
        assert_eq!(ds.reference_given.values(), ds.reference_true.values());
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let mut spec = SynthSpec::new(50, 3, 4, 4);
        spec.noise = NoiseModel::gaussian(2.0);
        spec.reference_perturbation_sigma = 0.1;
        let a = generate(&spec, 99).unwrap();
        let b = generate(&spec, 99).unwrap();
        assert_eq!(a.mixtures.values(), b.mixtures.values());
        assert_eq!(a.reference_given.values(), b.reference_given.values());
        let c = generate(&spec, 100).unwrap();
        assert_ne!(a.mixtures.values(), c.mixtures.values());
    }

    #[test]
    fn concentration_columns_sum_to_one() {
        let spec = SynthSpec::new(40, 4, 7, 3);
        let ds = generate(&spec, 5).unwrap();
        for j in 0..7 {
            let sum: f64 = ds.concentrations_true.values.column(j).sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn interior_noiseless_mixtures_violate_nothing() {
        let spec = SynthSpec::new(80, 3, 5, 6);
        let ds = generate(&spec, 21).unwrap();
        for j in 0..5 {
            let cats =
                sto_violation_categorize(&ds.reference_true, &ds.mixtures.column(j)).unwrap();
            assert!(cats.iter().all(|c| *c == ViolationCategory::Ok));
        }
    }

    #[test]
    fn scq_scaling_floods_mixture_violations() {
        let mut spec = SynthSpec::new(80, 3, 2, 6);
        spec.scq_scale = 1000.0;
        let ds = generate(&spec, 3).unwrap();
        let cats = sto_violation_categorize(&ds.reference_true, &ds.mixtures.column(0)).unwrap();
        let violating = cats
            .iter()
            .filter(|c| **c == ViolationCategory::ViolatingMixture)
            .count();
        assert!(violating as f64 > 0.9 * 80.0);
    }

    #[test]
    fn fixed_design_pure_sample() {
        let mut design = DMatrix::<f64>::zeros(3, 2);
        design[(0, 0)] = 1.0;
        design[(1, 1)] = 0.5;
        design[(2, 1)] = 0.5;
        let mut spec = SynthSpec::new(30, 3, 2, 4);
        spec.concentrations = ConcentrationScheme::FixedDesign(design);
        spec.scq_scale = 2.0;
        let ds = generate(&spec, 8).unwrap();
        // First sample is pure type 1: the mixture equals the scaled first
        // reference column exactly (no noise).
        let expected = ds.reference_true.values().column(0) * 2.0;
        assert_eq!(ds.mixtures.values().column(0), expected);
    }

    #[test]
    fn clamping_is_reported() {
        let mut spec = SynthSpec::new(50, 2, 3, 5);
        spec.expression_range = (1.0, 2.0);
        spec.noise = NoiseModel::gaussian(100.0);
        let ds = generate(&spec, 13).unwrap();
        assert!(ds.clamped_fraction > 0.1);
    }

    #[test]
    fn battery_noiseless_recovers_exactly() {
        let spec = SynthSpec::new(60, 3, 4, 5);
        let configs = vec![DeconvolutionConfig::new(
            LossKind::SquaredL2,
            ConstraintMode::new(EnforcementMode::Explicit, EnforcementMode::Explicit),
            RegularizerKind::None,
        )];
        let out = trial_battery(&spec, 3, &configs, 7, &SolverOptions::default()).unwrap();
        assert!(out[0].mad.mean < 0.5, "mad {}", out[0].mad.mean);
    }

    #[test]
    fn battery_is_thread_count_invariant() {
        let mut spec = SynthSpec::new(40, 3, 3, 4);
        spec.noise = NoiseModel::gaussian(3.0);
        let configs = vec![DeconvolutionConfig::new(
            LossKind::SquaredL2,
            ConstraintMode::new(EnforcementMode::Explicit, EnforcementMode::Implicit),
            RegularizerKind::None,
        )];
        let a = trial_battery(&spec, 4, &configs, 17, &SolverOptions::default()).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool
            .install(|| trial_battery(&spec, 4, &configs, 17, &SolverOptions::default()))
            .unwrap();
        assert_eq!(a[0].mad.mean, b[0].mad.mean);
        assert_eq!(a[0].rmsd.stdev, b[0].rmsd.stdev);
    }
}
