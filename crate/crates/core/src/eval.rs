//! Estimation-error measures, empirical significance against random
//! concentrations, per-sample quality control, and rank-agreement
//! statistics.

use nalgebra::DMatrix;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::model::PercentageMatrix;
use crate::synth::derive_seed;

/// Which error measure a baseline or report refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    Mad,
    Rmsd,
    R2d,
}

impl MetricKind {
    pub fn compute(&self, truth: &PercentageMatrix, estimate: &PercentageMatrix) -> Result<f64> {
        match self {
            MetricKind::Mad => mad(truth, estimate),
            MetricKind::Rmsd => rmsd(truth, estimate),
            MetricKind::R2d => r2d(truth, estimate),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::Mad => "mad",
            MetricKind::Rmsd => "rmsd",
            MetricKind::R2d => "r2d",
        }
    }
}

fn check_shapes(a: &PercentageMatrix, b: &PercentageMatrix) -> Result<()> {
    if a.values.shape() != b.values.shape() {
        return Err(Error::Data(format!(
            "percentage matrices have different shapes {:?} and {:?}",
            a.values.shape(),
            b.values.shape()
        )));
    }
    Ok(())
}

/// Mean absolute difference over all cell-types and samples, in
/// percentage points.
pub fn mad(truth: &PercentageMatrix, estimate: &PercentageMatrix) -> Result<f64> {
    check_shapes(truth, estimate)?;
    let n = truth.values.len() as f64;
    Ok((&truth.values - &estimate.values)
        .iter()
        .map(|r| r.abs())
        .sum::<f64>()
        / n)
}

/// Root mean squared difference, in percentage points.
pub fn rmsd(truth: &PercentageMatrix, estimate: &PercentageMatrix) -> Result<f64> {
    check_shapes(truth, estimate)?;
    let n = truth.values.len() as f64;
    Ok(((&truth.values - &estimate.values)
        .iter()
        .map(|r| r * r)
        .sum::<f64>()
        / n)
        .sqrt())
}

/// One minus the Pearson correlation of the vectorized percentages;
/// 0 for perfect agreement, 2 for perfect anti-correlation.
pub fn r2d(truth: &PercentageMatrix, estimate: &PercentageMatrix) -> Result<f64> {
    check_shapes(truth, estimate)?;
    let x: Vec<f64> = truth.values.iter().copied().collect();
    let y: Vec<f64> = estimate.values.iter().copied().collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sx = x.iter().map(|v| (v - mx) * (v - mx)).sum::<f64>();
    let sy = y.iter().map(|v| (v - my) * (v - my)).sum::<f64>();
    if sx == 0.0 || sy == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "a percentage matrix has zero variance".into(),
        ));
    }
    // Identical inputs correlate exactly; skipping the rounding of the
    // normalization keeps the distance at a clean zero.
    if x == y {
        return Ok(0.0);
    }
    let cov = x
        .iter()
        .zip(&y)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>();
    Ok((1.0 - cov / (sx.sqrt() * sy.sqrt())).clamp(0.0, 2.0))
}

/// Metric values of random concentration draws against a fixed truth.
#[derive(Debug, Clone)]
pub struct RandomBaseline {
    pub samples: usize,
    pub seed: u64,
    pub metric: MetricKind,
    pub values: Vec<f64>,
}

impl RandomBaseline {
    /// Draw `samples` random concentration matrices of the truth's shape
    /// (each column iid uniform values divided by their sum), score each
    /// against the truth, and store the metric values. Draws use per-index
    /// derived seeds, so results do not depend on thread count.
    pub fn generate(
        metric: MetricKind,
        truth: &PercentageMatrix,
        samples: usize,
        seed: u64,
    ) -> Result<Self> {
        if samples == 0 {
            return Err(Error::InvalidInput("baseline needs at least 1 draw".into()));
        }
        let q = truth.n_celltypes();
        let p = truth.n_samples();
        let values: Result<Vec<f64>> = (0..samples)
            .into_par_iter()
            .map(|draw| {
                let mut rng = crate::synth::seeded_rng(derive_seed(seed, draw as u64));
                let random = random_percentages(q, p, &mut rng);
                debug_assert!(random
                    .values
                    .column_iter()
                    .all(|c| (c.sum() - 100.0).abs() < 1e-9));
                metric.compute(truth, &random)
            })
            .collect();
        Ok(Self {
            samples,
            seed,
            metric,
            values: values?,
        })
    }
}

/// A random percentage matrix: each column is `q` iid uniform draws
/// normalized to sum to 100.
pub fn random_percentages(
    q: usize,
    p: usize,
    rng: &mut impl rand::Rng,
) -> PercentageMatrix {
    let mut values = DMatrix::<f64>::zeros(q, p);
    for j in 0..p {
        loop {
            let mut sum = 0.0;
            for i in 0..q {
                let v: f64 = rng.random();
                values[(i, j)] = v;
                sum += v;
            }
            if sum > 0.0 {
                values.column_mut(j).scale_mut(100.0 / sum);
                break;
            }
        }
    }
    PercentageMatrix {
        celltype_labels: (0..q).map(|i| format!("t{i}")).collect(),
        sample_labels: (0..p).map(|j| format!("s{j}")).collect(),
        values,
    }
}

/// Fraction of baseline draws at least as good (small) as the observed
/// error, floored at 1/S so a perfect result reports 1/S rather than 0.
pub fn empirical_pvalue(observed: f64, baseline: &RandomBaseline) -> f64 {
    let count = baseline.values.iter().filter(|v| **v <= observed).count();
    count.max(1) as f64 / baseline.samples as f64
}

/// Per-sample error breakdown with robust outlier flags.
#[derive(Debug, Clone)]
pub struct SampleQc {
    pub per_sample_mad: Vec<f64>,
    pub outlier: Vec<bool>,
    pub median: f64,
    pub mad_of_errors: f64,
}

/// Per-sample mean absolute error, flagging samples above
/// `median + multiplier * MAD` of the per-sample errors.
pub fn per_sample_qc(
    truth: &PercentageMatrix,
    estimate: &PercentageMatrix,
    multiplier: f64,
) -> Result<SampleQc> {
    check_shapes(truth, estimate)?;
    let q = truth.n_celltypes() as f64;
    let per_sample_mad: Vec<f64> = (0..truth.n_samples())
        .map(|j| {
            (truth.values.column(j) - estimate.values.column(j))
                .iter()
                .map(|r| r.abs())
                .sum::<f64>()
                / q
        })
        .collect();
    let median = median_of(&per_sample_mad);
    let deviations: Vec<f64> = per_sample_mad.iter().map(|e| (e - median).abs()).collect();
    let mad_of_errors = median_of(&deviations);
    let threshold = median + multiplier * mad_of_errors;
    let outlier = per_sample_mad.iter().map(|e| *e > threshold).collect();
    Ok(SampleQc {
        per_sample_mad,
        outlier,
        median,
        mad_of_errors,
    })
}

fn median_of(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Tie-corrected Kendall rank correlation (tau-b) with a significance
/// test: exact permutation for n <= 10, normal approximation beyond.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput(format!(
            "rank vectors have different lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::InvalidInput(
            "rank correlation needs at least 2 observations".into(),
        ));
    }
    let stats = tau_statistics(x, y);
    if stats.tie_x == stats.n0 || stats.tie_y == stats.n0 {
        return Err(Error::UndefinedCorrelation(
            "one of the vectors is entirely tied".into(),
        ));
    }
    let tau = stats.tau();

    let p = if n <= 10 {
        exact_permutation_p(x, y, stats.s)
    } else {
        normal_approximation_p(x, y, stats.s)
    };
    Ok((tau, p))
}

/// Integer summary statistics of a paired ranking.
struct TauStats {
    /// Concordant minus discordant pairs.
    s: i64,
    n0: i64,
    tie_x: i64,
    tie_y: i64,
}

impl TauStats {
    fn tau(&self) -> f64 {
        self.s as f64 / (((self.n0 - self.tie_x) as f64) * ((self.n0 - self.tie_y) as f64)).sqrt()
    }
}

/// Knight's O(n log n) computation: sort by (x, y), count x-tie and joint
/// tie pairs, then count discordant pairs as merge-sort inversions of y.
fn tau_statistics(x: &[f64], y: &[f64]) -> TauStats {
    let n = x.len();
    let n0 = (n as i64) * (n as i64 - 1) / 2;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        x[a].partial_cmp(&x[b])
            .unwrap()
            .then(y[a].partial_cmp(&y[b]).unwrap())
    });

    let mut tie_x = 0i64;
    let mut tie_joint = 0i64;
    let mut run_x = 1i64;
    let mut run_joint = 1i64;
    for w in 1..n {
        let (a, b) = (order[w - 1], order[w]);
        if x[a] == x[b] {
            run_x += 1;
            if y[a] == y[b] {
                run_joint += 1;
            } else {
                tie_joint += run_joint * (run_joint - 1) / 2;
                run_joint = 1;
            }
        } else {
            tie_x += run_x * (run_x - 1) / 2;
            run_x = 1;
            tie_joint += run_joint * (run_joint - 1) / 2;
            run_joint = 1;
        }
    }
    tie_x += run_x * (run_x - 1) / 2;
    tie_joint += run_joint * (run_joint - 1) / 2;

    let mut tie_y = 0i64;
    let mut sorted_y: Vec<f64> = y.to_vec();
    sorted_y.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut run_y = 1i64;
    for w in 1..n {
        if sorted_y[w] == sorted_y[w - 1] {
            run_y += 1;
        } else {
            tie_y += run_y * (run_y - 1) / 2;
            run_y = 1;
        }
    }
    tie_y += run_y * (run_y - 1) / 2;

    // Discordant pairs: inversions of y in (x, y)-sorted order. Ties in x
    // were pre-sorted by y, so within-tie pairs are never counted.
    let seq: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    let discordant = count_inversions(&seq) as i64;

    let s = n0 - tie_x - tie_y + tie_joint - 2 * discordant;
    TauStats {
        s,
        n0,
        tie_x,
        tie_y,
    }
}

fn count_inversions(seq: &[f64]) -> u64 {
    fn merge_count(values: &mut Vec<f64>) -> u64 {
        let n = values.len();
        if n <= 1 {
            return 0;
        }
        let mut right = values.split_off(n / 2);
        let mut inversions = merge_count(values) + merge_count(&mut right);
        let left = std::mem::take(values);
        let (mut i, mut j) = (0, 0);
        while i < left.len() || j < right.len() {
            if j >= right.len() || (i < left.len() && left[i] <= right[j]) {
                values.push(left[i]);
                i += 1;
            } else {
                values.push(right[j]);
                inversions += (left.len() - i) as u64;
                j += 1;
            }
        }
        inversions
    }
    let mut work = seq.to_vec();
    merge_count(&mut work)
}

/// Two-sided exact test: the proportion of permutations of `y` whose |S|
/// statistic is at least the observed one. Tie structure is invariant
/// under permutation, so comparing S suffices.
fn exact_permutation_p(x: &[f64], y: &[f64], observed_s: i64) -> f64 {
    let n = y.len();
    let mut perm: Vec<f64> = y.to_vec();
    let mut count = 0u64;
    let mut total = 0u64;
    // Heap's algorithm, iterative.
    let mut stack = vec![0usize; n];
    let mut record = |perm: &[f64]| {
        let s = pairwise_s(x, perm);
        total += 1;
        if s.abs() >= observed_s.abs() {
            count += 1;
        }
    };
    record(&perm);
    let mut i = 1;
    while i < n {
        if stack[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(stack[i], i);
            }
            record(&perm);
            stack[i] += 1;
            i = 1;
        } else {
            stack[i] = 0;
            i += 1;
        }
    }
    count as f64 / total as f64
}

/// O(n^2) concordant-minus-discordant count.
fn pairwise_s(x: &[f64], y: &[f64]) -> i64 {
    let n = x.len();
    let mut s = 0i64;
    for i in 0..n {
        for j in (i + 1)..n {
            let a = match x[i].partial_cmp(&x[j]).unwrap() {
                std::cmp::Ordering::Less => -1i64,
                std::cmp::Ordering::Equal => 0,
                std::cmp::Ordering::Greater => 1,
            };
            let b = match y[i].partial_cmp(&y[j]).unwrap() {
                std::cmp::Ordering::Less => -1i64,
                std::cmp::Ordering::Equal => 0,
                std::cmp::Ordering::Greater => 1,
            };
            s += a * b;
        }
    }
    s
}

/// Normal approximation with the tie-corrected variance of S.
fn normal_approximation_p(x: &[f64], y: &[f64], s: i64) -> f64 {
    let n = x.len() as f64;
    let (t_counts, u_counts) = (tie_run_lengths(x), tie_run_lengths(y));
    let v0 = n * (n - 1.0) * (2.0 * n + 5.0);
    let vt: f64 = t_counts
        .iter()
        .map(|&t| {
            let t = t as f64;
            t * (t - 1.0) * (2.0 * t + 5.0)
        })
        .sum();
    let vu: f64 = u_counts
        .iter()
        .map(|&u| {
            let u = u as f64;
            u * (u - 1.0) * (2.0 * u + 5.0)
        })
        .sum();
    let sum_t1: f64 = t_counts.iter().map(|&t| (t * (t - 1)) as f64).sum();
    let sum_u1: f64 = u_counts.iter().map(|&u| (u * (u - 1)) as f64).sum();
    let sum_t2: f64 = t_counts
        .iter()
        .map(|&t| (t * (t - 1) * (t.saturating_sub(2))) as f64)
        .sum();
    let sum_u2: f64 = u_counts
        .iter()
        .map(|&u| (u * (u - 1) * (u.saturating_sub(2))) as f64)
        .sum();
    let var = (v0 - vt - vu) / 18.0
        + sum_t1 * sum_u1 / (2.0 * n * (n - 1.0))
        + sum_t2 * sum_u2 / (9.0 * n * (n - 1.0) * (n - 2.0));
    if var <= 0.0 {
        return 1.0;
    }
    let z = s as f64 / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    2.0 * (1.0 - normal.cdf(z.abs()))
}

fn tie_run_lengths(values: &[f64]) -> Vec<u64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut runs = Vec::new();
    let mut run = 1u64;
    for w in 1..sorted.len() {
        if sorted[w] == sorted[w - 1] {
            run += 1;
        } else {
            if run > 1 {
                runs.push(run);
            }
            run = 1;
        }
    }
    if run > 1 {
        runs.push(run);
    }
    runs
}
