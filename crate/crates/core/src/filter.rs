//! Gene filters: sum-to-one violation detection, fixed expression-range
//! masks, and adaptive knee-based range detection on the sorted
//! maximal-expression curve.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::ExpressionMatrix;

/// Per-gene verdict of the sum-to-one feasibility bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationCategory {
    Ok,
    /// Every reference exceeds the mixture: no convex combination with a
    /// unit coefficient sum can reach this low.
    ViolatingReference,
    /// The mixture exceeds every reference: the coefficient sum would have
    /// to exceed one.
    ViolatingMixture,
}

/// Which mixtures a violation mask is computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationScope {
    /// One mask per mixture sample.
    PerSample,
    /// A single mask dropping genes that violate in any sample.
    AnySample,
}

/// Boolean keep-mask over genes, tagged with where it came from.
#[derive(Debug, Clone)]
pub struct FeatureMask {
    pub keep: Vec<bool>,
    pub provenance: String,
}

impl FeatureMask {
    pub fn retained(&self) -> usize {
        self.keep.iter().filter(|k| **k).count()
    }

    /// Conjunction of two masks over the same gene list.
    pub fn and(&self, other: &FeatureMask) -> Result<FeatureMask> {
        if self.keep.len() != other.keep.len() {
            return Err(Error::Data(format!(
                "cannot combine masks over {} and {} genes",
                self.keep.len(),
                other.keep.len()
            )));
        }
        Ok(FeatureMask {
            keep: self
                .keep
                .iter()
                .zip(&other.keep)
                .map(|(a, b)| *a && *b)
                .collect(),
            provenance: format!("{} & {}", self.provenance, other.provenance),
        })
    }
}

/// Classify every gene of a row-aligned reference/mixture pair against the
/// feasibility bounds: a mixture value at or below the smallest reference
/// violates from the reference side, one at or above the largest reference
/// violates from the mixture side. Both inequalities are non-strict.
pub fn sto_violation_categorize(
    reference: &ExpressionMatrix,
    mixture_column: &DVector<f64>,
) -> Result<Vec<ViolationCategory>> {
    if reference.n_genes() != mixture_column.len() {
        return Err(Error::Data(format!(
            "reference has {} genes but mixture column has {}",
            reference.n_genes(),
            mixture_column.len()
        )));
    }
    let values = reference.values();
    Ok((0..reference.n_genes())
        .map(|i| {
            let row = values.row(i);
            let lo = row.min();
            let hi = row.max();
            let m = mixture_column[i];
            if m <= lo {
                ViolationCategory::ViolatingReference
            } else if hi <= m {
                ViolationCategory::ViolatingMixture
            } else {
                ViolationCategory::Ok
            }
        })
        .collect())
}

/// Percent of genes per violation category, per sample and averaged.
#[derive(Debug, Clone)]
pub struct ViolationReport {
    /// (percent violating-reference, percent violating-mixture) per sample.
    pub per_sample: Vec<(f64, f64)>,
    pub pct_violating_reference: f64,
    pub pct_violating_mixture: f64,
}

/// Masks plus the violation report for a whole mixture matrix.
#[derive(Debug, Clone)]
pub struct ViolationFilter {
    pub scope: ViolationScope,
    /// One mask per sample for `PerSample`, a single mask for `AnySample`.
    pub masks: Vec<FeatureMask>,
    pub report: ViolationReport,
}

/// Build keep-masks that drop sum-to-one-violating genes before
/// deconvolution, and report violation percentages per category.
pub fn sto_violation_filter(
    reference: &ExpressionMatrix,
    mixtures: &ExpressionMatrix,
    scope: ViolationScope,
) -> Result<ViolationFilter> {
    if reference.n_genes() != mixtures.n_genes() {
        return Err(Error::Data(format!(
            "reference has {} genes but mixtures have {}",
            reference.n_genes(),
            mixtures.n_genes()
        )));
    }
    let n = reference.n_genes();
    let p = mixtures.n_cols();
    let mut per_sample = Vec::with_capacity(p);
    let mut categories = Vec::with_capacity(p);
    for j in 0..p {
        let cats = sto_violation_categorize(reference, &mixtures.column(j))?;
        let n_ref = cats
            .iter()
            .filter(|c| **c == ViolationCategory::ViolatingReference)
            .count();
        let n_mix = cats
            .iter()
            .filter(|c| **c == ViolationCategory::ViolatingMixture)
            .count();
        per_sample.push((
            100.0 * n_ref as f64 / n as f64,
            100.0 * n_mix as f64 / n as f64,
        ));
        categories.push(cats);
    }
    let report = ViolationReport {
        pct_violating_reference: per_sample.iter().map(|s| s.0).sum::<f64>() / p as f64,
        pct_violating_mixture: per_sample.iter().map(|s| s.1).sum::<f64>() / p as f64,
        per_sample,
    };

    let masks = match scope {
        ViolationScope::PerSample => categories
            .iter()
            .enumerate()
            .map(|(j, cats)| FeatureMask {
                keep: cats.iter().map(|c| *c == ViolationCategory::Ok).collect(),
                provenance: format!(
                    "sto_violation(per_sample, sample={})",
                    mixtures.col_labels()[j]
                ),
            })
            .collect(),
        ViolationScope::AnySample => {
            let keep: Vec<bool> = (0..n)
                .map(|i| categories.iter().all(|cats| cats[i] == ViolationCategory::Ok))
                .collect();
            vec![FeatureMask {
                keep,
                provenance: "sto_violation(any_sample)".into(),
            }]
        }
    };
    for mask in &masks {
        if mask.retained() == 0 {
            return Err(Error::EmptyBasis(format!(
                "every gene violates the sum-to-one bounds ({})",
                mask.provenance
            )));
        }
    }
    Ok(ViolationFilter {
        scope,
        masks,
        report,
    })
}

/// Inclusive expression-range bounds in log2 units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeBounds {
    pub lo: f64,
    pub hi: f64,
}

impl RangeBounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::InvalidInput(format!(
                "range bounds need lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok(Self { lo, hi })
    }

    /// The recommended general-purpose filter window.
    pub fn general_default() -> Self {
        Self { lo: 3.0, hi: 12.0 }
    }
}

/// Keep a gene only when every one of its values across all mixture and
/// reference columns lies inside `[2^lo, 2^hi]`.
pub fn fixed_range_mask(
    mixtures: &ExpressionMatrix,
    reference: &ExpressionMatrix,
    bounds: RangeBounds,
) -> Result<FeatureMask> {
    if reference.n_genes() != mixtures.n_genes() {
        return Err(Error::Data(format!(
            "reference has {} genes but mixtures have {}",
            reference.n_genes(),
            mixtures.n_genes()
        )));
    }
    let lo = bounds.lo.exp2();
    let hi = bounds.hi.exp2();
    let keep = (0..mixtures.n_genes())
        .map(|i| {
            mixtures
                .values()
                .row(i)
                .iter()
                .chain(reference.values().row(i).iter())
                .all(|&v| lo <= v && v <= hi)
        })
        .collect();
    Ok(FeatureMask {
        keep,
        provenance: format!("fixed_range(lo={}, hi={})", bounds.lo, bounds.hi),
    })
}

/// Axis handling for the knee search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KneeNormalization {
    /// Rescale each half's index and value ranges to [0, 1] before the
    /// perpendicular-distance computation.
    Unit,
    /// Raw index and log2-value axes.
    None,
}

/// Full diagnostics of the adaptive range detection.
#[derive(Debug, Clone)]
pub struct AdaptiveAnalysis {
    pub bounds: RangeBounds,
    /// (gene label, log2 of the max expression), ascending.
    pub sorted: Vec<(String, f64)>,
    pub lower_knee: usize,
    pub upper_knee: usize,
    /// Set when a half had too few points and fell back to its extreme.
    pub lower_fallback: bool,
    pub upper_fallback: bool,
}

/// Adaptive range bounds: sort the per-gene maxima of the joined mixture
/// and reference matrices in log2, split at the middle, and take in each
/// half the point farthest from the chord to the middle.
pub fn adaptive_range_bounds(
    mixtures: &ExpressionMatrix,
    reference: &ExpressionMatrix,
    normalization: KneeNormalization,
) -> Result<RangeBounds> {
    adaptive_range_analysis(mixtures, reference, normalization).map(|a| a.bounds)
}

pub fn adaptive_range_analysis(
    mixtures: &ExpressionMatrix,
    reference: &ExpressionMatrix,
    normalization: KneeNormalization,
) -> Result<AdaptiveAnalysis> {
    if reference.n_genes() != mixtures.n_genes() {
        return Err(Error::Data(format!(
            "reference has {} genes but mixtures have {}",
            reference.n_genes(),
            mixtures.n_genes()
        )));
    }
    // Per-gene max over the concatenated columns; non-positive maxima have
    // no log2 and are excluded up front.
    let mut sorted: Vec<(String, f64)> = (0..mixtures.n_genes())
        .filter_map(|i| {
            let max = mixtures
                .values()
                .row(i)
                .iter()
                .chain(reference.values().row(i).iter())
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            (max > 0.0).then(|| (mixtures.row_labels()[i].clone(), max.log2()))
        })
        .collect();
    if sorted.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "adaptive range detection needs at least 3 genes with positive maxima, found {}",
            sorted.len()
        )));
    }
    sorted.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());

    let len = sorted.len();
    let mid = (len - 1) / 2;
    let values: Vec<f64> = sorted.iter().map(|g| g.1).collect();

    let (lower_knee, lower_fallback) = half_knee(&values, 0, mid, normalization, true);
    let (upper_knee, upper_fallback) = half_knee(&values, mid, len - 1, normalization, false);

    let lo = values[lower_knee];
    let hi = values[upper_knee];
    if !(lo < hi) {
        return Err(Error::Degenerate(format!(
            "adaptive bounds are degenerate (lo {lo} >= hi {hi}); the expression curve is flat"
        )));
    }
    Ok(AdaptiveAnalysis {
        bounds: RangeBounds { lo, hi },
        sorted,
        lower_knee,
        upper_knee,
        lower_fallback,
        upper_fallback,
    })
}

/// Knee of one half: the point with the greatest perpendicular distance
/// from the chord between the half's endpoints. Scanned from the half's
/// outer end, so exact ties resolve to the extreme value and a degenerate
/// (flat or linear) half keeps everything.
fn half_knee(
    values: &[f64],
    first: usize,
    last: usize,
    normalization: KneeNormalization,
    lower_half: bool,
) -> (usize, bool) {
    let outer = if lower_half { first } else { last };
    if last - first + 1 < 3 {
        return (outer, true);
    }
    let (x0, y0) = (first as f64, values[first]);
    let (x1, y1) = (last as f64, values[last]);
    let transform = |i: usize| -> (f64, f64) {
        match normalization {
            KneeNormalization::None => (i as f64, values[i]),
            KneeNormalization::Unit => {
                let dx = x1 - x0;
                let dy = y1 - y0;
                let x = (i as f64 - x0) / dx;
                let y = if dy != 0.0 { (values[i] - y0) / dy } else { 0.0 };
                (x, y)
            }
        }
    };
    let (cx0, cy0) = transform(first);
    let (cx1, cy1) = transform(last);
    let chord = ((cx1 - cx0).powi(2) + (cy1 - cy0).powi(2)).sqrt();
    if chord == 0.0 {
        return (outer, false);
    }

    let mut best = (outer, 0.0_f64);
    let indices: Vec<usize> = if lower_half {
        (first..=last).collect()
    } else {
        (first..=last).rev().collect()
    };
    for i in indices {
        let (x, y) = transform(i);
        let distance = ((cx1 - cx0) * (cy0 - y) - (cx0 - x) * (cy1 - cy0)).abs() / chord;
        if distance > best.1 {
            best = (i, distance);
        }
    }
    (best.0, false)
}

/// Keep the masked rows of an expression matrix, preserving order.
pub fn apply_mask(matrix: &ExpressionMatrix, mask: &FeatureMask) -> Result<ExpressionMatrix> {
    if mask.keep.len() != matrix.n_genes() {
        return Err(Error::Data(format!(
            "mask covers {} genes but the matrix has {}",
            mask.keep.len(),
            matrix.n_genes()
        )));
    }
    let rows: Vec<usize> = (0..matrix.n_genes()).filter(|&i| mask.keep[i]).collect();
    if rows.is_empty() {
        return Err(Error::EmptyBasis(format!(
            "mask {} retains no genes",
            mask.provenance
        )));
    }
    Ok(matrix.select_rows(&rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn em(rows: usize, cols: usize, data: &[f64]) -> ExpressionMatrix {
        ExpressionMatrix::new(
            (0..rows).map(|i| format!("g{i}")).collect(),
            (0..cols).map(|j| format!("c{j}")).collect(),
            DMatrix::from_row_slice(rows, cols, data),
        )
        .unwrap()
    }

    #[test]
    fn categorize_applies_both_bounds() {
        let reference = em(3, 2, &[20.0, 30.0, 2.0, 5.0, 5.0, 20.0]);
        let m = DVector::from_column_slice(&[10.0, 10.0, 10.0]);
        let cats = sto_violation_categorize(&reference, &m).unwrap();
        assert_eq!(cats[0], ViolationCategory::ViolatingReference);
        assert_eq!(cats[1], ViolationCategory::ViolatingMixture);
        assert_eq!(cats[2], ViolationCategory::Ok);
    }

    #[test]
    fn categorize_boundary_equality_violates() {
        // Non-strict inequalities: touching the bound is a violation.
        let reference = em(2, 2, &[10.0, 30.0, 5.0, 10.0]);
        let m = DVector::from_column_slice(&[10.0, 10.0]);
        let cats = sto_violation_categorize(&reference, &m).unwrap();
        assert_eq!(cats[0], ViolationCategory::ViolatingReference);
        assert_eq!(cats[1], ViolationCategory::ViolatingMixture);
    }

    #[test]
    fn single_sample_scopes_agree() {
        let reference = em(3, 2, &[20.0, 30.0, 2.0, 5.0, 5.0, 20.0]);
        let mixtures = em(3, 1, &[10.0, 10.0, 10.0]);
        let per = sto_violation_filter(&reference, &mixtures, ViolationScope::PerSample).unwrap();
        let any = sto_violation_filter(&reference, &mixtures, ViolationScope::AnySample).unwrap();
        assert_eq!(per.masks.len(), 1);
        assert_eq!(per.masks[0].keep, any.masks[0].keep);
    }

    #[test]
    fn scaled_mixture_floods_violating_mixture() {
        // A large global rescale of the mixture pushes nearly every gene
        // past the reference maximum.
        let mut data = Vec::new();
        for i in 0..40 {
            data.push(10.0 + i as f64);
            data.push(20.0 + i as f64);
        }
        let reference = em(40, 2, &data);
        let mid: Vec<f64> = (0..40).map(|i| 15.0 + i as f64).collect();
        let mixtures_ok = em(40, 1, &mid);
        let scaled: Vec<f64> = mid.iter().map(|v| v * 1000.0).collect();
        let mixtures_scaled = em(40, 1, &scaled);

        let ok = sto_violation_filter(&reference, &mixtures_ok, ViolationScope::AnySample).unwrap();
        assert_eq!(ok.report.pct_violating_mixture, 0.0);

        // Oracle: count with the categorizer directly.
        let cats = sto_violation_categorize(&reference, &mixtures_scaled.column(0)).unwrap();
        let expected = cats
            .iter()
            .filter(|c| **c == ViolationCategory::ViolatingMixture)
            .count() as f64
            / 40.0
            * 100.0;
        assert!(expected > 90.0);
        let res = sto_violation_filter(&reference, &mixtures_scaled, ViolationScope::AnySample);
        match res {
            Ok(filter) => assert_eq!(filter.report.pct_violating_mixture, expected),
            Err(Error::EmptyBasis(_)) => assert_eq!(expected, 100.0),
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn duplicated_reference_column_changes_nothing() {
        let reference = em(3, 2, &[20.0, 30.0, 2.0, 5.0, 5.0, 20.0]);
        let dup = em(
            3,
            4,
            &[20.0, 30.0, 20.0, 30.0, 2.0, 5.0, 2.0, 5.0, 5.0, 20.0, 5.0, 20.0],
        );
        let m = DVector::from_column_slice(&[10.0, 10.0, 10.0]);
        assert_eq!(
            sto_violation_categorize(&reference, &m).unwrap(),
            sto_violation_categorize(&dup, &m).unwrap()
        );
    }

    #[test]
    fn fixed_range_inclusive_bounds() {
        let bounds = RangeBounds::new(3.0, 12.0).unwrap();
        // 8 = 2^3 kept (inclusive), 4096 = 2^12 kept, 2^13 dropped, 4 dropped.
        let mixtures = em(4, 1, &[8.0, 4096.0, 8192.0, 4.0]);
        let reference = em(4, 1, &[100.0, 100.0, 100.0, 100.0]);
        let mask = fixed_range_mask(&mixtures, &reference, bounds).unwrap();
        assert_eq!(mask.keep, vec![true, true, false, false]);
    }

    #[test]
    fn fixed_range_single_reference_exceedance_drops_gene() {
        let bounds = RangeBounds::new(3.0, 12.0).unwrap();
        let mixtures = em(1, 2, &[100.0, 100.0]);
        let reference = em(1, 2, &[100.0, 8192.0]);
        let mask = fixed_range_mask(&mixtures, &reference, bounds).unwrap();
        assert_eq!(mask.keep, vec![false]);
    }

    #[test]
    fn apply_mask_preserves_order_and_errors_when_empty() {
        let m = em(4, 1, &[1.0, 2.0, 3.0, 4.0]);
        let mask = FeatureMask {
            keep: vec![true, false, true, false],
            provenance: "test".into(),
        };
        let out = apply_mask(&m, &mask).unwrap();
        assert_eq!(out.row_labels(), &["g0".to_string(), "g2".to_string()]);
        let none = FeatureMask {
            keep: vec![false; 4],
            provenance: "none".into(),
        };
        assert!(matches!(apply_mask(&m, &none), Err(Error::EmptyBasis(_))));
    }

    #[test]
    fn composed_masks_equal_boolean_and_oracle() {
        let m = em(6, 1, &[8.0, 20.0, 4096.0, 9000.0, 64.0, 2.0]);
        let g = em(
            6,
            2,
            &[9.0, 30.0, 25.0, 40.0, 5000.0, 6000.0, 50.0, 70.0, 60.0, 80.0, 1.0, 3.0],
        );
        let range = fixed_range_mask(&m, &g, RangeBounds::new(3.0, 12.0).unwrap()).unwrap();
        let violation = sto_violation_filter(&g, &m, ViolationScope::AnySample).unwrap();
        let combined = range.and(&violation.masks[0]).unwrap();
        for i in 0..6 {
            assert_eq!(
                combined.keep[i],
                range.keep[i] && violation.masks[0].keep[i],
                "gene {i}"
            );
        }
    }

    /// Exhaustive perpendicular-distance oracle over one half.
    fn scan_half(
        values: &[f64],
        first: usize,
        last: usize,
        normalization: KneeNormalization,
        lower: bool,
    ) -> usize {
        let map = |i: usize| -> (f64, f64) {
            match normalization {
                KneeNormalization::None => (i as f64, values[i]),
                KneeNormalization::Unit => {
                    let dx = last as f64 - first as f64;
                    let dy = values[last] - values[first];
                    (
                        (i as f64 - first as f64) / dx,
                        if dy != 0.0 {
                            (values[i] - values[first]) / dy
                        } else {
                            0.0
                        },
                    )
                }
            }
        };
        let (x0, y0) = map(first);
        let (x1, y1) = map(last);
        let len = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
        let mut best = (if lower { first } else { last }, 0.0);
        let order: Vec<usize> = if lower {
            (first..=last).collect()
        } else {
            (first..=last).rev().collect()
        };
        for i in order {
            let (x, y) = map(i);
            let d = ((x1 - x0) * (y0 - y) - (x0 - x) * (y1 - y0)).abs() / len;
            if d > best.1 {
                best = (i, d);
            }
        }
        best.0
    }

    #[test]
    fn linear_sequence_keeps_extremes() {
        // Exactly linear: all distances are zero, so the bounds fall back to
        // the curve's extreme values and nothing would be filtered.
        let n = 9;
        let values: Vec<f64> = (0..n).map(|i| 2.0 + 0.5 * i as f64).collect();
        let linear: Vec<f64> = values.iter().map(|v: &f64| v.exp2()).collect();
        let m = em(n, 1, &linear);
        let g = em(n, 1, &linear);
        for norm in [KneeNormalization::Unit, KneeNormalization::None] {
            let analysis = adaptive_range_analysis(&m, &g, norm).unwrap();
            assert!((analysis.bounds.lo - values[0]).abs() < 1e-12);
            assert!((analysis.bounds.hi - values[n - 1]).abs() < 1e-12);
        }
    }

    #[test]
    fn two_slope_knee_matches_exhaustive_scan() {
        // 10 points rising slowly then 10 rising fast: the upper-half knee
        // sits at the slope break. Verified against the brute-force scan on
        // the same sorted log2 values the detector sees.
        let mut values = Vec::new();
        for i in 0..10 {
            values.push(i as f64 * 0.1);
        }
        for i in 0..10 {
            values.push(1.0 + i as f64);
        }
        let linear: Vec<f64> = values.iter().map(|v: &f64| v.exp2()).collect();
        let m = em(20, 1, &linear);
        let g = em(20, 1, &linear);
        for norm in [KneeNormalization::Unit, KneeNormalization::None] {
            let analysis = adaptive_range_analysis(&m, &g, norm).unwrap();
            let seen: Vec<f64> = analysis.sorted.iter().map(|g| g.1).collect();
            let mid = (20 - 1) / 2;
            let oracle_lo = scan_half(&seen, 0, mid, norm, true);
            let oracle_hi = scan_half(&seen, mid, 19, norm, false);
            assert_eq!(analysis.lower_knee, oracle_lo, "{norm:?} lower");
            assert_eq!(analysis.upper_knee, oracle_hi, "{norm:?} upper");
            // The upper knee lands at the slope break.
            assert_eq!(analysis.upper_knee, 10, "{norm:?}");
        }
    }

    #[test]
    fn too_small_half_falls_back_flagged() {
        let values: [f64; 3] = [1.0, 2.0, 9.0];
        let linear: Vec<f64> = values.iter().map(|v: &f64| v.exp2()).collect();
        let m = em(3, 1, &linear);
        let g = em(3, 1, &linear);
        let analysis = adaptive_range_analysis(&m, &g, KneeNormalization::Unit).unwrap();
        assert!(analysis.lower_fallback);
        assert!(analysis.upper_fallback);
        assert_eq!(analysis.bounds.lo, 1.0);
        assert_eq!(analysis.bounds.hi, 9.0);
    }

    #[test]
    fn nonpositive_maxima_are_excluded() {
        let m = em(4, 1, &[0.0, 8.0, 16.0, 32.0]);
        let g = em(4, 1, &[0.0, 8.0, 16.0, 32.0]);
        let analysis = adaptive_range_analysis(&m, &g, KneeNormalization::Unit).unwrap();
        assert_eq!(analysis.sorted.len(), 3);
    }

    #[test]
    fn per_sample_retained_genes_lie_strictly_inside_bounds() {
        // After filtering, every retained gene satisfies
        // G_min < m < G_max for its own sample.
        let mut data = Vec::new();
        for i in 0..30 {
            data.push(5.0 + (i % 7) as f64);
            data.push(20.0 + (i % 11) as f64);
        }
        let reference = em(30, 2, &data);
        let mix: Vec<f64> = (0..60)
            .map(|k| 3.0 + (k % 13) as f64 * 2.0)
            .collect();
        let mixtures = em(30, 2, &mix);
        let filter =
            sto_violation_filter(&reference, &mixtures, ViolationScope::PerSample).unwrap();
        for (j, mask) in filter.masks.iter().enumerate() {
            for i in 0..30 {
                if mask.keep[i] {
                    let row = reference.values().row(i);
                    let m = mixtures.values()[(i, j)];
                    assert!(row.min() < m && m < row.max(), "gene {i} sample {j}");
                }
            }
        }
    }

    #[test]
    fn retained_count_monotone_in_upper_bound() {
        let data: Vec<f64> = (0..30).map(|i| (i as f64 * 0.4).exp2()).collect();
        let m = em(30, 1, &data);
        let g = em(30, 1, &data);
        let mut last = 0;
        for hi in [4.0, 6.0, 8.0, 10.0, 12.0] {
            let mask = fixed_range_mask(&m, &g, RangeBounds::new(0.0, hi).unwrap()).unwrap();
            assert!(mask.retained() >= last);
            last = mask.retained();
        }
    }
}
