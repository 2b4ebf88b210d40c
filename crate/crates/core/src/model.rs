//! Matrix data model: labeled expression matrices, replicate collapsing,
//! percentage normalization, and gene alignment between datasets.

use std::collections::{HashMap, HashSet};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Tolerance for the sum-to-one check on concentration columns.
pub const STO_TOL: f64 = 1e-9;
/// Tolerance for the sum-to-100 check on percentage columns.
pub const PCT_TOL: f64 = 1e-6;

/// A non-negative gene-by-column matrix with labeled rows (genes) and
/// columns (mixture samples, replicates, or cell-type references).
/// Values are linear-scale intensities, never log-transformed.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionMatrix {
    row_labels: Vec<String>,
    col_labels: Vec<String>,
    values: DMatrix<f64>,
}

impl ExpressionMatrix {
    pub fn new(
        row_labels: Vec<String>,
        col_labels: Vec<String>,
        values: DMatrix<f64>,
    ) -> Result<Self> {
        if values.nrows() != row_labels.len() || values.ncols() != col_labels.len() {
            return Err(Error::Data(format!(
                "matrix is {}x{} but {} row labels and {} column labels were given",
                values.nrows(),
                values.ncols(),
                row_labels.len(),
                col_labels.len()
            )));
        }
        check_unique(&row_labels, "gene")?;
        check_unique(&col_labels, "column")?;
        for (idx, v) in values.iter().enumerate() {
            if !v.is_finite() || *v < 0.0 {
                let row = idx % values.nrows();
                let col = idx / values.nrows();
                return Err(Error::Data(format!(
                    "expression value for gene '{}' in column '{}' is {} (must be finite and >= 0)",
                    row_labels[row], col_labels[col], v
                )));
            }
        }
        Ok(Self {
            row_labels,
            col_labels,
            values,
        })
    }

    pub fn n_genes(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn row_labels(&self) -> &[String] {
        &self.row_labels
    }

    pub fn col_labels(&self) -> &[String] {
        &self.col_labels
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Owned copy of column `j`.
    pub fn column(&self, j: usize) -> DVector<f64> {
        self.values.column(j).into_owned()
    }

    /// Map from row label to row index.
    pub fn row_index(&self) -> HashMap<&str, usize> {
        self.row_labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i))
            .collect()
    }

    /// New matrix containing the given rows, in the given order.
    pub(crate) fn select_rows(&self, rows: &[usize]) -> Self {
        let mut values = DMatrix::zeros(rows.len(), self.n_cols());
        let mut labels = Vec::with_capacity(rows.len());
        for (new_i, &old_i) in rows.iter().enumerate() {
            values.row_mut(new_i).copy_from(&self.values.row(old_i));
            labels.push(self.row_labels[old_i].clone());
        }
        Self {
            row_labels: labels,
            col_labels: self.col_labels.clone(),
            values,
        }
    }
}

fn check_unique(labels: &[String], what: &str) -> Result<()> {
    let mut seen = HashSet::with_capacity(labels.len());
    for l in labels {
        if !seen.insert(l.as_str()) {
            return Err(Error::Data(format!("duplicate {what} label '{l}'")));
        }
    }
    Ok(())
}

/// Assignment of every replicate column of a signature matrix to one
/// cell-type, with a fixed cell-type order.
#[derive(Debug, Clone)]
pub struct ReplicateGrouping {
    column_to_type: HashMap<String, String>,
    celltypes: Vec<String>,
}

impl ReplicateGrouping {
    /// Build from (column label, cell-type label) pairs. Cell-type order is
    /// the order of first appearance.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Data("replicate grouping has no columns".into()));
        }
        let mut column_to_type = HashMap::new();
        let mut celltypes: Vec<String> = Vec::new();
        for (col, ty) in pairs {
            if column_to_type.insert(col.clone(), ty.clone()).is_some() {
                return Err(Error::Data(format!(
                    "column '{col}' appears twice in the replicate grouping"
                )));
            }
            if !celltypes.iter().any(|t| t == ty) {
                celltypes.push(ty.clone());
            }
        }
        Ok(Self {
            column_to_type,
            celltypes,
        })
    }

    /// Identity grouping: each column is its own cell-type.
    pub fn identity(col_labels: &[String]) -> Result<Self> {
        let pairs: Vec<_> = col_labels
            .iter()
            .map(|c| (c.clone(), c.clone()))
            .collect();
        Self::from_pairs(&pairs)
    }

    pub fn celltypes(&self) -> &[String] {
        &self.celltypes
    }

    pub fn celltype_of(&self, column: &str) -> Option<&str> {
        self.column_to_type.get(column).map(|s| s.as_str())
    }
}

/// Cell-type-by-sample concentration coefficients plus the constraint
/// status the producing solver claims for them.
#[derive(Debug, Clone)]
pub struct ConcentrationMatrix {
    pub celltype_labels: Vec<String>,
    pub sample_labels: Vec<String>,
    pub values: DMatrix<f64>,
    pub constraint_status: ConstraintStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConstraintStatus {
    pub nonneg_satisfied: bool,
    pub sto_satisfied: bool,
}

impl ConcentrationMatrix {
    pub fn new(
        celltype_labels: Vec<String>,
        sample_labels: Vec<String>,
        values: DMatrix<f64>,
        constraint_status: ConstraintStatus,
    ) -> Result<Self> {
        if values.nrows() != celltype_labels.len() || values.ncols() != sample_labels.len() {
            return Err(Error::Data(format!(
                "concentration matrix is {}x{} but {} cell-type labels and {} sample labels were given",
                values.nrows(),
                values.ncols(),
                celltype_labels.len(),
                sample_labels.len()
            )));
        }
        let m = Self {
            celltype_labels,
            sample_labels,
            values,
            constraint_status,
        };
        m.check_status()?;
        Ok(m)
    }

    fn check_status(&self) -> Result<()> {
        if self.constraint_status.nonneg_satisfied && self.values.iter().any(|v| *v < 0.0) {
            return Err(Error::Data(
                "concentration matrix flagged non-negative but contains negative entries".into(),
            ));
        }
        if self.constraint_status.sto_satisfied {
            for j in 0..self.values.ncols() {
                let s: f64 = self.values.column(j).sum();
                if (s - 1.0).abs() > STO_TOL {
                    return Err(Error::Data(format!(
                        "concentration column '{}' flagged sum-to-one but sums to {s}",
                        self.sample_labels[j]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n_celltypes(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.values.ncols()
    }
}

/// Concentrations rescaled so every column sums to 100.
#[derive(Debug, Clone)]
pub struct PercentageMatrix {
    pub celltype_labels: Vec<String>,
    pub sample_labels: Vec<String>,
    pub values: DMatrix<f64>,
}

impl PercentageMatrix {
    pub fn n_celltypes(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.values.ncols()
    }
}

/// Average replicate columns of `signatures` into one column per cell-type,
/// in the grouping's cell-type order. Averaging is arithmetic, in linear
/// expression space.
pub fn collapse_replicates(
    signatures: &ExpressionMatrix,
    grouping: &ReplicateGrouping,
) -> Result<ExpressionMatrix> {
    let q = grouping.celltypes().len();
    let n = signatures.n_genes();
    let mut sums = DMatrix::<f64>::zeros(n, q);
    let mut counts = vec![0usize; q];
    let type_index: HashMap<&str, usize> = grouping
        .celltypes()
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i))
        .collect();

    for (j, col) in signatures.col_labels().iter().enumerate() {
        let ty = grouping.celltype_of(col).ok_or_else(|| {
            Error::Data(format!("column '{col}' is not mapped to any cell-type"))
        })?;
        let t = type_index[ty];
        let mut target = sums.column_mut(t);
        target += signatures.values().column(j);
        counts[t] += 1;
    }

    for (t, &c) in counts.iter().enumerate() {
        if c == 0 {
            return Err(Error::Data(format!(
                "cell-type '{}' has no replicate columns in the signature matrix",
                grouping.celltypes()[t]
            )));
        }
        let scale = 1.0 / c as f64;
        sums.column_mut(t).scale_mut(scale);
    }

    ExpressionMatrix::new(
        signatures.row_labels().to_vec(),
        grouping.celltypes().to_vec(),
        sums,
    )
}

/// Normalize each concentration column to percentages (column sums of 100).
///
/// Columns with non-positive sums or negative entries are rejected so that
/// degenerate solver output surfaces instead of being silently remapped.
pub fn to_percentages(concentrations: &ConcentrationMatrix) -> Result<PercentageMatrix> {
    let mut values = concentrations.values.clone();
    for j in 0..values.ncols() {
        let col = values.column(j);
        if col.iter().any(|v| *v < 0.0) {
            return Err(Error::Degenerate(format!(
                "concentration column '{}' has negative entries",
                concentrations.sample_labels[j]
            )));
        }
        let s: f64 = col.sum();
        if s <= 0.0 {
            return Err(Error::Degenerate(format!(
                "concentration column '{}' sums to {s}; cannot normalize",
                concentrations.sample_labels[j]
            )));
        }
        values.column_mut(j).scale_mut(100.0 / s);
    }
    Ok(PercentageMatrix {
        celltype_labels: concentrations.celltype_labels.clone(),
        sample_labels: concentrations.sample_labels.clone(),
        values,
    })
}

/// Result of aligning a mixture matrix and a reference matrix on their
/// common genes.
#[derive(Debug, Clone)]
pub struct AlignedPair {
    pub mixture: ExpressionMatrix,
    pub reference: ExpressionMatrix,
    pub dropped_mixture: usize,
    pub dropped_reference: usize,
}

/// Restrict both matrices to the intersection of their row labels, in the
/// mixture's row order, and report how many genes each side lost.
pub fn validate_alignment(
    mixture: &ExpressionMatrix,
    reference: &ExpressionMatrix,
) -> Result<AlignedPair> {
    let ref_index = reference.row_index();
    let mut mixture_rows = Vec::new();
    let mut reference_rows = Vec::new();
    for (i, label) in mixture.row_labels().iter().enumerate() {
        if let Some(&j) = ref_index.get(label.as_str()) {
            mixture_rows.push(i);
            reference_rows.push(j);
        }
    }
    if mixture_rows.is_empty() {
        return Err(Error::Data(
            "mixture and reference matrices share no genes".into(),
        ));
    }
    let dropped_mixture = mixture.n_genes() - mixture_rows.len();
    let dropped_reference = reference.n_genes() - reference_rows.len();
    Ok(AlignedPair {
        mixture: mixture.select_rows(&mixture_rows),
        reference: reference.select_rows(&reference_rows),
        dropped_mixture,
        dropped_reference,
    })
}
