//! Readers and writers for the tool's tab-separated file formats.
//!
//! Every numeric value is written with Rust's shortest-round-trip float
//! formatting, so a written file re-ingests bit-identically.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use unmix_core::{ConcentrationMatrix, ConstraintStatus, ExpressionMatrix, ReplicateGrouping};

use crate::CliError;

/// Expression matrix file: header `gene<TAB>col...`, one row per gene,
/// decimal values, no missing cells.
pub fn read_expression(path: &Path) -> Result<ExpressionMatrix, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| CliError::data(format!("{}: file is empty", path.display())))?;
    let mut fields = header.split('\t');
    let first = fields.next().unwrap_or_default();
    if first != "gene" {
        return Err(CliError::data(format!(
            "{}:1: header must start with 'gene', found '{first}'",
            path.display()
        )));
    }
    let col_labels: Vec<String> = fields.map(str::to_string).collect();
    if col_labels.is_empty() {
        return Err(CliError::data(format!(
            "{}:1: no data columns in header",
            path.display()
        )));
    }

    let mut row_labels = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let mut fields = line.split('\t');
        let gene = fields.next().unwrap_or_default();
        if gene.is_empty() {
            return Err(CliError::data(format!(
                "{}:{lineno}: missing gene identifier",
                path.display()
            )));
        }
        if row_labels.iter().any(|g| g == gene) {
            return Err(CliError::data(format!(
                "{}:{lineno}: duplicate gene '{gene}'",
                path.display()
            )));
        }
        let mut row = Vec::with_capacity(col_labels.len());
        for cell in fields.by_ref() {
            let value: f64 = cell.parse().map_err(|_| {
                CliError::data(format!(
                    "{}:{lineno}: '{cell}' is not a number",
                    path.display()
                ))
            })?;
            if !value.is_finite() || value < 0.0 {
                return Err(CliError::data(format!(
                    "{}:{lineno}: expression value {value} must be finite and >= 0",
                    path.display()
                )));
            }
            row.push(value);
        }
        if row.len() != col_labels.len() {
            return Err(CliError::data(format!(
                "{}:{lineno}: expected {} values, found {}",
                path.display(),
                col_labels.len(),
                row.len()
            )));
        }
        row_labels.push(gene.to_string());
        values.extend(row);
    }
    if row_labels.is_empty() {
        return Err(CliError::data(format!(
            "{}: no gene rows",
            path.display()
        )));
    }
    let matrix = DMatrix::from_row_slice(row_labels.len(), col_labels.len(), &values);
    ExpressionMatrix::new(row_labels, col_labels, matrix)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn write_expression(path: &Path, matrix: &ExpressionMatrix) -> Result<(), CliError> {
    let mut out = String::from("gene");
    for col in matrix.col_labels() {
        out.push('\t');
        out.push_str(col);
    }
    out.push('\n');
    for (i, gene) in matrix.row_labels().iter().enumerate() {
        out.push_str(gene);
        for j in 0..matrix.n_cols() {
            let _ = write!(out, "\t{}", matrix.values()[(i, j)]);
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

/// Replicate map file: header `column<TAB>celltype`, one row per reference
/// column.
pub fn read_replicate_map(path: &Path) -> Result<ReplicateGrouping, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| CliError::data(format!("{}: file is empty", path.display())))?;
    if header != "column\tcelltype" {
        return Err(CliError::data(format!(
            "{}:1: header must be 'column<TAB>celltype'",
            path.display()
        )));
    }
    let mut pairs = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let mut fields = line.split('\t');
        let (column, celltype) = (
            fields.next().unwrap_or_default(),
            fields.next().unwrap_or_default(),
        );
        if column.is_empty() || celltype.is_empty() || fields.next().is_some() {
            return Err(CliError::data(format!(
                "{}:{lineno}: expected exactly 'column<TAB>celltype'",
                path.display()
            )));
        }
        pairs.push((column.to_string(), celltype.to_string()));
    }
    ReplicateGrouping::from_pairs(&pairs)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn write_replicate_map(path: &Path, pairs: &[(String, String)]) -> Result<(), CliError> {
    let mut out = String::from("column\tcelltype\n");
    for (column, celltype) in pairs {
        let _ = writeln!(out, "{column}\t{celltype}");
    }
    fs::write(path, out).map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

/// Concentration file: header `celltype<TAB>sample...`, values >= 0.
pub fn read_concentrations(path: &Path) -> Result<ConcentrationMatrix, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| CliError::data(format!("{}: file is empty", path.display())))?;
    let mut fields = header.split('\t');
    let first = fields.next().unwrap_or_default();
    if first != "celltype" {
        return Err(CliError::data(format!(
            "{}:1: header must start with 'celltype', found '{first}'",
            path.display()
        )));
    }
    let sample_labels: Vec<String> = fields.map(str::to_string).collect();
    let mut celltype_labels = Vec::new();
    let mut values = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let mut fields = line.split('\t');
        let celltype = fields.next().unwrap_or_default().to_string();
        let mut row = Vec::new();
        for cell in fields {
            let value: f64 = cell.parse().map_err(|_| {
                CliError::data(format!(
                    "{}:{lineno}: '{cell}' is not a number",
                    path.display()
                ))
            })?;
            if !value.is_finite() || value < 0.0 {
                return Err(CliError::data(format!(
                    "{}:{lineno}: concentration {value} must be finite and >= 0",
                    path.display()
                )));
            }
            row.push(value);
        }
        if row.len() != sample_labels.len() {
            return Err(CliError::data(format!(
                "{}:{lineno}: expected {} values, found {}",
                path.display(),
                sample_labels.len(),
                row.len()
            )));
        }
        celltype_labels.push(celltype);
        values.extend(row);
    }
    let matrix = DMatrix::from_row_slice(celltype_labels.len(), sample_labels.len(), &values);
    ConcentrationMatrix::new(
        celltype_labels,
        sample_labels,
        matrix,
        ConstraintStatus::default(),
    )
    .map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn write_concentrations(
    path: &Path,
    celltype_labels: &[String],
    sample_labels: &[String],
    values: &DMatrix<f64>,
) -> Result<(), CliError> {
    let mut out = String::from("celltype");
    for sample in sample_labels {
        out.push('\t');
        out.push_str(sample);
    }
    out.push('\n');
    for (i, celltype) in celltype_labels.iter().enumerate() {
        out.push_str(celltype);
        for j in 0..sample_labels.len() {
            let _ = write!(out, "\t{}", values[(i, j)]);
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

/// Generic typed table for report files: a header row plus string cells.
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.columns.len(), "row width mismatch");
        self.rows.push(row);
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut out = self.columns.join("\t");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join("\t"));
            out.push('\n');
        }
        fs::write(path, out)
            .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| CliError::data(format!("{}: file is empty", path.display())))?;
        let columns: Vec<String> = header.split('\t').map(str::to_string).collect();
        let mut rows = Vec::new();
        for line in lines {
            if line.is_empty() {
                continue;
            }
            let row: Vec<String> = line.split('\t').map(str::to_string).collect();
            if row.len() != columns.len() {
                return Err(CliError::data(format!(
                    "{}: row width {} does not match {} columns",
                    path.display(),
                    row.len(),
                    columns.len()
                )));
            }
            rows.push(row);
        }
        Ok(Self { columns, rows })
    }
}

/// Shortest-round-trip formatting for every numeric cell.
pub fn num(v: f64) -> String {
    format!("{v}")
}
