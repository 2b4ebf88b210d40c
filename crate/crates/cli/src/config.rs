//! Run configuration: a flat sectioned key-value file, overridable from
//! the command line. Unknown keys are usage errors.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use unmix_core::{
    parse_celltype_groups, EnforcementMode, KneeNormalization, LossKind, RegularizerKind,
    ViolationScope,
};

use crate::CliError;

/// How a tunable scalar is supplied: fixed, or searched over the 15-value
/// grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamSetting {
    Fixed(f64),
    Grid,
}

impl ParamSetting {
    fn parse(value: &str, key: &str) -> Result<Self, CliError> {
        if value == "grid" {
            return Ok(ParamSetting::Grid);
        }
        value
            .parse()
            .map(ParamSetting::Fixed)
            .map_err(|_| CliError::usage(format!("{key}: expected a number or 'grid', got '{value}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RangeMode {
    None,
    Fixed,
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarkerMethod {
    None,
    Abbas,
    Newman,
    Balanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridCriterionSetting {
    OracleMad,
    ResidualRmsd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegularizerChoice {
    None,
    Ridge,
    Lasso,
    Elastic,
    Group,
}

/// Fully-resolved experiment configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub mixture: PathBuf,
    pub reference: PathBuf,
    pub replicate_map: Option<PathBuf>,
    pub truth: Option<PathBuf>,

    pub sto_violation: bool,
    pub sto_scope: ViolationScope,
    pub range_mode: RangeMode,
    pub range_lo: f64,
    pub range_hi: f64,
    pub adaptive_normalization: KneeNormalization,

    pub marker_method: MarkerMethod,
    pub q_cut: f64,
    pub step_cap: usize,

    pub losses: Vec<String>,
    pub nn_modes: Vec<EnforcementMode>,
    pub sto_modes: Vec<EnforcementMode>,
    pub huber_m: ParamSetting,
    pub eps_margin: ParamSetting,
    pub regularizer: RegularizerChoice,
    pub lambda: ParamSetting,
    pub elastic_alpha: f64,
    pub groups: Option<String>,
    pub grid_criterion: GridCriterionSetting,
    pub max_iterations: usize,

    pub baseline_samples: usize,
    pub seed: u64,
    pub qc_multiplier: f64,

    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mixture: PathBuf::new(),
            reference: PathBuf::new(),
            replicate_map: None,
            truth: None,
            sto_violation: false,
            sto_scope: ViolationScope::PerSample,
            range_mode: RangeMode::None,
            range_lo: 3.0,
            range_hi: 12.0,
            adaptive_normalization: KneeNormalization::Unit,
            marker_method: MarkerMethod::None,
            q_cut: 1e-3,
            step_cap: 1000,
            losses: vec!["l2".into(), "l1".into(), "huber".into(), "eps".into()],
            nn_modes: vec![EnforcementMode::Implicit, EnforcementMode::Explicit],
            sto_modes: vec![EnforcementMode::Implicit, EnforcementMode::Explicit],
            huber_m: ParamSetting::Fixed(1.0),
            eps_margin: ParamSetting::Fixed(0.5),
            regularizer: RegularizerChoice::None,
            lambda: ParamSetting::Fixed(1.0),
            elastic_alpha: 0.5,
            groups: None,
            grid_criterion: GridCriterionSetting::ResidualRmsd,
            max_iterations: 10_000,
            baseline_samples: 10_000,
            seed: 42,
            qc_multiplier: 3.0,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    /// Parse a config file and apply `section.key=value` overrides on top.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut pairs: BTreeMap<String, String> = BTreeMap::new();
        if let Some(path) = path {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
            let mut section = String::new();
            for (idx, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                    section = name.trim().to_string();
                    continue;
                }
                let Some((key, value)) = line.split_once('=') else {
                    return Err(CliError::usage(format!(
                        "{}:{}: expected 'key = value'",
                        path.display(),
                        idx + 1
                    )));
                };
                if section.is_empty() {
                    return Err(CliError::usage(format!(
                        "{}:{}: key outside of any [section]",
                        path.display(),
                        idx + 1
                    )));
                }
                pairs.insert(
                    format!("{section}.{}", key.trim()),
                    value.trim().to_string(),
                );
            }
        }
        for item in overrides {
            let Some((key, value)) = item.split_once('=') else {
                return Err(CliError::usage(format!(
                    "--set needs 'section.key=value', got '{item}'"
                )));
            };
            pairs.insert(key.trim().to_string(), value.trim().to_string());
        }

        let mut config = Self::default();
        for (key, value) in &pairs {
            config.apply(key, value)?;
        }
        if config.mixture.as_os_str().is_empty() {
            return Err(CliError::usage("dataset.mixture is required"));
        }
        if config.reference.as_os_str().is_empty() {
            return Err(CliError::usage("dataset.reference is required"));
        }
        Ok(config)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "dataset.mixture" => self.mixture = value.into(),
            "dataset.reference" => self.reference = value.into(),
            "dataset.replicate_map" => self.replicate_map = Some(value.into()),
            "dataset.truth" => self.truth = Some(value.into()),
            "filters.sto_violation" => self.sto_violation = parse_switch(key, value)?,
            "filters.sto_scope" => {
                self.sto_scope = match value {
                    "per_sample" => ViolationScope::PerSample,
                    "any_sample" => ViolationScope::AnySample,
                    _ => return Err(bad_value(key, value, "per_sample|any_sample")),
                }
            }
            "filters.range_mode" => {
                self.range_mode = match value {
                    "none" => RangeMode::None,
                    "fixed" => RangeMode::Fixed,
                    "adaptive" => RangeMode::Adaptive,
                    _ => return Err(bad_value(key, value, "none|fixed|adaptive")),
                }
            }
            "filters.range_lo" => self.range_lo = parse_num(key, value)?,
            "filters.range_hi" => self.range_hi = parse_num(key, value)?,
            "filters.adaptive_normalization" => {
                self.adaptive_normalization = match value {
                    "unit" => KneeNormalization::Unit,
                    "none" => KneeNormalization::None,
                    _ => return Err(bad_value(key, value, "unit|none")),
                }
            }
            "markers.method" => {
                self.marker_method = match value {
                    "none" => MarkerMethod::None,
                    "abbas" => MarkerMethod::Abbas,
                    "newman" => MarkerMethod::Newman,
                    "balanced" => MarkerMethod::Balanced,
                    _ => return Err(bad_value(key, value, "none|abbas|newman|balanced")),
                }
            }
            "markers.q_cut" => self.q_cut = parse_num(key, value)?,
            "markers.step_cap" => self.step_cap = parse_num(key, value)? as usize,
            "solver.losses" => {
                let losses: Vec<String> = value.split(',').map(|s| s.trim().to_string()).collect();
                for loss in &losses {
                    if !matches!(loss.as_str(), "l2" | "l1" | "huber" | "eps") {
                        return Err(bad_value(key, loss, "l2|l1|huber|eps"));
                    }
                }
                if losses.is_empty() {
                    return Err(CliError::usage("solver.losses must not be empty"));
                }
                self.losses = losses;
            }
            "solver.nn_modes" => self.nn_modes = parse_modes(key, value)?,
            "solver.sto_modes" => self.sto_modes = parse_modes(key, value)?,
            "solver.huber_m" => self.huber_m = ParamSetting::parse(value, key)?,
            "solver.eps_margin" => self.eps_margin = ParamSetting::parse(value, key)?,
            "solver.regularizer" => {
                self.regularizer = match value {
                    "none" => RegularizerChoice::None,
                    "ridge" => RegularizerChoice::Ridge,
                    "lasso" => RegularizerChoice::Lasso,
                    "elastic" => RegularizerChoice::Elastic,
                    "group" => RegularizerChoice::Group,
                    _ => return Err(bad_value(key, value, "none|ridge|lasso|elastic|group")),
                }
            }
            "solver.lambda" => self.lambda = ParamSetting::parse(value, key)?,
            "solver.elastic_alpha" => self.elastic_alpha = parse_num(key, value)?,
            "solver.groups" => self.groups = Some(value.to_string()),
            "solver.grid_criterion" => {
                self.grid_criterion = match value {
                    "oracle_mad" => GridCriterionSetting::OracleMad,
                    "residual_rmsd" => GridCriterionSetting::ResidualRmsd,
                    _ => return Err(bad_value(key, value, "oracle_mad|residual_rmsd")),
                }
            }
            "solver.max_iterations" => self.max_iterations = parse_num(key, value)? as usize,
            "eval.baseline_samples" => self.baseline_samples = parse_num(key, value)? as usize,
            "eval.seed" => {
                self.seed = value
                    .parse()
                    .map_err(|_| CliError::usage(format!("{key}: '{value}' is not an integer")))?
            }
            "eval.qc_multiplier" => self.qc_multiplier = parse_num(key, value)?,
            "output.dir" => self.out_dir = value.into(),
            _ => return Err(CliError::usage(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Loss kinds of the configured sweep, with fixed parameters filled in
    /// (grid-searched parameters keep a placeholder and are tagged).
    pub fn loss_kinds(&self) -> Vec<(LossKind, bool)> {
        self.losses
            .iter()
            .map(|name| match name.as_str() {
                "l2" => (LossKind::SquaredL2, false),
                "l1" => (LossKind::AbsoluteL1, false),
                "huber" => match self.huber_m {
                    ParamSetting::Fixed(m) => (LossKind::Huber { m }, false),
                    ParamSetting::Grid => (LossKind::Huber { m: 1.0 }, true),
                },
                "eps" => match self.eps_margin {
                    ParamSetting::Fixed(epsilon) => {
                        (LossKind::EpsInsensitive { epsilon }, false)
                    }
                    ParamSetting::Grid => (LossKind::EpsInsensitive { epsilon: 0.5 }, true),
                },
                _ => unreachable!("validated on parse"),
            })
            .collect()
    }

    /// Regularizer with the fixed lambda (grid tagging handled upstream).
    pub fn regularizer_kind(&self, celltypes: &[String]) -> Result<(RegularizerKind, bool), CliError> {
        let (lambda, grid) = match self.lambda {
            ParamSetting::Fixed(v) => (v, false),
            ParamSetting::Grid => (1.0, true),
        };
        let kind = match self.regularizer {
            RegularizerChoice::None => (RegularizerKind::None, false),
            RegularizerChoice::Ridge => (RegularizerKind::NormTwo { lambda }, grid),
            RegularizerChoice::Lasso => (RegularizerKind::NormOne { lambda }, grid),
            RegularizerChoice::Elastic => (
                RegularizerKind::ElasticNet {
                    lambda,
                    alpha: self.elastic_alpha,
                },
                grid,
            ),
            RegularizerChoice::Group => {
                let spec = self.groups.as_ref().ok_or_else(|| {
                    CliError::usage("solver.groups is required for the group regularizer")
                })?;
                let groups = parse_celltype_groups(spec, celltypes)
                    .map_err(|e| CliError::usage(e.to_string()))?;
                (RegularizerKind::GroupLasso { lambda, groups }, grid)
            }
        };
        Ok(kind)
    }
}

fn parse_num(key: &str, value: &str) -> Result<f64, CliError> {
    value
        .parse()
        .map_err(|_| CliError::usage(format!("{key}: '{value}' is not a number")))
}

fn parse_switch(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "on" | "true" => Ok(true),
        "off" | "false" => Ok(false),
        _ => Err(bad_value(key, value, "on|off")),
    }
}

fn parse_modes(key: &str, value: &str) -> Result<Vec<EnforcementMode>, CliError> {
    let modes: Result<Vec<_>, _> = value
        .split(',')
        .map(|s| match s.trim() {
            "implicit" => Ok(EnforcementMode::Implicit),
            "explicit" => Ok(EnforcementMode::Explicit),
            other => Err(bad_value(key, other, "implicit|explicit")),
        })
        .collect();
    let modes = modes?;
    if modes.is_empty() {
        return Err(CliError::usage(format!("{key} must not be empty")));
    }
    Ok(modes)
}

fn bad_value(key: &str, value: &str, expected: &str) -> CliError {
    CliError::usage(format!("{key}: '{value}' is not one of {expected}"))
}
