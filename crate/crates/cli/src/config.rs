use std::path::{Path, PathBuf};

use revstress::experiments::ShockSemantics;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Effective run configuration. Loaded from a flat JSON file, then
/// overridden by command-line flags; the final value is written next to
/// every output so the run can be repeated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub balance_sheets: Option<PathBuf>,
    pub exposures: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub threads: Option<usize>,

    pub ras_tolerance: f64,
    pub ras_max_iterations: usize,
    pub solver_tolerance: f64,
    pub solver_max_iterations: usize,

    pub horizon: usize,
    pub loss: f64,
    pub lambda_max: Option<f64>,

    pub lambda_max_values: Vec<f64>,
    pub horizons: Vec<usize>,
    pub loss_levels: Vec<f64>,

    /// Empty means every k/N for k = 0..=N.
    pub fractions: Vec<f64>,
    pub n_random: usize,

    pub phis: Vec<f64>,
    pub shock_semantics: ShockSemantics,

    pub n_sims: usize,
    pub perturbation: f64,

    pub banks: usize,
    pub size_scale: f64,
    pub heterogeneity: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            balance_sheets: None,
            exposures: None,
            out: PathBuf::from("."),
            seed: 0,
            threads: None,
            ras_tolerance: revstress::reconstruction::DEFAULT_TOLERANCE,
            ras_max_iterations: revstress::reconstruction::DEFAULT_MAX_ITERATIONS,
            solver_tolerance: 1e-12,
            solver_max_iterations: 10_000,
            horizon: 20,
            loss: 0.1,
            lambda_max: None,
            lambda_max_values: vec![0.5, 0.75, 1.0, 1.25, 1.5],
            horizons: vec![20],
            loss_levels: vec![0.1],
            fractions: Vec::new(),
            n_random: 500,
            phis: vec![0.01, 0.02, 0.03, 0.04, 0.05],
            shock_semantics: ShockSemantics::FixedAbsolute,
            n_sims: 100,
            perturbation: 0.1,
            banks: 44,
            size_scale: 1e9,
            heterogeneity: 0.5,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("bad config {}: {e}", path.display())))
    }

    pub fn solver_options(&self) -> revstress::solver::SolverOptions {
        revstress::solver::SolverOptions {
            tolerance: self.solver_tolerance,
            max_iterations: self.solver_max_iterations,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.ras_tolerance) || !positive(self.solver_tolerance) {
            return bad("tolerances must be > 0".into());
        }
        if self.ras_max_iterations == 0 || self.solver_max_iterations == 0 {
            return bad("iteration limits must be ≥ 1".into());
        }
        if self.horizon == 0 {
            return bad("horizon must be ≥ 1".into());
        }
        if !positive(self.loss) {
            return bad(format!("loss must be > 0, got {}", self.loss));
        }
        if let Some(l) = self.lambda_max {
            if !positive(l) {
                return bad(format!("lambda_max must be > 0, got {l}"));
            }
        }
        if self.threads == Some(0) {
            return bad("threads must be ≥ 1".into());
        }
        if self.fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return bad("fractions must lie in [0, 1]".into());
        }
        if self.phis.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return bad("phis must be ≥ 0".into());
        }
        if !(self.perturbation.is_finite() && (0.0..1.0).contains(&self.perturbation)) {
            return bad("perturbation must lie in [0, 1)".into());
        }
        if !positive(self.size_scale) || !(self.heterogeneity.is_finite() && self.heterogeneity >= 0.0) {
            return bad("size_scale must be > 0 and heterogeneity ≥ 0".into());
        }
        for path in [&self.balance_sheets, &self.exposures].into_iter().flatten() {
            if !path.exists() {
                return bad(format!("input file not found: {}", path.display()));
            }
        }
        Ok(())
    }

    pub fn require_balance_sheets(&self) -> Result<&Path, CliError> {
        self.balance_sheets
            .as_deref()
            .ok_or_else(|| CliError::Config("balance_sheets path is required".into()))
    }

    pub fn require_exposures(&self) -> Result<&Path, CliError> {
        self.exposures
            .as_deref()
            .ok_or_else(|| CliError::Config("exposures path is required".into()))
    }
}
