//! Experiment harness: cost/IPR sweeps, exponential decay fits, selective
//! stressing, capital policies and ranking robustness.
//!
//! Grid points and Monte Carlo replicas run in parallel on rayon. Every replica
//! owns a ChaCha stream derived from `(seed, replica index)` and results are
//! merged in index order, so output does not depend on scheduling.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::{concentration, rank_stability, RankStability};
use crate::balance_sheet::BalanceSheetSet;
use crate::dynamics::{
    calibrate_beta, leverage_from_equities, propagate, propagate_with, LeverageNetwork,
    ShockTrajectory,
};
use crate::error::{Error, Result};
use crate::reconstruction::ExposureMatrix;
use crate::solver::{build_constraints, solve_min_norm, ShockSolution, SolverOptions};

/// Independent RNG for replica `index` of an experiment seeded with `seed`.
pub fn replica_rng(seed: u64, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub lambda_max_values: Vec<f64>,
    pub horizons: Vec<usize>,
    pub loss_levels: Vec<f64>,
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_max_values.is_empty() || self.horizons.is_empty() || self.loss_levels.is_empty()
        {
            return Err(Error::InvalidParameter("sweep grid has an empty axis".into()));
        }
        let positive = |v: &f64| v.is_finite() && *v > 0.0;
        if !self.lambda_max_values.iter().all(positive) {
            return Err(Error::InvalidParameter("lambda_max values must be > 0".into()));
        }
        if self.horizons.contains(&0) {
            return Err(Error::InvalidParameter("horizons must be ≥ 1".into()));
        }
        if !self.loss_levels.iter().all(positive) {
            return Err(Error::InvalidParameter("loss levels must be > 0".into()));
        }
        Ok(())
    }

    fn points(&self) -> Vec<(f64, usize, f64)> {
        let mut out = Vec::new();
        for &lambda in &self.lambda_max_values {
            for &t in &self.horizons {
                for &loss in &self.loss_levels {
                    out.push((lambda, t, loss));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub values: Vec<f64>,
    pub error: Option<String>,
}

/// Tabular experiment output. The CSV body is a pure function of the inputs;
/// timestamps only appear in file names.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<ReportRow>,
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl ExperimentReport {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        let mut metadata = BTreeMap::new();
        metadata.insert("experiment".into(), name.into());
        metadata.insert("code_version".into(), env!("CARGO_PKG_VERSION").into());
        ExperimentReport {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            metadata,
        }
    }

    pub fn push(&mut self, values: Vec<f64>) {
        debug_assert_eq!(values.len(), self.columns.len());
        self.rows.push(ReportRow {
            values,
            error: None,
        });
    }

    /// Records a failed row; output columns are NaN.
    pub fn push_error(&mut self, params: Vec<f64>, error: String) {
        let mut values = params;
        values.resize(self.columns.len(), f64::NAN);
        self.rows.push(ReportRow {
            values,
            error: Some(error),
        });
    }

    pub fn set_meta(&mut self, key: &str, value: impl Serialize) {
        self.metadata.insert(
            key.to_string(),
            serde_json::to_value(value).unwrap_or(serde_json::Value::Null),
        );
    }

    pub fn failed_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r.values[idx]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push_str(",error\n");
        for row in &self.rows {
            let cells: Vec<String> = row.values.iter().map(|v| v.to_string()).collect();
            out.push_str(&cells.join(","));
            out.push(',');
            if let Some(e) = &row.error {
                out.push('"');
                out.push_str(&e.replace('"', "\"\""));
                out.push('"');
            }
            out.push('\n');
        }
        out
    }

    /// Writes `<name>_<stamp>.csv` and `<name>_<stamp>.meta.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>, stamp: &str) -> Result<(PathBuf, PathBuf)> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join(format!("{}_{stamp}.csv", self.name));
        let meta = dir.join(format!("{}_{stamp}.meta.json", self.name));
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let json = serde_json::to_string_pretty(&self.metadata)?;
        std::fs::write(&meta, json + "\n").map_err(|e| Error::io(&meta, e))?;
        Ok((csv, meta))
    }
}

/// Solves one scenario with uniform threshold `loss` on a fixed network.
pub fn solve_uniform(
    network: &LeverageNetwork,
    horizon: usize,
    loss: f64,
    options: &SolverOptions,
) -> Result<ShockSolution> {
    let thresholds = vec![loss; network.len()];
    let system = build_constraints(network, horizon, &thresholds)?;
    solve_min_norm(&system, options)
}

/// Rows `(lambda_max, T, loss, beta, K, IPR)`, with `beta` recalibrated on the
/// fixed leverage matrix at every `lambda_max`. Failed points are recorded
/// and the sweep continues.
pub fn sweep_cost(
    lambda_matrix: &Array2<f64>,
    grid: &SweepGrid,
    options: &SolverOptions,
) -> Result<ExperimentReport> {
    grid.validate()?;
    let points = grid.points();
    let results: Vec<Result<(f64, f64, f64)>> = points
        .par_iter()
        .map(|&(lambda, horizon, loss)| {
            let network = calibrate_beta(lambda_matrix.clone(), lambda)?;
            let solution = solve_uniform(&network, horizon, loss, options)?;
            let report = concentration(&solution);
            Ok((network.beta, solution.cost, report.ipr))
        })
        .collect();

    let mut report = ExperimentReport::new("sweep", &["lambda_max", "T", "loss", "beta", "K", "IPR"]);
    for (&(lambda, horizon, loss), result) in points.iter().zip(results) {
        let params = vec![lambda, horizon as f64, loss];
        match result {
            Ok((beta, k, ipr)) => report.push(vec![lambda, horizon as f64, loss, beta, k, ipr]),
            Err(e) => report.push_error(params, e.to_string()),
        }
    }
    report.set_meta("grid", grid);
    report.set_meta("solver", options);
    report.set_meta("beta_handling", "recalibrated per lambda_max on fixed leverage matrix");
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    /// Least-squares slope of `ln K` against `T`.
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the fit.
    pub residual: f64,
}

pub fn fit_log_slope(horizons: &[usize], costs: &[f64]) -> Result<DecayFit> {
    if horizons.len() != costs.len() || horizons.len() < 2 {
        return Err(Error::InvalidParameter(
            "need at least two (T, K) pairs of equal length".into(),
        ));
    }
    if let Some(k) = costs.iter().find(|k| !(k.is_finite() && **k > 0.0)) {
        return Err(Error::InvalidValue(format!("cannot take log of K = {k}")));
    }
    let xs: Vec<f64> = horizons.iter().map(|&t| t as f64).collect();
    let ys: Vec<f64> = costs.iter().map(|k| k.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("horizons must not all be equal".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    Ok(DecayFit {
        slope,
        intercept,
        residual: (sse / n).sqrt(),
    })
}

/// Exponential decay rate of `K` in `T` at a supercritical `lambda_max`.
pub fn decay_rate(
    lambda_matrix: &Array2<f64>,
    lambda_max: f64,
    horizons: &[usize],
    loss: f64,
    options: &SolverOptions,
) -> Result<DecayFit> {
    if !(lambda_max > 1.0) {
        return Err(Error::InvalidParameter(format!(
            "exponential decay needs lambda_max > 1, got {lambda_max}"
        )));
    }
    if horizons.len() < 10 {
        return Err(Error::InvalidParameter(format!(
            "need at least 10 horizons, got {}",
            horizons.len()
        )));
    }
    let network = calibrate_beta(lambda_matrix.clone(), lambda_max)?;
    let costs = horizons
        .par_iter()
        .map(|&t| solve_uniform(&network, t, loss, options).map(|s| s.cost))
        .collect::<Result<Vec<f64>>>()?;
    fit_log_slope(horizons, &costs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SelectivePoint {
    pub fraction: f64,
    pub stressed: usize,
    pub loss_ratio_topk: f64,
    pub loss_ratio_random_mean: f64,
}

/// `⌈f N⌉`, robust to `f N` landing a hair above an integer.
pub fn stressed_count(fraction: f64, banks: usize) -> usize {
    let raw = fraction * banks as f64;
    let k = (raw - 1e-9 * raw.abs().max(1.0)).ceil().max(0.0) as usize;
    k.min(banks)
}

fn masked_total_loss(w: ArrayView2<f64>, u: &Array2<f64>, banks: &[usize]) -> Result<f64> {
    let mut masked = Array2::<f64>::zeros(u.raw_dim());
    for &b in banks {
        masked.row_mut(b).assign(&u.row(b));
    }
    Ok(propagate_with(w, &ShockTrajectory { u: masked })?.total_final_loss())
}

/// Final system loss when only a subset of banks receives its optimal shock,
/// relative to stressing every bank. The top-k subset follows descending
/// `K_i`; the baseline averages `n_random` uniformly random orderings.
pub fn selective_stress(
    network: &LeverageNetwork,
    solution: &ShockSolution,
    fractions: &[f64],
    n_random: usize,
    seed: u64,
) -> Result<Vec<SelectivePoint>> {
    let n = network.len();
    if solution.u.banks() != n {
        return Err(Error::Dimension(format!(
            "solution has {} banks, network {n}",
            solution.u.banks()
        )));
    }
    if let Some(f) = fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(Error::InvalidParameter(format!("fraction {f} outside [0, 1]")));
    }
    let w = network.effective.view();
    let u = &solution.u.u;
    let full = propagate(network, &solution.u)?.total_final_loss();
    if !(full > 0.0) {
        return Err(Error::DegenerateCost);
    }
    let ranking = concentration(solution).ranking;
    let counts: Vec<usize> = fractions.iter().map(|&f| stressed_count(f, n)).collect();

    let topk = counts
        .par_iter()
        .map(|&k| masked_total_loss(w, u, &ranking[..k]).map(|r| r / full))
        .collect::<Result<Vec<f64>>>()?;

    let replicas = (0..n_random as u64)
        .into_par_iter()
        .map(|r| {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut replica_rng(seed, r));
            counts
                .iter()
                .map(|&k| masked_total_loss(w, u, &order[..k]).map(|v| v / full))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;

    Ok(fractions
        .iter()
        .enumerate()
        .map(|(idx, &fraction)| {
            let mean = if replicas.is_empty() {
                f64::NAN
            } else {
                replicas.iter().map(|c| c[idx]).sum::<f64>() / replicas.len() as f64
            };
            SelectivePoint {
                fraction,
                stressed: counts[idx],
                loss_ratio_topk: topk[idx],
                loss_ratio_random_mean: mean,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyMode {
    /// Bank `i` receives the share `K_i / K` of the injection.
    Targeted,
    /// Every equity grows by the same factor.
    Uniform,
}

/// How the worst-case scenario is carried over to recapitalised banks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ShockSemantics {
    /// Absolute external-asset losses are fixed, so `u'_i = u_i E_i / E'_i`.
    #[default]
    FixedAbsolute,
    /// Relative shocks `u` are reused unchanged.
    FixedRelative,
}

/// Adds `phi · ΣE` of capital, split per `mode`.
pub fn apply_policy(
    set: &BalanceSheetSet,
    solution: &ShockSolution,
    phi: f64,
    mode: PolicyMode,
) -> Result<BalanceSheetSet> {
    if !(phi.is_finite() && phi >= 0.0) {
        return Err(Error::InvalidParameter(format!("injection fraction must be ≥ 0, got {phi}")));
    }
    if solution.cost_per_bank.len() != set.len() {
        return Err(Error::Dimension(format!(
            "solution has {} banks, balance sheets {}",
            solution.cost_per_bank.len(),
            set.len()
        )));
    }
    let equities = set.equities();
    let new_equities: Vec<f64> = match mode {
        PolicyMode::Uniform => equities.iter().map(|e| (1.0 + phi) * e).collect(),
        PolicyMode::Targeted => {
            if !(solution.cost > 0.0) {
                return Err(Error::DegenerateCost);
            }
            let injection = phi * set.total_equity();
            equities
                .iter()
                .zip(solution.cost_per_bank.iter())
                .map(|(e, k)| e + k / solution.cost * injection)
                .collect()
        }
    };
    set.with_equities(&new_equities)
}

/// `R(policy) / R(original)` with `R = Σ_i h_i(T)`, both runs sharing
/// exposures and `beta`.
pub fn evaluate_policy(
    original: &BalanceSheetSet,
    policy: &BalanceSheetSet,
    exposures: &ExposureMatrix,
    solution: &ShockSolution,
    beta: f64,
    semantics: ShockSemantics,
) -> Result<f64> {
    let e0 = original.equities();
    let e1 = policy.equities();
    let w0 = leverage_from_equities(exposures.values.view(), &e0)? * beta;
    let w1 = leverage_from_equities(exposures.values.view(), &e1)? * beta;
    let base = propagate_with(w0.view(), &solution.u)?.total_final_loss();

    let mut u = solution.u.u.clone();
    if semantics == ShockSemantics::FixedAbsolute {
        for (i, mut row) in u.rows_mut().into_iter().enumerate() {
            row *= e0[i] / e1[i];
        }
    }
    let after = propagate_with(w1.view(), &ShockTrajectory { u })?.total_final_loss();
    if !(base > 0.0) {
        return Err(Error::DegenerateCost);
    }
    Ok(after / base)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PolicyPoint {
    pub phi: f64,
    pub ratio_targeted: f64,
    pub ratio_uniform: f64,
}

/// Targeted and uniform loss ratios for each injection fraction.
pub fn policy_curve(
    set: &BalanceSheetSet,
    exposures: &ExposureMatrix,
    solution: &ShockSolution,
    beta: f64,
    phis: &[f64],
    semantics: ShockSemantics,
) -> Result<Vec<PolicyPoint>> {
    phis.iter()
        .map(|&phi| {
            let ratio = |mode| {
                let policy = apply_policy(set, solution, phi, mode)?;
                evaluate_policy(set, &policy, exposures, solution, beta, semantics)
            };
            Ok(PolicyPoint {
                phi,
                ratio_targeted: ratio(PolicyMode::Targeted)?,
                ratio_uniform: ratio(PolicyMode::Uniform)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessReport {
    /// Baseline ranking first, then one per successful simulation.
    pub rankings: Vec<Vec<usize>>,
    pub stability: RankStability,
    pub failures: usize,
    pub failure_messages: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RobustnessParams {
    pub beta: f64,
    pub horizon: usize,
    pub n_sims: usize,
    /// Equities are multiplied by a uniform factor in `[1-p, 1+p]`.
    pub perturbation: f64,
    pub seed: u64,
}

/// Re-ranks banks under random equity noise with `beta` held at the baseline.
pub fn robustness(
    set: &BalanceSheetSet,
    exposures: &ExposureMatrix,
    thresholds: &[f64],
    params: &RobustnessParams,
    options: &SolverOptions,
) -> Result<RobustnessReport> {
    let p = params.perturbation;
    if !(p.is_finite() && (0.0..1.0).contains(&p)) {
        return Err(Error::InvalidParameter(format!("perturbation must be in [0, 1), got {p}")));
    }
    let rank_for = |equities: &[f64]| -> Result<Vec<usize>> {
        let lambda = leverage_from_equities(exposures.values.view(), equities)?;
        let network = LeverageNetwork::new(lambda, params.beta)?;
        let system = build_constraints(&network, params.horizon, thresholds)?;
        let solution = solve_min_norm(&system, options)?;
        Ok(concentration(&solution).ranking)
    };

    let base_equities = set.equities();
    let baseline = rank_for(&base_equities)?;
    let sims: Vec<Result<Vec<usize>>> = (0..params.n_sims as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = replica_rng(params.seed, r);
            let perturbed: Vec<f64> = base_equities
                .iter()
                .map(|e| e * (1.0 + p * (2.0 * rng.random::<f64>() - 1.0)))
                .collect();
            rank_for(&perturbed)
        })
        .collect();

    let mut rankings = vec![baseline];
    let mut failure_messages = Vec::new();
    for (r, sim) in sims.into_iter().enumerate() {
        match sim {
            Ok(rank) => rankings.push(rank),
            Err(e) => failure_messages.push(format!("simulation {r}: {e}")),
        }
    }
    let stability = rank_stability(&rankings)?;
    Ok(RobustnessReport {
        rankings,
        stability,
        failures: failure_messages.len(),
        failure_messages,
    })
}
