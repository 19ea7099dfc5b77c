//! Linear contagion on the interbank leverage network.
//!
//! The state is the relative equity loss `h_i(t) = (E_i(0) - E_i(t)) / E_i(0)`
//! and evolves as `h(t) = W h(t-1) + u(t)` with `h(0) = 0`, where
//! `W = beta * Lambda` and `Lambda_ij = A_ij / E_i`. One effective matrix `W`
//! is used throughout; its spectral radius is the `lambda_max` that separates
//! damped (< 1) from amplifying (> 1) dynamics. No cap is applied, losses may
//! exceed 1.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::Serialize;

use crate::balance_sheet::BalanceSheetSet;
use crate::error::{Error, Result};
use crate::reconstruction::ExposureMatrix;

pub const SPECTRAL_TOLERANCE: f64 = 1e-12;
pub const SPECTRAL_MAX_ITERATIONS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeverageNetwork {
    pub lambda_matrix: Array2<f64>,
    pub beta: f64,
    /// `W = beta * lambda_matrix`.
    pub effective: Array2<f64>,
    /// Perron root of `effective`.
    pub spectral_radius: f64,
}

impl LeverageNetwork {
    /// Builds `W = beta * Lambda` and caches its spectral radius.
    pub fn new(lambda_matrix: Array2<f64>, beta: f64) -> Result<Self> {
        check_square_nonnegative(lambda_matrix.view(), "leverage matrix")?;
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::InvalidParameter(format!("beta must be > 0, got {beta}")));
        }
        let effective = &lambda_matrix * beta;
        let spectral_radius =
            spectral_radius(effective.view(), SPECTRAL_TOLERANCE, SPECTRAL_MAX_ITERATIONS)?;
        Ok(LeverageNetwork {
            lambda_matrix,
            beta,
            effective,
            spectral_radius,
        })
    }

    pub fn len(&self) -> usize {
        self.effective.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.effective.is_empty()
    }
}

/// Shock trajectory `u`, one row per bank and one column per step `t = 1..T`.
/// `u_i(0) = 0` is implicit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShockTrajectory {
    pub u: Array2<f64>,
}

impl ShockTrajectory {
    pub fn new(u: Array2<f64>) -> Result<Self> {
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue("shock trajectory has non-finite entries".into()));
        }
        Ok(ShockTrajectory { u })
    }

    pub fn zeros(banks: usize, horizon: usize) -> Self {
        ShockTrajectory {
            u: Array2::zeros((banks, horizon)),
        }
    }

    pub fn horizon(&self) -> usize {
        self.u.ncols()
    }

    pub fn banks(&self) -> usize {
        self.u.nrows()
    }
}

/// Relative equity losses, `N×(T+1)` with column 0 identically zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossState {
    pub h: Array2<f64>,
}

impl LossState {
    pub fn horizon(&self) -> usize {
        self.h.ncols() - 1
    }

    /// `h(T)`.
    pub fn final_losses(&self) -> Array1<f64> {
        self.h.column(self.horizon()).to_owned()
    }

    /// `R = Σ_i h_i(T)`.
    pub fn total_final_loss(&self) -> f64 {
        self.h.column(self.horizon()).sum()
    }
}

fn check_square_nonnegative(m: ArrayView2<f64>, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "{what} must be square, got {}×{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidValue(format!(
            "{what} must have finite nonnegative entries"
        )));
    }
    Ok(())
}

/// `Lambda_ij = A_ij / E_i`.
pub fn leverage_matrix(exposures: &ExposureMatrix, set: &BalanceSheetSet) -> Result<Array2<f64>> {
    leverage_from_equities(exposures.values.view(), &set.equities())
}

/// As [`leverage_matrix`], with equities given directly.
pub fn leverage_from_equities(exposures: ArrayView2<f64>, equities: &[f64]) -> Result<Array2<f64>> {
    if exposures.nrows() != equities.len() || exposures.ncols() != equities.len() {
        return Err(Error::Dimension(format!(
            "exposures are {}×{} but there are {} equities",
            exposures.nrows(),
            exposures.ncols(),
            equities.len()
        )));
    }
    if let Some((i, e)) = equities
        .iter()
        .enumerate()
        .find(|(_, e)| !(e.is_finite() && **e > 0.0))
    {
        return Err(Error::InvalidValue(format!("bank {i} equity {e} must be > 0")));
    }
    let mut lambda = exposures.to_owned();
    for (mut row, &e) in lambda.axis_iter_mut(Axis(0)).zip(equities) {
        row /= e;
    }
    for i in 0..lambda.nrows() {
        lambda[[i, i]] = 0.0;
    }
    Ok(lambda)
}

/// Perron root of a nonnegative matrix by power iteration from the uniform
/// vector, stopping when `|λ_k - λ_{k-1}| ≤ tolerance·|λ_k|`.
///
/// The iterate is driven by `W + I`, which has the same Perron vector but is
/// primitive for any irreducible `W`, so bipartite or cyclic networks
/// converge too. With `x ≥ 0, Σx = 1` the estimate is `λ_k = Σ(W x)`.
/// Acyclic (nilpotent) networks are detected exactly up front and have
/// spectral radius 0.
pub fn spectral_radius(w: ArrayView2<f64>, tolerance: f64, max_iterations: usize) -> Result<f64> {
    check_square_nonnegative(w, "matrix")?;
    let n = w.nrows();
    if n == 0 || is_nilpotent(w) {
        return Ok(0.0);
    }
    let mut x = Array1::from_elem(n, 1.0 / n as f64);
    let mut prev = f64::NAN;
    let mut estimate = 0.0;
    for k in 0..max_iterations {
        let y = w.dot(&x);
        estimate = y.sum();
        if estimate == 0.0 {
            return Ok(0.0);
        }
        if k > 0 && (estimate - prev).abs() <= tolerance * estimate.abs() {
            return Ok(estimate);
        }
        prev = estimate;
        let next = y + &x;
        let norm = next.sum();
        x = next / norm;
    }
    Err(Error::SpectralNotConverged {
        estimate,
        iterations: max_iterations,
    })
}

/// For nonnegative `W`, `ρ(W) = 0` iff `W^n 1 = 0`; sums of nonnegative
/// terms cannot cancel, so the test is exact.
fn is_nilpotent(w: ArrayView2<f64>) -> bool {
    let mut v = Array1::<f64>::ones(w.nrows());
    for _ in 0..w.nrows() {
        v = w.dot(&v);
        let scale = v.iter().fold(0.0f64, |m, x| m.max(*x));
        if scale == 0.0 {
            return true;
        }
        v /= scale;
    }
    false
}

/// Picks `beta = target / ρ(Lambda)` so that `ρ(beta·Lambda) = target`.
pub fn calibrate_beta(lambda_matrix: Array2<f64>, target: f64) -> Result<LeverageNetwork> {
    if !(target.is_finite() && target > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "target spectral radius must be > 0, got {target}"
        )));
    }
    let rho = spectral_radius(
        lambda_matrix.view(),
        SPECTRAL_TOLERANCE,
        SPECTRAL_MAX_ITERATIONS,
    )?;
    if rho == 0.0 {
        return Err(Error::ZeroSpectralRadius);
    }
    LeverageNetwork::new(lambda_matrix, target / rho)
}

/// Runs `h(t) = W h(t-1) + u(t)` for `t = 1..T` from `h(0) = 0`.
pub fn propagate(network: &LeverageNetwork, shocks: &ShockTrajectory) -> Result<LossState> {
    propagate_with(network.effective.view(), shocks)
}

pub fn propagate_with(w: ArrayView2<f64>, shocks: &ShockTrajectory) -> Result<LossState> {
    let n = w.nrows();
    if shocks.banks() != n {
        return Err(Error::Dimension(format!(
            "network has {n} banks, shocks have {}",
            shocks.banks()
        )));
    }
    let horizon = shocks.horizon();
    let mut h = Array2::<f64>::zeros((n, horizon + 1));
    for t in 1..=horizon {
        let next = w.dot(&h.column(t - 1)) + shocks.u.column(t - 1);
        h.column_mut(t).assign(&next);
    }
    Ok(LossState { h })
}

/// `h(T) = Σ_{t=1}^T W^{T-t} u(t)`, evaluated with explicit matrix powers
/// rather than the recursion in [`propagate`].
pub fn closed_form_response(
    network: &LeverageNetwork,
    shocks: &ShockTrajectory,
) -> Result<Array1<f64>> {
    let w = &network.effective;
    let n = w.nrows();
    if shocks.banks() != n {
        return Err(Error::Dimension(format!(
            "network has {n} banks, shocks have {}",
            shocks.banks()
        )));
    }
    let horizon = shocks.horizon();
    let mut power = Array2::<f64>::eye(n);
    let mut out = Array1::<f64>::zeros(n);
    for t in (1..=horizon).rev() {
        out += &power.dot(&shocks.u.column(t - 1));
        power = power.dot(w);
    }
    Ok(out)
}
