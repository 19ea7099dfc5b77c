//! Minimum-norm reverse stress test.
//!
//! Unknowns are the shock increments `Δu_j(s) = u_j(s) - u_j(s-1)`, stacked
//! time-major (`column = (s-1)·N + j`). Reordering the double sum in the
//! final-loss constraint, the coefficient of `Δu_j(s)` in the constraint of
//! bank `i` is `[S_{T-s}]_ij` with `S_m = Σ_{k=0}^m W^k`, so
//!
//! ```text
//! minimize ½‖Δu‖²  subject to  M Δu ≥ ℓ,   M = [S_{T-1} | S_{T-2} | … | S_0].
//! ```
//!
//! The problem is solved through its dual, `max μᵀℓ - ½ μᵀ(MMᵀ)μ` over
//! `μ ≥ 0`, which has only `N` variables. The dual is handled by a
//! Lawson–Hanson style active-set loop; the primal is `Δu = Mᵀμ`. Because the
//! last block is `S_0 = I`, `MMᵀ ⪰ I` is always positive definite.

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use serde::Serialize;

use crate::dynamics::{LeverageNetwork, ShockTrajectory};
use crate::error::{Error, Result};
use crate::linalg::{max_abs, solve_spd};

/// Slack below which (relative to `1 + |ℓ_i|`) a constraint is reported active.
const ACTIVE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverOptions {
    /// Dual-gradient tolerance, relative to `1 + max|ℓ|`.
    pub tolerance: f64,
    /// Cap on active-set subproblem solves.
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tolerance: 1e-12,
            max_iterations: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSystem {
    /// `N × (N·T)`, nonnegative.
    pub matrix: Array2<f64>,
    pub thresholds: Array1<f64>,
    pub horizon: usize,
}

impl ConstraintSystem {
    pub fn banks(&self) -> usize {
        self.matrix.nrows()
    }

    /// Column block multiplying `Δu(s)`, `s` in `1..=T`.
    pub fn block(&self, s: usize) -> ndarray::ArrayView2<'_, f64> {
        let n = self.banks();
        self.matrix.slice(s![.., (s - 1) * n..s * n])
    }

    /// `M Δu` for an `N×T` increment matrix.
    pub fn apply(&self, delta_u: &Array2<f64>) -> Array1<f64> {
        self.matrix.dot(&stack(delta_u))
    }
}

/// Time-major stacking of an `N×T` matrix.
fn stack(m: &Array2<f64>) -> Array1<f64> {
    m.t().iter().copied().collect()
}

fn unstack(x: ArrayView1<f64>, banks: usize, horizon: usize) -> Array2<f64> {
    Array2::from_shape_fn((banks, horizon), |(j, t)| x[t * banks + j])
}

/// Assembles `M` from the blocks `S_0 = I`, `S_m = I + W S_{m-1}`.
pub fn build_constraints(
    network: &LeverageNetwork,
    horizon: usize,
    thresholds: &[f64],
) -> Result<ConstraintSystem> {
    let n = network.len();
    if horizon == 0 {
        return Err(Error::InvalidParameter("horizon T must be ≥ 1".into()));
    }
    if thresholds.len() != n {
        return Err(Error::Dimension(format!(
            "{} thresholds for {n} banks",
            thresholds.len()
        )));
    }
    if let Some((i, l)) = thresholds
        .iter()
        .enumerate()
        .find(|(_, l)| !(l.is_finite() && **l >= 0.0))
    {
        return Err(Error::InvalidParameter(format!(
            "threshold of bank {i} must be finite and ≥ 0, got {l}"
        )));
    }

    let w = &network.effective;
    let identity = Array2::<f64>::eye(n);
    let mut matrix = Array2::<f64>::zeros((n, n * horizon));
    let mut partial = identity.clone();
    // Block for s = T is S_0; walk s downwards.
    for s in (1..=horizon).rev() {
        matrix
            .slice_mut(s![.., (s - 1) * n..s * n])
            .assign(&partial);
        if s > 1 {
            partial = &identity + &w.dot(&partial);
        }
    }
    Ok(ConstraintSystem {
        matrix,
        thresholds: Array1::from(thresholds.to_vec()),
        horizon,
    })
}

/// KKT residuals of a returned solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KktResiduals {
    /// `max(0, max_i(ℓ_i - (MΔu)_i))`.
    pub primal_infeasibility: f64,
    /// `max(0, -min_i μ_i)`.
    pub dual_infeasibility: f64,
    /// `|μᵀ(MΔu - ℓ)|`.
    pub complementarity: f64,
    /// `‖Δu - Mᵀμ‖_∞`.
    pub stationarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShockSolution {
    /// `N×T` increments.
    pub delta_u: Array2<f64>,
    pub u: ShockTrajectory,
    /// `K = Σ_i K_i`, without the ½ of the objective.
    pub cost: f64,
    /// `K_i = Σ_t Δu_i(t)²`.
    pub cost_per_bank: Array1<f64>,
    pub multipliers: Array1<f64>,
    pub active_set: Vec<usize>,
    pub converged: bool,
    pub iterations: usize,
    pub kkt: KktResiduals,
}

/// Wire format of a solution.
#[derive(Debug, Serialize, serde::Deserialize, PartialEq)]
pub struct ShockSolutionJson {
    #[serde(rename = "K")]
    pub k: f64,
    #[serde(rename = "K_i")]
    pub k_i: Vec<f64>,
    pub delta_u: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub active_set: Vec<usize>,
    pub mu: Vec<f64>,
}

impl ShockSolution {
    pub fn horizon(&self) -> usize {
        self.delta_u.ncols()
    }

    pub fn to_json(&self) -> ShockSolutionJson {
        let rows = |m: &Array2<f64>| m.rows().into_iter().map(|r| r.to_vec()).collect();
        ShockSolutionJson {
            k: self.cost,
            k_i: self.cost_per_bank.to_vec(),
            delta_u: rows(&self.delta_u),
            u: rows(&self.u.u),
            active_set: self.active_set.clone(),
            mu: self.multipliers.to_vec(),
        }
    }
}

/// Dual active-set solve of the minimum-norm problem.
///
/// Hitting `max_iterations` is not an error: the last iterate is returned
/// with `converged = false`.
pub fn solve_min_norm(system: &ConstraintSystem, options: &SolverOptions) -> Result<ShockSolution> {
    let m = &system.matrix;
    let ell = &system.thresholds;
    let n = system.banks();

    for i in 0..n {
        if ell[i] > 0.0 && m.row(i).iter().all(|&v| v == 0.0) {
            return Err(Error::Infeasible {
                bank: i,
                threshold: ell[i],
            });
        }
    }

    let gram = m.dot(&m.t());
    let gtol = options.tolerance * (1.0 + max_abs(ell.view()));

    let mut mu = Array1::<f64>::zeros(n);
    let mut passive = vec![false; n];
    let mut blocked = vec![false; n];
    let mut iterations = 0;
    let mut converged = false;

    'outer: loop {
        // Negative dual gradient, ℓ - Gμ = ℓ - MΔu.
        let w = ell - &gram.dot(&mu);
        let entering = (0..n)
            .filter(|&j| !passive[j] && !blocked[j] && w[j] > gtol)
            .max_by(|&a, &b| w[a].total_cmp(&w[b]).then(b.cmp(&a)));
        let Some(j) = entering else {
            converged = true;
            break;
        };
        passive[j] = true;
        let mut first = true;

        loop {
            if iterations >= options.max_iterations {
                break 'outer;
            }
            iterations += 1;
            let idx: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
            let z = solve_subproblem(&gram, ell, &idx);

            if idx.iter().zip(z.iter()).all(|(_, &v)| v > 0.0) {
                mu.fill(0.0);
                for (&i, &v) in idx.iter().zip(z.iter()) {
                    mu[i] = v;
                }
                blocked.fill(false);
                break;
            }
            if first {
                if let Some(pos) = idx.iter().position(|&i| i == j) {
                    if z[pos] <= 0.0 {
                        // Numerically spurious entry; keep μ and try another.
                        passive[j] = false;
                        blocked[j] = true;
                        continue 'outer;
                    }
                }
            }
            first = false;

            // Step from μ toward z until the first passive variable hits 0.
            let mut alpha = f64::INFINITY;
            for (&i, &zi) in idx.iter().zip(z.iter()) {
                if zi <= 0.0 {
                    let a = mu[i] / (mu[i] - zi);
                    if a < alpha {
                        alpha = a;
                    }
                }
            }
            for (&i, &zi) in idx.iter().zip(z.iter()) {
                mu[i] += alpha * (zi - mu[i]);
                if mu[i] <= 0.0 || (zi <= 0.0 && mu[i] <= f64::EPSILON * zi.abs()) {
                    mu[i] = 0.0;
                    passive[i] = false;
                }
            }
        }
    }

    Ok(assemble(system, mu, converged, iterations))
}

fn solve_subproblem(gram: &Array2<f64>, ell: &Array1<f64>, idx: &[usize]) -> Array1<f64> {
    let g = gram.select(Axis(0), idx).select(Axis(1), idx);
    let rhs = ell.select(Axis(0), idx);
    solve_spd(g.view(), rhs.view()).expect("Gram matrix MMᵀ ⪰ I is positive definite")
}

fn assemble(system: &ConstraintSystem, mu: Array1<f64>, converged: bool, iterations: usize) -> ShockSolution {
    let n = system.banks();
    let horizon = system.horizon;
    let x = system.matrix.t().dot(&mu);
    let delta_u = unstack(x.view(), n, horizon);
    let u = cumulative_shocks(&delta_u);
    let cost_per_bank = delta_u.map_axis(Axis(1), |row| row.iter().map(|v| v * v).sum::<f64>());
    let cost = cost_per_bank.iter().sum();

    let achieved = system.matrix.dot(&x);
    let slack = &achieved - &system.thresholds;
    let active_set = (0..n)
        .filter(|&i| mu[i] > 0.0 || slack[i] <= ACTIVE_TOLERANCE * (1.0 + system.thresholds[i].abs()))
        .collect();
    let kkt = KktResiduals {
        primal_infeasibility: slack.iter().fold(0.0f64, |m, &s| m.max(-s)),
        dual_infeasibility: mu.iter().fold(0.0f64, |m, &v| m.max(-v)),
        complementarity: mu.dot(&slack).abs(),
        stationarity: 0.0,
    };
    ShockSolution {
        delta_u,
        u,
        cost,
        cost_per_bank,
        multipliers: mu,
        active_set,
        converged,
        iterations,
        kkt,
    }
}

/// Prefix sums along time: `u_i(t) = Σ_{s≤t} Δu_i(s)`.
pub fn cumulative_shocks(delta_u: &Array2<f64>) -> ShockTrajectory {
    let mut u = delta_u.clone();
    u.accumulate_axis_inplace(Axis(1), |&prev, cur| *cur += prev);
    ShockTrajectory { u }
}

/// Inverse of [`cumulative_shocks`].
pub fn increments(shocks: &ShockTrajectory) -> Array2<f64> {
    let u = &shocks.u;
    let mut d = u.clone();
    for t in (1..u.ncols()).rev() {
        let diff = &u.column(t) - &u.column(t - 1);
        d.column_mut(t).assign(&diff);
    }
    d
}

/// `g(s) = Σ_{k=0}^{T-s} λ^k` for `s = 1..=T`, built backwards from `g(T) = 1`.
fn tail_sums(lambda: f64, horizon: usize) -> Vec<f64> {
    let mut g = vec![0.0; horizon];
    let mut acc = 0.0;
    for s in (0..horizon).rev() {
        acc = 1.0 + lambda * acc;
        g[s] = acc;
    }
    g
}

/// Optimal per-bank increments in a homogeneous system with `βc = λ`:
/// `Δu(t) = ℓ g(t) / Σ_s g(s)²`.
pub fn homogeneous_delta_u(lambda: f64, horizon: usize, loss: f64) -> Vec<f64> {
    assert!(lambda >= 0.0 && horizon >= 1, "need λ ≥ 0 and T ≥ 1");
    let g = tail_sums(lambda, horizon);
    let denom: f64 = g.iter().map(|v| v * v).sum();
    g.iter().map(|v| loss * v / denom).collect()
}

/// Per-bank cost in the homogeneous system,
///
/// ```text
/// K = (λ-1)³(λ+1)ℓ² / [T(λ²-1) + λ(λ^T-1)(λ^{T+1}-λ-2)],
/// ```
///
/// with `K = 6ℓ²/(T(T+1)(2T+1))` at `λ = 1`. The closed form cancels badly
/// when `|λ-1|·T` is small; there the sum `ℓ² / Σ_s g(s)²` is used instead.
pub fn homogeneous_cost(lambda: f64, horizon: usize, loss: f64) -> f64 {
    assert!(lambda >= 0.0 && horizon >= 1, "need λ ≥ 0 and T ≥ 1");
    let t = horizon as f64;
    if lambda == 1.0 {
        return 6.0 * loss * loss / (t * (t + 1.0) * (2.0 * t + 1.0));
    }
    if (lambda - 1.0).abs() * t < 0.1 {
        let g = tail_sums(lambda, horizon);
        return loss * loss / g.iter().map(|v| v * v).sum::<f64>();
    }
    let d = lambda - 1.0;
    let lt = lambda.powi(horizon as i32);
    let num = d * d * d * (lambda + 1.0) * loss * loss;
    let den = t * (lambda * lambda - 1.0) + lambda * (lt - 1.0) * (lt * lambda - lambda - 2.0);
    num / den
}
