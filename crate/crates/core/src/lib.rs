//! Reverse stress testing for interbank networks.
//!
//! Given balance-sheet marginals for a set of banks, this crate reconstructs a
//! complete exposure network (RAS), builds the linear contagion map
//! `h(t) = W h(t-1) + u(t)` with `W = beta * Lambda`, and solves for the
//! smallest shock trajectory (in the sum of squared increments) that drives
//! every bank's final relative loss above a threshold. The per-bank split of
//! that cost ranks banks by systemic importance and feeds the experiment
//! harness (parameter sweeps, selective stressing, capital policies,
//! ranking robustness).
//!
//! Losses are never capped at 1: the dynamics are the uncapped linear map.

pub mod analytics;
pub mod balance_sheet;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod reconstruction;
pub mod solver;

pub use analytics::{concentration, rank_stability, ConcentrationReport, RankStability};
pub use balance_sheet::{
    generate_synthetic, load_balance_sheets, validate, write_balance_sheets, BalanceSheetSet,
    BankRecord, Violation,
};
pub use dynamics::{
    calibrate_beta, closed_form_response, leverage_matrix, propagate, spectral_radius,
    LeverageNetwork, LossState, ShockTrajectory,
};
pub use error::{Error, Result};
pub use reconstruction::{ras_reconstruct, read_exposures, write_exposures, ExposureMatrix};
pub use solver::{
    build_constraints, cumulative_shocks, homogeneous_cost, homogeneous_delta_u, solve_min_norm,
    ConstraintSystem, ShockSolution, SolverOptions,
};
