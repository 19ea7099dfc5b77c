//! Independent oracles shared by the integration and acceptance tests. None
//! of these call into the solver, power iteration or RAS code they check.
#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Minimum-norm solution of `M x ≥ ℓ` by projected gradient on the dual
/// `min ½ μᵀGμ − ℓᵀμ, μ ≥ 0`, run until the natural KKT residual
/// `‖μ − max(0, μ − ∇)‖_∞` drops below `tol`. Returns `(x, K = ‖x‖²)`.
pub fn projected_gradient_oracle(m: &Array2<f64>, ell: &[f64], tol: f64) -> (Vec<f64>, f64) {
    let n = m.nrows();
    let cols = m.ncols();
    let mut g = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            g[i][j] = (0..cols).map(|c| m[[i, c]] * m[[j, c]]).sum();
        }
    }
    // Step 1/L with L bounded by the largest absolute row sum of G.
    let lip = g
        .iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut mu = vec![0.0; n];
    let mut converged = false;
    for _ in 0..50_000_000u64 {
        let grad: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| g[i][j] * mu[j]).sum::<f64>() - ell[i])
            .collect();
        let residual = (0..n)
            .map(|i| (mu[i] - (mu[i] - grad[i]).max(0.0)).abs())
            .fold(0.0, f64::max);
        if residual <= tol {
            converged = true;
            break;
        }
        for i in 0..n {
            mu[i] = (mu[i] - grad[i] / lip).max(0.0);
        }
    }
    assert!(converged, "projected gradient oracle did not reach {tol}");
    let x: Vec<f64> = (0..cols)
        .map(|c| (0..n).map(|i| m[[i, c]] * mu[i]).sum())
        .collect();
    let k = x.iter().map(|v| v * v).sum();
    (x, k)
}

/// Gaussian elimination with partial pivoting.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Enumerates every candidate active set, keeps KKT points (μ ≥ 0 and
/// feasible) and returns the smallest cost. Exponential in N; N ≤ 6 only.
pub fn enumeration_oracle(m: &Array2<f64>, ell: &[f64]) -> f64 {
    let n = m.nrows();
    let cols = m.ncols();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << n) {
        let idx: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let mut mu = vec![0.0; n];
        if !idx.is_empty() {
            let a: Vec<Vec<f64>> = idx
                .iter()
                .map(|&i| {
                    idx.iter()
                        .map(|&j| (0..cols).map(|c| m[[i, c]] * m[[j, c]]).sum())
                        .collect()
                })
                .collect();
            let b: Vec<f64> = idx.iter().map(|&i| ell[i]).collect();
            let Some(z) = solve_dense(a, b) else { continue };
            if z.iter().any(|&v| v < -1e-12) {
                continue;
            }
            for (&i, &v) in idx.iter().zip(&z) {
                mu[i] = v.max(0.0);
            }
        }
        let x: Vec<f64> = (0..cols)
            .map(|c| (0..n).map(|i| m[[i, c]] * mu[i]).sum())
            .collect();
        let feasible = (0..n).all(|i| {
            let lhs: f64 = (0..cols).map(|c| m[[i, c]] * x[c]).sum();
            lhs >= ell[i] - 1e-10
        });
        if feasible {
            best = best.min(x.iter().map(|v| v * v).sum());
        }
    }
    best
}

/// Iterative proportional fitting from an all-ones off-diagonal start,
/// scaling columns before rows. Returns the fitted matrix.
pub fn ipf_oracle(a: &[f64], l: &[f64], sweeps: usize) -> Vec<Vec<f64>> {
    let n = a.len();
    let total_a: f64 = a.iter().sum();
    let total_l: f64 = l.iter().sum();
    let l: Vec<f64> = l.iter().map(|v| v * total_a / total_l).collect();
    let mut x: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 0.0 } else { 1.0 }).collect())
        .collect();
    for _ in 0..sweeps {
        for j in 0..n {
            let s: f64 = (0..n).map(|i| x[i][j]).sum();
            if s > 0.0 {
                for row in x.iter_mut() {
                    row[j] *= l[j] / s;
                }
            }
        }
        for (i, row) in x.iter_mut().enumerate() {
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                for v in row.iter_mut() {
                    *v *= a[i] / s;
                }
            }
        }
    }
    x
}

/// Characteristic polynomial coefficients `c[0..=n]` (monic, `c[n] = 1`)
/// by Faddeev–LeVerrier.
fn char_poly(a: &Array2<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut c = vec![0.0; n + 1];
    c[n] = 1.0;
    let mut mk = Array2::<f64>::zeros((n, n));
    for k in 1..=n {
        mk = a.dot(&mk) + Array2::<f64>::eye(n) * c[n - k + 1];
        let amk = a.dot(&mk);
        c[n - k] = -amk.diag().sum() / k as f64;
    }
    c
}

fn poly_eval(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ck| acc * x + ck)
}

/// Largest real root of the characteristic polynomial: scan down from the
/// Cauchy bound for the first sign change, then bisect.
pub fn largest_real_eigenvalue(a: &Array2<f64>) -> f64 {
    let c = char_poly(a);
    let bound = 1.0 + c[..c.len() - 1].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let steps = 200_000;
    let h = 2.0 * bound / steps as f64;
    let mut hi = bound;
    let mut lo = hi - h;
    while poly_eval(&c, lo) > 0.0 {
        hi = lo;
        lo -= h;
        assert!(lo > -bound - h, "no real root found");
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if poly_eval(&c, mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Random nonnegative matrix with zero diagonal, scaled so that its
/// spectral radius (computed by the char-poly oracle) equals `rho`.
pub fn random_network(rng: &mut ChaCha20Rng, n: usize, rho: f64) -> Array2<f64> {
    let mut w = Array2::<f64>::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            0.0
        } else {
            rng.random::<f64>()
        }
    });
    if n == 1 {
        return w;
    }
    let current = largest_real_eigenvalue(&w);
    w *= rho / current;
    w
}

/// `λ/(N−1)` everywhere off the diagonal: every row and column sums to `λ`.
pub fn complete_homogeneous(n: usize, lambda: f64) -> Array2<f64> {
    Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            0.0
        } else {
            lambda / (n - 1) as f64
        }
    })
}

/// Circulant network with unequal weights; rows and columns still sum to `λ`.
pub fn circulant_homogeneous(n: usize, lambda: f64) -> Array2<f64> {
    let weights: Vec<f64> = (1..n).map(|k| k as f64).collect();
    let total: f64 = weights.iter().sum();
    Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            0.0
        } else {
            let k = (j + n - i) % n;
            lambda * weights[k - 1] / total
        }
    })
}
