//! Shock concentration and systemic-importance ranking.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::solver::ShockSolution;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationReport {
    #[serde(rename = "K")]
    pub total_cost: f64,
    #[serde(rename = "K_i")]
    pub per_bank: Vec<f64>,
    /// `p_i = K_i / K`.
    pub shares: Vec<f64>,
    /// Inverse participation ratio `1 / Σ p_i²`, in `[1, N]`.
    pub ipr: f64,
    /// `(K_i - mean) / s` with the sample (N-1) standard deviation.
    pub standardized: Vec<f64>,
    /// Bank ids by descending `K_i`, ties by ascending id.
    pub ranking: Vec<usize>,
    /// Set when `K = 0`; shares, IPR and standardized values are then zero.
    pub degenerate: bool,
}

impl ConcentrationReport {
    /// Position of each bank in `ranking` (0 = largest shock).
    pub fn ranks(&self) -> Vec<usize> {
        positions(&self.ranking)
    }

    /// `bank_id,K_i,share,standardized,rank` with 1-based ranks.
    pub fn to_csv(&self) -> String {
        let ranks = self.ranks();
        let mut out = String::from("bank_id,K_i,share,standardized,rank\n");
        for i in 0..self.per_bank.len() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                i,
                self.per_bank[i],
                self.shares[i],
                self.standardized[i],
                ranks[i] + 1
            ));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn positions(ranking: &[usize]) -> Vec<usize> {
    let mut pos = vec![0; ranking.len()];
    for (p, &bank) in ranking.iter().enumerate() {
        pos[bank] = p;
    }
    pos
}

pub fn concentration(solution: &ShockSolution) -> ConcentrationReport {
    concentration_from_costs(&solution.cost_per_bank.to_vec())
}

pub fn concentration_from_costs(per_bank: &[f64]) -> ConcentrationReport {
    let n = per_bank.len();
    let total: f64 = per_bank.iter().sum();

    let mut ranking: Vec<usize> = (0..n).collect();
    ranking.sort_by(|&a, &b| per_bank[b].total_cmp(&per_bank[a]).then(a.cmp(&b)));

    if !(total > 0.0) {
        return ConcentrationReport {
            total_cost: total,
            per_bank: per_bank.to_vec(),
            shares: vec![0.0; n],
            ipr: 0.0,
            standardized: vec![0.0; n],
            ranking,
            degenerate: true,
        };
    }

    let shares: Vec<f64> = per_bank.iter().map(|k| k / total).collect();
    let ipr = 1.0 / shares.iter().map(|p| p * p).sum::<f64>();

    let mean = total / n as f64;
    let sd = if n > 1 {
        (per_bank.iter().map(|k| (k - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let standardized = if sd > 0.0 {
        per_bank.iter().map(|k| (k - mean) / sd).collect()
    } else {
        vec![0.0; n]
    };

    ConcentrationReport {
        total_cost: total,
        per_bank: per_bank.to_vec(),
        shares,
        ipr,
        standardized,
        ranking,
        degenerate: false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankStability {
    pub max_abs_change: usize,
    /// Mean of `|rank_k(i) - rank_0(i)|` over all rankings (baseline included)
    /// and all banks.
    pub mean_abs_change: f64,
    /// `(min, max)` rank position of each bank across all rankings.
    pub per_bank_ranges: Vec<(usize, usize)>,
}

/// Compares rankings against the first one. Each ranking lists bank ids in
/// rank order, as in [`ConcentrationReport::ranking`].
pub fn rank_stability(rankings: &[Vec<usize>]) -> Result<RankStability> {
    let Some(first) = rankings.first() else {
        return Err(Error::InvalidParameter("no rankings given".into()));
    };
    let n = first.len();
    let mut all_positions = Vec::with_capacity(rankings.len());
    for (k, r) in rankings.iter().enumerate() {
        let mut seen = vec![false; n];
        let valid = r.len() == n
            && r.iter().all(|&b| b < n && !std::mem::replace(&mut seen[b], true));
        if !valid {
            return Err(Error::InvalidValue(format!(
                "ranking {k} is not a permutation of 0..{n}"
            )));
        }
        all_positions.push(positions(r));
    }
    let base = &all_positions[0];
    let mut max_abs_change = 0;
    let mut total = 0usize;
    let mut per_bank_ranges: Vec<(usize, usize)> = base.iter().map(|&p| (p, p)).collect();
    for pos in &all_positions {
        for i in 0..n {
            let d = pos[i].abs_diff(base[i]);
            max_abs_change = max_abs_change.max(d);
            total += d;
            let r = &mut per_bank_ranges[i];
            r.0 = r.0.min(pos[i]);
            r.1 = r.1.max(pos[i]);
        }
    }
    let count = (all_positions.len() * n).max(1);
    Ok(RankStability {
        max_abs_change,
        mean_abs_change: total as f64 / count as f64,
        per_bank_ranges,
    })
}
