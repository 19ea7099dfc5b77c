//! Bank balance-sheet records, CSV ingestion and a seeded synthetic generator.
//!
//! CSV schema (header required):
//!
//! ```text
//! id,name,equity,interbank_assets,interbank_liabilities,total_liabilities
//! ```
//!
//! `total_liabilities` may be left empty. Row order defines the bank index and
//! `id` must equal the zero-based row position.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Interbank totals are drawn as a fraction in `[SYNTH_MIN_FRACTION, 1)` of
/// this multiple of equity.
const SYNTH_INTERBANK_MULTIPLE: f64 = 3.0;
const SYNTH_MIN_FRACTION: f64 = 0.1;
/// Upper bound on a bank's asset share plus liability share. Zero-diagonal
/// RAS needs this sum to stay at or below 1.
const SYNTH_MAX_SHARE_SUM: f64 = 0.9;

/// One bank's balance-sheet marginals at `t = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankRecord {
    pub id: usize,
    pub name: String,
    pub equity: f64,
    #[serde(rename = "interbank_assets")]
    pub interbank_assets_total: f64,
    #[serde(rename = "interbank_liabilities")]
    pub interbank_liabilities_total: f64,
    /// Informational only; no computation reads it.
    pub total_liabilities: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceSheetSet {
    pub banks: Vec<BankRecord>,
    pub currency_unit: String,
}

/// A broken invariant, naming the bank (if any) and field involved.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub bank: Option<usize>,
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.bank {
            Some(b) => write!(f, "bank {b} field {}: {}", self.field, self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

impl Violation {
    fn bank(bank: usize, field: &str, message: impl Into<String>) -> Self {
        Violation {
            bank: Some(bank),
            field: field.to_string(),
            message: message.into(),
        }
    }
}

impl BalanceSheetSet {
    pub fn new(banks: Vec<BankRecord>, currency_unit: impl Into<String>) -> Self {
        BalanceSheetSet {
            banks,
            currency_unit: currency_unit.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.banks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.banks.is_empty()
    }

    pub fn equities(&self) -> Vec<f64> {
        self.banks.iter().map(|b| b.equity).collect()
    }

    pub fn interbank_assets(&self) -> Vec<f64> {
        self.banks.iter().map(|b| b.interbank_assets_total).collect()
    }

    pub fn interbank_liabilities(&self) -> Vec<f64> {
        self.banks
            .iter()
            .map(|b| b.interbank_liabilities_total)
            .collect()
    }

    pub fn total_equity(&self) -> f64 {
        self.banks.iter().map(|b| b.equity).sum()
    }

    /// Returns a copy with equities replaced, all other fields untouched.
    pub fn with_equities(&self, equities: &[f64]) -> Result<Self> {
        if equities.len() != self.len() {
            return Err(Error::Dimension(format!(
                "{} equities for {} banks",
                equities.len(),
                self.len()
            )));
        }
        let mut out = self.clone();
        for (bank, &e) in out.banks.iter_mut().zip(equities) {
            bank.equity = e;
        }
        Ok(out)
    }

    /// Validates and converts into `Err(Error::Validation)` when any
    /// invariant fails.
    pub fn validated(self) -> Result<Self> {
        let violations = validate(&self);
        if violations.is_empty() {
            Ok(self)
        } else {
            Err(Error::Validation(violations))
        }
    }
}

/// Checks every invariant of [`BankRecord`] and [`BalanceSheetSet`]. The
/// returned list is empty iff the set is valid.
pub fn validate(set: &BalanceSheetSet) -> Vec<Violation> {
    let mut out = Vec::new();
    if set.banks.len() < 2 {
        out.push(Violation {
            bank: None,
            field: "banks".into(),
            message: "N ≥ 2 required".into(),
        });
    }
    let mut seen = vec![false; set.banks.len()];
    for (pos, bank) in set.banks.iter().enumerate() {
        if bank.id >= set.banks.len() {
            out.push(Violation::bank(
                bank.id,
                "id",
                format!("id out of range 0..{}", set.banks.len()),
            ));
        } else if seen[bank.id] {
            out.push(Violation::bank(bank.id, "id", "duplicate id"));
        } else {
            seen[bank.id] = true;
            if bank.id != pos {
                out.push(Violation::bank(
                    bank.id,
                    "id",
                    format!("id does not match row position {pos}"),
                ));
            }
        }
        if !(bank.equity.is_finite() && bank.equity > 0.0) {
            out.push(Violation::bank(
                bank.id,
                "equity",
                format!("must be finite and > 0, got {}", bank.equity),
            ));
        }
        for (field, v) in [
            ("interbank_assets", bank.interbank_assets_total),
            ("interbank_liabilities", bank.interbank_liabilities_total),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                out.push(Violation::bank(
                    bank.id,
                    field,
                    format!("must be finite and ≥ 0, got {v}"),
                ));
            }
        }
        if let Some(l) = bank.total_liabilities {
            if !(l.is_finite() && l >= 0.0) {
                out.push(Violation::bank(
                    bank.id,
                    "total_liabilities",
                    format!("must be finite and ≥ 0, got {l}"),
                ));
            }
        }
    }
    out
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    id: usize,
    name: String,
    equity: f64,
    interbank_assets: f64,
    interbank_liabilities: f64,
    total_liabilities: Option<f64>,
}

/// Reads a balance-sheet CSV and validates it.
pub fn load_balance_sheets(path: impl AsRef<Path>) -> Result<BalanceSheetSet> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let mut banks = Vec::new();
    let mut names: HashMap<String, usize> = HashMap::new();
    for (pos, row) in reader.deserialize::<CsvRow>().enumerate() {
        let row = row.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        if let Some(&first) = names.get(&row.name) {
            return Err(Error::DuplicateName {
                name: row.name,
                first,
                second: pos,
            });
        }
        names.insert(row.name.clone(), pos);
        banks.push(BankRecord {
            id: row.id,
            name: row.name,
            equity: row.equity,
            interbank_assets_total: row.interbank_assets,
            interbank_liabilities_total: row.interbank_liabilities,
            total_liabilities: row.total_liabilities,
        });
    }
    BalanceSheetSet::new(banks, "").validated()
}

/// Writes the CSV schema read by [`load_balance_sheets`]. Floats use the
/// shortest round-trip representation, so a write/read cycle is lossless.
pub fn write_balance_sheets(set: &BalanceSheetSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from(
        "id,name,equity,interbank_assets,interbank_liabilities,total_liabilities\n",
    );
    for b in &set.banks {
        let total = b.total_liabilities.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            b.id,
            csv_field(&b.name),
            b.equity,
            b.interbank_assets_total,
            b.interbank_liabilities_total,
            total
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) || s.trim() != s {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Seeded synthetic system standing in for proprietary balance-sheet data.
///
/// Equities are log-normal with median `size_scale` and log-standard-deviation
/// `heterogeneity`. Interbank assets and liabilities are independent uniform
/// fractions of `3 * equity`. If one bank's asset and liability shares
/// together are too large for a zero-diagonal matrix, all shares are pulled
/// toward equal shares just far enough to fix it.
pub fn generate_synthetic(
    n: usize,
    size_scale: f64,
    heterogeneity: f64,
    seed: u64,
) -> Result<BalanceSheetSet> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("n must be ≥ 2, got {n}")));
    }
    if !(size_scale.is_finite() && size_scale > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "size_scale must be > 0, got {size_scale}"
        )));
    }
    if !(heterogeneity.is_finite() && heterogeneity >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "heterogeneity must be ≥ 0, got {heterogeneity}"
        )));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let fraction = Uniform::new(SYNTH_MIN_FRACTION, 1.0).expect("valid uniform bounds");
    let mut equity = Vec::with_capacity(n);
    let mut assets = Vec::with_capacity(n);
    let mut liabilities = Vec::with_capacity(n);
    for _ in 0..n {
        let z: f64 = StandardNormal.sample(&mut rng);
        let e = size_scale * (heterogeneity * z).exp();
        equity.push(e);
        assets.push(e * SYNTH_INTERBANK_MULTIPLE * fraction.sample(&mut rng));
        liabilities.push(e * SYNTH_INTERBANK_MULTIPLE * fraction.sample(&mut rng));
    }
    // After liabilities are rescaled to the asset total S, feasibility is
    // a_i + l_i ≤ S. Blend the shares toward 1/n just enough to meet the bound.
    let total_a: f64 = assets.iter().sum();
    let total_l: f64 = liabilities.iter().sum();
    let even = 2.0 / n as f64;
    let bound = SYNTH_MAX_SHARE_SUM.max(even);
    let blend = (0..n)
        .map(|i| assets[i] / total_a + liabilities[i] / total_l)
        .filter(|&s| s > bound)
        .map(|s| (s - bound) / (s - even))
        .fold(0.0f64, f64::max)
        .min(1.0);
    if blend > 0.0 {
        for (v, total) in [(&mut assets, total_a), (&mut liabilities, total_l)] {
            for x in v.iter_mut() {
                *x = ((1.0 - blend) * *x / total + blend / n as f64) * total;
            }
        }
    }

    let banks = (0..n)
        .map(|i| BankRecord {
            id: i,
            name: format!("BANK{i:03}"),
            equity: equity[i],
            interbank_assets_total: assets[i],
            interbank_liabilities_total: liabilities[i],
            total_liabilities: None,
        })
        .collect();
    BalanceSheetSet::new(banks, "synthetic").validated()
}
