//! Permutation calibration of a critical-vector family.
//!
//! For each row `j` of the p-value matrix, `λ_j` is the largest `λ` whose
//! curve the sorted row dominates. `λ_α` is the largest `λ` dominated by at
//! least `⌈(1 - α) w⌉` rows, which is the `k`-th smallest `λ_j` with
//! `k = w - ⌈(1 - α) w⌉ + 1` (equal to `⌊α w⌋ + 1`).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bound::CriticalVector;
use crate::error::{Error, Result};
use crate::family::CriticalFamily;
use crate::stats::PValueMatrix;

/// Number of rows that must dominate the calibrated curve: `⌈(1 - α) w⌉`.
pub fn required_count(alpha: f64, w: usize) -> usize {
    // The small slack keeps e.g. (1 - 0.05) * 20 = 19.000000000000004 at 19.
    ((1.0 - alpha) * w as f64 - 1e-9).ceil().max(0.0) as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub family: CriticalFamily,
    pub alpha: f64,
    pub lambda_alpha: f64,
    pub per_permutation_lambdas: Vec<f64>,
    pub critical_vector: Vec<f64>,
    /// Set when `α w < 1`: no curve can be excluded, so nothing is rejected
    /// beyond what the smallest `λ_j` allows.
    pub powerless: bool,
}

impl Calibration {
    pub fn w(&self) -> usize {
        self.per_permutation_lambdas.len()
    }

    pub fn m(&self) -> usize {
        self.critical_vector.len()
    }

    pub fn critical(&self) -> CriticalVector {
        CriticalVector::from_calibration(self)
    }

    /// Rows whose curve at `λ_α` they dominate.
    pub fn dominating_rows(&self) -> usize {
        self.per_permutation_lambdas
            .iter()
            .filter(|&&l| l >= self.lambda_alpha)
            .count()
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

fn check_dims(pvals: &PValueMatrix, family: &CriticalFamily) -> Result<()> {
    if pvals.m() != family.m() {
        return Err(Error::DimensionMismatch(format!(
            "p-value matrix has {} columns, family has m = {}",
            pvals.m(),
            family.m()
        )));
    }
    Ok(())
}

/// `λ_j` for every row of `pvals`.
pub fn row_lambdas(pvals: &PValueMatrix, family: &CriticalFamily) -> Result<Vec<f64>> {
    check_dims(pvals, family)?;
    let m = pvals.m();
    let lambdas = (0..pvals.w())
        .into_par_iter()
        .map_init(
            || Vec::with_capacity(m),
            |buf, j| {
                buf.clear();
                buf.extend_from_slice(pvals.row(j));
                buf.sort_unstable_by(f64::total_cmp);
                family.max_lambda_unchecked(buf)
            },
        )
        .collect();
    Ok(lambdas)
}

/// Calibrates `family` on `pvals` at level `alpha`.
pub fn calibrate(pvals: &PValueMatrix, family: &CriticalFamily, alpha: f64) -> Result<Calibration> {
    check_alpha(alpha)?;
    let lambdas = row_lambdas(pvals, family)?;
    calibrate_from_lambdas(family, alpha, lambdas)
}

/// Calibration given precomputed `λ_j` values.
pub fn calibrate_from_lambdas(family: &CriticalFamily, alpha: f64, lambdas: Vec<f64>) -> Result<Calibration> {
    check_alpha(alpha)?;
    let w = lambdas.len();
    if w < 2 {
        return Err(Error::invalid("calibration needs at least two rows"));
    }
    let powerless = alpha * (w as f64) < 1.0;
    if powerless {
        log::warn!(
            "alpha * w = {} < 1: the permutation method has no power at this resolution",
            alpha * w as f64
        );
    }
    let k = w - required_count(alpha, w) + 1;
    let mut sorted = lambdas.clone();
    sorted.sort_unstable_by(f64::total_cmp);
    let lambda_alpha = sorted[k - 1];
    let critical_vector = critical_values(family, lambda_alpha);
    Ok(Calibration {
        family: *family,
        alpha,
        lambda_alpha,
        per_permutation_lambdas: lambdas,
        critical_vector,
        powerless,
    })
}

/// `l(λ)`, or all `-inf` when `λ = -inf` (no admissible curve was dominated).
fn critical_values(family: &CriticalFamily, lambda: f64) -> Vec<f64> {
    if lambda == f64::NEG_INFINITY {
        return vec![f64::NEG_INFINITY; family.m()];
    }
    family
        .curve(lambda)
        .expect("calibrated lambda lies in the family range")
}

/// Number of rows whose sorted p-values dominate `l(λ)`.
pub fn condition_count(pvals: &PValueMatrix, family: &CriticalFamily, lambda: f64) -> Result<usize> {
    check_dims(pvals, family)?;
    let (lo, hi) = family.lambda_range();
    if !(lambda >= lo && lambda <= hi) {
        return Err(Error::LambdaOutOfRange {
            family: family.kind().name(),
            lambda,
            min: lo,
            max: hi,
        });
    }
    let mut buf = Vec::with_capacity(pvals.m());
    let mut count = 0;
    for row in pvals.rows() {
        buf.clear();
        buf.extend_from_slice(row);
        buf.sort_unstable_by(f64::total_cmp);
        if family.dominated_by(&buf, lambda) {
            count += 1;
        }
    }
    Ok(count)
}

/// Calibration that sees only the known true-null columns. Simulation
/// diagnostic only: it needs the unknown null set.
pub fn oracle_calibrate(
    pvals: &PValueMatrix,
    null_columns: &[usize],
    family_kind: crate::family::FamilySpec,
    alpha: f64,
) -> Result<Calibration> {
    if null_columns.is_empty() {
        return Err(Error::invalid("oracle calibration needs at least one null column"));
    }
    let m = pvals.m();
    if let Some(&bad) = null_columns.iter().find(|&&c| c >= m) {
        return Err(Error::IndexOutOfRange { index: bad, m });
    }
    let w = pvals.w();
    let mut values = Vec::with_capacity(w * null_columns.len());
    for row in pvals.rows() {
        values.extend(null_columns.iter().map(|&c| row[c]));
    }
    let restricted = PValueMatrix::from_values(values, w, null_columns.len(), pvals.alternative)?;
    let family = family_kind.build(null_columns.len())?;
    calibrate(&restricted, &family, alpha)
}
