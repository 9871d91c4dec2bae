//! Monotone families of candidate critical vectors `l(λ)`.
//!
//! Each family maps a scalar `λ` from an admissible interval to a vector
//! `l_1(λ), ..., l_m(λ)` that is nondecreasing in `λ` for every index that can
//! bind (for the shifted families, indices `i > δ`; for `i <= δ` the entries
//! are `<= 0` and no p-value in `(0, 1]` can fall below them).
//!
//! | family | `l_i(λ)` | `λ` range |
//! |---|---|---|
//! | Simes shift | `(i - δ) λ / (m - δ)` | `[0, 1]` |
//! | AORC shift | `(i - δ) λ / ((m - δ) - (i - δ)(1 - λ))` | `[0, λ_max]` |
//! | Higher Criticism | smaller root of `(m + λ²) x² - (2i + λ²) x + i²/m` | `[-λ_max, 0]` |
//! | Beta quantile | `λ`-quantile of `Beta(i, m + 1 - i)` | `[0, 1]` |
//!
//! The Higher Criticism curve depends on `λ` only through `λ²` and moves
//! down as `|λ|` grows, so it is parameterised on the non-positive half-line
//! to make it increasing in `λ`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{beta_cdf, beta_quantile};

/// Default bound on `|λ|` for the unbounded families.
pub const DEFAULT_LAMBDA_MAX: f64 = 100.0;

/// Relative tolerance of [`CriticalFamily::max_lambda_bisect`].
pub const BISECTION_REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    #[serde(alias = "simes")]
    SimesShift,
    #[serde(alias = "aorc")]
    AorcShift,
    #[serde(alias = "hc")]
    HigherCriticism,
    #[serde(alias = "beta")]
    BetaQuantile,
}

impl FamilyKind {
    pub const ALL: [FamilyKind; 4] = [
        FamilyKind::SimesShift,
        FamilyKind::AorcShift,
        FamilyKind::HigherCriticism,
        FamilyKind::BetaQuantile,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FamilyKind::SimesShift => "simes",
            FamilyKind::AorcShift => "aorc",
            FamilyKind::HigherCriticism => "hc",
            FamilyKind::BetaQuantile => "beta",
        }
    }

    pub fn is_shifted(self) -> bool {
        matches!(self, FamilyKind::SimesShift | FamilyKind::AorcShift)
    }
}

impl fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FamilyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "simes" | "simes_shift" => Ok(FamilyKind::SimesShift),
            "aorc" | "aorc_shift" => Ok(FamilyKind::AorcShift),
            "hc" | "higher_criticism" => Ok(FamilyKind::HigherCriticism),
            "beta" | "beta_quantile" => Ok(FamilyKind::BetaQuantile),
            other => Err(Error::invalid(format!("unknown family '{other}'"))),
        }
    }
}

/// A family kind plus its shift, independent of `m`; what users configure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub kind: FamilyKind,
    #[serde(default)]
    pub delta: f64,
}

impl FamilySpec {
    pub fn new(kind: FamilyKind, delta: f64) -> Self {
        FamilySpec { kind, delta }
    }

    pub fn simes() -> Self {
        Self::new(FamilyKind::SimesShift, 0.0)
    }

    pub fn build(self, m: usize) -> Result<CriticalFamily> {
        CriticalFamily::new(self.kind, m, self.delta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalFamily {
    kind: FamilyKind,
    m: usize,
    delta: f64,
    lambda_max: f64,
}

impl CriticalFamily {
    pub fn new(kind: FamilyKind, m: usize, delta: f64) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("family needs m >= 1"));
        }
        if !(delta >= 0.0 && delta < m as f64) {
            return Err(Error::invalid(format!(
                "shift delta = {delta} must lie in [0, m = {m})"
            )));
        }
        if delta != 0.0 && !kind.is_shifted() {
            return Err(Error::invalid(format!(
                "the {kind} family takes no shift (delta = {delta})"
            )));
        }
        Ok(CriticalFamily {
            kind,
            m,
            delta,
            lambda_max: DEFAULT_LAMBDA_MAX,
        })
    }

    pub fn simes(m: usize) -> Result<Self> {
        Self::new(FamilyKind::SimesShift, m, 0.0)
    }

    /// Overrides the bound on `|λ|` used by the AORC and Higher Criticism
    /// families.
    pub fn with_lambda_max(mut self, lambda_max: f64) -> Result<Self> {
        if !(lambda_max.is_finite() && lambda_max > 0.0) {
            return Err(Error::invalid(format!("lambda_max must be positive, got {lambda_max}")));
        }
        self.lambda_max = lambda_max;
        Ok(self)
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn spec(&self) -> FamilySpec {
        FamilySpec::new(self.kind, self.delta)
    }

    /// Admissible interval `[lo, hi]` of `λ`; `hi` is the cap at which the
    /// curve is highest.
    pub fn lambda_range(&self) -> (f64, f64) {
        match self.kind {
            FamilyKind::SimesShift | FamilyKind::BetaQuantile => (0.0, 1.0),
            FamilyKind::AorcShift => (0.0, self.lambda_max),
            FamilyKind::HigherCriticism => (-self.lambda_max, 0.0),
        }
    }

    fn check_lambda(&self, lambda: f64) -> Result<()> {
        let (min, max) = self.lambda_range();
        if lambda >= min && lambda <= max {
            Ok(())
        } else {
            Err(Error::LambdaOutOfRange {
                family: self.kind.name(),
                lambda,
                min,
                max,
            })
        }
    }

    /// `l_i(λ)` for `i` in `1..=m`.
    pub fn evaluate(&self, lambda: f64, i: usize) -> Result<f64> {
        self.check_lambda(lambda)?;
        if i == 0 || i > self.m {
            return Err(Error::IndexOutOfRange { index: i, m: self.m });
        }
        Ok(self.value(lambda, i))
    }

    /// `l_i(λ)` without range checks.
    fn value(&self, lambda: f64, i: usize) -> f64 {
        let m = self.m as f64;
        let fi = i as f64;
        match self.kind {
            FamilyKind::SimesShift => (fi - self.delta) * lambda / (m - self.delta),
            FamilyKind::AorcShift => {
                let lead = fi - self.delta;
                if lead > 0.0 {
                    if lambda == 0.0 {
                        0.0
                    } else if i == self.m {
                        1.0
                    } else {
                        // Same as lead*λ / ((m-i) + lead*λ), written so every
                        // floating-point step is monotone in λ.
                        1.0 / (1.0 + (m - fi) / (lead * lambda))
                    }
                } else {
                    let den = (m - fi) + lead * lambda;
                    if den > 0.0 {
                        lead * lambda / den
                    } else {
                        f64::NEG_INFINITY
                    }
                }
            }
            FamilyKind::HigherCriticism => {
                let s = lambda * lambda;
                if s == 0.0 {
                    return fi / m;
                }
                let b = 2.0 * fi + s;
                let disc = (b * b - 4.0 * fi * fi * (m + s) / m).max(0.0);
                // Smaller root 2c / (b + sqrt(disc)) with c = i²/m.
                2.0 * (fi * fi / m) / (b + disc.sqrt())
            }
            FamilyKind::BetaQuantile => beta_quantile(lambda, fi, m + 1.0 - fi),
        }
    }

    /// The whole vector `l_1(λ), ..., l_m(λ)`.
    pub fn curve(&self, lambda: f64) -> Result<Vec<f64>> {
        self.check_lambda(lambda)?;
        let values = if self.kind == FamilyKind::BetaQuantile {
            (1..=self.m).into_par_iter().map(|i| self.value(lambda, i)).collect()
        } else {
            (1..=self.m).map(|i| self.value(lambda, i)).collect()
        };
        Ok(values)
    }

    /// Whether the ascending row dominates the curve: `p_(i) >= l_i(λ)` for
    /// every `i`. The Beta family compares on the probability scale,
    /// `F_i(p_(i)) >= λ`, which is the same condition without a quantile
    /// inversion.
    pub fn dominated_by(&self, sorted_p: &[f64], lambda: f64) -> bool {
        debug_assert_eq!(sorted_p.len(), self.m);
        match self.kind {
            FamilyKind::BetaQuantile => {
                let m = self.m as f64;
                sorted_p.iter().enumerate().all(|(k, &p)| {
                    let i = (k + 1) as f64;
                    beta_cdf(p, i, m + 1.0 - i) >= lambda
                })
            }
            _ => sorted_p
                .iter()
                .enumerate()
                .all(|(k, &p)| p >= self.value(lambda, k + 1)),
        }
    }

    fn validate_row(&self, sorted_p: &[f64]) -> Result<()> {
        if sorted_p.len() != self.m {
            return Err(Error::DimensionMismatch(format!(
                "row of length {} for a family with m = {}",
                sorted_p.len(),
                self.m
            )));
        }
        if sorted_p.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::invalid("p-values must lie in (0, 1]"));
        }
        if sorted_p.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::invalid("p-values must be sorted ascending"));
        }
        Ok(())
    }

    /// `sup { λ in range : p_(i) >= l_i(λ) for all i }` for an ascending row,
    /// or `-inf` if even the lowest admissible curve is not dominated.
    ///
    /// Uses the closed-form inverse of each family and then settles on the
    /// largest float `λ` that passes [`Self::dominated_by`], so the result is
    /// exactly consistent with that predicate.
    pub fn max_lambda_dominated(&self, sorted_p: &[f64]) -> Result<f64> {
        self.validate_row(sorted_p)?;
        Ok(self.max_lambda_unchecked(sorted_p))
    }

    pub(crate) fn max_lambda_unchecked(&self, sorted_p: &[f64]) -> f64 {
        let (lo, hi) = self.lambda_range();
        let m = self.m as f64;
        let indexed = sorted_p.iter().enumerate().map(|(k, &p)| ((k + 1) as f64, p));
        let raw = match self.kind {
            FamilyKind::SimesShift => indexed
                .filter(|&(i, _)| i > self.delta)
                .map(|(i, p)| p * (m - self.delta) / (i - self.delta))
                .fold(hi, f64::min),
            FamilyKind::AorcShift => indexed
                .filter(|&(i, p)| i > self.delta && p < 1.0)
                .map(|(i, p)| p * (m - i) / ((i - self.delta) * (1.0 - p)))
                .fold(hi, f64::min),
            FamilyKind::HigherCriticism => {
                let worst = indexed
                    .filter(|&(i, p)| p < i / m && p < 1.0)
                    .map(|(i, p)| m.sqrt() * (i / m - p) / (p * (1.0 - p)).sqrt())
                    .fold(0.0, f64::max);
                -worst
            }
            FamilyKind::BetaQuantile => {
                // Exact for the probability-scale predicate; no refinement.
                return indexed
                    .map(|(i, p)| beta_cdf(p, i, m + 1.0 - i))
                    .fold(hi, f64::min)
                    .max(lo);
            }
        };
        self.settle(sorted_p, raw.clamp(lo, hi))
    }

    /// Moves a closed-form estimate onto the exact float supremum of the
    /// domination predicate.
    fn settle(&self, sorted_p: &[f64], mut lambda: f64) -> f64 {
        const MAX_STEPS: usize = 64;
        let (lo, hi) = self.lambda_range();
        if !self.dominated_by(sorted_p, lambda) {
            let mut steps = 0;
            while !self.dominated_by(sorted_p, lambda) {
                if lambda <= lo {
                    return f64::NEG_INFINITY;
                }
                steps += 1;
                if steps > MAX_STEPS {
                    return self.max_lambda_bisect(sorted_p);
                }
                lambda = lambda.next_down().max(lo);
            }
            return lambda;
        }
        for _ in 0..MAX_STEPS {
            if lambda >= hi {
                return hi;
            }
            let up = lambda.next_up();
            if !self.dominated_by(sorted_p, up) {
                return lambda;
            }
            lambda = up;
        }
        // Far below the true supremum; finish by bisection from here.
        self.max_lambda_bisect(sorted_p).max(lambda)
    }

    /// Reference inversion by bisection on `λ`, to relative tolerance
    /// [`BISECTION_REL_TOL`]. Returns a `λ` that is dominated.
    pub fn max_lambda_bisect(&self, sorted_p: &[f64]) -> f64 {
        let (mut lo, mut hi) = self.lambda_range();
        if !self.dominated_by(sorted_p, lo) {
            return f64::NEG_INFINITY;
        }
        if self.dominated_by(sorted_p, hi) {
            return hi;
        }
        while hi - lo > BISECTION_REL_TOL * lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE) {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.dominated_by(sorted_p, mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }
}
