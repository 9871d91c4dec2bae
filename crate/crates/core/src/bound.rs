//! Simultaneous lower bounds on the number of true discoveries.
//!
//! For a critical vector `l` and a subset `S`,
//!
//! ```text
//! ā(S) = max over u in 1..=|S| of  1 - u + #{i in S : p_i <= l_u}
//! ```
//!
//! The parametric baseline uses `l_i = iα/h` with `h` the size of the largest
//! set not rejected by a Simes test.

use serde::{Deserialize, Serialize};

use crate::calibration::Calibration;
use crate::error::{Error, Result};
use crate::family::FamilySpec;
use crate::model::{TdpResult, VoxelSubset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source")]
pub enum VectorSource {
    Permutation {
        family: FamilySpec,
        alpha: f64,
        lambda_alpha: f64,
    },
    /// `l_i = iα/h`; `h = 0` means every hypothesis is discoverable and the
    /// vector is all `+inf`.
    Parametric { alpha: f64, h: usize },
    /// Supplied directly by the caller.
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalVector {
    values: Vec<f64>,
    source: VectorSource,
}

impl CriticalVector {
    /// A vector given by the caller; must be nondecreasing and free of NaN.
    pub fn custom(values: Vec<f64>) -> Result<Self> {
        Self::checked(values, VectorSource::Custom)
    }

    fn checked(values: Vec<f64>, source: VectorSource) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("critical vector is empty"));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid("critical vector contains NaN"));
        }
        if values.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::invalid("critical vector must be nondecreasing"));
        }
        Ok(CriticalVector { values, source })
    }

    /// The calibrated curve, used for inference. A powerless calibration
    /// (`α w < 1`) yields a vector that discovers nothing.
    ///
    /// Each entry is the largest float strictly below `l_i(λ_α)`, so the
    /// closed comparison `p ≤ l'_u` in the bound is exactly `p < l_u(λ_α)`.
    /// This is the limit of `l(λ)` as `λ` rises to `λ_α`. Permutation
    /// p-values are discrete and rows tie at `λ_α`; with `l(λ_α)` itself the
    /// observed row could dominate and still yield a discovery, and the error
    /// rate would reach `#{j : λ_j ≤ λ_α} / w` instead of `⌊α w⌋ / w`.
    pub fn from_calibration(cal: &Calibration) -> Self {
        // Family curves are nondecreasing in i up to rounding; a running max
        // absorbs any last-ulp wobble so the two-pointer scan stays valid.
        let mut values = if cal.powerless {
            vec![f64::NEG_INFINITY; cal.critical_vector.len()]
        } else {
            cal.critical_vector.iter().map(|v| v.next_down()).collect()
        };
        for k in 1..values.len() {
            if values[k] < values[k - 1] {
                values[k] = values[k - 1];
            }
        }
        CriticalVector {
            values,
            source: VectorSource::Permutation {
                family: cal.family.spec(),
                alpha: cal.alpha,
                lambda_alpha: cal.lambda_alpha,
            },
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn source(&self) -> &VectorSource {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn check_subset(subset: &VoxelSubset, m: usize, critical: &CriticalVector) -> Result<()> {
    if subset.is_empty() {
        return Err(Error::EmptySubset);
    }
    if let Some(&last) = subset.indices().last() {
        if last >= m {
            return Err(Error::IndexOutOfRange { index: last, m });
        }
    }
    if critical.len() < subset.len() {
        return Err(Error::DimensionMismatch(format!(
            "critical vector of length {} for a subset of size {}",
            critical.len(),
            subset.len()
        )));
    }
    Ok(())
}

/// `ā(S)` for `subset` of the observed p-values.
pub fn tdp_lower_bound(subset: &VoxelSubset, observed_p: &[f64], critical: &CriticalVector) -> Result<TdpResult> {
    check_subset(subset, observed_p.len(), critical)?;
    let mut p: Vec<f64> = subset.iter().map(|i| observed_p[i]).collect();
    p.sort_unstable_by(f64::total_cmp);
    Ok(bound_sorted(&p, critical.values()))
}

/// `ā` for a whole vector of p-values (`S` = every entry).
pub fn tdp_lower_bound_all(p: &[f64], critical: &CriticalVector) -> Result<TdpResult> {
    if p.is_empty() {
        return Err(Error::EmptySubset);
    }
    if critical.len() < p.len() {
        return Err(Error::DimensionMismatch(format!(
            "critical vector of length {} for {} p-values",
            critical.len(),
            p.len()
        )));
    }
    let mut p = p.to_vec();
    p.sort_unstable_by(f64::total_cmp);
    Ok(bound_sorted(&p, critical.values()))
}

/// Two-pointer evaluation over ascending `p` and nondecreasing `l`.
pub(crate) fn bound_sorted(p: &[f64], l: &[f64]) -> TdpResult {
    let n = p.len();
    let mut c = 0usize;
    let mut best = 0usize;
    let mut best_u = 1usize;
    for u in 1..=n {
        let lu = l[u - 1];
        while c < n && p[c] <= lu {
            c += 1;
        }
        // 1 - u + c, kept unsigned: only values above `best` matter.
        if c + 1 > u && c + 1 - u > best {
            best = c + 1 - u;
            best_u = u;
        }
        if c == n {
            // Later u only lose ground.
            break;
        }
    }
    TdpResult {
        lower_bound: best,
        size: n,
        argmax_u: best_u,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HommelH {
    pub h: usize,
    pub alpha: f64,
}

/// Size of the largest set of hypotheses not rejected by a Simes test at
/// level `alpha`: the largest `i` with `p_(m-i+j) > jα/i` for `j = 1..=i`.
///
/// For `s = m - i`, the condition reads `(m - s) min_{k > s} p_(k)/(k - s) > α`.
/// The minimum slope from `(s, 0)` to the points `(k, p_(k))`, `k > s`, is
/// attained on their lower convex hull, which is built right to left and
/// searched by bisection, so the whole scan is `O(m log m)`.
pub fn hommel_h(observed_p: &[f64], alpha: f64) -> Result<HommelH> {
    check_hommel_input(observed_p, alpha)?;
    let mut p = observed_p.to_vec();
    p.sort_unstable_by(f64::total_cmp);
    let m = p.len();
    // Points are (k, p[k - 1]) for k in 1..=m; the hull holds indices k.
    let mut hull: Vec<usize> = Vec::with_capacity(m);
    let y = |k: usize| p[k - 1];
    let mut first_ok = m; // s = m (i = 0) always qualifies
    for s in (0..m).rev() {
        let k_new = s + 1;
        // hull is stored right to left: hull[0] is the rightmost point.
        while hull.len() >= 2 {
            let a = hull[hull.len() - 1];
            let b = hull[hull.len() - 2];
            // Drop `a` if it is not strictly below the segment k_new -> b.
            let cross = (a - k_new) as f64 * (y(b) - y(k_new)) - (b - k_new) as f64 * (y(a) - y(k_new));
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(k_new);
        if simes_accepts(&p, &hull, s, alpha) {
            first_ok = s;
        }
    }
    Ok(HommelH { h: m - first_ok, alpha })
}

fn check_hommel_input(p: &[f64], alpha: f64) -> Result<()> {
    if p.is_empty() {
        return Err(Error::invalid("no p-values"));
    }
    if p.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::invalid("p-values must lie in [0, 1]"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// Whether the set `{s+1, ..., m}` survives its Simes test.
fn simes_accepts(p: &[f64], hull: &[usize], s: usize, alpha: f64) -> bool {
    let m = p.len();
    let slope = |k: usize| p[k - 1] / (k - s) as f64;
    // Along the hull (left to right = from the end of `hull` backwards) the
    // slope from (s, 0) falls and then rises; find the bottom.
    let (mut lo, mut hi) = (0usize, hull.len() - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        // hull[mid] is right of hull[mid + 1].
        if slope(hull[mid + 1]) <= slope(hull[mid]) {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    let k = hull[lo];
    let g = p[k - 1] * (m - s) as f64 / (k - s) as f64;
    const BAND: f64 = 1e-12;
    if g > alpha * (1.0 + BAND) {
        true
    } else if g < alpha * (1.0 - BAND) {
        false
    } else {
        // Near-tie: decide with the exact comparison of the definition.
        simes_accepts_direct(&p[s..], alpha)
    }
}

/// `p_(j) > jα/i` for all `j`, where `tail` holds the `i` largest values.
fn simes_accepts_direct(tail: &[f64], alpha: f64) -> bool {
    let i = tail.len() as f64;
    tail.iter().enumerate().all(|(j, &v)| v > (j + 1) as f64 * alpha / i)
}

/// Reference `h` by descending scan over `i`, `O(m^2)` worst case.
pub fn hommel_h_direct(observed_p: &[f64], alpha: f64) -> Result<HommelH> {
    check_hommel_input(observed_p, alpha)?;
    let mut p = observed_p.to_vec();
    p.sort_unstable_by(f64::total_cmp);
    let m = p.len();
    let h = (1..=m)
        .rev()
        .find(|&i| simes_accepts_direct(&p[m - i..], alpha))
        .unwrap_or(0);
    Ok(HommelH { h, alpha })
}

/// `l_i = iα/h`, or all `+inf` when `h = 0`.
pub fn parametric_critical_vector(h: HommelH, m: usize) -> CriticalVector {
    let values = if h.h == 0 {
        vec![f64::INFINITY; m]
    } else {
        (1..=m).map(|i| i as f64 * h.alpha / h.h as f64).collect()
    };
    CriticalVector {
        values,
        source: VectorSource::Parametric { alpha: h.alpha, h: h.h },
    }
}

/// Largest `m` accepted by [`closed_testing_oracle`].
pub const ORACLE_MAX_M: usize = 12;

/// `|S|` minus the size of the largest `U ⊆ S` that survives the local test
/// "reject `U` if `p_(i:U) <= l_i` for some `i`", by enumerating all subsets.
pub fn closed_testing_oracle(subset: &VoxelSubset, observed_p: &[f64], critical: &CriticalVector) -> Result<usize> {
    let m = observed_p.len();
    if m > ORACLE_MAX_M {
        return Err(Error::OracleTooLarge(m));
    }
    check_subset(subset, m, critical)?;
    let members = subset.indices();
    let n = members.len();
    let l = critical.values();
    let mut largest = 0;
    let mut buf = Vec::with_capacity(n);
    for mask in 1u32..(1 << n) {
        let size = mask.count_ones() as usize;
        if size <= largest {
            continue;
        }
        buf.clear();
        buf.extend((0..n).filter(|b| mask >> b & 1 == 1).map(|b| observed_p[members[b]]));
        buf.sort_unstable_by(f64::total_cmp);
        if buf.iter().zip(l).all(|(&p, &li)| p > li) {
            largest = size;
        }
    }
    Ok(n - largest)
}

/// `h` by Simes closed testing over every nonempty subset; `m <= 12`.
pub fn hommel_h_closed_testing(observed_p: &[f64], alpha: f64) -> Result<HommelH> {
    check_hommel_input(observed_p, alpha)?;
    let m = observed_p.len();
    if m > ORACLE_MAX_M {
        return Err(Error::OracleTooLarge(m));
    }
    let mut h = 0;
    let mut buf = Vec::with_capacity(m);
    for mask in 1u32..(1 << m) {
        buf.clear();
        buf.extend((0..m).filter(|b| mask >> b & 1 == 1).map(|b| observed_p[b]));
        buf.sort_unstable_by(f64::total_cmp);
        let i = buf.len() as f64;
        let rejected = buf.iter().enumerate().any(|(j, &p)| p <= (j + 1) as f64 * alpha / i);
        if !rejected {
            h = h.max(buf.len());
        }
    }
    Ok(HommelH { h, alpha })
}
