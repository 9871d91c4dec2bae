//! Monte-Carlo harness: synthetic equicorrelated data, FWER validation under
//! the global null, simultaneous coverage, and power grids.
//!
//! Noise for observation `j` and variable `i` is `sqrt(r) g_j + sqrt(1 - r) z_ji`
//! with `g_j`, `z_ji` independent standard normals, so every pair of variables
//! has correlation `r = rho2`. The first `⌈m(1 - ν)⌉` variables are active
//! and carry a mean shift `μ` chosen so that a two-sided t-test at level `α`
//! has power 0.8 on a single variable.

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, Continuous, ContinuousCDF, Normal, StudentsT};

use crate::bound::{hommel_h, parametric_critical_vector, tdp_lower_bound, tdp_lower_bound_all, CriticalVector};
use crate::calibration::calibrate;
use crate::error::{Error, Result};
use crate::family::{FamilyKind, FamilySpec};
use crate::model::{SubjectContrasts, VoxelSubset};
use crate::rng;
use crate::stats::{permutation_pvalues, Alternative, PValueMatrix, PermutationScheme, StatisticMatrix};

/// Target power of the single-variable t-test that fixes the signal size.
pub const TARGET_POWER: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Distortion {
    #[default]
    None,
    /// Null p-values (in every row) are raised to the power `kappa > 1`.
    Anticonservative { kappa: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Design {
    /// Sign-flipping one-sample test on all `n` observations.
    #[default]
    OneSample,
    /// Two groups drawn at random from the `n` observations per replicate,
    /// compared with label shuffles.
    TwoSample { group1: usize, group2: usize },
}

fn default_alpha() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    /// Observations per replicate (the pool size for two-sample designs).
    pub n: usize,
    pub m: usize,
    pub rho2: f64,
    /// Proportion of true null variables.
    pub nu: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub w: usize,
    pub replications: usize,
    #[serde(default = "default_families")]
    pub families: Vec<FamilySpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub design: Design,
    #[serde(default)]
    pub pvalue_distortion: Distortion,
    /// Random subsets per replicate for the coverage check; 0 skips it.
    #[serde(default)]
    pub coverage_subsets: usize,
}

fn default_families() -> Vec<FamilySpec> {
    vec![FamilySpec::simes()]
}

impl SimulationSpec {
    pub fn one_sample(n: usize, m: usize, rho2: f64, nu: f64) -> Self {
        SimulationSpec {
            n,
            m,
            rho2,
            nu,
            alpha: 0.05,
            w: 200,
            replications: 100,
            families: default_families(),
            seed: 0,
            design: Design::OneSample,
            pvalue_distortion: Distortion::None,
            coverage_subsets: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho2) {
            return Err(Error::invalid(format!("rho2 must lie in [0, 1], got {}", self.rho2)));
        }
        if !(0.0..=1.0).contains(&self.nu) {
            return Err(Error::invalid(format!("nu must lie in [0, 1], got {}", self.nu)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.m == 0 || self.w < 2 || self.replications == 0 {
            return Err(Error::invalid("m, replications must be positive and w >= 2"));
        }
        if self.families.is_empty() {
            return Err(Error::invalid("at least one family is required"));
        }
        for f in &self.families {
            f.build(self.m)?;
        }
        if let Distortion::Anticonservative { kappa } = self.pvalue_distortion {
            if !(kappa >= 1.0 && kappa.is_finite()) {
                return Err(Error::invalid(format!("kappa must be >= 1, got {kappa}")));
            }
        }
        match self.design {
            Design::OneSample if self.n < 3 => Err(Error::invalid("one-sample design needs n >= 3")),
            Design::TwoSample { group1, group2 } if group1 < 2 || group2 < 2 || group1 + group2 > self.n => {
                Err(Error::invalid(format!(
                    "groups {group1}+{group2} need >= 2 each and fit in n = {}",
                    self.n
                )))
            }
            _ => Ok(()),
        }
    }

    /// Number of active variables, `⌈m(1 - ν)⌉` (the small slack absorbs
    /// rounding in `1 - ν`).
    pub fn active_count(&self) -> usize {
        ((self.m as f64 * (1.0 - self.nu)) - 1e-9).ceil().max(0.0) as usize
    }

    fn df(&self) -> f64 {
        match self.design {
            Design::OneSample => (self.n - 1) as f64,
            Design::TwoSample { group1, group2 } => (group1 + group2 - 2) as f64,
        }
    }

    /// Mean shift of the active variables.
    pub fn signal(&self) -> f64 {
        if self.active_count() == 0 {
            return 0.0;
        }
        let ncp = ncp_for_power(self.df(), self.alpha, TARGET_POWER);
        match self.design {
            Design::OneSample => ncp / (self.n as f64).sqrt(),
            Design::TwoSample { group1, group2 } => ncp * (1.0 / group1 as f64 + 1.0 / group2 as f64).sqrt(),
        }
    }
}

/// Power of the two-sided t-test with `df` degrees of freedom and
/// noncentrality `ncp`: integrates the normal tail over the chi-square law of
/// the variance estimate.
pub fn t_test_power(df: f64, ncp: f64, alpha: f64) -> f64 {
    let crit = StudentsT::new(0.0, 1.0, df).unwrap().inverse_cdf(1.0 - alpha / 2.0);
    let chi = ChiSquared::new(df).unwrap();
    let normal = Normal::standard();
    let hi = df + 40.0 * (2.0 * df).sqrt() + 40.0;
    let steps = 4000;
    let h = hi / steps as f64;
    let integrand = |v: f64| {
        if v <= 0.0 {
            return 0.0;
        }
        let s = crit * (v / df).sqrt();
        chi.pdf(v) * (normal.sf(s - ncp) + normal.cdf(-s - ncp))
    };
    let mut acc = integrand(0.0) + integrand(hi);
    for k in 1..steps {
        let wgt = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += wgt * integrand(k as f64 * h);
    }
    acc * h / 3.0
}

/// Noncentrality at which the two-sided t-test has the given power.
pub fn ncp_for_power(df: f64, alpha: f64, power: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, 50.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if t_test_power(df, mid, alpha) < power {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-10 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// One replicate's data set.
pub fn generate_dataset(spec: &SimulationSpec, replicate: u64) -> Result<SubjectContrasts> {
    let mut rng = rng::stream(spec.seed, replicate);
    generate_with(spec, &mut rng)
}

fn generate_with(spec: &SimulationSpec, rng: &mut rng::Rng) -> Result<SubjectContrasts> {
    let (n, m) = (spec.n, spec.m);
    let (a, b) = (spec.rho2.sqrt(), (1.0 - spec.rho2).sqrt());
    let active = spec.active_count();
    let mu = spec.signal();
    let mut data = Vec::with_capacity(n * m);
    for _ in 0..n {
        let g: f64 = StandardNormal.sample(rng);
        for i in 0..m {
            let z: f64 = StandardNormal.sample(rng);
            let shift = if i < active { mu } else { 0.0 };
            data.push(shift + a * g + b * z);
        }
    }
    SubjectContrasts::new(data, n, m)
}

/// Two-sided p-values of observed t statistics from the t distribution.
pub fn parametric_pvalues(observed: &[f64], df: f64) -> Vec<f64> {
    let t = StudentsT::new(0.0, 1.0, df).unwrap();
    observed
        .iter()
        .map(|&s| {
            if s.is_infinite() {
                0.0
            } else {
                (2.0 * t.sf(s.abs())).min(1.0)
            }
        })
        .collect()
}

fn distort(p: &mut PValueMatrix, active: usize, kappa: f64) {
    let m = p.m();
    for (k, v) in p.values_mut().iter_mut().enumerate() {
        if k % m >= active {
            *v = v.powf(kappa);
        }
    }
}

/// What one replicate produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    /// `λ_α` per family, in spec order.
    pub lambda_alpha: Vec<f64>,
    /// `ā(B)` per family, in spec order.
    pub permutation_bound: Vec<usize>,
    pub parametric_bound: usize,
    pub hommel_h: usize,
    /// Whether every random subset satisfied `ā(S) <= a(S)`, per family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutation_covered: Option<Vec<bool>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parametric_covered: Option<bool>,
}

/// Per-method summary over replicates. `tdp` is `ā(B)/m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub family: FamilyKind,
    pub delta: f64,
    pub mean_bound: f64,
    pub mean_tdp: f64,
    pub sd_tdp: f64,
    /// Fraction of replicates with `ā(B) >= 1`.
    pub any_discovery_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub schema_version: u32,
    pub spec: SimulationSpec,
    pub signal: f64,
    pub active: usize,
    pub records: Vec<ReplicateRecord>,
    pub summaries: Vec<MethodSummary>,
}

impl SimulationResult {
    pub fn parametric(&self) -> &MethodSummary {
        self.summaries.last().expect("parametric summary is always last")
    }

    /// Summary of the permutation method with the `k`-th family of the spec.
    pub fn permutation(&self, k: usize) -> &MethodSummary {
        &self.summaries[k]
    }

    /// Mean and standard error of the paired difference of `ā(B)/m` between
    /// the permutation method (family `k`) and the parametric method.
    pub fn paired_gain(&self, k: usize) -> (f64, f64) {
        let m = self.spec.m as f64;
        let d: Vec<f64> = self
            .records
            .iter()
            .map(|r| (r.permutation_bound[k] as f64 - r.parametric_bound as f64) / m)
            .collect();
        mean_se(&d)
    }

    /// Mean and standard error of the paired difference of `ā(B)` between
    /// families `a` and `b`.
    pub fn family_difference(&self, a: usize, b: usize) -> (f64, f64) {
        let d: Vec<f64> = self
            .records
            .iter()
            .map(|r| r.permutation_bound[a] as f64 - r.permutation_bound[b] as f64)
            .collect();
        mean_se(&d)
    }
}

/// Sample mean and its standard error.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let (mean, sd) = mean_sd(values);
    (mean, sd / (values.len() as f64).sqrt())
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn random_subsets(rng: &mut rng::Rng, m: usize, count: usize) -> Vec<VoxelSubset> {
    let mut order: Vec<usize> = (0..m).collect();
    (0..count)
        .map(|_| {
            let size = rng::below(rng, m as u64) as usize + 1;
            rng::shuffle(rng, &mut order);
            VoxelSubset::new(order[..size].to_vec(), m).expect("indices below m")
        })
        .collect()
}

fn covered(subsets: &[VoxelSubset], p: &[f64], critical: &CriticalVector, active: usize) -> Result<bool> {
    for s in subsets {
        let truth = s.iter().filter(|&i| i < active).count();
        if tdp_lower_bound(s, p, critical)?.lower_bound > truth {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Runs the full pipeline on one replicate.
pub fn run_replicate(spec: &SimulationSpec, replicate: usize) -> Result<ReplicateRecord> {
    let mut rng = rng::stream(spec.seed, replicate as u64);
    let pool = generate_with(spec, &mut rng)?;
    let perm_seed = rng.next_u64();
    let (data, scheme) = match spec.design {
        Design::OneSample => (pool, PermutationScheme::sign_flip(spec.w, perm_seed)),
        Design::TwoSample { group1, group2 } => {
            let mut order: Vec<usize> = (0..spec.n).collect();
            rng::shuffle(&mut rng, &mut order);
            let chosen = &order[..group1 + group2];
            let labels = (0..group1 + group2).map(|k| if k < group1 { 1 } else { 2 }).collect();
            (
                pool.select_subjects(chosen)?,
                PermutationScheme::group_label(labels, spec.w, perm_seed),
            )
        }
    };
    let (stats, mut pvals): (StatisticMatrix, PValueMatrix) =
        permutation_pvalues(&data, &scheme, Alternative::TwoSided)?;
    let active = spec.active_count();
    let mut param_p = parametric_pvalues(stats.observed(), spec.df());
    if let Distortion::Anticonservative { kappa } = spec.pvalue_distortion {
        distort(&mut pvals, active, kappa);
        for v in param_p.iter_mut().skip(active) {
            *v = v.powf(kappa);
        }
    }
    let subsets = random_subsets(&mut rng, spec.m, spec.coverage_subsets);

    let mut lambda_alpha = Vec::with_capacity(spec.families.len());
    let mut permutation_bound = Vec::with_capacity(spec.families.len());
    let mut perm_cov = Vec::with_capacity(spec.families.len());
    for f in &spec.families {
        let family = f.build(spec.m)?;
        let cal = calibrate(&pvals, &family, spec.alpha)?;
        let critical = cal.critical();
        lambda_alpha.push(cal.lambda_alpha);
        permutation_bound.push(tdp_lower_bound_all(pvals.observed(), &critical)?.lower_bound);
        perm_cov.push(covered(&subsets, pvals.observed(), &critical, active)?);
    }
    let h = hommel_h(&param_p, spec.alpha)?;
    let param_critical = parametric_critical_vector(h, spec.m);
    let parametric_bound = tdp_lower_bound_all(&param_p, &param_critical)?.lower_bound;
    let with_cov = spec.coverage_subsets > 0;
    Ok(ReplicateRecord {
        replicate,
        lambda_alpha,
        permutation_bound,
        parametric_bound,
        hommel_h: h.h,
        permutation_covered: with_cov.then_some(perm_cov),
        parametric_covered: if with_cov {
            Some(covered(&subsets, &param_p, &param_critical, active)?)
        } else {
            None
        },
    })
}

fn summarize(method: &str, family: FamilySpec, m: usize, bounds: &[usize], cov: Option<Vec<bool>>) -> MethodSummary {
    let tdp: Vec<f64> = bounds.iter().map(|&b| b as f64 / m as f64).collect();
    let (mean_tdp, sd_tdp) = mean_sd(&tdp);
    let n = bounds.len() as f64;
    MethodSummary {
        method: method.to_owned(),
        family: family.kind,
        delta: family.delta,
        mean_bound: bounds.iter().sum::<usize>() as f64 / n,
        mean_tdp,
        sd_tdp,
        any_discovery_rate: bounds.iter().filter(|&&b| b >= 1).count() as f64 / n,
        coverage: cov.map(|c| c.iter().filter(|&&x| x).count() as f64 / n),
    }
}

/// All replicates of `spec`, in parallel; the result does not depend on the
/// thread count.
pub fn run_simulation(spec: &SimulationSpec) -> Result<SimulationResult> {
    spec.validate()?;
    let records = (0..spec.replications)
        .into_par_iter()
        .map(|r| run_replicate(spec, r))
        .collect::<Result<Vec<_>>>()?;
    let m = spec.m;
    let mut summaries = Vec::with_capacity(spec.families.len() + 1);
    for (k, f) in spec.families.iter().enumerate() {
        let bounds: Vec<usize> = records.iter().map(|r| r.permutation_bound[k]).collect();
        let cov = records
            .iter()
            .map(|r| r.permutation_covered.as_ref().map(|c| c[k]))
            .collect::<Option<Vec<bool>>>();
        summaries.push(summarize("permutation", *f, m, &bounds, cov));
    }
    let bounds: Vec<usize> = records.iter().map(|r| r.parametric_bound).collect();
    let cov = records
        .iter()
        .map(|r| r.parametric_covered)
        .collect::<Option<Vec<bool>>>();
    summaries.push(summarize("parametric", FamilySpec::simes(), m, &bounds, cov));
    Ok(SimulationResult {
        schema_version: crate::SCHEMA_VERSION,
        signal: spec.signal(),
        active: spec.active_count(),
        spec: spec.clone(),
        records,
        summaries,
    })
}

/// Global-null validation: the flagged fraction is the `any_discovery_rate`
/// of each summary.
pub fn run_fwer_validation(spec: &SimulationSpec) -> Result<SimulationResult> {
    if spec.nu != 1.0 {
        return Err(Error::invalid(format!("FWER validation needs nu = 1, got {}", spec.nu)));
    }
    run_simulation(spec)
}

/// A grid over `rho2 × nu`, each point run with every family of `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerGrid {
    pub base: SimulationSpec,
    pub rho2: Vec<f64>,
    pub nu: Vec<f64>,
}

impl PowerGrid {
    pub fn points(&self) -> Vec<SimulationSpec> {
        let mut out = Vec::new();
        for &r in &self.rho2 {
            for &nu in &self.nu {
                let mut s = self.base.clone();
                s.rho2 = r;
                s.nu = nu;
                out.push(s);
            }
        }
        out
    }
}

/// One line of the power-grid CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub rho2: f64,
    pub nu: f64,
    pub family: FamilyKind,
    pub delta: f64,
    pub method: String,
    pub mean_tdp: f64,
    pub sd_tdp: f64,
    pub replications: usize,
    pub seed: u64,
}

pub fn run_power_grid(grid: &PowerGrid) -> Result<(Vec<GridRow>, Vec<SimulationResult>)> {
    let points = grid.points();
    if points.is_empty() {
        return Err(Error::invalid("power grid is empty"));
    }
    let mut rows = Vec::new();
    let mut results = Vec::with_capacity(points.len());
    for spec in points {
        let res = run_simulation(&spec)?;
        for s in &res.summaries {
            rows.push(GridRow {
                rho2: spec.rho2,
                nu: spec.nu,
                family: s.family,
                delta: s.delta,
                method: s.method.clone(),
                mean_tdp: s.mean_tdp,
                sd_tdp: s.sd_tdp,
                replications: spec.replications,
                seed: spec.seed,
            });
        }
        results.push(res);
    }
    Ok((rows, results))
}

pub fn write_grid_csv(path: impl AsRef<std::path::Path>, rows: &[GridRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
