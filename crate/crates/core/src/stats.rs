//! Observed and permutation test statistics, and the permutation p-value
//! matrix.
//!
//! Row 0 of every matrix belongs to the untransformed data; rows `1..w` to
//! random transformations (sign flips for one-sample designs, label shuffles
//! for two-sample designs), drawn i.i.d. with replacement.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SubjectContrasts;
use crate::rng;

/// A sum of squared deviations below this fraction of the raw sum of squares
/// is treated as zero variance.
const ZERO_VARIANCE_REL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    #[default]
    TwoSided,
    Greater,
    Less,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SchemeKind {
    /// Random sign flips of whole subject maps.
    SignFlip,
    /// Random shuffles of the subject group labels; labels are 1 or 2.
    GroupLabel { labels: Vec<u8> },
}

/// How the `w` transformations of the data are generated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationScheme {
    #[serde(flatten)]
    pub kind: SchemeKind,
    /// Number of transformations, identity included.
    pub w: usize,
    pub seed: u64,
}

impl PermutationScheme {
    pub fn sign_flip(w: usize, seed: u64) -> Self {
        PermutationScheme {
            kind: SchemeKind::SignFlip,
            w,
            seed,
        }
    }

    pub fn group_label(labels: Vec<u8>, w: usize, seed: u64) -> Self {
        PermutationScheme {
            kind: SchemeKind::GroupLabel { labels },
            w,
            seed,
        }
    }

    fn validate(&self, subjects: usize) -> Result<()> {
        if self.w < 2 {
            return Err(Error::invalid(format!("need w >= 2 transformations, got {}", self.w)));
        }
        if let SchemeKind::GroupLabel { labels } = &self.kind {
            if labels.len() != subjects {
                return Err(Error::DimensionMismatch(format!(
                    "{} group labels for {subjects} subjects",
                    labels.len()
                )));
            }
            if let Some(bad) = labels.iter().find(|&&l| l != 1 && l != 2) {
                return Err(Error::invalid(format!("group label {bad} is not 1 or 2")));
            }
            for g in [1u8, 2] {
                let n = labels.iter().filter(|&&l| l == g).count();
                if n < 2 {
                    return Err(Error::invalid(format!("group {g} has {n} subjects, need at least 2")));
                }
            }
        }
        Ok(())
    }

    /// `w x subjects` signs; row 0 is all `+1`.
    pub fn sign_rows(&self, subjects: usize) -> Vec<f64> {
        let mut rng = rng::seeded(self.seed);
        let mut signs = vec![1.0; self.w * subjects];
        for row in signs.chunks_mut(subjects).skip(1) {
            rng::fill_signs(&mut rng, row);
        }
        signs
    }

    /// `w` label vectors; row 0 is the original labelling. Empty for sign flips.
    pub fn label_rows(&self) -> Vec<Vec<u8>> {
        let SchemeKind::GroupLabel { labels } = &self.kind else {
            return Vec::new();
        };
        let mut rng = rng::seeded(self.seed);
        let mut rows = Vec::with_capacity(self.w);
        rows.push(labels.clone());
        for _ in 1..self.w {
            let mut row = labels.clone();
            rng::shuffle(&mut rng, &mut row);
            rows.push(row);
        }
        rows
    }
}

/// `w x m` test statistics, row-major.
#[derive(Debug, Clone)]
pub struct StatisticMatrix {
    values: Vec<f64>,
    w: usize,
    m: usize,
    pub scheme: PermutationScheme,
    pub alternative: Alternative,
}

impl StatisticMatrix {
    pub fn from_values(
        values: Vec<f64>,
        w: usize,
        m: usize,
        scheme: PermutationScheme,
        alternative: Alternative,
    ) -> Result<Self> {
        if values.len() != w * m {
            return Err(Error::DimensionMismatch(format!(
                "{} statistics for {w} x {m}",
                values.len()
            )));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid("statistic matrix contains NaN"));
        }
        Ok(StatisticMatrix {
            values,
            w,
            m,
            scheme,
            alternative,
        })
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.values[j * self.m..(j + 1) * self.m]
    }

    /// The statistics of the untransformed data.
    pub fn observed(&self) -> &[f64] {
        self.row(0)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// `w x m` permutation p-values, row-major, all in `(0, 1]`.
#[derive(Debug, Clone)]
pub struct PValueMatrix {
    values: Vec<f64>,
    w: usize,
    m: usize,
    pub alternative: Alternative,
}

impl PValueMatrix {
    pub fn from_values(values: Vec<f64>, w: usize, m: usize, alternative: Alternative) -> Result<Self> {
        if w < 1 || m < 1 || values.len() != w * m {
            return Err(Error::DimensionMismatch(format!(
                "{} p-values for {w} x {m}",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|&p| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::invalid(format!(
                "p-value {} at row {}, column {} is outside (0, 1]",
                values[pos],
                pos / m,
                pos % m
            )));
        }
        Ok(PValueMatrix {
            values,
            w,
            m,
            alternative,
        })
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.values[j * self.m..(j + 1) * self.m]
    }

    pub fn rows(&self) -> std::slice::Chunks<'_, f64> {
        self.values.chunks(self.m)
    }

    /// p-values of the untransformed data.
    pub fn observed(&self) -> &[f64] {
        self.row(0)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

fn t_from_moments(diff: f64, ss: f64, raw_ss: f64, df: f64, scale: f64) -> f64 {
    if ss <= raw_ss * ZERO_VARIANCE_REL {
        if diff == 0.0 {
            0.0
        } else {
            diff.signum() * f64::INFINITY
        }
    } else {
        diff / (ss / df * scale).sqrt()
    }
}

/// One-sample t statistics `mean / sqrt(var / J)` of the sign-flipped data,
/// with the unbiased variance. Zero-variance voxels give `0` when the mean is
/// zero and a signed infinity otherwise.
pub fn one_sample_statistics(
    contrasts: &SubjectContrasts,
    scheme: &PermutationScheme,
    alternative: Alternative,
) -> Result<StatisticMatrix> {
    if scheme.kind != SchemeKind::SignFlip {
        return Err(Error::invalid("one-sample statistics need a sign-flip scheme"));
    }
    let subjects = contrasts.subjects();
    scheme.validate(subjects)?;
    let m = contrasts.voxels();
    let n = subjects as f64;
    let by_voxel = contrasts.transposed();
    let sum_sq: Vec<f64> = by_voxel
        .chunks(subjects)
        .map(|col| col.iter().map(|x| x * x).sum())
        .collect();
    let signs = scheme.sign_rows(subjects);

    let mut values = vec![0.0; scheme.w * m];
    values
        .par_chunks_mut(m)
        .zip(signs.par_chunks(subjects))
        .for_each(|(out, eps)| {
            for ((t, col), &s2) in out.iter_mut().zip(by_voxel.chunks(subjects)).zip(&sum_sq) {
                let s1: f64 = eps.iter().zip(col).map(|(e, x)| e * x).sum();
                let ss = s2 - s1 * s1 / n;
                *t = t_from_moments(s1 / n, ss, s2, n - 1.0, 1.0 / n);
            }
        });
    StatisticMatrix::from_values(values, scheme.w, m, scheme.clone(), alternative)
}

/// Pooled-variance two-sample t statistics, group 1 minus group 2, under
/// random relabellings of the subjects.
pub fn two_sample_statistics(
    contrasts: &SubjectContrasts,
    scheme: &PermutationScheme,
    alternative: Alternative,
) -> Result<StatisticMatrix> {
    let SchemeKind::GroupLabel { labels } = &scheme.kind else {
        return Err(Error::invalid("two-sample statistics need a group-label scheme"));
    };
    let subjects = contrasts.subjects();
    scheme.validate(subjects)?;
    let m = contrasts.voxels();
    let n1 = labels.iter().filter(|&&l| l == 1).count() as f64;
    let n2 = subjects as f64 - n1;
    let df = subjects as f64 - 2.0;
    let scale = 1.0 / n1 + 1.0 / n2;

    // Centering each voxel leaves the statistic unchanged and limits
    // cancellation in the one-pass variance.
    let mut by_voxel = contrasts.transposed();
    for col in by_voxel.chunks_mut(subjects) {
        let mean = col.iter().sum::<f64>() / subjects as f64;
        col.iter_mut().for_each(|x| *x -= mean);
    }
    let indicators: Vec<f64> = scheme
        .label_rows()
        .into_iter()
        .flat_map(|row| row.into_iter().map(|l| if l == 1 { 1.0 } else { 0.0 }))
        .collect();

    let mut values = vec![0.0; scheme.w * m];
    values
        .par_chunks_mut(m)
        .zip(indicators.par_chunks(subjects))
        .for_each(|(out, ind)| {
            for (t, col) in out.iter_mut().zip(by_voxel.chunks(subjects)) {
                let (mut a1, mut a2, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0);
                for (&g, &x) in ind.iter().zip(col) {
                    let h = 1.0 - g;
                    a1 += g * x;
                    a2 += g * x * x;
                    b1 += h * x;
                    b2 += h * x * x;
                }
                let ss = (a2 - a1 * a1 / n1) + (b2 - b1 * b1 / n2);
                *t = t_from_moments(a1 / n1 - b1 / n2, ss, a2 + b2, df, scale);
            }
        });
    StatisticMatrix::from_values(values, scheme.w, m, scheme.clone(), alternative)
}

/// Per-voxel rank p-values: `p[j][i] = #{k : key[k][i] >= key[j][i]} / w`,
/// where the key is `|T|`, `T` or `-T` for two-sided, greater and less.
pub fn pvalue_matrix(stats: &StatisticMatrix) -> Result<PValueMatrix> {
    let (w, m) = (stats.w, stats.m);
    if w < 2 {
        return Err(Error::invalid("need w >= 2 to compute permutation p-values"));
    }
    let key = |t: f64| -> f64 {
        // `+ 0.0` folds -0.0 into 0.0 so the two compare as ties.
        (match stats.alternative {
            Alternative::TwoSided => t.abs(),
            Alternative::Greater => t,
            Alternative::Less => -t,
        }) + 0.0
    };
    let wf = w as f64;
    let mut by_voxel = vec![0.0; w * m];
    by_voxel.par_chunks_mut(w).enumerate().for_each_init(
        || Vec::with_capacity(w),
        |order: &mut Vec<(f64, u32)>, (i, out)| {
            order.clear();
            order.extend((0..w).map(|j| (key(stats.values[j * m + i]), j as u32)));
            order.sort_unstable_by(|a, b| b.0.total_cmp(&a.0));
            let mut start = 0;
            while start < w {
                let mut end = start + 1;
                while end < w && order[end].0 == order[start].0 {
                    end += 1;
                }
                let p = end as f64 / wf;
                for &(_, j) in &order[start..end] {
                    out[j as usize] = p;
                }
                start = end;
            }
        },
    );
    let mut values = vec![0.0; w * m];
    values.par_chunks_mut(m).enumerate().for_each(|(j, row)| {
        for (i, p) in row.iter_mut().enumerate() {
            *p = by_voxel[i * w + j];
        }
    });
    Ok(PValueMatrix {
        values,
        w,
        m,
        alternative: stats.alternative,
    })
}

/// Statistics and p-values for `contrasts` under `scheme`, dispatching on the
/// scheme kind.
pub fn permutation_pvalues(
    contrasts: &SubjectContrasts,
    scheme: &PermutationScheme,
    alternative: Alternative,
) -> Result<(StatisticMatrix, PValueMatrix)> {
    let stats = match scheme.kind {
        SchemeKind::SignFlip => one_sample_statistics(contrasts, scheme, alternative)?,
        SchemeKind::GroupLabel { .. } => two_sample_statistics(contrasts, scheme, alternative)?,
    };
    let p = pvalue_matrix(&stats)?;
    Ok((stats, p))
}
