//! The whole inference path in one value: statistics, permutation p-values,
//! calibration and the calibrated critical vector. Every query after
//! construction is a pure read.

use serde::{Deserialize, Serialize};

use crate::bound::{hommel_h, parametric_critical_vector, tdp_lower_bound, CriticalVector, HommelH};
use crate::calibration::{calibrate, Calibration};
use crate::cluster::{build_report, drill_down, threshold_clusters, ClusterReport, Connectivity};
use crate::error::{Error, Result};
use crate::family::FamilySpec;
use crate::model::{SubjectContrasts, TdpResult, VolumeGeometry, VoxelSubset};
use crate::stats::{
    one_sample_statistics, pvalue_matrix, two_sample_statistics, Alternative, PValueMatrix, PermutationScheme,
    SchemeKind, StatisticMatrix,
};

/// Everything needed to reproduce an analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub scheme: PermutationScheme,
    #[serde(default)]
    pub alternative: Alternative,
    pub family: FamilySpec,
    pub alpha: f64,
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub config: AnalysisConfig,
    observed_stats: Vec<f64>,
    pvalues: PValueMatrix,
    calibration: Calibration,
    critical: CriticalVector,
    geometry: Option<VolumeGeometry>,
}

/// Stages reported by [`Analysis::run_with_progress`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Statistics,
    PValues,
    Calibration,
    Done,
}

impl Stage {
    pub fn fraction(self) -> f64 {
        match self {
            Stage::Statistics => 0.0,
            Stage::PValues => 0.6,
            Stage::Calibration => 0.8,
            Stage::Done => 1.0,
        }
    }
}

impl Analysis {
    pub fn run(contrasts: &SubjectContrasts, config: AnalysisConfig) -> Result<Self> {
        Self::run_with_progress(contrasts, config, |_| {})
    }

    pub fn run_with_progress(
        contrasts: &SubjectContrasts,
        config: AnalysisConfig,
        mut progress: impl FnMut(Stage),
    ) -> Result<Self> {
        let family = config.family.build(contrasts.voxels())?;
        progress(Stage::Statistics);
        let stats: StatisticMatrix = match config.scheme.kind {
            SchemeKind::SignFlip => one_sample_statistics(contrasts, &config.scheme, config.alternative)?,
            SchemeKind::GroupLabel { .. } => two_sample_statistics(contrasts, &config.scheme, config.alternative)?,
        };
        progress(Stage::PValues);
        let pvalues = pvalue_matrix(&stats)?;
        progress(Stage::Calibration);
        let calibration = calibrate(&pvalues, &family, config.alpha)?;
        let critical = calibration.critical();
        progress(Stage::Done);
        Ok(Analysis {
            observed_stats: stats.observed().to_vec(),
            geometry: contrasts.geometry().cloned(),
            config,
            pvalues,
            calibration,
            critical,
        })
    }

    pub fn m(&self) -> usize {
        self.observed_stats.len()
    }

    pub fn observed_stats(&self) -> &[f64] {
        &self.observed_stats
    }

    pub fn observed_p(&self) -> &[f64] {
        self.pvalues.observed()
    }

    pub fn pvalues(&self) -> &PValueMatrix {
        &self.pvalues
    }

    pub fn calibration(&self) -> &Calibration {
        &self.calibration
    }

    pub fn critical(&self) -> &CriticalVector {
        &self.critical
    }

    pub fn geometry(&self) -> Option<&VolumeGeometry> {
        self.geometry.as_ref()
    }

    fn need_geometry(&self) -> Result<&VolumeGeometry> {
        self.geometry
            .as_ref()
            .ok_or_else(|| Error::invalid("this analysis has no volume geometry"))
    }

    pub fn tdp(&self, subset: &VoxelSubset) -> Result<TdpResult> {
        tdp_lower_bound(subset, self.observed_p(), &self.critical)
    }

    pub fn clusters(&self, threshold: f64, connectivity: Connectivity) -> Result<ClusterReport> {
        let g = self.need_geometry()?;
        let subsets = threshold_clusters(&self.observed_stats, g, threshold, connectivity)?;
        self.report(subsets, threshold, connectivity)
    }

    pub fn drill(&self, parent: &VoxelSubset, threshold: f64, connectivity: Connectivity) -> Result<ClusterReport> {
        let g = self.need_geometry()?;
        let subsets = drill_down(parent, &self.observed_stats, g, threshold, connectivity)?;
        self.report(subsets, threshold, connectivity)
    }

    pub fn report(
        &self,
        subsets: Vec<VoxelSubset>,
        threshold: f64,
        connectivity: Connectivity,
    ) -> Result<ClusterReport> {
        let g = self.need_geometry()?;
        build_report(
            subsets,
            self.observed_p(),
            &self.critical,
            &self.observed_stats,
            g,
            threshold,
            connectivity,
        )
    }

    /// Parametric baseline on the permutation p-values of the observed data.
    pub fn parametric(&self) -> Result<(HommelH, CriticalVector)> {
        let h = hommel_h(self.observed_p(), self.config.alpha)?;
        Ok((h, parametric_critical_vector(h, self.m())))
    }
}
