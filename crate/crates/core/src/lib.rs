//! Permutation-calibrated simultaneous lower confidence bounds for the true
//! discovery proportion of arbitrary voxel sets.
//!
//! The pipeline:
//!
//! 1. [`stats`]: one- or two-sample t statistics for `w` random sign flips or
//!    label shuffles (identity first) and per-voxel rank p-values.
//! 2. [`family`] and [`calibration`]: a monotone family `l(λ)` of candidate
//!    critical vectors, calibrated so that at least `(1 - α) w` of the
//!    permutation p-value rows dominate `l(λ_α)`.
//! 3. [`bound`]: `ā(S)`, a lower bound on the number of active voxels in any
//!    `S`, valid simultaneously over all `S` with probability `1 - α`.
//! 4. [`cluster`]: supra-threshold clusters and drill-down inside them.
//!
//! ```
//! use permtdp::{Analysis, AnalysisConfig, FamilySpec, PermutationScheme, SubjectContrasts, VoxelSubset};
//!
//! // 4 subjects, 3 voxels; the first voxel carries a clear effect.
//! let data = SubjectContrasts::from_rows(&[
//!     vec![2.0, 0.1, -0.3],
//!     vec![2.2, -0.2, 0.4],
//!     vec![1.9, 0.3, -0.1],
//!     vec![2.1, -0.4, 0.2],
//! ])?;
//! let config = AnalysisConfig {
//!     scheme: PermutationScheme::sign_flip(100, 1),
//!     alternative: Default::default(),
//!     family: FamilySpec::simes(),
//!     alpha: 0.5,
//! };
//! let analysis = Analysis::run(&data, config)?;
//! let all = VoxelSubset::new(vec![0, 1, 2], 3)?;
//! let bound = analysis.tdp(&all)?;
//! assert!(bound.lower_bound <= 3);
//! # Ok::<(), permtdp::Error>(())
//! ```

pub mod bound;
pub mod calibration;
pub mod cluster;
pub mod error;
pub mod family;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod sim;
pub mod special;
pub mod stats;

/// Version stamped on every JSON output.
pub const SCHEMA_VERSION: u32 = 1;

pub use bound::{
    closed_testing_oracle, hommel_h, parametric_critical_vector, tdp_lower_bound, CriticalVector, HommelH, VectorSource,
};
pub use calibration::{calibrate, condition_count, required_count, Calibration};
pub use cluster::{build_report, drill_down, threshold_clusters, ClusterReport, Connectivity};
pub use error::{Error, Result};
pub use family::{CriticalFamily, FamilyKind, FamilySpec};
pub use model::{Coord, SubjectContrasts, TdpResult, VolumeGeometry, VoxelSubset};
pub use pipeline::{Analysis, AnalysisConfig};
pub use stats::{
    one_sample_statistics, permutation_pvalues, pvalue_matrix, two_sample_statistics, Alternative, PValueMatrix,
    PermutationScheme, StatisticMatrix,
};
