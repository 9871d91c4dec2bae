use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use permtdp::{Alternative, Connectivity, FamilyKind, FamilySpec};

#[derive(Debug, Parser)]
#[command(
    name = "permtdp",
    version,
    about = "Simultaneous true discovery proportion bounds from permutations"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Calibrate the critical vector and print lambda_alpha.
    Calibrate(CalibrateArgs),
    /// Lower bound on the true discoveries in one voxel subset.
    Tdp(TdpArgs),
    /// Supra-threshold clusters with their bounds.
    Cluster(ClusterArgs),
    /// Run a power grid of simulations.
    Simulate(SimulateArgs),
    /// Estimate the familywise error rate on simulated global nulls.
    ValidateFwer(ValidateFwerArgs),
    /// Serve the HTTP session API.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlternativeArg {
    TwoSided,
    Greater,
    Less,
}

impl From<AlternativeArg> for Alternative {
    fn from(a: AlternativeArg) -> Self {
        match a {
            AlternativeArg::TwoSided => Alternative::TwoSided,
            AlternativeArg::Greater => Alternative::Greater,
            AlternativeArg::Less => Alternative::Less,
        }
    }
}

/// Inputs and settings shared by every command that analyses data.
#[derive(Debug, Args)]
pub struct AnalysisArgs {
    /// Subject contrasts: CSV/TSV with one row per subject, or a 4-D NIfTI file.
    #[arg(long)]
    pub data: PathBuf,
    /// NIfTI mask; gives matrix data a volume geometry.
    #[arg(long)]
    pub geometry: Option<PathBuf>,
    /// Group labels (1 or 2 per subject) for a two-sample test.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "two-sided")]
    pub alternative: AlternativeArg,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// simes, aorc, hc or beta.
    #[arg(long, default_value = "simes")]
    pub family: FamilyKind,
    #[arg(long, default_value_t = 0.0)]
    pub delta: f64,
    /// Number of transformations w, identity included.
    #[arg(long, default_value_t = 1000)]
    pub permutations: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

impl AnalysisArgs {
    pub fn family_spec(&self) -> FamilySpec {
        FamilySpec::new(self.family, self.delta)
    }
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub analysis: AnalysisArgs,
    /// Include every per-permutation lambda in the output.
    #[arg(long)]
    pub lambdas: bool,
}

#[derive(Debug, Args)]
pub struct TdpArgs {
    #[command(flatten)]
    pub analysis: AnalysisArgs,
    /// JSON subset file: a list of indices, or {"indices": [...]} / {"coords": [[x, y, z], ...]}.
    #[arg(long)]
    pub subset: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[command(flatten)]
    pub analysis: AnalysisArgs,
    /// Cluster-forming threshold on |t|.
    #[arg(long)]
    pub threshold: f64,
    /// 6, 18 or 26.
    #[arg(long, default_value = "26")]
    pub connectivity: Connectivity,
    /// List each cluster's voxel coordinates.
    #[arg(long)]
    pub voxels: bool,
    /// Write a map of per-voxel cluster TDP bounds (.nii or .csv).
    #[arg(long)]
    pub tdp_map: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON power grid: {"base": spec, "rho2": [...], "nu": [...]}.
    #[arg(long)]
    pub grid: PathBuf,
    /// Tidy CSV of per-point, per-method results.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the full per-replicate results as JSON.
    #[arg(long)]
    pub records: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateFwerArgs {
    /// JSON simulation spec with nu = 1.
    #[arg(long)]
    pub spec: PathBuf,
    /// Per-replicate bounds as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    /// Directory that data references resolve against; session snapshots
    /// are kept in its `sessions/` subdirectory.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    pub max_sessions: usize,
}
