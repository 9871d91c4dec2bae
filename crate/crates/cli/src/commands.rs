use std::io::Write;

use clap::Parser;
use permtdp::io::{read_json, read_subset, write_json, write_table, write_tdp_map, MapFormat};
use permtdp::sim::{run_fwer_validation, run_power_grid, write_grid_csv, PowerGrid, SimulationSpec};
use permtdp::{Analysis, AnalysisConfig, SCHEMA_VERSION};
use serde_json::{json, Value};

use crate::args::{AnalysisArgs, CalibrateArgs, Cli, ClusterArgs, Command, SimulateArgs, TdpArgs, ValidateFwerArgs};
use crate::error::{CliError, CliResult};
use crate::input::{load_contrasts, read_labels, scheme};

/// Parses `argv` (program name first), runs the command, writes JSON to
/// `stdout` or a JSON error to `stderr`, and returns the exit status.
pub fn dispatch<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind as K;
            if matches!(e.kind(), K::DisplayHelp | K::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return 0;
            }
            let err = CliError::usage(e.render().to_string().trim_end());
            let _ = writeln!(stderr, "{}", err.to_json());
            return err.exit_code();
        }
    };
    match run(cli.command) {
        Ok(Some(v)) => {
            let _ = writeln!(
                stdout,
                "{}",
                serde_json::to_string_pretty(&v).expect("JSON values serialize")
            );
            0
        }
        Ok(None) => 0,
        Err(err) => {
            let _ = writeln!(stderr, "{}", err.to_json());
            err.exit_code()
        }
    }
}

fn run(command: Command) -> CliResult<Option<Value>> {
    match command {
        Command::Calibrate(a) => calibrate(a).map(Some),
        Command::Tdp(a) => tdp(a).map(Some),
        Command::Cluster(a) => cluster(a).map(Some),
        Command::Simulate(a) => simulate(a).map(Some),
        Command::ValidateFwer(a) => validate_fwer(a).map(Some),
        Command::Serve(a) => crate::service::serve_blocking(a).map(|_| None),
    }
}

fn analyse(a: &AnalysisArgs) -> CliResult<Analysis> {
    let contrasts = load_contrasts(&a.data, a.geometry.as_deref())?;
    let labels = a.labels.as_deref().map(read_labels).transpose()?;
    let config = AnalysisConfig {
        scheme: scheme(labels, a.permutations, a.seed),
        alternative: a.alternative.into(),
        family: a.family_spec(),
        alpha: a.alpha,
    };
    Ok(Analysis::run(&contrasts, config)?)
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("output types serialize")
}

fn calibrate(a: CalibrateArgs) -> CliResult<Value> {
    let analysis = analyse(&a.analysis)?;
    let cal = analysis.calibration();
    let mut out = json!({
        "schema_version": SCHEMA_VERSION,
        "lambda_alpha": cal.lambda_alpha,
        "alpha": cal.alpha,
        "family": cal.family.kind(),
        "delta": cal.family.delta(),
        "w": cal.w(),
        "m": cal.m(),
        "powerless": cal.powerless,
    });
    if a.lambdas {
        out["per_permutation_lambdas"] = to_value(&cal.per_permutation_lambdas);
    }
    Ok(out)
}

fn tdp(a: TdpArgs) -> CliResult<Value> {
    let analysis = analyse(&a.analysis)?;
    let subset = read_subset(&a.subset, analysis.m(), analysis.geometry())?;
    let r = analysis.tdp(&subset)?;
    Ok(json!({
        "schema_version": SCHEMA_VERSION,
        "size": r.size,
        "lower_bound": r.lower_bound,
        "tdp": r.tdp(),
        "argmax_u": r.argmax_u,
    }))
}

fn cluster(a: ClusterArgs) -> CliResult<Value> {
    let analysis = analyse(&a.analysis)?;
    let geometry = analysis
        .geometry()
        .ok_or_else(|| CliError::usage("cluster needs a volume geometry: pass --geometry or NIfTI data"))?;
    let report = analysis.clusters(a.threshold, a.connectivity)?;
    if let Some(path) = &a.tdp_map {
        let format = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            MapFormat::Csv
        } else {
            MapFormat::Nifti
        };
        write_tdp_map(&report, geometry, path, format)?;
    }
    Ok(to_value(&report.to_json(geometry, a.voxels)))
}

fn simulate(a: SimulateArgs) -> CliResult<Value> {
    let grid: PowerGrid = read_json(&a.grid)?;
    let (rows, results) = run_power_grid(&grid)?;
    write_grid_csv(&a.out, &rows)?;
    if let Some(path) = &a.records {
        write_json(path, &results)?;
    }
    Ok(json!({
        "schema_version": SCHEMA_VERSION,
        "points": results.len(),
        "out": a.out,
        "rows": rows,
    }))
}

fn validate_fwer(a: ValidateFwerArgs) -> CliResult<Value> {
    let spec: SimulationSpec = read_json(&a.spec)?;
    let res = run_fwer_validation(&spec)?;
    let reps = spec.replications as f64;
    let se = |p: f64| (p * (1.0 - p) / reps).sqrt();
    let limit = spec.alpha + 3.0 * se(spec.alpha);
    let methods: Vec<Value> = res
        .summaries
        .iter()
        .map(|s| {
            json!({
                "method": s.method,
                "family": s.family,
                "delta": s.delta,
                "fwer": s.any_discovery_rate,
                "se": se(s.any_discovery_rate),
                "mean_tdp": s.mean_tdp,
                "within_limit": s.any_discovery_rate <= limit,
            })
        })
        .collect();
    if let Some(path) = &a.out {
        let k = spec.families.len();
        let mut header = vec!["replicate".to_string()];
        header.extend((0..k).map(|j| format!("lambda_alpha_{j}")));
        header.extend((0..k).map(|j| format!("permutation_bound_{j}")));
        header.extend(["parametric_bound".to_string(), "hommel_h".to_string()]);
        let rows: Vec<Vec<f64>> = res
            .records
            .iter()
            .map(|r| {
                let mut row = vec![r.replicate as f64];
                row.extend(&r.lambda_alpha);
                row.extend(r.permutation_bound.iter().map(|&b| b as f64));
                row.extend([r.parametric_bound as f64, r.hommel_h as f64]);
                row
            })
            .collect();
        write_table(path, &rows, Some(&header))?;
    }
    Ok(json!({
        "schema_version": SCHEMA_VERSION,
        "replications": spec.replications,
        "alpha": spec.alpha,
        "w": spec.w,
        "limit": limit,
        "methods": methods,
    }))
}
