//! Library side of the `wlcox` command line tool.

pub mod error;
pub mod input;
pub mod report;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use wlcox_core::design::{compute_weights, SamplingDesign};
use wlcox_core::simlab::{self, Execution, ReplicateResult, ScenarioConfig, StudySummary};
use wlcox_core::{fit_wl_cox, variance_report, SolverOptions};

pub use error::{CliError, Result};
pub use input::InputTable;
pub use report::{FitReport, SCHEMA_VERSION};

#[derive(Debug, Parser)]
#[command(
    name = "wlcox",
    version,
    about = "Weighted-likelihood Cox regression for two-phase stratified samples"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the IPW Cox model to a phase-one table and write a JSON report.
    Fit(FitArgs),
    /// Run a Monte Carlo study from a scenario file.
    Simulate(SimulateArgs),
    /// Write one simulated replicate as an input table plus its design file.
    Cohort(CohortArgs),
    /// Check the first-order expansion of estimated weights on a scenario.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Phase-one CSV table.
    #[arg(long)]
    pub data: PathBuf,
    /// Sampling design JSON.
    #[arg(long)]
    pub design: PathBuf,
    /// Report path; stdout when omitted.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long, default_value_t = 25)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// Directory receiving `summary.json` and `replicates.csv`.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Override the number of replicates.
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Override the master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; 1 runs sequentially. Defaults to all cores.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CohortArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Replicate index whose cohort is written.
    #[arg(long, default_value_t = 0)]
    pub replicate: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV path.
    #[arg(long)]
    pub data: PathBuf,
    /// Output design JSON path.
    #[arg(long)]
    pub design: PathBuf,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        file: path.to_path_buf(),
        source,
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn emit_json<T: Serialize>(value: &T, output: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    match output {
        Some(p) => write_bytes(p, text.as_bytes()),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|source| CliError::Io {
                path: PathBuf::from("<stdout>"),
                source,
            }),
    }
}

pub fn load_design(path: &Path) -> Result<SamplingDesign> {
    let design: SamplingDesign = read_json(path)?;
    design
        .validate()
        .map_err(|e| CliError::from_core(path, e))?;
    Ok(design)
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    let config: ScenarioConfig = read_json(path)?;
    config
        .validate()
        .map_err(|e| CliError::from_core(path, e))?;
    Ok(config)
}

fn execution(threads: Option<usize>) -> Execution {
    match threads {
        Some(1) => Execution::Sequential,
        Some(t) => Execution::Parallel { threads: Some(t) },
        None => Execution::default(),
    }
}

/// Weights, fit and variances for a table under a design.
pub fn fit_table(
    table: &InputTable,
    design: &SamplingDesign,
    options: &SolverOptions,
) -> Result<FitReport> {
    let records = table.records();
    let weights = compute_weights(&records, design).map_err(CliError::Model)?;
    let data = table
        .cohort(weights.ipw_weights())
        .map_err(CliError::Model)?;
    let fit = fit_wl_cox(&data, options).map_err(CliError::Model)?;
    let var = variance_report(&fit, &weights).map_err(CliError::Model)?;
    Ok(report::build_report(
        design,
        table.z_names.clone(),
        &table.status,
        &weights,
        &fit,
        &var,
    ))
}

pub fn cmd_fit(args: &FitArgs) -> Result<()> {
    let table = InputTable::read(&args.data)?;
    let design = load_design(&args.design)?;
    let options = SolverOptions {
        max_iter: args.max_iter,
        score_tol: args.tol,
        ..SolverOptions::default()
    };
    let report = fit_table(&table, &design, &options)?;
    emit_json(&report, args.output.as_deref())
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    schema_version: &'a str,
    config: &'a ScenarioConfig,
    summary: &'a StudySummary,
}

/// Per-replicate CSV: one row per replicate, failed ones with empty numbers.
pub fn replicates_csv(results: &[ReplicateResult], p: usize) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = [
        "replicate",
        "seed",
        "converged",
        "error",
        "n_events",
        "n_sampled",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for prefix in ["beta", "se_model", "se_bernoulli", "se_fp"] {
        header.extend((0..p).map(|k| format!("{prefix}.{k}")));
    }
    w.write_record(&header).expect("in-memory write");
    for r in results {
        let mut row = vec![
            r.replicate.to_string(),
            r.seed_used.to_string(),
            u8::from(r.converged).to_string(),
            r.error.clone().unwrap_or_default(),
            r.n_events.to_string(),
            r.n_sampled.to_string(),
        ];
        for v in [&r.beta_hat, &r.se_model, &r.se_bernoulli, &r.se_fp] {
            row.extend((0..p).map(|k| v.get(k).map(|x| format!("{x}")).unwrap_or_default()));
        }
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let mut config = load_scenario(&args.config)?;
    if let Some(r) = args.replicates {
        config.replicates = r;
    }
    if let Some(s) = args.seed {
        config.master_seed = s;
    }
    let out = simlab::run_study_with(&config, execution(args.threads))
        .map_err(|e| CliError::from_core(&args.config, e))?;
    std::fs::create_dir_all(&args.out_dir).map_err(|source| CliError::Io {
        path: args.out_dir.clone(),
        source,
    })?;
    emit_json(
        &SummaryFile {
            schema_version: SCHEMA_VERSION,
            config: &config,
            summary: &out.summary,
        },
        Some(&args.out_dir.join("summary.json")),
    )?;
    write_bytes(
        &args.out_dir.join("replicates.csv"),
        replicates_csv(&out.replicates, config.p()).as_bytes(),
    )
}

pub fn cmd_cohort(args: &CohortArgs) -> Result<()> {
    let mut config = load_scenario(&args.config)?;
    if let Some(s) = args.seed {
        config.master_seed = s;
    }
    let (records, full) = simlab::replicate_sample(&config, args.replicate)
        .map_err(|e| CliError::from_core(&args.config, e))?;
    InputTable::from_simulation(&records, &full).write_file(&args.data)?;
    emit_json(&config.design, Some(&args.design))
}

pub fn cmd_diagnose(args: &DiagnoseArgs) -> Result<()> {
    let mut config = load_scenario(&args.config)?;
    if let Some(r) = args.replicates {
        config.replicates = r;
    }
    if let Some(s) = args.seed {
        config.master_seed = s;
    }
    let rep = simlab::expansion_diagnostic(&config, execution(args.threads))
        .map_err(|e| CliError::from_core(&args.config, e))?;
    emit_json(&rep, args.output.as_deref())
}

fn output_of(cli: &Cli) -> Option<&Path> {
    match &cli.command {
        Command::Fit(a) => a.output.as_deref(),
        Command::Diagnose(a) => a.output.as_deref(),
        _ => None,
    }
}

/// Runs a parsed command and returns the process exit code. Failures are
/// described on stderr and, when the command has a report path, as a JSON
/// error object in that file.
pub fn run(cli: &Cli) -> i32 {
    let result = match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Cohort(a) => cmd_cohort(a),
        Command::Diagnose(a) => cmd_diagnose(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            let obj = e.to_json();
            match output_of(cli) {
                Some(p) => {
                    let _ = emit_json(&obj, Some(p));
                }
                None => eprintln!("{}", serde_json::to_string(&obj).expect("error serializes")),
            }
            e.exit_code()
        }
    }
}
