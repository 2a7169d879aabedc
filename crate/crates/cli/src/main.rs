mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use clustereif::data::load_csv;
use clustereif::estimator::estimate;
use clustereif::simulation::{
    run_benchmark, true_values_cached, write_benchmark_csv, write_benchmark_table, BenchmarkConfig, DgpConfig, COLUMNS,
};
use clustereif::Error;
use serde::Serialize;

use config::{EstimateConfig, SimulateConfig, Targets, TruthConfig};

/// Policy effects under clustered interference.
#[derive(Parser)]
#[command(name = "clustereif", version)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate policy effects on a clustered dataset.
    Estimate(Common),
    /// Run a Monte Carlo benchmark and write the metrics table as CSV.
    Simulate(Common),
    /// Compute true estimand values under the simulation design.
    Truth(Common),
    /// Check a configuration (and a dataset, if given) without running.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Policy in the grammar `cips:delta0=1`, `tpb:rho=0.3`, ... (repeatable).
    #[arg(long = "policy")]
    policies: Vec<String>,
    /// mu, mu1, mu0, de, se1, se0, oe or te (repeatable).
    #[arg(long = "estimand")]
    estimands: Vec<String>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Which command the configuration is for.
    #[arg(long, default_value = "estimate", value_parser = ["estimate", "simulate", "truth"])]
    kind: String,
    #[command(flatten)]
    common: Common,
}

/// An error tagged with the exit code it maps to.
struct Failure {
    code: u8,
    err: Error,
}

impl Failure {
    fn config(err: Error) -> Self {
        Failure { code: 1, err }
    }

    /// A column the configuration names but the data lacks is a
    /// configuration error.
    fn data(err: Error) -> Self {
        let code = if matches!(err, Error::MissingColumn(_) | Error::Config(_)) { 1 } else { 2 };
        Failure { code, err }
    }

    fn run(err: Error) -> Self {
        let code = if matches!(err, Error::Config(_) | Error::MissingColumn(_)) { 1 } else { 3 };
        Failure { code, err }
    }
}

type Outcome = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let outcome = match &cli.command {
        Command::Estimate(a) => cmd_estimate(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Truth(a) => cmd_truth(a),
        Command::Validate(v) => cmd_validate(v),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.err);
            ExitCode::from(f.code)
        }
    }
}

fn targets(mut t: Targets, args: &Common) -> Targets {
    t.override_with(&args.policies, &args.estimands);
    t
}

fn emit(text: &str, out: Option<&Path>) -> Outcome {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::run(e.into())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn sim_columns() -> Vec<String> {
    COLUMNS.iter().map(|c| c.to_string()).collect()
}

fn cmd_estimate(args: &Common) -> Outcome {
    let mut cfg: EstimateConfig = config::load(args.config.as_deref()).map_err(Failure::config)?;
    if let Some(s) = args.seed {
        cfg.estimator.seed = s;
    }
    cfg.estimator.validate().map_err(Failure::config)?;
    let data_path = args
        .data
        .clone()
        .or(cfg.paths.data.clone())
        .ok_or_else(|| Failure::config(Error::Config("no dataset given (--data)".into())))?;
    let (data, _) = load_csv(&data_path, &cfg.schema).map_err(Failure::data)?;
    let estimands = targets(cfg.targets(), args)
        .resolve(data.column_names())
        .map_err(Failure::config)?;
    let report = estimate(&data, &estimands, &cfg.estimator).map_err(Failure::run)?;
    let out = args.out.clone().or(cfg.paths.out);
    emit(&report.to_json().map_err(Failure::run)?, out.as_deref())
}

fn cmd_simulate(args: &Common) -> Outcome {
    let mut cfg: SimulateConfig = config::load(args.config.as_deref()).map_err(Failure::config)?;
    if let Some(s) = args.seed {
        cfg.dgp.seed = s;
        cfg.estimator.seed = s;
    }
    let estimands = targets(cfg.targets(), args)
        .resolve(&sim_columns())
        .map_err(Failure::config)?;
    let bench = BenchmarkConfig {
        d: cfg.d,
        dgp: cfg.dgp.clone(),
        estimands,
        estimators: config::estimator_kinds(&cfg.estimators).map_err(Failure::config)?,
        estimator: cfg.estimator.clone(),
        truth_mc: cfg.truth_mc,
        truth_seed: cfg.truth_seed,
        truth_cache: cfg.truth_cache.clone(),
    };
    bench.validate().map_err(Failure::config)?;
    let res = run_benchmark(&bench).map_err(Failure::run)?;
    for (kind, d, msg) in &res.failures {
        eprintln!("warning: {kind} failed on replicate {d}: {msg}");
    }
    match args.out.clone().or(cfg.paths.out) {
        Some(p) => write_benchmark_csv(&res, &p).map_err(Failure::run),
        None => write_benchmark_table(&res, std::io::stdout().lock()).map_err(Failure::run),
    }
}

#[derive(Serialize)]
struct TruthRecord {
    estimand: String,
    policy: String,
    param: f64,
    truth: f64,
    mc_se: f64,
}

#[derive(Serialize)]
struct TruthReport<'a> {
    dgp: &'a DgpConfig,
    mc_clusters: usize,
    seed: u64,
    results: Vec<TruthRecord>,
}

fn cmd_truth(args: &Common) -> Outcome {
    let mut cfg: TruthConfig = config::load(args.config.as_deref()).map_err(Failure::config)?;
    if let Some(s) = args.seed {
        cfg.truth_seed = s;
    }
    cfg.dgp.validate().map_err(Failure::config)?;
    if cfg.truth_mc < 2 {
        return Err(Failure::config(Error::Config("truth_mc must be at least 2".into())));
    }
    let estimands = targets(cfg.targets(), args)
        .resolve(&sim_columns())
        .map_err(Failure::config)?;
    let truths = true_values_cached(
        &estimands,
        &cfg.dgp,
        cfg.truth_mc,
        cfg.truth_seed,
        cfg.truth_cache.as_deref(),
    )
    .map_err(Failure::run)?;
    let report = TruthReport {
        dgp: &cfg.dgp,
        mc_clusters: cfg.truth_mc,
        seed: cfg.truth_seed,
        results: estimands
            .iter()
            .zip(truths)
            .map(|(e, t)| TruthRecord {
                estimand: e.kind().to_string(),
                policy: match e.reference() {
                    Some(r) => format!("{} vs {}", e.policy(), r),
                    None => e.policy().to_string(),
                },
                param: e.policy().param(),
                truth: t.truth,
                mc_se: t.mc_se,
            })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&report).map_err(|e| Failure::run(e.into()))?;
    text.push('\n');
    emit(&text, args.out.clone().or(cfg.paths.out).as_deref())
}

fn cmd_validate(v: &ValidateArgs) -> Outcome {
    let args = &v.common;
    let path = args.config.as_deref();
    // Without data, an estimate configuration can only be checked against
    // the covariates its schema lists.
    let mut schema_columns = None;
    let (t, data) = match v.kind.as_str() {
        "estimate" => {
            let cfg: EstimateConfig = config::load(path).map_err(Failure::config)?;
            cfg.estimator.validate().map_err(Failure::config)?;
            let data = match args.data.clone().or(cfg.paths.data.clone()) {
                Some(p) => Some(load_csv(&p, &cfg.schema).map_err(Failure::data)?),
                None => None,
            };
            schema_columns = Some(cfg.schema.covariates.clone().unwrap_or_default());
            (cfg.targets(), data)
        }
        "simulate" => {
            let cfg: SimulateConfig = config::load(path).map_err(Failure::config)?;
            config::estimator_kinds(&cfg.estimators).map_err(Failure::config)?;
            cfg.estimator.validate().map_err(Failure::config)?;
            cfg.dgp.validate().map_err(Failure::config)?;
            (cfg.targets(), None)
        }
        _ => {
            let cfg: TruthConfig = config::load(path).map_err(Failure::config)?;
            cfg.dgp.validate().map_err(Failure::config)?;
            (cfg.targets(), None)
        }
    };
    let columns = match (&data, schema_columns) {
        (Some((d, _)), _) => d.column_names().to_vec(),
        (None, Some(c)) => c,
        (None, None) => sim_columns(),
    };
    let estimands = targets(t, args).resolve(&columns).map_err(Failure::config)?;
    if let Some((d, s)) = &data {
        for e in &estimands {
            for p in e.policies() {
                p.check_against(d.clusters()).map_err(Failure::data)?;
            }
        }
        println!("data: {} clusters, {} units, {} covariates", s.m, s.units, s.p);
        let sizes: Vec<String> = s.size_histogram.iter().map(|(n, c)| format!("{n}:{c}")).collect();
        println!("cluster sizes: {}", sizes.join(" "));
    }
    println!("{} estimands", estimands.len());
    for e in &estimands {
        println!("  {}", e.label());
    }
    Ok(())
}
