use std::fs;
use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use shir_core::aggregator::GammaSchedule;
use shir_core::sim::{Mechanism, Method, SimSetting};
use shir_core::transport::{read_envelope_file, serve_site};
use shir_core::{LossFamily, ShirError};
use thiserror::Error;

mod aggregate;
mod coefficients;
mod data;
mod evaluate;
mod local_fit;
mod simulate;

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] ShirError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) if is_convergence_failure(e) => 3,
            CliError::Core(_) => 2,
        }
    }
}

fn is_convergence_failure(e: &ShirError) -> bool {
    e.is_convergence() || matches!(e.root(), ShirError::AllGridPointsFailed { .. })
}

#[derive(Debug, Parser)]
#[command(name = "shir", version, about = "Integrative sparse regression from per-site summary statistics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct OutArg {
    /// Output directory.
    #[arg(long, env = "SHIR_OUT_DIR", default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a site's LASSO by cross-validation and write its summary envelope.
    LocalFit {
        /// Headed CSV with a response column and numeric covariates (no intercept column).
        #[arg(long)]
        data: PathBuf,
        /// Defaults to the data file's stem.
        #[arg(long)]
        site_id: Option<String>,
        #[arg(long, default_value = "y")]
        response: String,
        #[arg(long, default_value = "logistic", value_parser = parse_family)]
        family: LossFamily,
        #[arg(long, default_value_t = shir_core::local::DEFAULT_FOLDS)]
        folds: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Comma-separated, strictly decreasing penalty grid for cross-validation.
        #[arg(long, value_parser = parse_grid)]
        lambda_grid: Option<Grid>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Combine site envelopes (files or tcp://host:port) into the integrative fit.
    Aggregate {
        sources: Vec<String>,
        /// TOML run manifest listing the sites and, optionally, schedule and grids.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, value_parser = parse_schedule)]
        schedule: Option<GammaSchedule>,
        #[arg(long, value_parser = parse_grid)]
        lambda_grid: Option<Grid>,
        #[arg(long, value_parser = parse_grid)]
        lambda_g_grid: Option<Grid>,
        /// Output directory [env: SHIR_OUT_DIR; default: manifest's out_dir, else "."].
        #[arg(long, env = "SHIR_OUT_DIR")]
        out: Option<PathBuf>,
    },
    /// Run the synthetic benchmark and write per-replication and summary tables.
    Simulate {
        /// TOML file with the setting; command-line flags override its values.
        #[arg(long)]
        setting: Option<PathBuf>,
        #[arg(long, value_parser = parse_mechanism)]
        mechanism: Option<Mechanism>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        sites: Option<usize>,
        #[arg(long)]
        p: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long, value_parser = parse_schedule)]
        schedule: Option<GammaSchedule>,
        /// Comma-separated subset of ipd,shir,debias,sma (ipd is always run).
        #[arg(long, default_value = "ipd,shir,debias,sma")]
        methods: String,
        /// Start from the large configuration (8 sites, 1500 covariates, 200 replications).
        #[arg(long)]
        full: bool,
        #[command(flatten)]
        out: OutArg,
    },
    /// Score a coefficient table on held-out site data.
    Evaluate {
        /// coefficients.csv written by `aggregate`.
        #[arg(long)]
        bundle: PathBuf,
        /// `site=path.csv` or `path.csv` (site id from the file stem); repeatable.
        #[arg(long, required = true)]
        data: Vec<String>,
        #[arg(long, default_value = "y")]
        response: String,
        #[arg(long, default_value = "logistic", value_parser = parse_family)]
        family: LossFamily,
        #[command(flatten)]
        out: OutArg,
    },
    /// Serve one envelope over TCP, one length-prefixed frame per connection.
    Serve {
        #[arg(long)]
        envelope: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7400")]
        bind: String,
        /// Stop after this many connections (default: serve forever).
        #[arg(long)]
        connections: Option<usize>,
    },
}

#[derive(Debug, Clone)]
struct Grid(Vec<f64>);

fn parse_grid(s: &str) -> Result<Grid, String> {
    let v = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    if v.is_empty() || v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err("grid values must be finite and nonnegative".into());
    }
    Ok(Grid(v))
}

fn parse_family(s: &str) -> Result<LossFamily, String> {
    LossFamily::parse(s).ok_or_else(|| format!("unknown family {s:?} (logistic, squared-error)"))
}

fn parse_schedule(s: &str) -> Result<GammaSchedule, String> {
    GammaSchedule::parse(s).ok_or_else(|| format!("unknown schedule {s:?} (aic, bic, mbic, ric)"))
}

fn parse_mechanism(s: &str) -> Result<Mechanism, String> {
    s.parse().map_err(|e: ShirError| e.to_string())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::LocalFit {
            data,
            site_id,
            response,
            family,
            folds,
            seed,
            lambda_grid,
            out,
        } => {
            let (path, s) = local_fit::run(&local_fit::LocalFitArgs {
                data,
                site_id,
                response,
                family,
                folds,
                seed,
                lambda_grid: lambda_grid.map(|g| g.0),
                out: out.out,
            })?;
            println!("{}: site {} n={} p={} lambda={:e}", path.display(), s.site_id, s.n, s.p, s.lambda_m);
        }
        Command::Aggregate {
            sources,
            manifest,
            schedule,
            lambda_grid,
            lambda_g_grid,
            out,
        } => {
            if sources.is_empty() && manifest.is_none() {
                return Err(CliError::Usage("give envelope sources or --manifest".into()));
            }
            let res = aggregate::run(&aggregate::AggregateArgs {
                sources,
                manifest,
                schedule,
                lambda_grid: lambda_grid.map(|g| g.0),
                lambda_g_grid: lambda_g_grid.map(|g| g.0),
                out,
            })?;
            let b = &res.search.best;
            println!(
                "{} sites; lambda={:e} lambda_g={:e} gic={:e} df={:.3}; wrote {}",
                res.summaries.len(),
                b.lambda,
                b.lambda_g,
                b.gic,
                b.df,
                res.out_dir.display()
            );
        }
        Command::Simulate {
            setting,
            mechanism,
            reps,
            seed,
            sites,
            p,
            n,
            folds,
            schedule,
            methods,
            full,
            out,
        } => {
            let mech = mechanism.unwrap_or(Mechanism::Strong);
            let mut s = match setting {
                Some(path) => SimSetting::from_toml(&fs::read_to_string(path).map_err(ShirError::from)?)?,
                None if full => SimSetting::full(mech),
                None => SimSetting::desk(mech),
            };
            if let Some(m) = mechanism {
                s.mechanism = m;
            }
            if let Some(v) = reps {
                s.replications = v;
            }
            if let Some(v) = seed {
                s.seed = v;
            }
            if let Some(v) = sites {
                s.sites = v;
            }
            if let Some(v) = p {
                s.p = v;
            }
            if let Some(v) = n {
                s.n = v;
            }
            if let Some(v) = folds {
                s.folds = v;
            }
            if let Some(v) = schedule {
                s.schedule = v;
            }
            s.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            let mut ms = vec![Method::Ipd];
            for t in methods.split(',').map(str::trim).filter(|t| !t.is_empty()) {
                ms.push(t.parse().map_err(|e: ShirError| CliError::Usage(e.to_string()))?);
            }
            let report = simulate::run(&s, &ms, &out.out)?;
            for m in &report.summaries {
                let show = |x: Option<shir_core::sim::benchmark::Moments>| {
                    x.map(|v| format!("{:.4}", v.mean)).unwrap_or_else(|| "-".into())
                };
                println!(
                    "{:7} ok={:3} failed={:3} raee={} rpe={} tpr={} fdr={}",
                    m.method.name(),
                    m.succeeded,
                    m.failed,
                    show(m.raee),
                    show(m.rpe),
                    show(m.tpr),
                    show(m.fdr)
                );
            }
        }
        Command::Evaluate {
            bundle,
            data,
            response,
            family,
            out,
        } => {
            let rows = evaluate::run(&evaluate::EvaluateArgs {
                bundle,
                data,
                response,
                family,
                out: out.out,
            })?;
            for r in rows {
                println!("{} ({}): n={} loss={:.6} mse={:.6}", r.site, r.coefficients, r.n, r.loss, r.mse);
            }
        }
        Command::Serve {
            envelope,
            bind,
            connections,
        } => {
            // Decode first so a corrupt file is never served.
            read_envelope_file(&envelope)?;
            let bytes = fs::read(&envelope).map_err(ShirError::from)?;
            let listener = TcpListener::bind(&bind).map_err(ShirError::from)?;
            eprintln!("serving {} on {}", envelope.display(), listener.local_addr().map_err(ShirError::from)?);
            serve_site(&listener, &bytes, connections)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
