use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use actionpath::pipeline::{cmd_fit, cmd_plan, cmd_report, cmd_synth, Overrides, PipelineError, RunConfig};
use actionpath::planner::Direction;
use actionpath_service::{serve, ServiceConfig, DEFAULT_MAX_ITERATIONS};

/// Fit a regressor and a mixture surrogate, then plan actionable
/// improvement paths for individual instances.
#[derive(Parser)]
#[command(name = "actionpath", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic dataset and its schema to the run directory.
    Synth(Common),
    /// Fit the regressor and surrogate; writes the model bundle.
    Fit(Common),
    /// Plan paths for the selected test instances.
    Plan(Common),
    /// Render ladders, projections and figures for the last plan.
    Report(Common),
    /// Serve the model bundle over HTTP.
    Serve(ServeArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Search iteration budget.
    #[arg(long = "L", value_name = "L")]
    iterations: Option<usize>,
    #[arg(long)]
    cell_sigma: Option<f64>,
    #[arg(long, value_parser = parse_direction)]
    direction: Option<Direction>,
    /// Run directory, overriding `output` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    /// Run config; its output directory is the bundle location.
    #[arg(long, env = "ACTIONPATH_CONFIG", required_unless_present = "bundle")]
    config: Option<PathBuf>,
    /// Directory holding bundle.json.
    #[arg(long, env = "ACTIONPATH_BUNDLE")]
    bundle: Option<PathBuf>,
    #[arg(long, env = "ACTIONPATH_BIND", default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    #[arg(long = "max-L", env = "ACTIONPATH_MAX_L", default_value_t = DEFAULT_MAX_ITERATIONS)]
    max_iterations: usize,
    /// Concurrent plan searches.
    #[arg(long, env = "ACTIONPATH_WORKERS")]
    workers: Option<usize>,
    /// Allowed CORS origin; repeat for several. Any origin when omitted.
    #[arg(long = "cors-origin", env = "ACTIONPATH_CORS_ORIGINS", value_delimiter = ',')]
    cors_origins: Vec<String>,
}

fn parse_direction(s: &str) -> Result<Direction, String> {
    match s {
        "minimize" | "min" => Ok(Direction::Minimize),
        "maximize" | "max" => Ok(Direction::Maximize),
        _ => Err(format!("`{s}` is not minimize or maximize")),
    }
}

fn load(c: &Common) -> Result<RunConfig, PipelineError> {
    let mut cfg = RunConfig::load(&c.config)?;
    cfg.apply(&Overrides {
        seed: c.seed,
        iterations: c.iterations,
        cell_sigma: c.cell_sigma,
        direction: c.direction,
        output: c.out.clone(),
    })?;
    Ok(cfg)
}

fn print(v: serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(&v).expect("json value"));
}

fn run(cmd: Command) -> Result<(), PipelineError> {
    match cmd {
        Command::Synth(c) => {
            let files = cmd_synth(&load(&c)?)?;
            for f in files {
                println!("{}", f.display());
            }
        }
        Command::Fit(c) => {
            let (_, summary) = cmd_fit(&load(&c)?)?;
            print(serde_json::to_value(&summary).expect("summary"));
        }
        Command::Plan(c) => {
            let s = cmd_plan(&load(&c)?)?;
            print(serde_json::json!({
                "planned": s.count,
                "skipped": s.skipped.len(),
                "positive": s.positive,
                "positive_fraction": s.positive_fraction,
                "median": s.median,
            }));
        }
        Command::Report(c) => {
            for f in cmd_report(&load(&c)?)? {
                println!("{f}");
            }
        }
        Command::Serve(a) => {
            let bundle_dir = match (a.bundle, a.config) {
                (Some(b), _) => b,
                (None, Some(c)) => RunConfig::load(&c)?.output_dir()?,
                (None, None) => return Err(PipelineError::Config("--config or --bundle is required".into())),
            };
            let cfg = ServiceConfig {
                bind: a.bind,
                bundle_dir,
                max_iterations: a.max_iterations,
                workers: a
                    .workers
                    .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
                cors_origins: a.cors_origins,
            };
            eprintln!("listening on http://{}", cfg.bind);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(cfg)).map_err(|e| PipelineError::Stage {
                stage: "serve".into(),
                message: e.to_string(),
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
