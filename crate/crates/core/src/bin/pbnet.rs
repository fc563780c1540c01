use clap::{Args, Parser, Subcommand};
use pbnet::experiments::{
    run_benchmark, run_gradcheck, run_invtest, run_train, write_csv, write_json, write_params,
    ExperimentKind, Manifest, RunConfig,
};
use pbnet::network::Engine;
use pbnet::Error;
use serde_json::json;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Training, benchmarks and numerical checks for unrolled reconstruction
/// networks with memory-efficient backpropagation.
#[derive(Parser, Debug)]
#[command(name = "pbnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Learn the measurement matrix; writes loss_history.csv and params.bin.
    Train(Common),
    /// Peak memory and wall time over a layer-count sweep; writes benchmark.csv.
    Benchmark(Common),
    /// Finite-difference and cross-engine gradient check; writes gradcheck.json.
    Gradcheck(Common),
    /// Layer inversion round-trip residuals; writes invtest.csv.
    Invtest(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// JSON run config; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: the config's `out`, else ./out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Backpropagation engine, overriding the config.
    #[arg(long, value_parser = parse_engine)]
    engine: Option<Engine>,
}

fn parse_engine(s: &str) -> Result<Engine, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

const EXIT_NUMERIC: u8 = 1;
const EXIT_CONFIG: u8 = 2;

/// Failure carrying the process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_config() {
                EXIT_CONFIG
            } else {
                EXIT_NUMERIC
            },
            message: e.to_string(),
        }
    }
}

fn init_logging() {
    let mut builder =
        env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"));
    if std::env::var_os("NO_COLOR").is_some_and(|v| !v.is_empty()) {
        builder.write_style(env_logger::WriteStyle::Never);
    }
    builder.init();
}

fn main() -> ExitCode {
    init_logging();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn prepare(kind: ExperimentKind, common: &Common) -> Result<(RunConfig, PathBuf), Failure> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(engine) = common.engine {
        cfg.train.engine = engine;
        cfg.benchmark.engines = if engine == Engine::Standard {
            vec![Engine::Standard]
        } else {
            vec![Engine::Standard, engine]
        };
    }
    cfg.validate(kind)?;
    let out = common
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok((cfg, out))
}

fn create_out(out: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(out).map_err(|e| Failure {
        code: EXIT_CONFIG,
        message: format!("cannot create output directory {}: {e}", out.display()),
    })
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Train(common) => {
            let (cfg, out) = prepare(ExperimentKind::Train, &common)?;
            let report = run_train(&cfg)?;
            create_out(&out)?;
            write_csv(&out.join("loss_history.csv"), &report.outcome.history)?;
            write_params(&out.join("params.bin"), &report.outcome.params)?;
            let mut m = Manifest::new("train", &cfg);
            m.artifacts = vec!["loss_history.csv".into(), "params.bin".into()];
            m.param_layout = Some(report.outcome.params.layout());
            m.summary = report.summary();
            write_json(&out.join("manifest.json"), &m)?;
            log::info!(
                "test MSE {:.6e} -> {:.6e}; artifacts in {}",
                report.initial_test_mse(),
                report.final_test_mse(),
                out.display()
            );
            Ok(())
        }
        Command::Benchmark(common) => {
            let (cfg, out) = prepare(ExperimentKind::Benchmark, &common)?;
            let report = run_benchmark(&cfg)?;
            create_out(&out)?;
            write_csv(&out.join("benchmark.csv"), &report.rows)?;
            let mut m = Manifest::new("benchmark", &cfg);
            m.artifacts = vec!["benchmark.csv".into()];
            m.summary = json!({
                "time_fits": report.time_fits,
                "time_ratios_at_max": report.time_ratios_at_max,
                "failures": report.failures,
            });
            write_json(&out.join("manifest.json"), &m)?;
            for (engine, ratio) in &report.time_ratios_at_max {
                log::info!("{engine}/standard wall time at largest N: {ratio:.2}x");
            }
            if report.failures.is_empty() {
                Ok(())
            } else {
                Err(Failure {
                    code: EXIT_NUMERIC,
                    message: format!("engine failures:\n  {}", report.failures.join("\n  ")),
                })
            }
        }
        Command::Gradcheck(common) => {
            let (cfg, out) = prepare(ExperimentKind::Gradcheck, &common)?;
            let engine = common.engine.unwrap_or(Engine::MemoryEfficient);
            let report = run_gradcheck(&cfg, engine)?;
            create_out(&out)?;
            write_json(&out.join("gradcheck.json"), &report)?;
            let mut m = Manifest::new("gradcheck", &cfg);
            m.artifacts = vec!["gradcheck.json".into()];
            m.summary = json!({ "pass": report.pass, "engine": engine });
            write_json(&out.join("manifest.json"), &m)?;
            if report.pass {
                log::info!("gradient check passed");
                Ok(())
            } else {
                let mut lines = report.offending.clone();
                if let Some(e) = &report.engine_error {
                    lines.push(format!("{engine} engine failed: {e}"));
                }
                Err(Failure {
                    code: EXIT_NUMERIC,
                    message: format!("gradient check failed:\n  {}", lines.join("\n  ")),
                })
            }
        }
        Command::Invtest(common) => {
            let (cfg, out) = prepare(ExperimentKind::Invtest, &common)?;
            let report = run_invtest(&cfg)?;
            create_out(&out)?;
            write_csv(&out.join("invtest.csv"), &report.rows)?;
            let mut m = Manifest::new("invtest", &cfg);
            m.artifacts = vec!["invtest.csv".into()];
            m.summary = json!({
                "expected_rate": report.expected_rate,
                "fitted_rate": report.fitted_rate,
                "flagged": report.flagged,
            });
            write_json(&out.join("manifest.json"), &m)?;
            log::info!(
                "gradient-layer decay rate: fitted {:?}, expected {:.4}",
                report.fitted_rate,
                report.expected_rate
            );
            if report.flagged == 0 {
                Ok(())
            } else {
                Err(Failure {
                    code: EXIT_NUMERIC,
                    message: format!("{} invtest rows flagged", report.flagged),
                })
            }
        }
    }
}
