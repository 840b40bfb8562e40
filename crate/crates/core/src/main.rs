use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use log::{error, warn};

use kwapi::config::{parse_config, parse_forwarder_config, FrameworkConfig};
use kwapi::harness::{run_pollster, run_scenario, run_sweep, Scenario, ScenarioResult, SWEEP_INTERVALS};

#[derive(Parser)]
#[command(name = "kwapi", version, about = "Wattmeter monitoring framework")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the driver manager for every configured probe.
    Drivers {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the REST consumer.
    Api {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the archive and chart consumer.
    Viz {
        #[arg(long)]
        config: PathBuf,
    },
    /// Relay frames from upstream publishers to a downstream endpoint.
    Forwarder {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a benchmark scenario and write the results as JSON.
    Bench {
        /// Scenario name (e.g. "IPMI message signed") or a JSON scenario file.
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value = "results.json")]
        out: PathBuf,
        /// Override the scenario duration in seconds.
        #[arg(long)]
        duration: Option<f64>,
        /// Override the measurement interval in seconds.
        #[arg(long)]
        interval: Option<f64>,
        /// Run once per interval in 0.2, 0.4, 0.6, 0.8, 1.0 s.
        #[arg(long)]
        sweep: bool,
    },
    /// Poll the REST API and append gauge/cumulative samples to a file.
    Pollster {
        #[arg(long)]
        api: String,
        #[arg(long, env = "KWAPI_TOKEN")]
        token: String,
        #[arg(long, default_value_t = 10.0)]
        period: f64,
        #[arg(long)]
        sink: PathBuf,
    },
}

fn load(path: &Path) -> Result<FrameworkConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let cfg = parse_config(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    for w in &cfg.warnings {
        warn!("{}:{}: unknown key {:?} in [{}]", path.display(), w.line, w.key, w.section);
    }
    Ok(cfg)
}

fn load_scenario(arg: &str) -> Result<Scenario, String> {
    if let Some(s) = Scenario::named(arg) {
        return Ok(s);
    }
    let text = std::fs::read_to_string(arg).map_err(|_| {
        format!(
            "{arg:?} is neither a scenario file nor one of: {}",
            Scenario::NAMES.join(", ")
        )
    })?;
    serde_json::from_str(&text).map_err(|e| format!("{arg}: {e}"))
}

fn bench(
    scenario: &str,
    out: &Path,
    duration: Option<f64>,
    interval: Option<f64>,
    sweep: bool,
) -> Result<(), String> {
    let mut s = load_scenario(scenario)?;
    if let Some(d) = duration {
        s.duration_s = d;
    }
    if let Some(i) = interval {
        s.interval_s = i;
    }
    let results: Vec<ScenarioResult> = if sweep {
        run_sweep(&s, &SWEEP_INTERVALS)
    } else {
        run_scenario(&s).map(|r| vec![r])
    }
    .map_err(|e| e.to_string())?;
    for r in &results {
        println!(
            "{:<24} interval {:>4} s  published {:>7}  received {:>7}  drops {:>5}  p95 jitter {:.4} s  max burst {}",
            r.scenario.name,
            r.scenario.interval_s,
            r.frames_published,
            r.frames_received,
            r.drops,
            r.jitter_p95_s,
            r.max_burst
        );
    }
    let json = serde_json::to_string_pretty(&results).map_err(|e| e.to_string())?;
    std::fs::write(out, json + "\n").map_err(|e| format!("{}: {e}", out.display()))
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Drivers { config } => {
            kwapi::drivers::run_manager(&load(&config)?).map_err(|e| e.to_string())
        }
        Command::Api { config } => kwapi::api::run_api(&load(&config)?).map_err(|e| e.to_string()),
        Command::Viz { config } => kwapi::viz::run_viz(&load(&config)?).map_err(|e| e.to_string()),
        Command::Forwarder { config } => {
            let text = std::fs::read_to_string(&config)
                .map_err(|e| format!("{}: {e}", config.display()))?;
            let cfg = parse_forwarder_config(&text).map_err(|e| format!("{}: {e}", config.display()))?;
            kwapi::forwarder::run_forwarder(&cfg).map_err(|e| e.to_string())
        }
        Command::Bench {
            scenario,
            out,
            duration,
            interval,
            sweep,
        } => bench(&scenario, &out, duration, interval, sweep),
        Command::Pollster {
            api,
            token,
            period,
            sink,
        } => {
            if !(period.is_finite() && period > 0.0) {
                return Err(format!("period must be > 0, got {period}"));
            }
            run_pollster(&api, &token, Duration::from_secs_f64(period), &sink)
                .map_err(|e| e.to_string())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::FAILURE
        }
    }
}
