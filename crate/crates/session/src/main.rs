use std::fs::File;
use std::io::{self, BufWriter};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use handover_core::config::{HandPolicyKind, TrialCondition};
use handover_core::log::TrialLog;
use handover_core::trial::{run_batch_logs, run_trial, summarize, BatchSpec, PolicyMapping};
use handover_session::config::SessionConfig;
use handover_session::server::{self, ServerOptions};
use handover_session::session::{save_log, ReplayDriver, Session, SessionOptions};

/// Human-to-robot cube handover simulator.
#[derive(Debug, Parser)]
#[command(name = "handover", version)]
struct Cli {
    /// TOML config file; built-in defaults apply when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Directory for trial logs and reports, overriding the config.
    #[arg(long, global = true, value_name = "DIR")]
    log_dir: Option<PathBuf>,
    /// Re-emit the snapshots of a log; same as the `replay` subcommand.
    #[arg(long, value_name = "LOG")]
    replay: Option<PathBuf>,
    #[command(subcommand)]
    command: Option<Cmd>,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Run one headless trial and write its log.
    Run(RunArgs),
    /// Run a grid of conditions and seeds and write a CSV and JSON report.
    Batch(BatchArgs),
    /// Serve a live session over WebSocket.
    Serve(ServeArgs),
    /// Rerun a log, check it reproduces, and re-emit its snapshots.
    Replay(ReplayArgs),
    /// Config file helpers.
    Config {
        #[command(subcommand)]
        action: ConfigCmd,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    /// `ar` or `no-ar`, then `error` or `no-error`, comma separated.
    #[arg(long, default_value = "ar,no-error")]
    condition: TrialCondition,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Hand policy; by default ar_informed with AR and reactive without.
    #[arg(long)]
    policy: Option<HandPolicyKind>,
    /// Exact log path instead of a generated name in the log directory.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BatchArgs {
    /// Number of seeds per condition.
    #[arg(long, default_value_t = 16)]
    seeds: u64,
    /// First seed.
    #[arg(long, default_value_t = 0)]
    first_seed: u64,
    /// `full` for all four conditions, or one condition per flag.
    #[arg(long, default_value = "full")]
    grid: Vec<String>,
    /// One policy for every condition instead of the AR-based mapping.
    #[arg(long)]
    policy: Option<HandPolicyKind>,
    /// Also write every trial log.
    #[arg(long)]
    save_logs: bool,
    /// Report file stem inside the log directory.
    #[arg(long, default_value = "report")]
    report: String,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    bind: Option<SocketAddr>,
    #[arg(long, default_value = "ar,no-error")]
    condition: TrialCondition,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Hand policy; manual unless headless.
    #[arg(long)]
    policy: Option<HandPolicyKind>,
    /// Scripted hands and automatic start commands; clients only watch.
    #[arg(long)]
    headless: bool,
    /// Send every n-th snapshot.
    #[arg(long)]
    decimation: Option<u32>,
    /// Simulated seconds per wall-clock second.
    #[arg(long, default_value_t = 1.0)]
    speed: f64,
    /// Stop after this many ticks.
    #[arg(long)]
    max_ticks: Option<u64>,
    /// Stop once the trial is over.
    #[arg(long)]
    exit_when_done: bool,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    log: PathBuf,
    /// NDJSON output file; standard output by default.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Serve the replay over WebSocket instead, starting when a client connects.
    #[arg(long)]
    bind: Option<SocketAddr>,
    #[arg(long)]
    decimation: Option<u32>,
    #[arg(long, default_value_t = 1.0)]
    speed: f64,
}

#[derive(Debug, Subcommand)]
enum ConfigCmd {
    /// Write the full default config.
    Init {
        /// Output file; standard output by default.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
        /// Overwrite an existing file.
        #[arg(long)]
        force: bool,
    },
}

enum CliError {
    /// Bad flags or config: exit 2.
    Usage(String),
    /// Aborted trial or runtime failure: exit 1.
    Failed(String),
}

fn failed(e: impl std::fmt::Display) -> CliError {
    CliError::Failed(e.to_string())
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn load_config(cli: &Cli) -> Result<SessionConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => SessionConfig::load(path).map_err(usage)?,
        None => SessionConfig::default(),
    };
    if let Some(dir) = &cli.log_dir {
        cfg.session.log_dir = dir.clone();
    }
    Ok(cfg)
}

fn mapping(policy: Option<HandPolicyKind>) -> PolicyMapping {
    policy.map_or(PolicyMapping::ByAr, PolicyMapping::Fixed)
}

fn check_speed(speed: f64) -> Result<(), CliError> {
    if speed.is_finite() && speed > 0.0 {
        Ok(())
    } else {
        Err(usage("--speed must be positive"))
    }
}

fn run(cfg: &SessionConfig, a: &RunArgs) -> Result<(), CliError> {
    let policy = mapping(a.policy).policy_for(a.condition);
    let log = run_trial(&cfg.sim, a.condition, policy, a.seed).map_err(failed)?;
    let path = match &a.out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(failed)?;
            }
            log.save(p).map_err(failed)?;
            p.clone()
        }
        None => save_log(&log, &cfg.session.log_dir, "").map_err(failed)?,
    };
    let s = &log.summary;
    let total = s.total_time.map_or("n/a".to_string(), |t| format!("{t:.3} s"));
    println!(
        "{} {policy} seed {}: {} successes, {} failures, total time {total}; log {}",
        a.condition,
        a.seed,
        s.successes,
        s.failures,
        path.display()
    );
    match &s.aborted {
        Some(reason) => Err(CliError::Failed(format!("trial aborted: {reason}"))),
        None => Ok(()),
    }
}

fn grid(values: &[String]) -> Result<Vec<TrialCondition>, CliError> {
    if values.iter().any(|v| v == "full") {
        return Ok(TrialCondition::ALL.to_vec());
    }
    values.iter().map(|v| v.parse::<TrialCondition>().map_err(usage)).collect()
}

fn batch(cfg: &SessionConfig, a: &BatchArgs) -> Result<(), CliError> {
    if a.seeds == 0 {
        return Err(usage("--seeds must be at least 1"));
    }
    let spec =
        BatchSpec { conditions: grid(&a.grid)?, mapping: mapping(a.policy), seeds: (a.first_seed..a.first_seed + a.seeds).collect() };
    let logs = run_batch_logs(&cfg.sim, &spec).map_err(failed)?;
    let report = summarize(&spec, &logs);
    let dir = &cfg.session.log_dir;
    std::fs::create_dir_all(dir).map_err(failed)?;
    let csv = dir.join(format!("{}.csv", a.report));
    report.write_csv(BufWriter::new(File::create(&csv).map_err(failed)?)).map_err(failed)?;
    let json = dir.join(format!("{}.json", a.report));
    std::fs::write(&json, report.to_json()).map_err(failed)?;
    if a.save_logs {
        for log in &logs {
            save_log(log, &dir.join("batch"), "").map_err(failed)?;
        }
    }
    println!("{:<16} {:<12} {:>6} {:>8} {:>7} {:>12}", "condition", "policy", "trials", "failures", "aborted", "mean time");
    for c in &report.cells {
        let mean = c.mean_total_time.map_or("n/a".to_string(), |t| format!("{t:.2} s"));
        println!(
            "{:<16} {:<12} {:>6} {:>8} {:>7} {:>12}",
            c.condition,
            c.policy.to_string(),
            c.trials,
            c.failures,
            c.aborted,
            mean
        );
    }
    println!("report {} and {}", csv.display(), json.display());
    Ok(())
}

fn serve(mut cfg: SessionConfig, a: &ServeArgs) -> Result<(), CliError> {
    check_speed(a.speed)?;
    let policy = match (a.policy, a.headless) {
        (Some(p), _) => PolicyMapping::Fixed(p),
        (None, true) => PolicyMapping::ByAr,
        (None, false) => PolicyMapping::Fixed(HandPolicyKind::Manual),
    };
    if !a.headless {
        // the client issues the start command
        cfg.sim.engine.auto_start = false;
    }
    if let Some(d) = a.decimation {
        cfg.session.decimation = d;
    }
    if let Some(b) = a.bind {
        cfg.session.bind = b;
    }
    cfg.validate().map_err(usage)?;
    let opts = SessionOptions {
        condition: a.condition,
        mapping: policy,
        seed: a.seed,
        log_dir: Some(cfg.session.log_dir.clone()),
        decimation: cfg.session.decimation,
    };
    let session = Session::new(cfg.sim.clone(), opts).map_err(failed)?;
    let handle = server::spawn(
        session,
        ServerOptions {
            bind: cfg.session.bind,
            tick_period: Duration::from_secs_f64(cfg.sim.dt / a.speed),
            decimation: cfg.session.decimation,
            wait_for_client: false,
            exit_when_done: a.exit_when_done,
            max_ticks: a.max_ticks,
        },
    )
    .map_err(failed)?;
    println!("listening on ws://{}", handle.local_addr());
    let mut session = handle.join();
    if let Some(path) = session.save_current().map_err(failed)? {
        println!("saved interrupted trial {}", path.display());
    }
    Ok(())
}

fn replay(cfg: &SessionConfig, path: &Path, a: Option<&ReplayArgs>) -> Result<(), CliError> {
    let speed = a.map_or(1.0, |a| a.speed);
    check_speed(speed)?;
    let decimation = a.and_then(|a| a.decimation).unwrap_or(cfg.session.decimation).max(1);
    let log = TrialLog::load(path).map_err(failed)?;
    let driver = ReplayDriver::new(&log, decimation).map_err(failed)?;
    if let Some(bind) = a.and_then(|a| a.bind) {
        let handle = server::spawn(
            driver,
            ServerOptions {
                bind,
                tick_period: Duration::from_secs_f64(log.header.dt / speed),
                decimation,
                wait_for_client: true,
                exit_when_done: true,
                max_ticks: None,
            },
        )
        .map_err(failed)?;
        println!("replaying on ws://{} once a client connects", handle.local_addr());
        handle.join();
        return Ok(());
    }
    match a.and_then(|a| a.out.as_ref()) {
        Some(out) => driver.write_ndjson(BufWriter::new(File::create(out).map_err(failed)?), decimation),
        None => driver.write_ndjson(io::stdout().lock(), decimation),
    }
    .map_err(failed)?;
    Ok(())
}

fn config_init(out: Option<&Path>, force: bool) -> Result<(), CliError> {
    let text = SessionConfig::default().to_toml();
    match out {
        Some(p) if p.exists() && !force => Err(usage(format!("{} exists; pass --force to overwrite", p.display()))),
        Some(p) => std::fs::write(p, text).map_err(failed),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let cfg = load_config(&cli)?;
    match (&cli.command, &cli.replay) {
        (Some(_), Some(_)) => Err(usage("--replay cannot be combined with a subcommand")),
        (Some(Cmd::Run(a)), _) => run(&cfg, a),
        (Some(Cmd::Batch(a)), _) => batch(&cfg, a),
        (Some(Cmd::Serve(a)), _) => serve(cfg, a),
        (Some(Cmd::Replay(a)), _) => replay(&cfg, &a.log, Some(a)),
        (Some(Cmd::Config { action: ConfigCmd::Init { out, force } }), _) => config_init(out.as_deref(), *force),
        (None, Some(log)) => replay(&cfg, log, None),
        (None, None) => Err(usage("a subcommand is required; see --help")),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Failed(m)) => {
            eprintln!("error: {m}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn grid_values() {
        assert_eq!(grid(&["full".into()]).ok(), Some(TrialCondition::ALL.to_vec()));
        let two = grid(&["ar,error".into(), "no-ar,error".into()]).ok().unwrap();
        assert_eq!(two, vec![TrialCondition { ar: true, faked_error: true }, TrialCondition { ar: false, faked_error: true }]);
        assert!(matches!(grid(&["sideways".into()]), Err(CliError::Usage(_))));
    }
}
