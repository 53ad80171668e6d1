use std::path::Path;
use std::process::{Command, Output};

use handover_core::log::TrialLog;
use handover_session::config::SessionConfig;
use handover_session::protocol::{ServerBody, ServerMessage};

fn handover(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_handover")).current_dir(dir).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn run_twice_gives_byte_identical_logs() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a.ndjson", "b.ndjson"] {
        let o = handover(dir.path(), &["run", "--seed", "7", "--out", out]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = std::fs::read(dir.path().join("a.ndjson")).unwrap();
    let b = std::fs::read(dir.path().join("b.ndjson")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn nominal_run_writes_a_log_with_three_successes() {
    let dir = tempfile::tempdir().unwrap();
    let o = handover(dir.path(), &["run", "--condition", "ar,no-error", "--seed", "7", "--log-dir", "out"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let log = TrialLog::load(&dir.path().join("out/ar_no-error_ar_informed_seed7.ndjson")).unwrap();
    assert_eq!(log.summary.successes, 3);
    assert!(log.summary.aborted.is_none());
    assert!(String::from_utf8_lossy(&o.stdout).contains("3 successes"));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "dt = -1.0\n").unwrap();
    for args in [
        &["run", "--bogus"][..],
        &["--config", "missing.toml", "run"],
        &["--config", "bad.toml", "run"],
        &["run", "--condition", "sideways"],
        &["batch", "--seeds", "0"],
        &[],
    ] {
        assert_eq!(code(&handover(dir.path(), args)), 2, "{args:?}");
    }
}

#[test]
fn aborted_trial_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = SessionConfig::default();
    cfg.sim.engine.max_trial_time = 2.0;
    std::fs::write(dir.path().join("short.toml"), cfg.to_toml()).unwrap();
    let o = handover(dir.path(), &["--config", "short.toml", "run", "--seed", "1"]);
    assert_eq!(code(&o), 1);
    // the log is still written
    assert!(dir.path().join("logs/ar_no-error_ar_informed_seed1.ndjson").exists());
}

#[test]
fn config_init_writes_loadable_defaults() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&handover(dir.path(), &["config", "init", "--out", "c.toml"])), 0);
    let cfg = SessionConfig::load(&dir.path().join("c.toml")).unwrap();
    assert_eq!(cfg, SessionConfig::default());
    assert_eq!(code(&handover(dir.path(), &["config", "init", "--out", "c.toml"])), 2);
    assert_eq!(code(&handover(dir.path(), &["config", "init", "--out", "c.toml", "--force"])), 0);
    let printed = handover(dir.path(), &["config", "init"]);
    assert_eq!(String::from_utf8(printed.stdout).unwrap(), std::fs::read_to_string(dir.path().join("c.toml")).unwrap());
    assert_eq!(code(&handover(dir.path(), &["--config", "c.toml", "run", "--seed", "3"])), 0);
}

#[test]
fn replay_re_emits_every_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&handover(dir.path(), &["run", "--condition", "no-ar,error", "--seed", "2", "--out", "t.ndjson"])), 0);
    let log = TrialLog::load(&dir.path().join("t.ndjson")).unwrap();
    for args in [&["replay", "t.ndjson"][..], &["--replay", "t.ndjson"]] {
        let o = handover(dir.path(), args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let msgs: Vec<ServerMessage> =
            String::from_utf8(o.stdout).unwrap().lines().map(|l| ServerMessage::from_json(l).unwrap()).collect();
        assert!(matches!(&msgs[0].body, ServerBody::Hello(h) if h.read_only && h.seed == 2));
        let ticks: Vec<u64> = msgs
            .iter()
            .filter_map(|m| match &m.body {
                ServerBody::Snapshot(s) => Some(s.tick),
                _ => None,
            })
            .collect();
        assert_eq!(ticks, (1..=log.summary.final_tick).collect::<Vec<_>>());
        assert!(msgs.iter().any(|m| matches!(&m.body, ServerBody::TrialEnded(e) if e.summary == log.summary)));
    }
    let o = handover(dir.path(), &["replay", "t.ndjson", "--decimation", "30", "--out", "thin.ndjson"]);
    assert_eq!(code(&o), 0);
    let thin = std::fs::read_to_string(dir.path().join("thin.ndjson")).unwrap().lines().count() as u64;
    assert!(thin < log.summary.final_tick / 10, "{thin}");
}

#[test]
fn replay_refuses_a_log_that_does_not_reproduce() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&handover(dir.path(), &["run", "--seed", "4", "--out", "t.ndjson"])), 0);
    let text = std::fs::read_to_string(dir.path().join("t.ndjson")).unwrap();
    std::fs::write(dir.path().join("u.ndjson"), text.replacen("\"seed\":4", "\"seed\":5", 1)).unwrap();
    let o = handover(dir.path(), &["replay", "u.ndjson"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("differs"));
    assert_eq!(code(&handover(dir.path(), &["replay", "absent.ndjson"])), 1);
}

#[test]
fn batch_writes_csv_and_json_reports() {
    let dir = tempfile::tempdir().unwrap();
    let o = handover(dir.path(), &["batch", "--seeds", "1", "--grid", "ar,error", "--grid", "no-ar,error", "--save-logs"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("logs/report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("logs/report.json")).unwrap()).unwrap();
    assert_eq!(json["cells"].as_array().unwrap().len(), 2);
    assert_eq!(std::fs::read_dir(dir.path().join("logs/batch")).unwrap().count(), 2);
}

#[test]
fn headless_serve_stops_when_asked() {
    let dir = tempfile::tempdir().unwrap();
    let o = handover(
        dir.path(),
        &["serve", "--headless", "--bind", "127.0.0.1:0", "--speed", "100", "--max-ticks", "60", "--seed", "3"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("listening on ws://127.0.0.1:"));
    assert!(stdout.contains("saved interrupted trial"));
    let saved = std::fs::read_dir(dir.path().join("logs")).unwrap().next().unwrap().unwrap().path();
    let log = TrialLog::load(&saved).unwrap();
    assert_eq!(log.summary.final_tick, 60);
}
