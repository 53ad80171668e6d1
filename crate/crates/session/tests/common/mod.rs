#![allow(dead_code)]

use std::path::PathBuf;

use handover_core::config::{HandPolicyKind, SimConfig, TrialCondition};
use handover_core::trial::PolicyMapping;
use handover_session::session::{Session, SessionOptions};

pub fn condition(s: &str) -> TrialCondition {
    s.parse().unwrap()
}

/// A client-driven session: manual hand, no automatic start.
pub fn interactive(c: TrialCondition, log_dir: Option<PathBuf>) -> Session {
    let mut cfg = SimConfig::default();
    cfg.engine.auto_start = false;
    let opts =
        SessionOptions { condition: c, mapping: PolicyMapping::Fixed(HandPolicyKind::Manual), seed: 3, log_dir, decimation: 1 };
    Session::new(cfg, opts).unwrap()
}

/// A watch-only session with scripted hands and automatic starts.
pub fn headless(c: TrialCondition, seed: u64) -> Session {
    let opts = SessionOptions { condition: c, mapping: PolicyMapping::ByAr, seed, log_dir: None, decimation: 1 };
    Session::new(SimConfig::default(), opts).unwrap()
}
