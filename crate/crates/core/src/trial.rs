//! Headless trials, command replay and batch grids.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{HandPolicyKind, SimConfig, TrialCondition};
use crate::log::TrialLog;
use crate::sim::{Engine, SimError};

#[derive(Debug, Error)]
pub enum TrialError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
    #[error("replay diverged: {0}")]
    Replay(String),
    #[error("report io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("report csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Runs one trial to completion or abort. An abort is not an error here;
/// it is recorded in the log summary.
pub fn run_trial(cfg: &SimConfig, condition: TrialCondition, policy: HandPolicyKind, seed: u64) -> Result<TrialLog, TrialError> {
    let mut engine = Engine::new(cfg.clone(), condition, policy, seed)?;
    engine.begin();
    while !engine.is_finished() {
        engine.step(&[]);
    }
    Ok(engine.into_log())
}

/// Reruns a trial from its header, feeding the logged client commands on
/// the ticks they were applied. The result equals the original log when the
/// engine is deterministic.
pub fn replay(log: &TrialLog) -> Result<TrialLog, TrialError> {
    replay_with(log, |_| {})
}

/// [`replay`], calling `on_tick` after every step.
pub fn replay_with(log: &TrialLog, mut on_tick: impl FnMut(&Engine)) -> Result<TrialLog, TrialError> {
    let h = &log.header;
    let mut engine = Engine::new(h.config.clone(), h.condition, h.policy, h.seed)?;
    engine.begin();
    let commands = log.client_commands();
    let mut next = 0;
    // the logged final tick may lie past the finish when a session kept the trial open
    while engine.world().tick < log.summary.final_tick {
        let tick = engine.world().tick + 1;
        let mut batch = Vec::new();
        while next < commands.len() && commands[next].0 == tick {
            batch.push(commands[next].1);
            next += 1;
        }
        let rejected = engine.step(&batch);
        if let Some((i, e)) = rejected.first() {
            return Err(TrialError::Replay(format!("command {:?} at tick {tick} was rejected: {e}", batch[*i])));
        }
        on_tick(&engine);
    }
    Ok(engine.into_log())
}

/// How each condition picks its hand policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "policy")]
pub enum PolicyMapping {
    /// `ar_informed` with AR, `reactive` without.
    ByAr,
    Fixed(HandPolicyKind),
}

impl PolicyMapping {
    pub fn policy_for(self, c: TrialCondition) -> HandPolicyKind {
        match self {
            PolicyMapping::ByAr if c.ar => HandPolicyKind::ArInformed,
            PolicyMapping::ByAr => HandPolicyKind::Reactive,
            PolicyMapping::Fixed(k) => k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSpec {
    pub conditions: Vec<TrialCondition>,
    pub mapping: PolicyMapping,
    pub seeds: Vec<u64>,
}

impl BatchSpec {
    /// The 2×2 grid with the AR-based policy mapping.
    pub fn full_grid(seeds: Vec<u64>) -> Self {
        BatchSpec { conditions: TrialCondition::ALL.to_vec(), mapping: PolicyMapping::ByAr, seeds }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub condition: String,
    pub policy: HandPolicyKind,
    pub seed: u64,
    pub successes: usize,
    pub failures: usize,
    pub total_time: Option<f64>,
    pub aborted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub condition: String,
    pub policy: HandPolicyKind,
    pub trials: usize,
    pub failures: usize,
    pub aborted: usize,
    /// Over completed trials only.
    pub mean_total_time: Option<f64>,
    pub std_total_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub spec: BatchSpec,
    pub cells: Vec<CellSummary>,
    pub rows: Vec<TrialRow>,
}

impl BatchReport {
    pub fn cell(&self, c: TrialCondition) -> Option<&CellSummary> {
        let name = c.to_string();
        self.cells.iter().find(|s| s.condition == name)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), TrialError> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report always serializes")
    }
}

fn row(log: &TrialLog) -> TrialRow {
    TrialRow {
        condition: log.header.condition.to_string(),
        policy: log.header.policy,
        seed: log.header.seed,
        successes: log.summary.successes,
        failures: log.summary.failures,
        total_time: log.summary.total_time,
        aborted: log.summary.aborted.is_some(),
    }
}

/// Sample mean and standard deviation (n − 1).
fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = (xs.len() > 1).then(|| (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (Some(mean), std)
}

/// Runs every (condition, seed) pair in parallel. Logs come back in grid
/// order: conditions outer, seeds inner.
pub fn run_batch_logs(cfg: &SimConfig, spec: &BatchSpec) -> Result<Vec<TrialLog>, TrialError> {
    if spec.seeds.is_empty() {
        return Err(TrialError::InvalidBatch("seed list is empty".into()));
    }
    if spec.conditions.is_empty() {
        return Err(TrialError::InvalidBatch("condition list is empty".into()));
    }
    cfg.validate().map_err(SimError::from)?;
    let jobs: Vec<(TrialCondition, u64)> =
        spec.conditions.iter().flat_map(|&c| spec.seeds.iter().map(move |&s| (c, s))).collect();
    jobs.par_iter().map(|&(c, s)| run_trial(cfg, c, spec.mapping.policy_for(c), s)).collect()
}

pub fn summarize(spec: &BatchSpec, logs: &[TrialLog]) -> BatchReport {
    let rows: Vec<TrialRow> = logs.iter().map(row).collect();
    let cells = spec
        .conditions
        .iter()
        .map(|&c| {
            let name = c.to_string();
            let mine: Vec<&TrialRow> = rows.iter().filter(|r| r.condition == name).collect();
            let times: Vec<f64> = mine.iter().filter_map(|r| r.total_time).collect();
            let (mean, std) = mean_std(&times);
            CellSummary {
                condition: name,
                policy: spec.mapping.policy_for(c),
                trials: mine.len(),
                failures: mine.iter().map(|r| r.failures).sum(),
                aborted: mine.iter().filter(|r| r.aborted).count(),
                mean_total_time: mean,
                std_total_time: std,
            }
        })
        .collect();
    BatchReport { spec: spec.clone(), cells, rows }
}

pub fn run_batch(cfg: &SimConfig, spec: &BatchSpec) -> Result<BatchReport, TrialError> {
    let logs = run_batch_logs(cfg, spec)?;
    Ok(summarize(spec, &logs))
}
