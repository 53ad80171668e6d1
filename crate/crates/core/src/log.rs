//! Trial logs: the event stream, per-handover records and the summary, stored
//! as newline-delimited JSON (header line, one line per event, summary line).

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::ErrorArtifact;
use crate::config::{HandPolicyKind, SimConfig, TrialCondition};
use crate::se3::Pose;
use crate::sim::{Command, CommandSource, Phase};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    GraspFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    PhaseChanged { from: Phase, to: Phase },
    CubePresented { pose: Pose },
    CommandAccepted { source: CommandSource, command: Command },
    SelectionFrozen { candidate_id: usize, target: Pose },
    GraspAttempt {
        candidate_id: usize,
        outcome: Outcome,
        /// Distance from the gripper to the nearest true grasp.
        position_error: f64,
        angle_error: f64,
        reason: Option<String>,
    },
    HandoverCompleted { index: usize, start_time: f64, end_time: f64 },
    TrialCompleted { total_time: f64 },
    TrialAborted { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub tick: u64,
    pub time: f64,
    pub event: EventKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandoverRecord {
    pub start_time: f64,
    pub end_time: f64,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub schema_version: u32,
    pub condition: TrialCondition,
    pub policy: HandPolicyKind,
    pub seed: u64,
    pub dt: f64,
    /// The artifact applied to every estimate, when the condition has one.
    pub artifact: Option<ErrorArtifact>,
    pub config: SimConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub successes: usize,
    pub failures: usize,
    /// Last success end minus first start; present only for completed trials.
    pub total_time: Option<f64>,
    pub aborted: Option<String>,
    pub final_tick: u64,
    pub handovers: Vec<HandoverRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialLog {
    pub header: LogHeader,
    pub events: Vec<Event>,
    pub summary: TrialSummary,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Line {
    Header(Box<LogHeader>),
    Event(Event),
    Summary(TrialSummary),
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("parse error at byte offset {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("incompatible log schema version {found} (this build reads version {expected})")]
    Version { found: u64, expected: u32 },
}

fn parse_err(offset: usize, message: impl Into<String>) -> LogError {
    LogError::Parse { offset, message: message.into() }
}

impl TrialLog {
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        let mut push = |line: &Line| {
            out.push_str(&serde_json::to_string(line).expect("log records always serialize"));
            out.push('\n');
        };
        push(&Line::Header(Box::new(self.header.clone())));
        for e in &self.events {
            push(&Line::Event(e.clone()));
        }
        push(&Line::Summary(self.summary.clone()));
        out
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(self.to_ndjson().as_bytes())
    }

    pub fn from_ndjson(text: &str) -> Result<Self, LogError> {
        let mut header = None;
        let mut events = Vec::new();
        let mut offset = 0;
        for raw in text.split_inclusive('\n') {
            let start = offset;
            offset += raw.len();
            let line = raw.strip_suffix('\n').unwrap_or(raw);
            if line.trim().is_empty() {
                continue;
            }
            if !raw.ends_with('\n') {
                return Err(parse_err(offset, "truncated record (no trailing newline)"));
            }
            let value: serde_json::Value = serde_json::from_str(line).map_err(|e| at(start, line, &e))?;
            if header.is_none() {
                let found = value.get("schema_version").and_then(|v| v.as_u64());
                match found {
                    Some(v) if v == SCHEMA_VERSION as u64 => {}
                    Some(v) => return Err(LogError::Version { found: v, expected: SCHEMA_VERSION }),
                    None => return Err(parse_err(start, "first record is not a log header")),
                }
            }
            let rec: Line = serde_json::from_str(line).map_err(|e| at(start, line, &e))?;
            match (rec, header.is_some()) {
                (Line::Header(h), false) => header = Some(*h),
                (Line::Event(e), true) => events.push(e),
                (Line::Summary(summary), true) => {
                    if offset != text.len() && !text[offset..].trim().is_empty() {
                        return Err(parse_err(offset, "data after the summary record"));
                    }
                    return Ok(TrialLog { header: header.expect("checked"), events, summary });
                }
                (_, _) => return Err(parse_err(start, "record out of order")),
            }
        }
        Err(parse_err(text.len(), "log ends before the summary record"))
    }

    pub fn save(&self, path: &Path) -> Result<(), LogError> {
        fs::write(path, self.to_ndjson())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, LogError> {
        let bytes = fs::read(path)?;
        let text = match std::str::from_utf8(&bytes) {
            Ok(t) => t,
            Err(e) => return Err(parse_err(e.valid_up_to(), "invalid utf-8")),
        };
        Self::from_ndjson(text)
    }

    /// Commands a client sent, with the tick they were applied on.
    pub fn client_commands(&self) -> Vec<(u64, Command)> {
        self.events
            .iter()
            .filter_map(|e| match e.event {
                EventKind::CommandAccepted { source: CommandSource::Client, command } => Some((e.tick, command)),
                _ => None,
            })
            .collect()
    }
}

fn at(line_start: usize, line: &str, e: &serde_json::Error) -> LogError {
    // serde_json columns are 1-based and count bytes within the line
    let col = e.column().saturating_sub(1).min(line.len());
    parse_err(line_start + col, e.to_string())
}

/// Total time from the raw events: end of the last completed handover minus
/// the first accepted start command. `None` unless the trial completed.
pub fn recompute_total_time(events: &[Event]) -> Option<f64> {
    let completed = events.iter().any(|e| matches!(e.event, EventKind::TrialCompleted { .. }));
    if !completed {
        return None;
    }
    let first_start = events.iter().find_map(|e| match e.event {
        EventKind::CommandAccepted { command: Command::StartHandover, .. } => Some(e.time),
        _ => None,
    })?;
    let last_end = events.iter().rev().find_map(|e| match e.event {
        EventKind::HandoverCompleted { end_time, .. } => Some(end_time),
        _ => None,
    })?;
    Some(last_end - first_start)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> TrialLog {
        TrialLog {
            header: LogHeader {
                schema_version: SCHEMA_VERSION,
                condition: TrialCondition { ar: true, faked_error: false },
                policy: HandPolicyKind::Rigid,
                seed: 9,
                dt: 1.0 / 30.0,
                artifact: None,
                config: SimConfig::default(),
            },
            events: vec![
                Event { tick: 3, time: 0.1, event: EventKind::CommandAccepted { source: CommandSource::Client, command: Command::StartHandover } },
                Event { tick: 90, time: 3.0, event: EventKind::HandoverCompleted { index: 1, start_time: 0.1, end_time: 3.0 } },
                Event { tick: 90, time: 3.0, event: EventKind::TrialCompleted { total_time: 2.9 } },
            ],
            summary: TrialSummary {
                successes: 1,
                failures: 0,
                total_time: Some(2.9),
                aborted: None,
                final_tick: 90,
                handovers: vec![HandoverRecord { start_time: 0.1, end_time: 3.0, outcome: Outcome::Success }],
            },
        }
    }

    #[test]
    fn round_trip() {
        let log = tiny();
        let text = log.to_ndjson();
        assert_eq!(text.lines().count(), 5);
        assert_eq!(TrialLog::from_ndjson(&text).unwrap(), log);
    }

    #[test]
    fn truncation_names_offset() {
        let text = tiny().to_ndjson();
        let cut = &text[..text.len() - 20];
        match TrialLog::from_ndjson(cut) {
            Err(LogError::Parse { offset, .. }) => assert!(offset <= cut.len()),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_summary_is_an_error() {
        let text = tiny().to_ndjson();
        let keep: String = text.split_inclusive('\n').take(2).collect();
        assert!(matches!(TrialLog::from_ndjson(&keep), Err(LogError::Parse { offset, .. }) if offset == keep.len()));
    }

    #[test]
    fn version_mismatch() {
        let text = tiny().to_ndjson().replacen("\"schema_version\":1", "\"schema_version\":7", 1);
        assert!(matches!(TrialLog::from_ndjson(&text), Err(LogError::Version { found: 7, .. })));
    }

    #[test]
    fn recompute_matches_events() {
        let t = recompute_total_time(&tiny().events).unwrap();
        assert_eq!(t, 3.0 - 0.1);
    }

    #[test]
    fn client_commands_are_listed() {
        assert_eq!(tiny().client_commands(), vec![(3, Command::StartHandover)]);
    }
}
