//! Tick-driven session state, independent of any transport.
//!
//! A [`Driver`] owns whatever produces snapshots. The live [`Session`] wraps
//! an engine and a command queue; [`ReplayDriver`] plays back a log. The
//! server and the CLI only ever talk to a driver.

use std::collections::VecDeque;
use std::io::Write;
use std::mem;
use std::path::{Path, PathBuf};

use handover_core::config::{SimConfig, TrialCondition};
use handover_core::log::{LogError, LogHeader, TrialLog, TrialSummary};
use handover_core::sim::{Command, Engine, Phase, SimError};
use handover_core::snapshot::StateSnapshot;
use handover_core::trial::{replay_with, PolicyMapping, TrialError};
use thiserror::Error;

use crate::protocol::{Ack, ErrorCode, ErrorReply, Hello, ServerBody, ServerMessage, TrialEnded, PROTOCOL_VERSION};

pub type ClientId = u64;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Trial(#[from] TrialError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Everything one tick produced, in send order: replies, then notices, then
/// the snapshot.
#[derive(Debug, Default)]
pub struct TickOutput {
    pub replies: Vec<(ClientId, ServerMessage)>,
    pub notices: Vec<ServerMessage>,
    pub snapshot: Option<StateSnapshot>,
    /// Nothing further will be produced.
    pub done: bool,
}

pub trait Driver: Send {
    fn hello(&self) -> ServerMessage;
    /// Latest tick, used to stamp replies outside a tick.
    fn tick_number(&self) -> u64;
    /// Queues a command for the next tick boundary.
    fn submit(&mut self, from: ClientId, cmd: Command);
    fn tick(&mut self) -> TickOutput;
}

/// `ar_error_ar_informed_seed7.ndjson` and similar.
pub fn log_file_name(h: &LogHeader) -> String {
    format!("{}_{}_seed{}.ndjson", h.condition.to_string().replace(',', "_"), h.policy, h.seed)
}

/// Writes a log into `dir`, creating it when needed, and returns its path.
pub fn save_log(log: &TrialLog, dir: &Path, prefix: &str) -> Result<PathBuf, SessionError> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{prefix}{}", log_file_name(&log.header)));
    log.save(&path)?;
    Ok(path)
}

/// Keeps every n-th snapshot plus every phase change and the first finished
/// frame, so a slow client never misses a transition.
#[derive(Debug, Clone)]
pub struct Decimator {
    every: u32,
    count: u32,
    last: Option<(Phase, bool)>,
}

impl Decimator {
    pub fn new(every: u32) -> Self {
        Decimator { every: every.max(1), count: 0, last: None }
    }

    pub fn keep(&mut self, s: &StateSnapshot) -> bool {
        let key = (s.phase, s.finished);
        let changed = self.last != Some(key);
        self.last = Some(key);
        let due = self.count.is_multiple_of(self.every);
        self.count = self.count.wrapping_add(1);
        due || changed
    }
}

#[derive(Debug, Clone)]
pub struct SessionOptions {
    pub condition: TrialCondition,
    pub mapping: PolicyMapping,
    pub seed: u64,
    /// Where finished or interrupted trials are saved; `None` keeps nothing.
    pub log_dir: Option<PathBuf>,
    pub decimation: u32,
}

/// A live trial driven by queued client commands.
///
/// Engine commands are handed to the engine on the next step in arrival
/// order. `set_condition`, `reset` and `begin_trial` rebuild the engine at
/// the tick boundary; engine commands queued before the last of them in the
/// same tick are refused as superseded, so a tick always equals some
/// sequential application of its commands.
pub struct Session {
    cfg: SimConfig,
    opts: SessionOptions,
    engine: Engine,
    queue: Vec<(ClientId, Command)>,
    ended: bool,
    trials: u32,
    saved: Vec<PathBuf>,
}

fn session_level(c: &Command) -> bool {
    matches!(c, Command::SetCondition { .. } | Command::Reset | Command::BeginTrial { .. })
}

impl Session {
    pub fn new(cfg: SimConfig, opts: SessionOptions) -> Result<Self, SessionError> {
        let engine = Self::build(&cfg, &opts)?;
        Ok(Session { cfg, opts, engine, queue: Vec::new(), ended: false, trials: 0, saved: Vec::new() })
    }

    fn build(cfg: &SimConfig, opts: &SessionOptions) -> Result<Engine, SimError> {
        let mut e = Engine::new(cfg.clone(), opts.condition, opts.mapping.policy_for(opts.condition), opts.seed)?;
        e.begin();
        Ok(e)
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn snapshot(&self) -> StateSnapshot {
        StateSnapshot::of(&self.engine)
    }

    /// Paths of every log written so far, oldest first.
    pub fn saved_logs(&self) -> &[PathBuf] {
        &self.saved
    }

    /// Saves the current trial unless it was already saved or never ran.
    pub fn save_current(&mut self) -> Result<Option<PathBuf>, SessionError> {
        if self.ended || self.engine.world().tick == 0 {
            return Ok(None);
        }
        self.persist()
    }

    fn persist(&mut self) -> Result<Option<PathBuf>, SessionError> {
        let Some(dir) = &self.opts.log_dir else { return Ok(None) };
        self.trials += 1;
        let path = save_log(&self.engine.to_log(), dir, &format!("session{:03}_", self.trials))?;
        log::info!("saved trial log {}", path.display());
        self.saved.push(path.clone());
        Ok(Some(path))
    }

    fn rebuild(&mut self, cmd: &Command) -> Result<(), SessionError> {
        let mut opts = self.opts.clone();
        match *cmd {
            Command::SetCondition { ar, faked_error } => opts.condition = TrialCondition { ar, faked_error },
            Command::BeginTrial { seed } => opts.seed = seed,
            _ => {}
        }
        let engine = Self::build(&self.cfg, &opts)?;
        if let Err(e) = self.save_current() {
            log::warn!("could not save the interrupted trial: {e}");
        }
        self.engine = engine;
        self.opts = opts;
        self.ended = false;
        Ok(())
    }
}

impl Driver for Session {
    fn hello(&self) -> ServerMessage {
        let e = &self.engine;
        ServerMessage::new(
            e.world().tick,
            ServerBody::Hello(Box::new(Hello {
                protocol: PROTOCOL_VERSION,
                condition: e.condition(),
                policy: e.policy(),
                seed: e.seed(),
                dt: self.cfg.dt,
                decimation: self.opts.decimation,
                read_only: false,
                arm: self.cfg.arm.clone(),
                cube: self.cfg.cube.clone(),
            })),
        )
    }

    fn tick_number(&self) -> u64 {
        self.engine.world().tick
    }

    fn submit(&mut self, from: ClientId, cmd: Command) {
        self.queue.push((from, cmd));
    }

    fn tick(&mut self) -> TickOutput {
        let mut out = TickOutput::default();
        let mut refused = Vec::new();
        let mut accepted = Vec::new();
        let mut batch: Vec<(ClientId, Command)> = Vec::new();
        for (from, cmd) in mem::take(&mut self.queue) {
            if !session_level(&cmd) {
                batch.push((from, cmd));
                continue;
            }
            match self.rebuild(&cmd) {
                Ok(()) => {
                    // a rebuild voids everything queued for the old engine
                    refused.extend(batch.drain(..).map(|(f, _)| (f, "superseded by a later session command".to_string())));
                    out.notices.push(self.hello());
                    accepted.push((from, cmd));
                }
                Err(e) => refused.push((from, e.to_string())),
            }
        }
        let commands: Vec<Command> = batch.iter().map(|(_, c)| *c).collect();
        let rejected = self.engine.step(&commands);
        let tick = self.engine.world().tick;
        for (from, reason) in refused {
            out.replies.push((from, ServerMessage::error(tick, ErrorCode::PhaseError, reason)));
        }
        for (i, (from, cmd)) in batch.into_iter().enumerate() {
            match rejected.iter().find(|(j, _)| *j == i) {
                Some((_, e)) => {
                    out.replies.push((from, ServerMessage::new(tick, ServerBody::Error(ErrorReply::from_command_error(e)))))
                }
                None => accepted.push((from, cmd)),
            }
        }
        for (from, command) in accepted {
            out.replies.push((from, ServerMessage::new(tick, ServerBody::Ack(Ack { command }))));
        }
        if self.engine.is_finished() && !self.ended {
            let log_path = match self.persist() {
                Ok(p) => p,
                Err(e) => {
                    log::warn!("could not save the finished trial: {e}");
                    None
                }
            };
            self.ended = true;
            let ended = TrialEnded { summary: self.engine.summary(), log_path };
            out.notices.push(ServerMessage::new(tick, ServerBody::TrialEnded(Box::new(ended))));
        }
        out.snapshot = Some(self.snapshot());
        out
    }
}

/// Plays back a recorded trial. Construction reruns the trial from its
/// header and recorded commands and refuses a log that does not reproduce
/// bit for bit.
pub struct ReplayDriver {
    hello: ServerMessage,
    frames: VecDeque<StateSnapshot>,
    summary: TrialSummary,
    queue: Vec<ClientId>,
    tick: u64,
    finished: bool,
}

impl ReplayDriver {
    pub fn new(log: &TrialLog, decimation: u32) -> Result<Self, SessionError> {
        let mut frames = VecDeque::new();
        let rerun = replay_with(log, |e| frames.push_back(StateSnapshot::of(e)))?;
        if rerun.to_ndjson() != log.to_ndjson() {
            return Err(TrialError::Replay("the rerun trial differs from the log".into()).into());
        }
        let h = &log.header;
        let hello = ServerMessage::new(
            0,
            ServerBody::Hello(Box::new(Hello {
                protocol: PROTOCOL_VERSION,
                condition: h.condition,
                policy: h.policy,
                seed: h.seed,
                dt: h.dt,
                decimation,
                read_only: true,
                arm: h.config.arm.clone(),
                cube: h.config.cube.clone(),
            })),
        );
        Ok(ReplayDriver { hello, frames, summary: log.summary.clone(), queue: Vec::new(), tick: 0, finished: false })
    }

    pub fn frames_left(&self) -> usize {
        self.frames.len()
    }

    /// Writes the hello, every kept snapshot and the closing message as
    /// NDJSON.
    pub fn write_ndjson<W: Write>(mut self, mut w: W, decimation: u32) -> std::io::Result<usize> {
        let mut keep = Decimator::new(decimation);
        let mut lines = 1;
        writeln!(w, "{}", self.hello().to_json())?;
        loop {
            let out = self.tick();
            for m in out.notices {
                writeln!(w, "{}", m.to_json())?;
                lines += 1;
            }
            if let Some(s) = out.snapshot.filter(|s| keep.keep(s)) {
                writeln!(w, "{}", ServerMessage::snapshot(s).to_json())?;
                lines += 1;
            }
            if out.done {
                break;
            }
        }
        w.flush()?;
        Ok(lines)
    }
}

impl Driver for ReplayDriver {
    fn hello(&self) -> ServerMessage {
        ServerMessage { tick: self.tick, ..self.hello.clone() }
    }

    fn tick_number(&self) -> u64 {
        self.tick
    }

    fn submit(&mut self, from: ClientId, _cmd: Command) {
        self.queue.push(from);
    }

    fn tick(&mut self) -> TickOutput {
        let mut out = TickOutput::default();
        if let Some(s) = self.frames.pop_front() {
            self.tick = s.tick;
            out.snapshot = Some(s);
        }
        for from in self.queue.drain(..) {
            out.replies.push((from, ServerMessage::error(self.tick, ErrorCode::InvalidCommand, "replays are read-only")));
        }
        if self.frames.is_empty() && !self.finished {
            self.finished = true;
            let ended = TrialEnded { summary: self.summary.clone(), log_path: None };
            out.notices.push(ServerMessage::new(self.tick, ServerBody::TrialEnded(Box::new(ended))));
        }
        out.done = self.frames.is_empty();
        out
    }
}
