//! Canonical session log and its file formats.
//!
//! JSONL layout: each session contributes one `{"type":"session",...}` header
//! line followed by one `{"type":"trial",...}` line per trial record.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::agents::{AgentKind, AgentParams};
use crate::error::{Error, FieldError, Result};
use crate::protocol::{Arm, Condition, Group, Outcome, Phase, TaskConfig, TrialPos};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubjectKind {
    Human,
    Agent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Created,
    InProgress,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentInfo {
    pub kind: AgentKind,
    pub params: AgentParams,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub session_id: String,
    pub trial_index: u32,
    pub phase: Phase,
    pub choice: Arm,
    pub outcome: Option<Outcome>,
    pub rt_ms: Option<u64>,
    pub confidence: Option<u8>,
    pub probe_shown: bool,
    pub prompt_shown: bool,
    pub trajectory_shown: bool,
    pub client_timestamp: Option<String>,
}

impl TrialRecord {
    pub fn pos(&self) -> TrialPos {
        TrialPos::new(self.phase, self.trial_index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionLog {
    pub session_id: String,
    pub subject: SubjectKind,
    pub group: Group,
    pub experiment_condition: Condition,
    pub config: TaskConfig,
    pub agent: Option<AgentInfo>,
    pub status: SessionStatus,
    pub trials: Vec<TrialRecord>,
}

impl SessionLog {
    pub fn main_trials(&self) -> impl Iterator<Item = &TrialRecord> {
        self.trials.iter().filter(|t| t.phase == Phase::Main)
    }

    /// Checks the record-level invariants, collecting every violation.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let mut expected = [1u32, 1u32];
        let mut seen_main = false;
        for (i, t) in self.trials.iter().enumerate() {
            let at = |field: &str| format!("trials[{i}].{field}");
            if t.session_id != self.session_id {
                errs.push(FieldError::new(at("session_id"), "does not match session header"));
            }
            let slot = match t.phase {
                Phase::Practice => 0,
                Phase::Main => 1,
            };
            if t.phase == Phase::Main {
                seen_main = true;
            } else if seen_main {
                errs.push(FieldError::new(at("phase"), "practice trial after main phase began"));
            }
            if t.trial_index != expected[slot] {
                errs.push(FieldError::new(
                    at("trial_index"),
                    format!("expected {}, found {}", expected[slot], t.trial_index),
                ));
            }
            expected[slot] = t.trial_index + 1;
            if t.outcome.is_none() {
                errs.push(FieldError::new(at("outcome"), "missing"));
            }
            if let Some(c) = t.confidence {
                if !(1..=7).contains(&c) {
                    errs.push(FieldError::new(at("confidence"), format!("{c} outside 1..=7")));
                }
                if !t.probe_shown {
                    errs.push(FieldError::new(at("confidence"), "present without probe_shown"));
                }
            }
        }
        if self.status == SessionStatus::Complete && self.trials.len() != self.config.total_trials() {
            errs.push(FieldError::new(
                "trials",
                format!(
                    "complete session has {} records, expected {}",
                    self.trials.len(),
                    self.config.total_trials()
                ),
            ));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SessionHeader {
    session_id: String,
    subject: SubjectKind,
    group: Group,
    experiment_condition: Condition,
    config: TaskConfig,
    agent: Option<AgentInfo>,
    status: SessionStatus,
    n_trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Line {
    Session(SessionHeader),
    Trial(TrialRecord),
}

pub fn write_jsonl<W: Write>(logs: &[SessionLog], mut out: W) -> Result<()> {
    for log in logs {
        let header = Line::Session(SessionHeader {
            session_id: log.session_id.clone(),
            subject: log.subject,
            group: log.group,
            experiment_condition: log.experiment_condition,
            config: log.config.clone(),
            agent: log.agent.clone(),
            status: log.status,
            n_trials: log.trials.len(),
        });
        serde_json::to_writer(&mut out, &header).map_err(|e| Error::Input(e.to_string()))?;
        out.write_all(b"\n")?;
        for t in &log.trials {
            serde_json::to_writer(&mut out, &Line::Trial(t.clone()))
                .map_err(|e| Error::Input(e.to_string()))?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn to_jsonl_string(logs: &[SessionLog]) -> String {
    let mut buf = Vec::new();
    write_jsonl(logs, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

/// Parses a JSONL stream. Errors carry the 1-based line number.
pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<SessionLog>> {
    let mut logs: Vec<(SessionLog, usize, usize)> = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        match parsed {
            Line::Session(h) => logs.push((
                SessionLog {
                    session_id: h.session_id,
                    subject: h.subject,
                    group: h.group,
                    experiment_condition: h.experiment_condition,
                    config: h.config,
                    agent: h.agent,
                    status: h.status,
                    trials: Vec::with_capacity(h.n_trials),
                },
                h.n_trials,
                lineno,
            )),
            Line::Trial(t) => {
                let (log, _, _) = logs.last_mut().ok_or_else(|| Error::Parse {
                    line: lineno,
                    message: "trial record before any session header".into(),
                })?;
                if t.session_id != log.session_id {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!(
                            "trial for session `{}` under header `{}`",
                            t.session_id, log.session_id
                        ),
                    });
                }
                log.trials.push(t);
            }
        }
    }
    logs.into_iter()
        .map(|(log, n, lineno)| {
            if log.trials.len() != n {
                Err(Error::Parse {
                    line: lineno,
                    message: format!("header declares {n} trials, found {}", log.trials.len()),
                })
            } else {
                Ok(log)
            }
        })
        .collect()
}

pub fn read_jsonl_file(path: &std::path::Path) -> Result<Vec<SessionLog>> {
    let file = std::fs::File::open(path)?;
    read_jsonl(std::io::BufReader::new(file))
}

#[derive(Debug, Serialize)]
struct CsvRow<'a> {
    session_id: &'a str,
    subject: SubjectKind,
    group: Group,
    experiment_condition: Condition,
    phase: Phase,
    trial_index: u32,
    choice: u8,
    outcome: Option<Outcome>,
    rt_ms: Option<u64>,
    confidence: Option<u8>,
    probe_shown: bool,
    prompt_shown: bool,
    trajectory_shown: bool,
    client_timestamp: Option<&'a str>,
}

/// Flat one-row-per-trial export.
pub fn write_csv<W: Write>(logs: &[SessionLog], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for log in logs {
        for t in &log.trials {
            w.serialize(CsvRow {
                session_id: &log.session_id,
                subject: log.subject,
                group: log.group,
                experiment_condition: log.experiment_condition,
                phase: t.phase,
                trial_index: t.trial_index,
                choice: t.choice.into(),
                outcome: t.outcome,
                rt_ms: t.rt_ms,
                confidence: t.confidence,
                probe_shown: t.probe_shown,
                prompt_shown: t.prompt_shown,
                trajectory_shown: t.trajectory_shown,
                client_timestamp: t.client_timestamp.as_deref(),
            })?;
        }
    }
    w.flush()?;
    Ok(())
}
