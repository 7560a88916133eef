//! Append-only event files, one `<session_id>.jsonl` per session.
//!
//! A line is acknowledged only after it has been written and synced. On load,
//! an unterminated final line is a write the client never saw succeed; it is
//! truncated away.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use freezekit::log::{SubjectKind, TrialRecord};
use freezekit::protocol::{Condition, Group, Phase, TaskConfig};
use freezekit::Error as CoreError;
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Created {
        session_id: String,
        subject: SubjectKind,
        group: Group,
        experiment_condition: Condition,
        config: TaskConfig,
        preset: Option<String>,
    },
    Choice {
        record: TrialRecord,
        idempotency_key: Option<String>,
    },
    Confidence {
        phase: Phase,
        trial_index: u32,
        rating: u8,
        idempotency_key: Option<String>,
    },
}

#[derive(Debug, Clone)]
pub struct Store {
    dir: PathBuf,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl Store {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Store> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Store { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, id: &str) -> Result<PathBuf> {
        if !valid_id(id) {
            return Err(CoreError::Input(format!("invalid session id `{id}`")).into());
        }
        Ok(self.dir.join(format!("{id}.jsonl")))
    }

    /// Starts a new session file; fails if one already exists.
    pub fn create(&self, id: &str, event: &Event) -> Result<()> {
        let file = OpenOptions::new().write(true).create_new(true).open(self.path(id)?)?;
        write_line(file, event)
    }

    pub fn append(&self, id: &str, event: &Event) -> Result<()> {
        let file = OpenOptions::new().append(true).open(self.path(id)?)?;
        write_line(file, event)
    }

    pub fn load(&self, id: &str) -> Result<Vec<Event>> {
        let path = self.path(id)?;
        let text = fs::read_to_string(&path)?;
        let complete = match text.rfind('\n') {
            Some(i) => i + 1,
            None => 0,
        };
        if complete < text.len() {
            let f = OpenOptions::new().write(true).open(&path)?;
            f.set_len(complete as u64)?;
            f.sync_all()?;
        }
        let mut events = Vec::new();
        for (i, line) in BufReader::new(text[..complete].as_bytes()).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let ev = serde_json::from_str(&line).map_err(|e| CoreError::Parse {
                line: i + 1,
                message: format!("{}: {e}", path.display()),
            })?;
            events.push(ev);
        }
        Ok(events)
    }

    /// Ids of every stored session, sorted.
    pub fn session_ids(&self) -> Result<Vec<String>> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "jsonl") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    if valid_id(stem) {
                        ids.push(stem.to_string());
                    }
                }
            }
        }
        ids.sort();
        Ok(ids)
    }
}

fn write_line(mut file: File, event: &Event) -> Result<()> {
    let mut line = serde_json::to_vec(event).map_err(|e| CoreError::Input(e.to_string()))?;
    line.push(b'\n');
    file.write_all(&line)?;
    file.sync_data()?;
    Ok(())
}
