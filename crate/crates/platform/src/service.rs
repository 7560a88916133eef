//! Live session state machine.
//!
//! A session alternates between awaiting a choice and, after a probe trial,
//! awaiting a confidence rating; the probe blocks the next choice. Every
//! mutation is written to the store before the in-memory state changes and
//! before the caller sees the result.

use std::collections::HashMap;
use std::sync::Arc;

use freezekit::log::{SessionLog, SessionStatus, SubjectKind, TrialRecord};
use freezekit::protocol::{
    directive_for, prompt_due, probe_due, Arm, BanditEnv, Condition, Group, Outcome, Phase, TaskConfig,
    TrialDirective, TrialPos,
};
use freezekit::rng::rng_from_seed;
use freezekit::Error as CoreError;
use parking_lot::{Mutex, RwLock};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PlatformError, Result};
use crate::store::{Event, Store};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Awaiting {
    Choice,
    Confidence,
    Complete,
}

/// What a client needs to render the current state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub status: SessionStatus,
    pub group: Group,
    pub experiment_condition: Condition,
    pub awaiting: Awaiting,
    /// The trial to play, or the probe trial being rated.
    pub directive: Option<TrialDirective>,
    pub trials_completed: usize,
    pub total_trials: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    pub preset: Option<String>,
    pub config: Option<TaskConfig>,
    pub subject: Option<SubjectKind>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChoiceRequest {
    pub choice: i64,
    pub rt_ms: Option<i64>,
    pub client_timestamp: Option<String>,
    /// When given, must name the trial the server is waiting on.
    pub phase: Option<Phase>,
    pub trial_index: Option<u32>,
    pub idempotency_key: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceResponse {
    pub session_id: String,
    pub phase: Phase,
    pub trial_index: u32,
    pub choice: Arm,
    pub outcome: Outcome,
    pub probe_pending: bool,
    pub state: SessionView,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRequest {
    pub rating: i64,
    pub phase: Option<Phase>,
    pub trial_index: Option<u32>,
    pub idempotency_key: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceResponse {
    pub session_id: String,
    pub phase: Phase,
    pub trial_index: u32,
    pub rating: u8,
    pub state: SessionView,
}

/// Export selection. Values for one key are alternatives; different keys must all match.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExportFilter {
    pub sessions: Vec<String>,
    pub groups: Vec<Group>,
    pub conditions: Vec<Condition>,
    pub statuses: Vec<SessionStatus>,
}

impl ExportFilter {
    /// Parses `key:value` pairs separated by commas, e.g. `group:high,condition:implicit`.
    pub fn parse(spec: &str) -> Result<ExportFilter> {
        let mut f = ExportFilter::default();
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once(':')
                .ok_or_else(|| PlatformError::BadRequest(format!("filter term `{part}` is not key:value")))?;
            let quoted = serde_json::Value::String(value.to_string());
            let bad = |_| PlatformError::BadRequest(format!("bad {key} `{value}` in filter"));
            match key {
                "session" => f.sessions.push(value.to_string()),
                "group" => f.groups.push(serde_json::from_value(quoted).map_err(bad)?),
                "condition" => f.conditions.push(serde_json::from_value(quoted).map_err(bad)?),
                "status" => f.statuses.push(serde_json::from_value(quoted).map_err(bad)?),
                other => {
                    return Err(PlatformError::BadRequest(format!(
                        "unknown filter key `{other}`; use session, group, condition or status"
                    )))
                }
            }
        }
        Ok(f)
    }

    pub fn matches(&self, log: &SessionLog) -> bool {
        (self.sessions.is_empty() || self.sessions.contains(&log.session_id))
            && (self.groups.is_empty() || self.groups.contains(&log.group))
            && (self.conditions.is_empty() || self.conditions.contains(&log.experiment_condition))
            && (self.statuses.is_empty() || self.statuses.contains(&log.status))
    }
}

struct Session {
    log: SessionLog,
    env: BanditEnv,
    next: Option<TrialPos>,
    pending_probe: Option<TrialPos>,
    choice_keys: HashMap<String, ChoiceResponse>,
    confidence_keys: HashMap<String, ConfidenceResponse>,
}

fn protocol(msg: impl Into<String>) -> PlatformError {
    CoreError::Protocol(msg.into()).into()
}

fn check_position(expected: TrialPos, phase: Option<Phase>, index: Option<u32>) -> Result<()> {
    if phase.is_some_and(|p| p != expected.phase) || index.is_some_and(|i| i != expected.index) {
        let got = TrialPos::new(phase.unwrap_or(expected.phase), index.unwrap_or(expected.index));
        return Err(protocol(format!("submission for {got}, but the session is at {expected}")));
    }
    Ok(())
}

impl Session {
    fn new(session_id: String, subject: SubjectKind, config: TaskConfig) -> Result<Session> {
        let env = BanditEnv::from_config(&config)?;
        Ok(Session {
            next: Some(TrialPos::first(&config)),
            log: SessionLog {
                session_id,
                subject,
                group: config.group,
                experiment_condition: config.experiment_condition,
                config,
                agent: None,
                status: SessionStatus::Created,
                trials: Vec::new(),
            },
            env,
            pending_probe: None,
            choice_keys: HashMap::new(),
            confidence_keys: HashMap::new(),
        })
    }

    fn history_before(&self, pos: TrialPos) -> Vec<Outcome> {
        self.log
            .trials
            .iter()
            .filter(|t| t.phase == pos.phase && t.trial_index < pos.index)
            .filter_map(|t| t.outcome)
            .collect()
    }

    fn awaiting(&self) -> Awaiting {
        match (self.pending_probe, self.next) {
            (Some(_), _) => Awaiting::Confidence,
            (None, Some(_)) => Awaiting::Choice,
            (None, None) => Awaiting::Complete,
        }
    }

    fn view(&self) -> Result<SessionView> {
        let directive = match self.pending_probe.or(self.next) {
            Some(pos) => Some(directive_for(pos, &self.log.config, &self.history_before(pos))?),
            None => None,
        };
        Ok(SessionView {
            session_id: self.log.session_id.clone(),
            status: self.log.status,
            group: self.log.group,
            experiment_condition: self.log.experiment_condition,
            awaiting: self.awaiting(),
            directive,
            trials_completed: self.log.trials.len(),
            total_trials: self.log.config.total_trials(),
        })
    }

    /// Builds the record for a choice without touching state.
    fn prepare_choice(&self, req: &ChoiceRequest) -> Result<TrialRecord> {
        let mut errs = Vec::new();
        if !(0..=1).contains(&req.choice) {
            errs.push(freezekit::error::FieldError::new("choice", "must be 0 or 1"));
        }
        if req.rt_ms.is_some_and(|rt| rt < 0) {
            errs.push(freezekit::error::FieldError::new("rt_ms", "must be nonnegative"));
        }
        if !errs.is_empty() {
            return Err(CoreError::Config(errs).into());
        }
        if let Some(p) = self.pending_probe {
            return Err(protocol(format!("confidence for {p} must be submitted before the next choice")));
        }
        let pos = self.next.ok_or_else(|| protocol("session is complete"))?;
        check_position(pos, req.phase, req.trial_index)?;
        let choice = Arm::from_index(req.choice as usize)?;
        let outcome = self.env.schedule().outcome(pos, choice)?;
        let config = &self.log.config;
        Ok(TrialRecord {
            session_id: self.log.session_id.clone(),
            trial_index: pos.index,
            phase: pos.phase,
            choice,
            outcome: Some(outcome),
            rt_ms: req.rt_ms.map(|rt| rt as u64),
            confidence: None,
            probe_shown: probe_due(pos, config),
            prompt_shown: prompt_due(pos, config),
            trajectory_shown: config.experiment_condition == Condition::ExplicitTrajectory,
            client_timestamp: req.client_timestamp.clone(),
        })
    }

    fn refresh_status(&mut self) {
        self.log.status = match self.awaiting() {
            Awaiting::Complete => SessionStatus::Complete,
            _ if self.log.trials.is_empty() => SessionStatus::Created,
            _ => SessionStatus::InProgress,
        };
    }

    fn commit_choice(&mut self, record: TrialRecord, key: Option<String>) -> Result<ChoiceResponse> {
        let pos = record.pos();
        let outcome = self.env.step(pos, record.choice.index())?;
        if Some(outcome) != record.outcome || self.next != Some(pos) {
            return Err(CoreError::MalformedLog {
                trial: self.log.trials.len() + 1,
                message: format!("record for {pos} does not replay against the stored schedule"),
            }
            .into());
        }
        let probe = record.probe_shown;
        let choice = record.choice;
        self.log.trials.push(record);
        self.next = pos.next(&self.log.config);
        if probe {
            self.pending_probe = Some(pos);
        }
        self.refresh_status();
        let response = ChoiceResponse {
            session_id: self.log.session_id.clone(),
            phase: pos.phase,
            trial_index: pos.index,
            choice,
            outcome,
            probe_pending: probe,
            state: self.view()?,
        };
        if let Some(k) = key {
            self.choice_keys.insert(k, response.clone());
        }
        Ok(response)
    }

    fn prepare_confidence(&self, req: &ConfidenceRequest) -> Result<(TrialPos, u8)> {
        if !(1..=7).contains(&req.rating) {
            return Err(CoreError::config("rating", format!("{} outside 1..=7", req.rating)).into());
        }
        let pos = self
            .pending_probe
            .ok_or_else(|| protocol("no confidence probe is pending"))?;
        check_position(pos, req.phase, req.trial_index)?;
        Ok((pos, req.rating as u8))
    }

    fn commit_confidence(&mut self, pos: TrialPos, rating: u8, key: Option<String>) -> Result<ConfidenceResponse> {
        if self.pending_probe != Some(pos) {
            return Err(protocol(format!("no probe pending on {pos}")));
        }
        let record = self
            .log
            .trials
            .iter_mut()
            .rev()
            .find(|t| t.pos() == pos)
            .expect("pending probe has a record");
        record.confidence = Some(rating);
        self.pending_probe = None;
        self.refresh_status();
        let response = ConfidenceResponse {
            session_id: self.log.session_id.clone(),
            phase: pos.phase,
            trial_index: pos.index,
            rating,
            state: self.view()?,
        };
        if let Some(k) = key {
            self.confidence_keys.insert(k, response.clone());
        }
        Ok(response)
    }

    fn replay(events: Vec<Event>) -> Result<Session> {
        let mut it = events.into_iter();
        let mut session = match it.next() {
            Some(Event::Created {
                session_id,
                subject,
                config,
                ..
            }) => Session::new(session_id, subject, config)?,
            _ => return Err(protocol("session file does not start with a creation event")),
        };
        for ev in it {
            match ev {
                Event::Created { .. } => return Err(protocol("duplicate creation event")),
                Event::Choice { record, idempotency_key } => {
                    session.commit_choice(record, idempotency_key)?;
                }
                Event::Confidence {
                    phase,
                    trial_index,
                    rating,
                    idempotency_key,
                } => {
                    session.commit_confidence(TrialPos::new(phase, trial_index), rating, idempotency_key)?;
                }
            }
        }
        Ok(session)
    }
}

pub struct SessionService {
    store: Store,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    seeds: Mutex<ChaCha8Rng>,
}

impl SessionService {
    /// Opens the store and replays every stored session. Schedule seeds for
    /// new sessions come from the operating system.
    pub fn open(store: Store) -> Result<SessionService> {
        Self::with_seed(store, rand::random())
    }

    /// As `open`, with schedule seeds drawn from a fixed stream.
    pub fn with_seed(store: Store, seed: u64) -> Result<SessionService> {
        let mut sessions = HashMap::new();
        for id in store.session_ids()? {
            let session = Session::replay(store.load(&id)?)?;
            sessions.insert(id, Arc::new(Mutex::new(session)));
        }
        Ok(SessionService {
            store,
            sessions: RwLock::new(sessions),
            seeds: Mutex::new(rng_from_seed(seed)),
        })
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    fn get(&self, id: &str) -> Result<Arc<Mutex<Session>>> {
        self.sessions
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| PlatformError::NotFound(id.to_string()))
    }

    pub fn create(&self, req: CreateRequest) -> Result<SessionView> {
        let (mut config, preset) = match (req.preset, req.config) {
            (Some(name), None) => match TaskConfig::preset(&name) {
                Some(c) => (c, Some(name)),
                None => {
                    return Err(PlatformError::UnknownPreset {
                        name,
                        presets: TaskConfig::preset_names().into_iter().map(String::from).collect(),
                    })
                }
            },
            (None, Some(c)) => (c, None),
            _ => return Err(PlatformError::BadRequest("give exactly one of `preset` or `config`".into())),
        };
        config.seed = self.seeds.lock().random();
        config.validate()?;
        let session_id = uuid::Uuid::new_v4().to_string();
        let subject = req.subject.unwrap_or(SubjectKind::Human);
        let session = Session::new(session_id.clone(), subject, config.clone())?;
        self.store.create(
            &session_id,
            &Event::Created {
                session_id: session_id.clone(),
                subject,
                group: config.group,
                experiment_condition: config.experiment_condition,
                config,
                preset,
            },
        )?;
        let view = session.view()?;
        self.sessions.write().insert(session_id, Arc::new(Mutex::new(session)));
        Ok(view)
    }

    pub fn view(&self, id: &str) -> Result<SessionView> {
        self.get(id)?.lock().view()
    }

    pub fn submit_choice(&self, id: &str, req: ChoiceRequest) -> Result<ChoiceResponse> {
        let handle = self.get(id)?;
        let mut s = handle.lock();
        if let Some(prev) = req.idempotency_key.as_ref().and_then(|k| s.choice_keys.get(k)) {
            return Ok(prev.clone());
        }
        let record = s.prepare_choice(&req)?;
        self.store.append(
            id,
            &Event::Choice {
                record: record.clone(),
                idempotency_key: req.idempotency_key.clone(),
            },
        )?;
        s.commit_choice(record, req.idempotency_key)
    }

    pub fn submit_confidence(&self, id: &str, req: ConfidenceRequest) -> Result<ConfidenceResponse> {
        let handle = self.get(id)?;
        let mut s = handle.lock();
        if let Some(prev) = req.idempotency_key.as_ref().and_then(|k| s.confidence_keys.get(k)) {
            return Ok(prev.clone());
        }
        let (pos, rating) = s.prepare_confidence(&req)?;
        self.store.append(
            id,
            &Event::Confidence {
                phase: pos.phase,
                trial_index: pos.index,
                rating,
                idempotency_key: req.idempotency_key.clone(),
            },
        )?;
        s.commit_confidence(pos, rating, req.idempotency_key)
    }

    pub fn export_session(&self, id: &str) -> Result<SessionLog> {
        Ok(self.get(id)?.lock().log.clone())
    }

    /// Snapshot of every matching session, ordered by id.
    pub fn export(&self, filter: &ExportFilter) -> Vec<SessionLog> {
        let mut handles: Vec<(String, Arc<Mutex<Session>>)> = self
            .sessions
            .read()
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        handles.sort_by(|a, b| a.0.cmp(&b.0));
        handles
            .into_iter()
            .map(|(_, h)| h.lock().log.clone())
            .filter(|l| filter.matches(l))
            .collect()
    }
}
