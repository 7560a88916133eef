use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::log::SessionLog;
use crate::protocol::{Arm, Condition, Group, Outcome, Phase};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFeatures {
    pub phase: Phase,
    pub trial_index: u32,
    pub choice: Arm,
    pub outcome: Outcome,
    /// Choice differs from the previous trial's; absent on the first trial.
    pub switch: Option<bool>,
    /// Consecutive losses on the held strategy before this trial's decision.
    pub loss_streak: u32,
    /// The streak after this trial's outcome, i.e. the next trial's `loss_streak`.
    pub streak_after: u32,
    /// Main-phase trials since the most recent reversal (0 on a reversal trial).
    pub since_reversal: Option<u32>,
    /// Confidence carried into this trial's decision.
    pub confidence_prior: Option<u8>,
    /// Last observed rating, including a probe on this trial.
    pub confidence_current: Option<u8>,
    /// Peak rating within the strategy episode this trial continues (or, on a
    /// switch trial, the episode it abandons).
    pub confidence_peak: Option<u8>,
    /// Peak rating over the whole session so far.
    pub confidence_peak_session: Option<u8>,
}

impl TrialFeatures {
    pub fn at_risk(&self, k: u32) -> bool {
        self.loss_streak >= k
    }

    pub fn switched(&self) -> bool {
        self.switch == Some(true)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedFeatures {
    pub session_id: String,
    pub group: Group,
    pub condition: Condition,
    pub trials: Vec<TrialFeatures>,
}

impl DerivedFeatures {
    pub fn main(&self) -> impl Iterator<Item = &TrialFeatures> {
        self.trials.iter().filter(|t| t.phase == Phase::Main)
    }
}

fn max_opt(a: Option<u8>, b: Option<u8>) -> Option<u8> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.max(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

/// Derives per-trial features from an ordered log.
///
/// The loss streak resets on a win and on a switch; a loss on the trial of a
/// switch opens a new streak at 1. The episode peak covers ratings since the
/// most recent switch. On a switch trial the peak still refers to the episode
/// being abandoned; the new episode starts with that trial's own probe, if any.
pub fn derive_features(log: &SessionLog) -> Result<DerivedFeatures> {
    let reversals = &log.config.reversal_trials;
    let mut out = Vec::with_capacity(log.trials.len());
    let mut prev_choice: Option<Arm> = None;
    let mut run = 0u32;
    let mut current: Option<u8> = None;
    let mut episode_peak: Option<u8> = None;
    let mut session_peak: Option<u8> = None;

    for (i, rec) in log.trials.iter().enumerate() {
        let outcome = rec.outcome.ok_or_else(|| Error::MalformedLog {
            trial: i + 1,
            message: format!("{} has no outcome", rec.pos()),
        })?;
        let switch = prev_choice.map(|p| p != rec.choice);
        let switched = switch == Some(true);
        let loss_streak = run;
        let confidence_prior = current;

        let probe = rec.confidence;
        if probe.is_some() {
            current = probe;
        }
        session_peak = max_opt(session_peak, probe);
        let peak = if switched {
            let abandoned = max_opt(episode_peak, current);
            episode_peak = probe;
            abandoned
        } else {
            episode_peak = max_opt(episode_peak, probe);
            episode_peak
        };

        run = match outcome {
            Outcome::Win => 0,
            Outcome::Loss if switched => 1,
            Outcome::Loss => run + 1,
        };
        let since_reversal = match rec.phase {
            Phase::Practice => None,
            Phase::Main => reversals
                .iter()
                .rev()
                .find(|&&r| r <= rec.trial_index)
                .map(|&r| rec.trial_index - r),
        };
        out.push(TrialFeatures {
            phase: rec.phase,
            trial_index: rec.trial_index,
            choice: rec.choice,
            outcome,
            switch,
            loss_streak,
            streak_after: run,
            since_reversal,
            confidence_prior,
            confidence_current: current,
            confidence_peak: peak,
            confidence_peak_session: session_peak,
        });
        prev_choice = Some(rec.choice);
    }
    Ok(DerivedFeatures {
        session_id: log.session_id.clone(),
        group: log.group,
        condition: log.experiment_condition,
        trials: out,
    })
}
