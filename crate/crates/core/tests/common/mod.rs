#![allow(dead_code)]

use freezekit::log::{SessionLog, SessionStatus, SubjectKind, TrialRecord};
use freezekit::protocol::{Arm, Condition, Group, Outcome, Phase, TaskConfig};

/// A main-phase-only log from strings over `AB` and `WL`.
pub fn hand_log(id: &str, choices: &str, outcomes: &str) -> SessionLog {
    let config = TaskConfig {
        practice_trials: 0,
        main_trials: choices.len() as u32,
        reversal_trials: vec![],
        ..TaskConfig::default()
    };
    let trials = choices
        .chars()
        .zip(outcomes.chars())
        .enumerate()
        .map(|(i, (c, o))| TrialRecord {
            session_id: id.into(),
            trial_index: i as u32 + 1,
            phase: Phase::Main,
            choice: if c == 'A' { Arm::A } else { Arm::B },
            outcome: Some(if o == 'W' { Outcome::Win } else { Outcome::Loss }),
            rt_ms: Some(400 + i as u64),
            confidence: None,
            probe_shown: false,
            prompt_shown: false,
            trajectory_shown: false,
            client_timestamp: None,
        })
        .collect();
    SessionLog {
        session_id: id.into(),
        subject: SubjectKind::Human,
        group: Group::Normal,
        experiment_condition: Condition::Implicit,
        config,
        agent: None,
        status: SessionStatus::Complete,
        trials,
    }
}

/// Short fixtures and their negative log-likelihoods from an independent
/// per-trial script: (α, β, φ, choices, outcomes, nll).
pub const NLL_FIXTURES: [(f64, f64, f64, &str, &str, f64); 5] = [
    (0.5, 2.0, 0.3, "AABAB", "WLWLL", 3.4961826362652233),
    (0.86, 3.91, 0.76, "ABBBA", "LWLLW", 2.3690694619448616),
    (0.1, 8.0, -0.5, "BBBBB", "LLLLL", 7.232813474204595),
    (0.72, 8.35, 0.16, "AAAAB", "WWWLL", 0.9340990459510041),
    (1.0, 0.5, 2.0, "BABAB", "WWLWL", 9.450584762794968),
];
