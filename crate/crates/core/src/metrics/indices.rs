use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::log::SessionLog;
use crate::protocol::{active_good_arm, Arm, Group, Outcome, Phase};

use super::features::{derive_features, DerivedFeatures};

/// One bin of a switch or hazard curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveCell {
    pub k: u32,
    /// Trials (switch curve) or episodes (hazard curve) at risk at `k`.
    pub at_risk: usize,
    pub switches: usize,
    /// `None` when nothing was at risk.
    pub value: Option<f64>,
}

impl CurveCell {
    fn new(k: u32, at_risk: usize, switches: usize) -> Self {
        CurveCell {
            k,
            at_risk,
            switches,
            value: (at_risk > 0).then(|| switches as f64 / at_risk as f64),
        }
    }
}

fn features_of(logs: &[SessionLog]) -> Result<Vec<DerivedFeatures>> {
    logs.iter().map(derive_features).collect()
}

/// Pooled `P(switch | loss_streak = k)` over main-phase trials, `k = 0..=k_max`.
/// Streaks longer than `k_max` are not binned.
pub fn switch_curve(logs: &[SessionLog], k_max: u32) -> Result<Vec<CurveCell>> {
    let mut at_risk = vec![0usize; k_max as usize + 1];
    let mut switches = vec![0usize; k_max as usize + 1];
    for f in features_of(logs)? {
        for t in f.main() {
            let Some(sw) = t.switch else { continue };
            if t.loss_streak <= k_max {
                at_risk[t.loss_streak as usize] += 1;
                switches[t.loss_streak as usize] += sw as usize;
            }
        }
    }
    Ok((0..=k_max)
        .map(|k| CurveCell::new(k, at_risk[k as usize], switches[k as usize]))
        .collect())
}

/// A run of consecutive main-phase decisions taken under a growing loss
/// streak. `reached` is the longest streak seen at a decision; `switched`
/// says whether the run ended in a switch at that decision.
struct LossRun {
    first: u32,
    reached: u32,
    switched: bool,
}

fn loss_runs(f: &DerivedFeatures) -> Vec<LossRun> {
    let mut runs: Vec<LossRun> = Vec::new();
    let mut open = false;
    for t in f.main() {
        if t.loss_streak == 0 || t.switch.is_none() {
            open = false;
            continue;
        }
        match runs.last_mut() {
            Some(run) if open && t.loss_streak == run.reached + 1 => run.reached = t.loss_streak,
            _ => runs.push(LossRun {
                first: t.loss_streak,
                reached: t.loss_streak,
                switched: false,
            }),
        }
        let run = runs.last_mut().expect("just pushed");
        run.switched = t.switched();
        open = !run.switched;
    }
    runs
}

/// Discrete hazard of switching, `h(k)` for `k = 1..=k_max`, estimated from
/// loss runs as in a life table: a run is at risk at every streak length it
/// reached, and contributes an event at the length where it ended in a switch.
pub fn hazard_curve(logs: &[SessionLog], k_max: u32) -> Result<Vec<CurveCell>> {
    let mut at_risk = vec![0usize; k_max as usize + 1];
    let mut events = vec![0usize; k_max as usize + 1];
    for f in features_of(logs)? {
        for run in loss_runs(&f) {
            for k in run.first..=run.reached.min(k_max) {
                at_risk[k as usize] += 1;
            }
            if run.switched && run.reached <= k_max {
                events[run.reached as usize] += 1;
            }
        }
    }
    Ok((1..=k_max)
        .map(|k| CurveCell::new(k, at_risk[k as usize], events[k as usize]))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistenceEpisode {
    pub session_id: String,
    pub group: Group,
    /// Main-phase reversal trial that opened the episode.
    pub reversal: u32,
    /// Consecutive post-reversal losses on the old strategy before leaving it.
    pub length: u32,
    /// The episode ended without a switch (a win, the next reversal, or the end of the session).
    pub censored: bool,
}

/// Persistence after each reversal.
///
/// An episode exists when the arm held going into the reversal is the one
/// that just turned bad and at least one loss follows on it. It runs until a
/// switch (event), a win or the next reversal or session end (censored).
pub fn persistence_lengths(logs: &[SessionLog]) -> Result<Vec<PersistenceEpisode>> {
    let mut episodes = Vec::new();
    for log in logs {
        let cfg = &log.config;
        let main: Vec<_> = log.main_trials().collect();
        let last_practice = log.trials.iter().rev().find(|t| t.phase == Phase::Practice);
        for (ri, &r) in cfg.reversal_trials.iter().enumerate() {
            let held: Option<Arm> = if r >= 2 {
                main.get(r as usize - 2).map(|t| t.choice)
            } else {
                last_practice.map(|t| t.choice)
            };
            let Some(held) = held else { continue };
            let old_good = if r >= 2 {
                active_good_arm(r - 1, cfg)?
            } else {
                cfg.initial_good_arm
            };
            if held != old_good {
                continue;
            }
            let end = cfg
                .reversal_trials
                .get(ri + 1)
                .copied()
                .unwrap_or(cfg.main_trials + 1);
            let mut length = 0;
            let mut censored = true;
            for t in main.iter().skip(r as usize - 1).take((end - r) as usize) {
                if t.choice != held {
                    censored = false;
                    break;
                }
                if t.outcome == Some(Outcome::Win) {
                    break;
                }
                length += 1;
            }
            if length > 0 {
                episodes.push(PersistenceEpisode {
                    session_id: log.session_id.clone(),
                    group: log.group,
                    reversal: r,
                    length,
                    censored,
                });
            }
        }
    }
    Ok(episodes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LockinSummary {
    pub threshold: u32,
    /// `(session_id, episode count)` in input order.
    pub per_session: Vec<(String, usize)>,
    pub sessions_flagged: usize,
    pub fraction_flagged: Option<f64>,
}

/// Lock-in episodes: maximal loss runs on one strategy that reach at least
/// `threshold` losses in the main phase.
pub fn lockin_episodes(logs: &[SessionLog], threshold: u32) -> Result<LockinSummary> {
    let mut per_session = Vec::with_capacity(logs.len());
    for f in features_of(logs)? {
        let count = f.main().filter(|t| t.streak_after == threshold && t.outcome == Outcome::Loss).count();
        per_session.push((f.session_id.clone(), count));
    }
    let flagged = per_session.iter().filter(|(_, c)| *c > 0).count();
    Ok(LockinSummary {
        threshold,
        fraction_flagged: (!per_session.is_empty()).then(|| flagged as f64 / per_session.len() as f64),
        sessions_flagged: flagged,
        per_session,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreezeDenominator {
    /// All main-phase loss trials.
    AllLossTrials,
    /// Loss trials on which confidence had dropped by at least delta.
    AtRiskDrop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeakMode {
    SinceSwitch,
    Session,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreezeCount {
    pub delta: u8,
    pub denominator_mode: FreezeDenominator,
    pub freeze_trials: usize,
    pub denominator: usize,
    pub value: Option<f64>,
}

pub fn freeze_index(logs: &[SessionLog], delta: u8, mode: FreezeDenominator) -> Result<FreezeCount> {
    freeze_index_with(logs, delta, mode, PeakMode::SinceSwitch)
}

/// Confidence-freeze index: share of loss trials on which confidence sits at
/// least `delta` below the peak while the choice is repeated.
pub fn freeze_index_with(logs: &[SessionLog], delta: u8, mode: FreezeDenominator, peak: PeakMode) -> Result<FreezeCount> {
    let mut loss_trials = 0;
    let mut dropped = 0;
    let mut frozen = 0;
    for f in features_of(logs)? {
        for t in f.main().filter(|t| t.outcome == Outcome::Loss) {
            loss_trials += 1;
            let reference = match peak {
                PeakMode::SinceSwitch => t.confidence_peak,
                PeakMode::Session => t.confidence_peak_session,
            };
            let drop = match (reference, t.confidence_current) {
                (Some(p), Some(c)) => c as i32 <= p as i32 - delta as i32,
                _ => false,
            };
            if drop {
                dropped += 1;
                if !t.switched() {
                    frozen += 1;
                }
            }
        }
    }
    let denominator = match mode {
        FreezeDenominator::AllLossTrials => loss_trials,
        FreezeDenominator::AtRiskDrop => dropped,
    };
    Ok(FreezeCount {
        delta,
        denominator_mode: mode,
        freeze_trials: frozen,
        denominator,
        value: (denominator > 0).then(|| frozen as f64 / denominator as f64),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSummary {
    pub first_n: u32,
    pub n_sessions: usize,
    pub win_stay: Option<f64>,
    pub lose_shift: Option<f64>,
    pub mean_rt_ms: Option<f64>,
    /// Mean over sessions of the variance of the 0/1 choice code.
    pub choice_variance: Option<f64>,
    /// Mean rating on the probe closing the practice block.
    pub practice_confidence: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Manipulation-check summaries over the first `first_n` main trials.
pub fn baseline_summary(logs: &[SessionLog], first_n: u32) -> BaselineSummary {
    let (mut wins, mut stays, mut losses, mut shifts) = (0, 0, 0, 0);
    let (mut rt_sum, mut rt_n) = (0.0, 0usize);
    let (mut var_sum, mut var_n) = (0.0, 0usize);
    let (mut conf_sum, mut conf_n) = (0.0, 0usize);
    for log in logs {
        let window: Vec<_> = log.main_trials().take(first_n as usize).collect();
        for pair in window.windows(2) {
            let repeat = pair[1].choice == pair[0].choice;
            match pair[0].outcome {
                Some(Outcome::Win) => {
                    wins += 1;
                    stays += repeat as usize;
                }
                Some(Outcome::Loss) => {
                    losses += 1;
                    shifts += !repeat as usize;
                }
                None => {}
            }
        }
        for t in &window {
            if let Some(rt) = t.rt_ms {
                rt_sum += rt as f64;
                rt_n += 1;
            }
        }
        if !window.is_empty() {
            let codes: Vec<f64> = window.iter().map(|t| t.choice.index() as f64).collect();
            let mean = codes.iter().sum::<f64>() / codes.len() as f64;
            var_sum += codes.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / codes.len() as f64;
            var_n += 1;
        }
        if let Some(c) = log
            .trials
            .iter()
            .filter(|t| t.phase == Phase::Practice)
            .last()
            .and_then(|t| t.confidence)
        {
            conf_sum += c as f64;
            conf_n += 1;
        }
    }
    BaselineSummary {
        first_n,
        n_sessions: logs.len(),
        win_stay: ratio(stays, wins),
        lose_shift: ratio(shifts, losses),
        mean_rt_ms: (rt_n > 0).then(|| rt_sum / rt_n as f64),
        choice_variance: (var_n > 0).then(|| var_sum / var_n as f64),
        practice_confidence: (conf_n > 0).then(|| conf_sum / conf_n as f64),
    }
}
