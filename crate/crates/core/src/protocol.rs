//! Task protocol and the seedable two-armed reversal bandit.
//!
//! A session is a practice block followed by a main block. Trial indices are
//! 1-based within each phase. Reversal trials are main-phase indices: a
//! reversal at trial 16 means trial 16 is the first trial played under the
//! flipped contingency.
//!
//! Rewards are pregenerated as one Bernoulli stream per arm, so a session can
//! be replayed exactly from its config and logged choices.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, FieldError, Result};
use crate::rng::rng_from_seed;

pub const DEFAULT_TRAJECTORY_DEPTH: usize = 10;
pub const REFLECTION_PROMPT: &str = "Pause and reflect on your strategy.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Arm {
    A,
    B,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::A, Arm::B];

    pub fn index(self) -> usize {
        match self {
            Arm::A => 0,
            Arm::B => 1,
        }
    }

    pub fn from_index(index: usize) -> Result<Arm> {
        match index {
            0 => Ok(Arm::A),
            1 => Ok(Arm::B),
            other => Err(Error::Input(format!("choice {other} is not an arm (expected 0 or 1)"))),
        }
    }

    pub fn other(self) -> Arm {
        match self {
            Arm::A => Arm::B,
            Arm::B => Arm::A,
        }
    }
}

impl From<Arm> for u8 {
    fn from(arm: Arm) -> u8 {
        arm.index() as u8
    }
}

impl TryFrom<u8> for Arm {
    type Error = Error;

    fn try_from(value: u8) -> Result<Arm> {
        Arm::from_index(value as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Practice,
    Main,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Win,
    Loss,
}

impl Outcome {
    pub fn reward(self) -> f64 {
        match self {
            Outcome::Win => 1.0,
            Outcome::Loss => 0.0,
        }
    }

    pub fn is_win(self) -> bool {
        self == Outcome::Win
    }
}

/// Early-success manipulation arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    High,
    Normal,
}

impl Group {
    /// Regression coding: 0 = normal, 1 = high.
    pub fn code(self) -> f64 {
        match self {
            Group::High => 1.0,
            Group::Normal => 0.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Group::High => "high",
            Group::Normal => "normal",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Implicit,
    ExplicitTrajectory,
    MetacognitivePrompt,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Implicit => "implicit",
            Condition::ExplicitTrajectory => "explicit_trajectory",
            Condition::MetacognitivePrompt => "metacognitive_prompt",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Reward probabilities of the better and the worse arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmProbs {
    pub high: f64,
    pub low: f64,
}

impl Default for ArmProbs {
    fn default() -> Self {
        ArmProbs { high: 0.7, low: 0.3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskConfig {
    pub practice_trials: u32,
    pub main_trials: u32,
    pub reversal_trials: Vec<u32>,
    pub arm_probs: ArmProbs,
    pub practice_reward_prob: f64,
    pub confidence_probe_interval: u32,
    pub group: Group,
    pub experiment_condition: Condition,
    pub prompt_trials: Vec<u32>,
    pub trajectory_depth: usize,
    pub initial_good_arm: Arm,
    pub seed: u64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            practice_trials: 10,
            main_trials: 50,
            reversal_trials: vec![16, 26, 36, 46],
            arm_probs: ArmProbs::default(),
            practice_reward_prob: 0.6,
            confidence_probe_interval: 3,
            group: Group::Normal,
            experiment_condition: Condition::Implicit,
            prompt_trials: Vec::new(),
            trajectory_depth: DEFAULT_TRAJECTORY_DEPTH,
            initial_good_arm: Arm::A,
            seed: 0,
        }
    }
}

const PRESET_FILES: [(&str, &str); 8] = [
    ("exp1_high", include_str!("../presets/exp1_high.json")),
    ("exp1_normal", include_str!("../presets/exp1_normal.json")),
    ("exp2_high", include_str!("../presets/exp2_high.json")),
    ("exp2_normal", include_str!("../presets/exp2_normal.json")),
    ("exp3_high", include_str!("../presets/exp3_high.json")),
    ("exp3_normal", include_str!("../presets/exp3_normal.json")),
    ("exp3_high_control", include_str!("../presets/exp3_high_control.json")),
    ("exp3_normal_control", include_str!("../presets/exp3_normal_control.json")),
];

/// Default prompt schedule for the metacognitive-prompt condition: every 5th main trial.
pub fn default_prompt_trials(main_trials: u32) -> Vec<u32> {
    (1..=main_trials).filter(|t| t % 5 == 0).collect()
}

impl TaskConfig {
    /// Names of the shipped task presets.
    pub fn preset_names() -> Vec<&'static str> {
        PRESET_FILES.iter().map(|(name, _)| *name).collect()
    }

    pub fn preset(name: &str) -> Option<TaskConfig> {
        PRESET_FILES
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, json)| serde_json::from_str(json).expect("shipped preset is valid JSON"))
    }

    pub fn for_group(group: Group) -> TaskConfig {
        TaskConfig {
            group,
            practice_reward_prob: match group {
                Group::High => 0.9,
                Group::Normal => 0.6,
            },
            ..TaskConfig::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> TaskConfig {
        self.seed = seed;
        self
    }

    pub fn total_trials(&self) -> usize {
        (self.practice_trials + self.main_trials) as usize
    }

    pub fn phase_len(&self, phase: Phase) -> u32 {
        match phase {
            Phase::Practice => self.practice_trials,
            Phase::Main => self.main_trials,
        }
    }

    /// Practice reward probability matches one of the two manipulation levels.
    pub fn is_canonical(&self) -> bool {
        [0.9, 0.6]
            .iter()
            .any(|p| (self.practice_reward_prob - p).abs() < 1e-12)
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let unit_open = |p: f64| p > 0.0 && p < 1.0;
        if self.main_trials == 0 {
            errs.push(FieldError::new("main_trials", "must be at least 1"));
        }
        let mut prev = 0;
        for (i, &r) in self.reversal_trials.iter().enumerate() {
            if r < 1 || r > self.main_trials {
                errs.push(FieldError::new(
                    format!("reversal_trials[{i}]"),
                    format!("trial {r} outside 1..={}", self.main_trials),
                ));
            } else if r <= prev {
                errs.push(FieldError::new(
                    format!("reversal_trials[{i}]"),
                    format!("trial {r} does not strictly increase (previous {prev})"),
                ));
            }
            prev = prev.max(r);
        }
        if !unit_open(self.arm_probs.high) {
            errs.push(FieldError::new("arm_probs.high", "must lie in (0, 1)"));
        }
        if !unit_open(self.arm_probs.low) {
            errs.push(FieldError::new("arm_probs.low", "must lie in (0, 1)"));
        }
        if !unit_open(self.practice_reward_prob) {
            errs.push(FieldError::new("practice_reward_prob", "must lie in (0, 1)"));
        }
        if self.confidence_probe_interval < 1 {
            errs.push(FieldError::new("confidence_probe_interval", "must be at least 1"));
        }
        for (i, &t) in self.prompt_trials.iter().enumerate() {
            if t < 1 || t > self.main_trials {
                errs.push(FieldError::new(
                    format!("prompt_trials[{i}]"),
                    format!("trial {t} outside 1..={}", self.main_trials),
                ));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Probability of a win on the good arm for a given phase.
    fn good_prob(&self, phase: Phase) -> f64 {
        match phase {
            Phase::Practice => self.practice_reward_prob,
            Phase::Main => self.arm_probs.high,
        }
    }

    /// Reward probabilities `(good, bad)` in effect during `phase`.
    pub fn phase_probs(&self, phase: Phase) -> (f64, f64) {
        (self.good_prob(phase), self.arm_probs.low)
    }
}

/// A 1-based trial position within a phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TrialPos {
    pub phase: Phase,
    pub index: u32,
}

impl TrialPos {
    pub fn new(phase: Phase, index: u32) -> Self {
        TrialPos { phase, index }
    }

    pub fn first(config: &TaskConfig) -> TrialPos {
        if config.practice_trials > 0 {
            TrialPos::new(Phase::Practice, 1)
        } else {
            TrialPos::new(Phase::Main, 1)
        }
    }

    /// Zero-based position across the whole session.
    pub fn global(self, config: &TaskConfig) -> Result<usize> {
        let len = config.phase_len(self.phase);
        if self.index < 1 || self.index > len {
            return Err(Error::Bounds {
                index: self.index,
                max: len,
            });
        }
        Ok(match self.phase {
            Phase::Practice => (self.index - 1) as usize,
            Phase::Main => (config.practice_trials + self.index - 1) as usize,
        })
    }

    pub fn next(self, config: &TaskConfig) -> Option<TrialPos> {
        match self.phase {
            Phase::Practice if self.index < config.practice_trials => {
                Some(TrialPos::new(Phase::Practice, self.index + 1))
            }
            Phase::Practice => Some(TrialPos::new(Phase::Main, 1)),
            Phase::Main if self.index < config.main_trials => {
                Some(TrialPos::new(Phase::Main, self.index + 1))
            }
            Phase::Main => None,
        }
    }
}

impl fmt::Display for TrialPos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let phase = match self.phase {
            Phase::Practice => "practice",
            Phase::Main => "main",
        };
        write!(f, "{phase} trial {}", self.index)
    }
}

/// Good arm on a main-phase trial: the initial good arm flipped once per
/// reversal at or before `trial_index`.
pub fn active_good_arm(trial_index: u32, config: &TaskConfig) -> Result<Arm> {
    if trial_index < 1 || trial_index > config.main_trials {
        return Err(Error::Bounds {
            index: trial_index,
            max: config.main_trials,
        });
    }
    let flips = config
        .reversal_trials
        .iter()
        .filter(|&&r| r <= trial_index)
        .count();
    Ok(if flips % 2 == 0 {
        config.initial_good_arm
    } else {
        config.initial_good_arm.other()
    })
}

/// Pregenerated per-arm outcome streams for one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardSchedule {
    pub practice_trials: u32,
    pub main_trials: u32,
    /// `streams[arm][global_trial]` is true when that arm pays out on that trial.
    pub streams: [Vec<bool>; 2],
    pub good_arm: Vec<Arm>,
}

pub fn make_schedule(config: &TaskConfig) -> Result<RewardSchedule> {
    config.validate()?;
    let total = config.total_trials();
    let mut rng = rng_from_seed(config.seed);
    let mut streams = [Vec::with_capacity(total), Vec::with_capacity(total)];
    let mut good_arm = Vec::with_capacity(total);

    let positions = (1..=config.practice_trials)
        .map(|i| TrialPos::new(Phase::Practice, i))
        .chain((1..=config.main_trials).map(|i| TrialPos::new(Phase::Main, i)));
    for pos in positions {
        let good = match pos.phase {
            Phase::Practice => config.initial_good_arm,
            Phase::Main => active_good_arm(pos.index, config)?,
        };
        let (p_good, p_bad) = config.phase_probs(pos.phase);
        for arm in Arm::BOTH {
            // Both draws happen every trial so the streams stay aligned.
            let u: f64 = rng.random();
            let p = if arm == good { p_good } else { p_bad };
            streams[arm.index()].push(u < p);
        }
        good_arm.push(good);
    }
    Ok(RewardSchedule {
        practice_trials: config.practice_trials,
        main_trials: config.main_trials,
        streams,
        good_arm,
    })
}

impl RewardSchedule {
    pub fn len(&self) -> usize {
        self.good_arm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.good_arm.is_empty()
    }

    fn global(&self, pos: TrialPos) -> Result<usize> {
        let (len, offset) = match pos.phase {
            Phase::Practice => (self.practice_trials, 0),
            Phase::Main => (self.main_trials, self.practice_trials),
        };
        if pos.index < 1 || pos.index > len {
            return Err(Error::Bounds {
                index: pos.index,
                max: len,
            });
        }
        Ok((offset + pos.index - 1) as usize)
    }

    /// Stream readout; does not consume the trial.
    pub fn outcome(&self, pos: TrialPos, arm: Arm) -> Result<Outcome> {
        let g = self.global(pos)?;
        Ok(if self.streams[arm.index()][g] {
            Outcome::Win
        } else {
            Outcome::Loss
        })
    }

    pub fn good_arm_at(&self, pos: TrialPos) -> Result<Arm> {
        Ok(self.good_arm[self.global(pos)?])
    }
}

/// A schedule plus the set of trials already consumed by one session.
#[derive(Debug, Clone)]
pub struct BanditEnv {
    schedule: RewardSchedule,
    consumed: Vec<bool>,
}

impl BanditEnv {
    pub fn new(schedule: RewardSchedule) -> Self {
        let consumed = vec![false; schedule.len()];
        BanditEnv { schedule, consumed }
    }

    pub fn from_config(config: &TaskConfig) -> Result<Self> {
        Ok(BanditEnv::new(make_schedule(config)?))
    }

    pub fn schedule(&self) -> &RewardSchedule {
        &self.schedule
    }

    pub fn is_consumed(&self, pos: TrialPos) -> Result<bool> {
        Ok(self.consumed[self.schedule.global(pos)?])
    }

    /// Plays `choice` on trial `pos`. Each trial can be stepped once.
    pub fn step(&mut self, pos: TrialPos, choice: usize) -> Result<Outcome> {
        let arm = Arm::from_index(choice)?;
        let g = self.schedule.global(pos)?;
        if self.consumed[g] {
            return Err(Error::Protocol(format!("{pos} was already played")));
        }
        let outcome = self.schedule.outcome(pos, arm)?;
        self.consumed[g] = true;
        Ok(outcome)
    }
}

/// What the participant sees on a trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDirective {
    pub phase: Phase,
    pub trial_index: u32,
    pub show_confidence_probe: bool,
    pub show_prompt: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory_payload: Option<Vec<Outcome>>,
}

impl TrialDirective {
    pub fn pos(&self) -> TrialPos {
        TrialPos::new(self.phase, self.trial_index)
    }
}

/// Whether a confidence probe follows the given trial.
///
/// Main phase: every `confidence_probe_interval`-th trial. Practice: a single
/// probe on the last practice trial.
pub fn probe_due(pos: TrialPos, config: &TaskConfig) -> bool {
    match pos.phase {
        Phase::Practice => pos.index == config.practice_trials,
        Phase::Main => pos.index % config.confidence_probe_interval == 0,
    }
}

pub fn prompt_due(pos: TrialPos, config: &TaskConfig) -> bool {
    config.experiment_condition == Condition::MetacognitivePrompt
        && pos.phase == Phase::Main
        && config.prompt_trials.contains(&pos.index)
}

/// Builds the directive for `pos`. `history` holds the outcomes already
/// observed in the current phase, oldest first; the trajectory strip shows
/// the most recent `trajectory_depth` of them.
pub fn directive_for(pos: TrialPos, config: &TaskConfig, history: &[Outcome]) -> Result<TrialDirective> {
    pos.global(config)?;
    let show_prompt = prompt_due(pos, config);
    let trajectory_payload = (config.experiment_condition == Condition::ExplicitTrajectory).then(|| {
        let start = history.len().saturating_sub(config.trajectory_depth);
        history[start..].to_vec()
    });
    Ok(TrialDirective {
        phase: pos.phase,
        trial_index: pos.index,
        show_confidence_probe: probe_due(pos, config),
        show_prompt,
        prompt_text: show_prompt.then(|| REFLECTION_PROMPT.to_string()),
        trajectory_payload,
    })
}
