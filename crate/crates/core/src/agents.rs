//! Generative agents: a Rescorla–Wagner learner with softmax choice and
//! policy stickiness, a fixed-hazard Bayesian ideal observer, and the
//! confidence layer that turns either agent's state into 1–7 ratings.

use std::fmt;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, FieldError, Result};
use crate::log::{AgentInfo, SessionLog, SessionStatus, SubjectKind, TrialRecord};
use crate::protocol::{prompt_due, probe_due, Arm, BanditEnv, Condition, Outcome, TaskConfig, TrialPos};
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    RwStickiness,
    IdealObserver,
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgentKind::RwStickiness => "rw_stickiness",
            AgentKind::IdealObserver => "ideal_observer",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentParams {
    /// Learning rate in [0, 1].
    pub alpha: f64,
    /// Inverse temperature, >= 0.
    pub beta: f64,
    /// Utility bonus for repeating the previous choice.
    pub phi: f64,
    pub q_init: f64,
    /// Slope of the confidence logistic, > 0.
    pub kappa: f64,
    /// Per-trial reversal probability assumed by the ideal observer.
    pub hazard: f64,
    /// Ideal observer's probability of choosing against its belief.
    pub lapse: f64,
}

impl Default for AgentParams {
    fn default() -> Self {
        AgentParams {
            alpha: 0.5,
            beta: 5.0,
            phi: 0.0,
            q_init: 0.5,
            kappa: 3.0,
            hazard: 0.08,
            lapse: 0.05,
        }
    }
}

const PRESETS: [(&str, f64, f64, f64); 5] = [
    ("high_e1", 0.86, 3.91, 0.76),
    ("normal_e1", 0.72, 8.35, 0.16),
    ("high_baseline", 0.86, 3.91, 1.16),
    ("high_explicit", 0.86, 3.91, 0.34),
    ("high_prompt", 0.86, 3.91, 0.38),
];

impl AgentParams {
    pub fn new(alpha: f64, beta: f64, phi: f64) -> Self {
        AgentParams {
            alpha,
            beta,
            phi,
            ..AgentParams::default()
        }
    }

    /// Experiment 1 high-success group means.
    pub fn high_e1() -> Self {
        AgentParams::new(0.86, 3.91, 0.76)
    }

    /// Experiment 1 normal-success group means.
    pub fn normal_e1() -> Self {
        AgentParams::new(0.72, 8.35, 0.16)
    }

    pub fn preset_names() -> Vec<&'static str> {
        PRESETS.iter().map(|p| p.0).collect()
    }

    /// Named presets. The stickiness-only overrides (`high_baseline`,
    /// `high_explicit`, `high_prompt`) keep the high-success alpha and beta.
    pub fn preset(name: &str) -> Option<AgentParams> {
        PRESETS
            .iter()
            .find(|p| p.0 == name)
            .map(|&(_, a, b, p)| AgentParams::new(a, b, p))
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(0.0..=1.0).contains(&self.alpha) {
            errs.push(FieldError::new("alpha", "must lie in [0, 1]"));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            errs.push(FieldError::new("beta", "must be finite and >= 0"));
        }
        if !self.phi.is_finite() {
            errs.push(FieldError::new("phi", "must be finite"));
        }
        if !(0.0..=1.0).contains(&self.q_init) {
            errs.push(FieldError::new("q_init", "must lie in [0, 1]"));
        }
        if !(self.kappa > 0.0) {
            errs.push(FieldError::new("kappa", "must be > 0"));
        }
        if !(0.0..1.0).contains(&self.hazard) {
            errs.push(FieldError::new("hazard", "must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.lapse) {
            errs.push(FieldError::new("lapse", "must lie in [0, 1]"));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub q: [f64; 2],
    pub previous_choice: Option<Arm>,
    /// Posterior probability that arm A is the good arm.
    pub belief: f64,
    pub last_confidence: Option<u8>,
}

impl AgentState {
    pub fn new(params: &AgentParams) -> Self {
        AgentState {
            q: [params.q_init; 2],
            previous_choice: None,
            belief: 0.5,
            last_confidence: None,
        }
    }
}

/// Softmax over `beta * Q(a) + phi * [a == previous choice]`.
pub fn rw_stickiness_policy(state: &AgentState, params: &AgentParams) -> Result<[f64; 2]> {
    if state.q.iter().any(|q| !q.is_finite()) {
        return Err(Error::Numerical(format!("non-finite Q values {:?}", state.q)));
    }
    let utility = |arm: Arm| {
        let sticky = if state.previous_choice == Some(arm) { params.phi } else { 0.0 };
        params.beta * state.q[arm.index()] + sticky
    };
    Ok(softmax2(utility(Arm::A), utility(Arm::B)))
}

/// Two-option softmax, evaluated through the utility difference so that it is
/// shift invariant and never overflows.
pub(crate) fn softmax2(u_a: f64, u_b: f64) -> [f64; 2] {
    let p_a = logistic(u_a - u_b);
    [p_a, logistic(u_b - u_a)]
}

pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn rw_update(state: &AgentState, choice: Arm, reward: f64, alpha: f64) -> Result<AgentState> {
    if reward != 0.0 && reward != 1.0 {
        return Err(Error::Input(format!("reward {reward} is not 0 or 1")));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Input(format!("learning rate {alpha} outside [0, 1]")));
    }
    let mut next = *state;
    let q = &mut next.q[choice.index()];
    *q += alpha * (reward - *q);
    next.previous_choice = Some(choice);
    Ok(next)
}

/// Discretized logistic of a signed value difference:
/// `round_half_up(1 + 6 * logistic(kappa * diff))`, clamped to 1..=7.
pub fn rating_from_difference(diff: f64, kappa: f64) -> u8 {
    let raw = 1.0 + 6.0 * logistic(kappa * diff);
    (raw + 0.5).floor().clamp(1.0, 7.0) as u8
}

/// Confidence in the held arm, from the RW values. The held arm is the
/// previous choice, or `intended` before any choice has been made.
pub fn confidence_report(state: &AgentState, params: &AgentParams, intended: Arm) -> u8 {
    let held = state.previous_choice.unwrap_or(intended);
    let diff = state.q[held.index()] - state.q[held.other().index()];
    rating_from_difference(diff, params.kappa)
}

/// One filtering step: hazard mixing, then a Bayes update on the observed
/// outcome. `probs` are `(good, bad)` win probabilities.
pub fn ideal_observer_update(belief: f64, choice: Arm, outcome: Outcome, hazard: f64, probs: (f64, f64)) -> Result<f64> {
    let (good, bad) = probs;
    if !(good > 0.0 && good < 1.0 && bad > 0.0 && bad < 1.0) {
        return Err(Error::Input(format!(
            "reward probabilities ({good}, {bad}) give a degenerate likelihood"
        )));
    }
    if !(0.0..=1.0).contains(&belief) {
        return Err(Error::Input(format!("belief {belief} outside [0, 1]")));
    }
    let prior = belief * (1.0 - hazard) + (1.0 - belief) * hazard;
    let lik = |p_win: f64| if outcome.is_win() { p_win } else { 1.0 - p_win };
    // Likelihood of the outcome when arm A is good vs when arm B is good.
    let (lik_a_good, lik_b_good) = match choice {
        Arm::A => (lik(good), lik(bad)),
        Arm::B => (lik(bad), lik(good)),
    };
    let num = prior * lik_a_good;
    Ok(num / (num + (1.0 - prior) * lik_b_good))
}

/// Ideal observer's confidence: the expected-reward advantage of the held arm
/// under the current belief, passed through the same rating map.
pub fn observer_confidence(state: &AgentState, params: &AgentParams, probs: (f64, f64), intended: Arm) -> u8 {
    let held = state.previous_choice.unwrap_or(intended);
    let p_held_good = match held {
        Arm::A => state.belief,
        Arm::B => 1.0 - state.belief,
    };
    let diff = (2.0 * p_held_good - 1.0) * (probs.0 - probs.1);
    rating_from_difference(diff, params.kappa)
}

fn observer_choice<R: Rng>(belief: f64, lapse: f64, rng: &mut R) -> Arm {
    let preferred = if belief > 0.5 {
        Arm::A
    } else if belief < 0.5 {
        Arm::B
    } else if rng.random::<bool>() {
        Arm::A
    } else {
        Arm::B
    };
    if rng.random::<f64>() < lapse {
        preferred.other()
    } else {
        preferred
    }
}

/// Simulates one full session of `kind` on the task `config`. The reward
/// schedule comes from `config.seed`; the agent's own randomness from
/// `agent_seed`.
pub fn run_agent(kind: AgentKind, params: &AgentParams, config: &TaskConfig, agent_seed: u64) -> Result<SessionLog> {
    let session_id = format!("agent-{:016x}-{:016x}", config.seed, agent_seed);
    run_agent_with_id(session_id, kind, params, config, agent_seed)
}

pub fn run_agent_with_id(
    session_id: String,
    kind: AgentKind,
    params: &AgentParams,
    config: &TaskConfig,
    agent_seed: u64,
) -> Result<SessionLog> {
    params.validate()?;
    let mut env = BanditEnv::from_config(config)?;
    let mut rng = rng_from_seed(agent_seed);
    let mut state = AgentState::new(params);
    let mut trials = Vec::with_capacity(config.total_trials());
    let mut pos = Some(TrialPos::first(config));

    while let Some(p) = pos {
        let probs = config.phase_probs(p.phase);
        let choice = match kind {
            AgentKind::RwStickiness => {
                let pr = rw_stickiness_policy(&state, params)?;
                if rng.random::<f64>() < pr[0] {
                    Arm::A
                } else {
                    Arm::B
                }
            }
            AgentKind::IdealObserver => observer_choice(state.belief, params.lapse, &mut rng),
        };
        let outcome = env.step(p, choice.index())?;
        state = match kind {
            AgentKind::RwStickiness => rw_update(&state, choice, outcome.reward(), params.alpha)?,
            AgentKind::IdealObserver => AgentState {
                belief: ideal_observer_update(state.belief, choice, outcome, params.hazard, probs)?,
                previous_choice: Some(choice),
                ..state
            },
        };
        let probe = probe_due(p, config);
        let confidence = probe.then(|| match kind {
            AgentKind::RwStickiness => confidence_report(&state, params, choice),
            AgentKind::IdealObserver => observer_confidence(&state, params, probs, choice),
        });
        if confidence.is_some() {
            state.last_confidence = confidence;
        }
        trials.push(TrialRecord {
            session_id: session_id.clone(),
            trial_index: p.index,
            phase: p.phase,
            choice,
            outcome: Some(outcome),
            rt_ms: None,
            confidence,
            probe_shown: probe,
            prompt_shown: prompt_due(p, config),
            trajectory_shown: config.experiment_condition == Condition::ExplicitTrajectory,
            client_timestamp: None,
        });
        pos = p.next(config);
    }

    Ok(SessionLog {
        session_id,
        subject: SubjectKind::Agent,
        group: config.group,
        experiment_condition: config.experiment_condition,
        config: config.clone(),
        agent: Some(AgentInfo {
            kind,
            params: *params,
            seed: agent_seed,
        }),
        status: SessionStatus::Complete,
        trials,
    })
}

/// Simulates `n` sessions. Session `i` gets task seed `derive(seed, 2i)` and
/// agent seed `derive(seed, 2i + 1)`; ids are `{label}-{i:04}`. Output order
/// is independent of thread scheduling.
pub fn simulate_cohort(
    label: &str,
    kind: AgentKind,
    params: &AgentParams,
    config: &TaskConfig,
    n: usize,
    seed: u64,
) -> Result<Vec<SessionLog>> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let cfg = config.clone().with_seed(derive_seed(seed, 2 * i as u64));
            run_agent_with_id(
                format!("{label}-{i:04}"),
                kind,
                params,
                &cfg,
                derive_seed(seed, 2 * i as u64 + 1),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::Phase;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn state(q: [f64; 2], prev: Option<Arm>) -> AgentState {
        AgentState {
            q,
            previous_choice: prev,
            belief: 0.5,
            last_confidence: None,
        }
    }

    #[test]
    fn uniform_policy_without_value_or_stickiness() {
        let p = rw_stickiness_policy(&state([0.9, 0.1], Some(Arm::A)), &AgentParams::new(0.5, 0.0, 0.0)).unwrap();
        assert_eq!(p, [0.5, 0.5]);
    }

    #[test]
    fn stickiness_only_policy() {
        let p = rw_stickiness_policy(&state([0.5, 0.5], Some(Arm::A)), &AgentParams::high_e1()).unwrap();
        let e = 0.76f64.exp();
        assert_abs_diff_eq!(p[0], e / (e + 1.0), epsilon = 1e-15);
        assert_abs_diff_eq!(p[0], 0.681_353_733_789_025_5, epsilon = 1e-12);
    }

    #[test]
    fn policy_matches_direct_softmax() {
        // independent evaluation: exp(u_a) / (exp(u_a) + exp(u_b))
        let params = AgentParams::normal_e1();
        let u_a: f64 = 8.35 * 0.9;
        let u_b: f64 = 8.35 * 0.1 + 0.16;
        let expected = u_a.exp() / (u_a.exp() + u_b.exp());
        let p = rw_stickiness_policy(&state([0.9, 0.1], Some(Arm::B)), &params).unwrap();
        assert_abs_diff_eq!(p[0], expected, epsilon = 1e-10);
        assert_abs_diff_eq!(p[0], 0.998_528_499_402_610_5, epsilon = 1e-10);
    }

    #[test]
    fn non_finite_q_is_numerical_error() {
        let err = rw_stickiness_policy(&state([f64::NAN, 0.1], None), &AgentParams::default());
        assert!(matches!(err, Err(Error::Numerical(_))));
    }

    #[test]
    fn rw_update_arithmetic() {
        let s = state([0.5, 0.5], None);
        assert_eq!(rw_update(&s, Arm::A, 1.0, 0.0).unwrap().q, [0.5, 0.5]);
        let s1 = rw_update(&s, Arm::A, 1.0, 0.86).unwrap();
        assert_abs_diff_eq!(s1.q[0], 0.93, epsilon = 1e-12);
        assert_eq!(s1.q[1], 0.5);
        assert_eq!(s1.previous_choice, Some(Arm::A));
        let s2 = rw_update(&s1, Arm::A, 0.0, 0.86).unwrap();
        assert_abs_diff_eq!(s2.q[0], 0.1302, epsilon = 1e-12);
        assert!(matches!(rw_update(&s, Arm::A, 0.5, 0.3), Err(Error::Input(_))));
    }

    #[test]
    fn confidence_ratings() {
        let p = AgentParams::default();
        assert_eq!(confidence_report(&state([0.5, 0.5], Some(Arm::A)), &p, Arm::A), 4);
        assert_eq!(confidence_report(&state([0.9, 0.1], Some(Arm::A)), &p, Arm::B), 7);
        assert_eq!(confidence_report(&state([0.1, 0.9], Some(Arm::A)), &p, Arm::B), 1);
        // before any choice, the intended arm is the reference
        assert_eq!(confidence_report(&state([0.1, 0.9], None), &p, Arm::B), 7);
    }

    #[test]
    fn observer_one_step_bayes() {
        let b = ideal_observer_update(0.5, Arm::A, Outcome::Win, 0.0, (0.7, 0.3)).unwrap();
        assert_abs_diff_eq!(b, 0.7, epsilon = 1e-15);
        // symmetric hazard wipes the prior before the likelihood step
        for prior in [0.0, 0.2, 0.9, 1.0] {
            let b = ideal_observer_update(prior, Arm::A, Outcome::Win, 0.5, (0.7, 0.3)).unwrap();
            assert_abs_diff_eq!(b, 0.7, epsilon = 1e-15);
        }
        assert!(ideal_observer_update(0.5, Arm::A, Outcome::Win, 0.1, (1.0, 0.3)).is_err());
    }

    #[test]
    fn sticky_agent_never_switches() {
        let params = AgentParams::new(0.5, 0.0, 10.0);
        // with phi = 10 a switch has probability ~4.5e-5 per trial
        let log = run_agent(AgentKind::RwStickiness, &params, &TaskConfig::default().with_seed(1), 2).unwrap();
        let first = log.trials[0].choice;
        assert!(log.trials.iter().all(|t| t.choice == first));
    }

    #[test]
    fn run_agent_is_deterministic_and_complete() {
        let cfg = TaskConfig::preset("exp1_high").unwrap().with_seed(5);
        let a = run_agent(AgentKind::RwStickiness, &AgentParams::high_e1(), &cfg, 8).unwrap();
        let b = run_agent(AgentKind::RwStickiness, &AgentParams::high_e1(), &cfg, 8).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trials.len(), 60);
        a.validate().unwrap();
        let probes: Vec<_> = a.trials.iter().filter(|t| t.confidence.is_some()).map(|t| t.pos()).collect();
        assert_eq!(probes.len(), 1 + 16);
        assert_eq!(probes[0], TrialPos::new(Phase::Practice, 10));
        let c = run_agent(AgentKind::RwStickiness, &AgentParams::high_e1(), &cfg, 9).unwrap();
        assert_ne!(a.trials, c.trials);
    }

    #[test]
    fn cohort_is_order_stable() {
        let cfg = TaskConfig::preset("exp1_normal").unwrap();
        let a = simulate_cohort("n", AgentKind::RwStickiness, &AgentParams::normal_e1(), &cfg, 16, 4).unwrap();
        let b = simulate_cohort("n", AgentKind::RwStickiness, &AgentParams::normal_e1(), &cfg, 16, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[3].session_id, "n-0003");
    }

    #[test]
    fn presets_match_reported_means() {
        assert_eq!(AgentParams::preset("high_e1"), Some(AgentParams::high_e1()));
        assert_eq!(AgentParams::preset("high_baseline").unwrap().phi, 1.16);
        assert_eq!(AgentParams::preset("high_explicit").unwrap().phi, 0.34);
        assert_eq!(AgentParams::preset("high_prompt").unwrap().phi, 0.38);
        for name in AgentParams::preset_names() {
            AgentParams::preset(name).unwrap().validate().unwrap();
        }
    }

    proptest! {
        #[test]
        fn policy_normalized_and_shift_invariant(
            qa in 0.0f64..1.0, qb in 0.0f64..1.0, beta in 0.0f64..30.0,
            phi in -3.0f64..3.0, shift in -5.0f64..5.0, prev in proptest::option::of(0usize..2)
        ) {
            let params = AgentParams::new(0.5, beta, phi);
            let s = state([qa, qb], prev.map(|i| Arm::from_index(i).unwrap()));
            let p = rw_stickiness_policy(&s, &params).unwrap();
            prop_assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
            prop_assert!(p[0] > 0.0 && p[1] > 0.0);
            let sticky = |a: usize| if prev == Some(a) { phi } else { 0.0 };
            let shifted = softmax2(beta * qa + sticky(0) + shift, beta * qb + sticky(1) + shift);
            prop_assert!((shifted[0] - p[0]).abs() < 1e-12);
        }

        #[test]
        fn repeat_probability_increases_with_phi(
            qa in 0.0f64..1.0, qb in 0.0f64..1.0, beta in 0.0f64..10.0,
            phi in -3.0f64..3.0, dphi in 0.01f64..2.0
        ) {
            let s = state([qa, qb], Some(Arm::A));
            let lo = rw_stickiness_policy(&s, &AgentParams::new(0.5, beta, phi)).unwrap()[0];
            let hi = rw_stickiness_policy(&s, &AgentParams::new(0.5, beta, phi + dphi)).unwrap()[0];
            prop_assert!(hi > lo);
        }

        #[test]
        fn rw_converges_geometrically(q0 in 0.0f64..1.0, alpha in 0.01f64..1.0, r in 0usize..2, n in 1usize..40) {
            let reward = r as f64;
            let mut s = state([q0, 0.5], None);
            for _ in 0..n {
                s = rw_update(&s, Arm::A, reward, alpha).unwrap();
            }
            let expected = reward + (q0 - reward) * (1.0 - alpha).powi(n as i32);
            prop_assert!((s.q[0] - expected).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&s.q[0]));
        }

        #[test]
        fn rating_monotone_in_difference(d1 in -1.0f64..1.0, d2 in -1.0f64..1.0, kappa in 0.1f64..10.0) {
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            prop_assert!(rating_from_difference(lo, kappa) <= rating_from_difference(hi, kappa));
            prop_assert!((1..=7).contains(&rating_from_difference(lo, kappa)));
        }

        #[test]
        fn confidence_nonincreasing_over_losses(alpha in 0.3f64..1.0, qa in 0.0f64..1.0, qb in 0.0f64..1.0, k in 1usize..10) {
            let params = AgentParams { alpha, ..AgentParams::default() };
            let mut s = state([qa, qb], Some(Arm::A));
            let mut last = confidence_report(&s, &params, Arm::A);
            for _ in 0..k {
                s = rw_update(&s, Arm::A, 0.0, alpha).unwrap();
                let now = confidence_report(&s, &params, Arm::A);
                prop_assert!(now <= last);
                last = now;
            }
        }

        #[test]
        fn belief_stays_in_unit_interval(b in 0.0f64..=1.0, hazard in 0.0f64..0.99, win in any::<bool>(), arm in 0usize..2) {
            let outcome = if win { Outcome::Win } else { Outcome::Loss };
            let next = ideal_observer_update(b, Arm::from_index(arm).unwrap(), outcome, hazard, (0.7, 0.3)).unwrap();
            prop_assert!((0.0..=1.0).contains(&next));
        }
    }
}
