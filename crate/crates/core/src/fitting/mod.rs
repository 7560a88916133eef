//! Maximum-likelihood fitting of the RW + stickiness model, group parameter
//! comparisons, and a parameter-recovery harness.

mod recovery;
pub mod simplex;

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{AgentParams, AgentState};
use crate::error::{Error, Result};
use crate::inference::{welch_t, TestResult};
use crate::log::SessionLog;
use crate::protocol::{Condition, Group, Phase};

pub use recovery::{recover_parameters, recovery_config, ParamDist, ParamSampler, ParamVectors, PerParam, RecoveryReport};
use simplex::{minimize, SimplexOptions};

/// Minimum number of choices entering the likelihood for a fit.
pub const MIN_FIT_CHOICES: usize = 20;

fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn check_params(alpha: f64, beta: f64, phi: f64) -> Result<()> {
    if alpha.is_nan() || beta.is_nan() || phi.is_nan() {
        return Err(Error::Input(format!("NaN parameter in ({alpha}, {beta}, {phi})")));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Input(format!("alpha {alpha} outside [0, 1]")));
    }
    if beta < 0.0 {
        return Err(Error::Input(format!("beta {beta} is negative")));
    }
    if !phi.is_finite() {
        return Err(Error::Input(format!("phi {phi} is not finite")));
    }
    Ok(())
}

/// Per-trial log probabilities of the logged choices. Q values start at
/// `q_init` and carry across phases; the first trial has no stickiness term.
fn choice_log_probs(alpha: f64, beta: f64, phi: f64, log: &SessionLog, include_practice: bool) -> Result<Vec<f64>> {
    check_params(alpha, beta, phi)?;
    let params = AgentParams::new(alpha, beta, phi);
    let mut state = AgentState::new(&params);
    let mut out = Vec::with_capacity(log.trials.len());
    for (i, t) in log.trials.iter().enumerate() {
        let outcome = t.outcome.ok_or_else(|| Error::MalformedLog {
            trial: i + 1,
            message: format!("{} has no outcome", t.pos()),
        })?;
        if include_practice || t.phase == Phase::Main {
            let chosen = t.choice.index();
            let other = t.choice.other().index();
            let sticky = |arm: usize| match state.previous_choice {
                Some(p) if p.index() == arm => phi,
                _ => 0.0,
            };
            let diff = beta * (state.q[chosen] - state.q[other]) + sticky(chosen) - sticky(other);
            // ln σ(diff), computed without underflow.
            out.push(-log1p_exp(-diff));
        }
        state = crate::agents::rw_update(&state, t.choice, outcome.reward(), alpha)?;
    }
    Ok(out)
}

/// `−Σ ln P(choice_t)` under RW learning with softmax + stickiness.
pub fn nll_rw_stickiness(alpha: f64, beta: f64, phi: f64, log: &SessionLog, include_practice: bool) -> Result<f64> {
    Ok(-choice_log_probs(alpha, beta, phi, log, include_practice)?.iter().sum::<f64>())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub phi: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            alpha: (0..10).map(|i| 0.05 + 0.1 * i as f64).collect(),
            beta: vec![0.5, 1.0, 2.0, 4.0, 8.0, 16.0],
            phi: vec![-1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0, 3.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamSpace {
    /// (logit α, ln β, φ).
    Transformed,
    /// (α, β, φ) directly, projected onto the same box.
    Clipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineSpec {
    pub space: ParamSpace,
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for RefineSpec {
    fn default() -> Self {
        RefineSpec {
            space: ParamSpace::Transformed,
            tolerance: 1e-6,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub grid: GridSpec,
    pub refine: RefineSpec,
    pub include_practice: bool,
    pub keep_probabilities: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            grid: GridSpec::default(),
            refine: RefineSpec::default(),
            include_practice: true,
            keep_probabilities: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub session_id: String,
    pub group: Group,
    pub condition: Condition,
    pub alpha: f64,
    pub beta: f64,
    pub phi: f64,
    pub nll: f64,
    pub aic: f64,
    pub bic: f64,
    pub n_trials: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Grid point that seeded the refinement, as (α, β, φ).
    pub grid_seed: [f64; 3],
    pub grid_nll: f64,
    /// Probability of each fitted choice at the optimum.
    pub probabilities: Option<Vec<f64>>,
}

// The search box, in transformed coordinates: α ∈ [4.5e-5, 0.99995],
// β ∈ [1e-3, 100], |φ| ≤ 10.
const Z_LOWER: [f64; 3] = [-10.0, -6.907_755_278_982_137, -10.0];
const Z_UPPER: [f64; 3] = [10.0, 4.605_170_185_988_092, 10.0];

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn to_params(space: ParamSpace, z: &[f64]) -> (f64, f64, f64) {
    match space {
        ParamSpace::Transformed => (logistic(z[0]), z[1].exp(), z[2]),
        ParamSpace::Clipped => (z[0].clamp(0.0, 1.0), z[1].max(0.0), z[2]),
    }
}

fn from_params(space: ParamSpace, p: (f64, f64, f64)) -> Vec<f64> {
    match space {
        ParamSpace::Transformed => {
            let a = p.0.clamp(1e-12, 1.0 - 1e-12);
            vec![(a / (1.0 - a)).ln(), p.1.max(1e-12).ln(), p.2]
        }
        ParamSpace::Clipped => vec![p.0, p.1, p.2],
    }
}

fn simplex_options(spec: &RefineSpec) -> SimplexOptions {
    match spec.space {
        ParamSpace::Transformed => SimplexOptions {
            tolerance: spec.tolerance,
            max_iter: spec.max_iter,
            initial_step: vec![0.5, 0.5, 0.5],
            lower: Z_LOWER.to_vec(),
            upper: Z_UPPER.to_vec(),
        },
        ParamSpace::Clipped => SimplexOptions {
            tolerance: spec.tolerance,
            max_iter: spec.max_iter,
            initial_step: vec![0.1, 0.5, 0.5],
            // The same feasible set as the transformed search.
            lower: vec![logistic(Z_LOWER[0]), Z_LOWER[1].exp(), Z_LOWER[2]],
            upper: vec![logistic(Z_UPPER[0]), Z_UPPER[1].exp(), Z_UPPER[2]],
        },
    }
}

fn fitted_choices(log: &SessionLog, include_practice: bool) -> usize {
    log.trials
        .iter()
        .filter(|t| include_practice || t.phase == Phase::Main)
        .count()
}

/// Refines from `start` = (α, β, φ) without a grid search.
pub fn refine_from(log: &SessionLog, start: (f64, f64, f64), opts: &FitOptions) -> Result<FitResult> {
    let n = fitted_choices(log, opts.include_practice);
    if n < MIN_FIT_CHOICES {
        return Err(Error::Input(format!(
            "session `{}` has {n} fitted choices, fewer than {MIN_FIT_CHOICES}",
            log.session_id
        )));
    }
    check_params(start.0, start.1, start.2)?;
    let space = opts.refine.space;
    let objective = |z: &[f64]| {
        let (a, b, p) = to_params(space, z);
        nll_rw_stickiness(a, b, p, log, opts.include_practice).unwrap_or(f64::INFINITY)
    };
    let start_nll = nll_rw_stickiness(start.0, start.1, start.2, log, opts.include_practice)?;
    let r = minimize(objective, &from_params(space, start), &simplex_options(&opts.refine));
    let (alpha, beta, phi) = to_params(space, &r.x);
    let nll = r.value;
    let probabilities = if opts.keep_probabilities {
        Some(
            choice_log_probs(alpha, beta, phi, log, opts.include_practice)?
                .into_iter()
                .map(f64::exp)
                .collect(),
        )
    } else {
        None
    };
    Ok(FitResult {
        session_id: log.session_id.clone(),
        group: log.group,
        condition: log.experiment_condition,
        alpha,
        beta,
        phi,
        nll,
        aic: 2.0 * 3.0 + 2.0 * nll,
        bic: 3.0 * (n as f64).ln() + 2.0 * nll,
        n_trials: n,
        iterations: r.iterations,
        converged: r.converged,
        grid_seed: [start.0, start.1, start.2],
        grid_nll: start_nll,
        probabilities,
    })
}

/// Grid search, then simplex refinement from the best grid point.
pub fn fit_mle(log: &SessionLog, opts: &FitOptions) -> Result<FitResult> {
    let g = &opts.grid;
    if g.alpha.is_empty() || g.beta.is_empty() || g.phi.is_empty() {
        return Err(Error::Input("fit grid has an empty axis".into()));
    }
    let n = fitted_choices(log, opts.include_practice);
    if n < MIN_FIT_CHOICES {
        return Err(Error::Input(format!(
            "session `{}` has {n} fitted choices, fewer than {MIN_FIT_CHOICES}",
            log.session_id
        )));
    }
    let mut best = (f64::INFINITY, (g.alpha[0], g.beta[0], g.phi[0]));
    for &a in &g.alpha {
        for &b in &g.beta {
            for &p in &g.phi {
                let v = nll_rw_stickiness(a, b, p, log, opts.include_practice)?;
                if v < best.0 {
                    best = (v, (a, b, p));
                }
            }
        }
    }
    refine_from(log, best.1, opts)
}

/// Fits every session in parallel; output order follows the input.
pub fn fit_sessions(logs: &[SessionLog], opts: &FitOptions) -> Result<Vec<FitResult>> {
    logs.par_iter().map(|l| fit_mle(l, opts)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamComparison {
    pub label_a: String,
    pub label_b: String,
    pub n_a: usize,
    pub n_b: usize,
    pub alpha: TestResult,
    pub beta: TestResult,
    pub phi: TestResult,
}

/// Welch t (with Cohen's d) on each parameter, `a − b`.
pub fn compare_params(label_a: &str, a: &[FitResult], label_b: &str, b: &[FitResult]) -> Result<ParamComparison> {
    let col = |fits: &[FitResult], f: fn(&FitResult) -> f64| fits.iter().map(f).collect::<Vec<_>>();
    Ok(ParamComparison {
        label_a: label_a.into(),
        label_b: label_b.into(),
        n_a: a.len(),
        n_b: b.len(),
        alpha: welch_t(&col(a, |f| f.alpha), &col(b, |f| f.alpha))?,
        beta: welch_t(&col(a, |f| f.beta), &col(b, |f| f.beta))?,
        phi: welch_t(&col(a, |f| f.phi), &col(b, |f| f.phi))?,
    })
}

/// High-success minus normal-success comparison of fitted parameters.
pub fn compare_group_params(fits: &[FitResult]) -> Result<ParamComparison> {
    let (high, normal): (Vec<FitResult>, Vec<FitResult>) = fits.iter().cloned().partition(|f| f.group == Group::High);
    compare_params("high", &high, "normal", &normal)
}

#[derive(Serialize)]
struct FitRow<'a> {
    session_id: &'a str,
    group: Group,
    condition: Condition,
    alpha: f64,
    beta: f64,
    phi: f64,
    nll: f64,
    aic: f64,
    bic: f64,
    n_trials: usize,
    iterations: usize,
    converged: bool,
}

pub fn write_fits_csv<W: Write>(fits: &[FitResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for f in fits {
        w.serialize(FitRow {
            session_id: &f.session_id,
            group: f.group,
            condition: f.condition,
            alpha: f.alpha,
            beta: f.beta,
            phi: f.phi,
            nll: f.nll,
            aic: f.aic,
            bic: f.bic,
            n_trials: f.n_trials,
            iterations: f.iterations,
            converged: f.converged,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::fixtures::log_from;

    #[test]
    fn uniform_policy_gives_t_ln2() {
        let log = log_from("u", Group::High, "ABBAABAB", "WLWLLWWL", &[]);
        let nll = nll_rw_stickiness(0.3, 0.0, 0.0, &log, true).unwrap();
        assert!((nll - 8.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn three_trial_chain_by_hand() {
        // Trial 1: Q = (.5, .5), no stickiness → P(A) = ½.
        // After W on A: Q_A = .75. Trial 2: diff = 2·.25 + .3 → P(A) = σ(.8).
        // After L on A: Q_A = .375. Trial 3 picks B: diff = 2·(.5 − .375) − .3 = −.05 → P(B) = σ(−.05).
        let log = log_from("h", Group::High, "AAB", "WLW", &[]);
        let nll = nll_rw_stickiness(0.5, 2.0, 0.3, &log, true).unwrap();
        let s = |x: f64| 1.0 / (1.0 + (-x).exp());
        let expect = -(0.5f64.ln() + s(0.8).ln() + s(-0.05).ln());
        assert!((nll - expect).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_parameters() {
        let log = log_from("h", Group::High, "AAB", "WLW", &[]);
        assert!(nll_rw_stickiness(f64::NAN, 1.0, 0.0, &log, true).is_err());
        assert!(nll_rw_stickiness(1.2, 1.0, 0.0, &log, true).is_err());
        assert!(nll_rw_stickiness(0.5, -1.0, 0.0, &log, true).is_err());
    }

    #[test]
    fn extreme_beta_stays_finite() {
        let log = log_from("h", Group::High, "AAB", "WLW", &[]);
        assert!(nll_rw_stickiness(0.5, 1e6, 0.0, &log, true).unwrap().is_finite());
    }

    #[test]
    fn short_sessions_are_rejected() {
        let log = log_from("h", Group::High, "AAB", "WLW", &[]);
        assert!(matches!(fit_mle(&log, &FitOptions::default()), Err(Error::Input(_))));
    }
}
