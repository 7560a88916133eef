use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::log::SessionLog;
use crate::metrics::derive_features;
use crate::protocol::Group;

/// Loss streaks above this are entered as this value.
pub const LOSS_STREAK_CAP: u32 = 8;

pub(crate) const INTERCEPT: &str = "(intercept)";

/// One switch opportunity: a main-phase decision that followed an earlier choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchObservation {
    pub session_id: String,
    pub group: Group,
    pub switched: bool,
    /// Uncapped; the design matrix applies [`LOSS_STREAK_CAP`].
    pub loss_streak: u32,
    /// Rating carried into the decision.
    pub confidence: Option<f64>,
    pub trial: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    LossStreak,
    Group,
    LossStreakXGroup,
    Confidence,
    Trial,
}

impl Term {
    pub fn name(self) -> &'static str {
        match self {
            Term::LossStreak => "loss_streak",
            Term::Group => "group",
            Term::LossStreakXGroup => "loss_streak:group",
            Term::Confidence => "confidence",
            Term::Trial => "trial",
        }
    }

    fn value(self, o: &SwitchObservation) -> Option<f64> {
        let streak = o.loss_streak.min(LOSS_STREAK_CAP) as f64;
        match self {
            Term::LossStreak => Some(streak),
            Term::Group => Some(o.group.code()),
            Term::LossStreakXGroup => Some(streak * o.group.code()),
            Term::Confidence => o.confidence,
            Term::Trial => Some(o.trial as f64),
        }
    }
}

/// Main-phase switch opportunities from every session, in log order.
pub fn observations_from_logs(logs: &[SessionLog]) -> Result<Vec<SwitchObservation>> {
    let mut out = Vec::new();
    for log in logs {
        let f = derive_features(log)?;
        for t in f.main() {
            let Some(switched) = t.switch else { continue };
            out.push(SwitchObservation {
                session_id: log.session_id.clone(),
                group: log.group,
                switched,
                loss_streak: t.loss_streak,
                confidence: t.confidence_prior.map(f64::from),
                trial: t.trial_index,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub names: Vec<String>,
    pub estimates: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub z: Vec<f64>,
    pub p_values: Vec<f64>,
    /// `exp(estimate)`, never estimated separately.
    pub odds_ratios: Vec<f64>,
    pub log_likelihood: f64,
    pub aic: f64,
    pub n_obs: usize,
    pub converged: bool,
    pub iterations: usize,
    /// Objective after each accepted step, starting from the null point.
    pub loglik_trace: Vec<f64>,
    pub max_abs_score: f64,
}

impl RegressionResult {
    pub fn n_params(&self) -> usize {
        self.estimates.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn estimate(&self, name: &str) -> Option<f64> {
        self.index_of(name).map(|i| self.estimates[i])
    }

    pub fn p_value(&self, name: &str) -> Option<f64> {
        self.index_of(name).map(|i| self.p_values[i])
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<20} {:>10} {:>10} {:>8} {:>10} {:>10}",
            "term", "estimate", "std_err", "z", "p", "odds_ratio"
        );
        for i in 0..self.names.len() {
            let _ = writeln!(
                s,
                "{:<20} {:>10.4} {:>10.4} {:>8.3} {:>10.4} {:>10.4}",
                self.names[i], self.estimates[i], self.std_errors[i], self.z[i], self.p_values[i], self.odds_ratios[i]
            );
        }
        let _ = writeln!(
            s,
            "n = {}, loglik = {:.4}, AIC = {:.4}, converged = {} ({} iterations)",
            self.n_obs, self.log_likelihood, self.aic, self.converged, self.iterations
        );
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Ridge penalty on every non-intercept coefficient.
    pub ridge: f64,
    pub intercept_ridge: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iter: 100,
            ridge: 0.0,
            intercept_ridge: 0.0,
        }
    }
}

/// `ln(1 + e^x)` without overflow.
fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn bernoulli_loglik(y: &[f64], eta: &[f64]) -> f64 {
    y.iter().zip(eta).map(|(y, e)| y * e - log1p_exp(*e)).sum()
}

pub(crate) fn two_sided_normal_p(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    let n = Normal::standard();
    (2.0 * n.sf(z.abs())).clamp(0.0, 1.0)
}

struct Evaluation {
    objective: f64,
    loglik: f64,
    score: DVector<f64>,
    info: DMatrix<f64>,
    min_margin: f64,
}

fn evaluate(x: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>, penalty: &DVector<f64>) -> Evaluation {
    let k = x.ncols();
    let eta = x * beta;
    let loglik = bernoulli_loglik(y, eta.as_slice());
    let mut score = DVector::zeros(k);
    let mut info = DMatrix::zeros(k, k);
    let mut min_margin = f64::INFINITY;
    for i in 0..x.nrows() {
        let p = sigmoid(eta[i]);
        min_margin = min_margin.min(p.min(1.0 - p));
        let w = p * (1.0 - p);
        let r = y[i] - p;
        for a in 0..k {
            let xa = x[(i, a)];
            score[a] += xa * r;
            for b in 0..=a {
                info[(a, b)] += w * xa * x[(i, b)];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            info[(b, a)] = info[(a, b)];
        }
        score[a] -= penalty[a] * beta[a];
        info[(a, a)] += penalty[a];
    }
    let objective = loglik - 0.5 * penalty.iter().zip(beta.iter()).map(|(l, b)| l * b * b).sum::<f64>();
    Evaluation {
        objective,
        loglik,
        score,
        info,
        min_margin,
    }
}

fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Logistic maximum likelihood by IRLS (Newton on the canonical link) with
/// step halving. Column 0 of `x` is treated as the intercept for ridge
/// purposes. Converged when `max |score| < 1e-8` or the objective gains less
/// than `1e-10` in a step.
pub fn fit_design(names: Vec<String>, x: &DMatrix<f64>, y: &[f64], opts: &FitOptions) -> Result<RegressionResult> {
    let (n, k) = x.shape();
    if names.len() != k || y.len() != n {
        return Err(Error::Input(format!(
            "design is {n}x{k} but {} names and {} responses were given",
            names.len(),
            y.len()
        )));
    }
    if n == 0 {
        return Err(Error::Input("no observations".into()));
    }
    let n_pos = y.iter().filter(|&&v| v > 0.5).count();
    let penalized = opts.ridge > 0.0 || opts.intercept_ridge > 0.0;
    if !penalized && (n_pos == 0 || n_pos == n) {
        return Err(Error::Separation {
            column: names[0].clone(),
        });
    }
    let penalty = DVector::from_fn(k, |j, _| if j == 0 { opts.intercept_ridge } else { opts.ridge });

    let mut beta = DVector::zeros(k);
    let mut ev = evaluate(x, y, &beta, &penalty);
    let mut trace = vec![ev.objective];
    let mut converged = max_abs(&ev.score) < 1e-8;
    let mut iterations = 0;
    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let chol = ev.info.clone().cholesky().ok_or(Error::Rank)?;
        let step = chol.solve(&ev.score);
        let mut scale = 1.0;
        let (next_beta, next) = loop {
            let cand = &beta + &step * scale;
            let cand_ev = evaluate(x, y, &cand, &penalty);
            if cand_ev.objective >= ev.objective - 1e-12 || scale < 1e-9 {
                break (cand, cand_ev);
            }
            scale *= 0.5;
        };
        if next.objective < ev.objective - 1e-12 {
            // No ascent direction left at machine precision.
            converged = max_abs(&ev.score) < 1e-6;
            break;
        }
        let gain = next.objective - ev.objective;
        beta = next_beta;
        ev = next;
        trace.push(ev.objective);
        converged = max_abs(&ev.score) < 1e-8 || gain < 1e-10;
    }

    if !penalized && ev.min_margin < 1e-9 {
        // Fitted probabilities pinned at 0 or 1: name the column whose
        // contribution to the linear predictor is largest.
        let (col, spread) = (0..k)
            .map(|j| {
                let col = x.column(j);
                let range = col.max() - col.min();
                let scale = if j == 0 { 1.0 } else { range };
                (j, beta[j].abs() * scale)
            })
            .fold((0, 0.0), |acc, c| if c.1 > acc.1 { c } else { acc });
        if spread > 15.0 {
            return Err(Error::Separation {
                column: names[col].clone(),
            });
        }
    }

    let cov = ev.info.clone().cholesky().ok_or(Error::Rank)?.inverse();
    let std_errors: Vec<f64> = (0..k).map(|j| cov[(j, j)].sqrt()).collect();
    let estimates: Vec<f64> = beta.iter().copied().collect();
    let z: Vec<f64> = estimates.iter().zip(&std_errors).map(|(b, s)| b / s).collect();
    let p_values = z.iter().map(|&z| two_sided_normal_p(z)).collect();
    let odds_ratios = estimates.iter().map(|b| b.exp()).collect();
    Ok(RegressionResult {
        names,
        estimates,
        std_errors,
        z,
        p_values,
        odds_ratios,
        log_likelihood: ev.loglik,
        aic: 2.0 * k as f64 - 2.0 * ev.loglik,
        n_obs: n,
        converged,
        iterations,
        loglik_trace: trace,
        max_abs_score: max_abs(&ev.score),
    })
}

pub(crate) fn design(obs: &[SwitchObservation], terms: &[Term]) -> Result<(Vec<String>, DMatrix<f64>, Vec<f64>)> {
    let k = terms.len() + 1;
    let mut x = DMatrix::zeros(obs.len(), k);
    for (i, o) in obs.iter().enumerate() {
        x[(i, 0)] = 1.0;
        for (j, t) in terms.iter().enumerate() {
            x[(i, j + 1)] = t.value(o).ok_or_else(|| {
                Error::Input(format!("observation {i} (session `{}`) has no {}", o.session_id, t.name()))
            })?;
        }
    }
    for (j, t) in terms.iter().enumerate() {
        let col = x.column(j + 1);
        if obs.len() > 1 && col.max() == col.min() {
            return Err(Error::Input(format!("column `{}` is constant", t.name())));
        }
    }
    let mut names = vec![INTERCEPT.to_string()];
    names.extend(terms.iter().map(|t| t.name().to_string()));
    let y = obs.iter().map(|o| o.switched as u8 as f64).collect();
    Ok((names, x, y))
}

/// Fixed-effects logistic regression of the switch flag on an intercept plus `terms`.
pub fn logistic_fit(obs: &[SwitchObservation], terms: &[Term]) -> Result<RegressionResult> {
    let (names, x, y) = design(obs, terms)?;
    fit_design(names, &x, &y, &FitOptions::default())
}
