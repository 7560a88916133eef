use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::describe::{mean, sample_sd, sample_variance};
use super::hypothesis::{welch_t, TestResult};
use super::logistic::{bernoulli_loglik, design, fit_design, logistic_fit, FitOptions, RegressionResult, SwitchObservation, Term, LOSS_STREAK_CAP};
use crate::error::Result;
use crate::protocol::Group;

/// Sessions with fewer opportunities than this are not fitted in stage 1.
pub const MIN_OPPORTUNITIES: usize = 5;
const SLOPE_RIDGE: f64 = 0.5;
const INTERCEPT_RIDGE: f64 = 0.01;
pub(crate) const APPROXIMATE_LABEL: &str = "approximate random effects";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSlope {
    pub session_id: String,
    pub group: Group,
    pub intercept: f64,
    pub slope: f64,
    pub std_error: f64,
    pub n_obs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedSession {
    pub session_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSlopes {
    pub group: Group,
    pub n_sessions: usize,
    pub mean: Option<f64>,
    /// `None` marks an undefined SD (fewer than two sessions).
    pub sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStageResult {
    pub label: String,
    pub sessions: Vec<SessionSlope>,
    pub dropped: Vec<DroppedSession>,
    pub groups: Vec<GroupSlopes>,
    /// Welch t on high − normal slopes, when both groups have ≥ 2 sessions.
    pub contrast: Option<TestResult>,
    /// Between-session slope variance net of sampling variance (moment estimate, floored at 0).
    pub slope_variance: Option<f64>,
}

fn group_sessions(obs: &[SwitchObservation]) -> Vec<(&str, Group, Vec<&SwitchObservation>)> {
    let mut order: Vec<(&str, Group, Vec<&SwitchObservation>)> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for o in obs {
        let i = *index.entry(&o.session_id).or_insert_with(|| {
            order.push((&o.session_id, o.group, Vec::new()));
            order.len() - 1
        });
        order[i].2.push(o);
    }
    order
}

/// Stage 1 fits a ridge-penalized logistic `switch ~ 1 + loss_streak` per
/// session; stage 2 summarizes the slopes by group and compares them. This
/// stands in for a random-slope mixed model and is labelled as approximate.
pub fn two_stage_fit(obs: &[SwitchObservation]) -> Result<TwoStageResult> {
    let opts = FitOptions {
        ridge: SLOPE_RIDGE,
        intercept_ridge: INTERCEPT_RIDGE,
        ..FitOptions::default()
    };
    let mut sessions = Vec::new();
    let mut dropped = Vec::new();
    for (id, group, rows) in group_sessions(obs) {
        let drop = |reason: String| DroppedSession {
            session_id: id.to_string(),
            reason,
        };
        if rows.len() < MIN_OPPORTUNITIES {
            dropped.push(drop(format!(
                "{} switch opportunities, fewer than {MIN_OPPORTUNITIES}",
                rows.len()
            )));
            continue;
        }
        let mut x = DMatrix::zeros(rows.len(), 2);
        let mut y = Vec::with_capacity(rows.len());
        for (i, o) in rows.iter().enumerate() {
            x[(i, 0)] = 1.0;
            x[(i, 1)] = o.loss_streak.min(LOSS_STREAK_CAP) as f64;
            y.push(o.switched as u8 as f64);
        }
        match fit_design(
            vec!["(intercept)".into(), Term::LossStreak.name().into()],
            &x,
            &y,
            &opts,
        ) {
            Ok(fit) if fit.converged => sessions.push(SessionSlope {
                session_id: id.to_string(),
                group,
                intercept: fit.estimates[0],
                slope: fit.estimates[1],
                std_error: fit.std_errors[1],
                n_obs: rows.len(),
            }),
            Ok(_) => dropped.push(drop("stage-1 fit did not converge".into())),
            Err(e) => dropped.push(drop(format!("stage-1 fit failed: {e}"))),
        }
    }

    let slopes_of = |g: Group| -> Vec<f64> { sessions.iter().filter(|s| s.group == g).map(|s| s.slope).collect() };
    let groups: Vec<GroupSlopes> = [Group::High, Group::Normal]
        .into_iter()
        .map(|g| {
            let s = slopes_of(g);
            GroupSlopes {
                group: g,
                n_sessions: s.len(),
                mean: mean(&s),
                sd: sample_sd(&s),
            }
        })
        .filter(|g| g.n_sessions > 0)
        .collect();
    let contrast = welch_t(&slopes_of(Group::High), &slopes_of(Group::Normal)).ok();

    let all: Vec<f64> = sessions.iter().map(|s| s.slope).collect();
    let slope_variance = sample_variance(&all).map(|v| {
        let noise = sessions.iter().map(|s| s.std_error.powi(2)).sum::<f64>() / sessions.len() as f64;
        (v - noise).max(0.0)
    });

    Ok(TwoStageResult {
        label: APPROXIMATE_LABEL.into(),
        sessions,
        dropped,
        groups,
        contrast,
        slope_variance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderRow {
    pub model: String,
    pub terms: Vec<String>,
    pub n_params: usize,
    pub log_likelihood: f64,
    pub aic: f64,
    /// AIC minus the previous row's AIC.
    pub delta_aic: Option<f64>,
    pub lrt_statistic: Option<f64>,
    pub lrt_df: Option<usize>,
    pub lrt_p: Option<f64>,
    /// Set on rows whose likelihood is a pseudo-likelihood.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderResult {
    pub n_obs: usize,
    pub rows: Vec<LadderRow>,
    /// Fixed-effects fits M1..M4.
    pub fits: Vec<RegressionResult>,
    pub two_stage: TwoStageResult,
}

impl LadderResult {
    pub fn full_model(&self) -> &RegressionResult {
        self.fits.last().expect("ladder has four fits")
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<6} {:>7} {:>12} {:>12} {:>10} {:>10}",
            "model", "params", "loglik", "AIC", "dAIC", "LRT p"
        );
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<6} {:>7} {:>12.4} {:>12.4} {:>10} {:>10}{}",
                r.model,
                r.n_params,
                r.log_likelihood,
                r.aic,
                opt(r.delta_aic),
                opt(r.lrt_p),
                r.note.as_ref().map(|n| format!("  ({n})")).unwrap_or_default()
            );
        }
        s
    }
}

pub const LADDER: [(&str, &[Term]); 4] = [
    ("M1", &[Term::LossStreak]),
    ("M2", &[Term::LossStreak, Term::Group]),
    ("M3", &[Term::LossStreak, Term::Group, Term::LossStreakXGroup]),
    (
        "M4",
        &[Term::LossStreak, Term::Group, Term::LossStreakXGroup, Term::Confidence, Term::Trial],
    ),
];

/// Nested fixed-effects models M1..M4 compared by likelihood-ratio tests, then
/// M5: M4's linear predictor plus shrunken per-session slope deviations from
/// the two-stage fit, scored by a pseudo-likelihood with one extra parameter
/// (the slope variance). M5 is compared by AIC only.
pub fn model_ladder(obs: &[SwitchObservation]) -> Result<LadderResult> {
    let fits: Vec<RegressionResult> = LADDER
        .iter()
        .map(|(_, terms)| logistic_fit(obs, terms))
        .collect::<Result<_>>()?;
    let chi = |df: usize| ChiSquared::new(df as f64).expect("df > 0");

    let mut rows: Vec<LadderRow> = Vec::new();
    for (i, ((name, _), fit)) in LADDER.iter().zip(&fits).enumerate() {
        let prev = i.checked_sub(1).map(|j| &fits[j]);
        let lrt = prev.map(|p| {
            let stat = (2.0 * (fit.log_likelihood - p.log_likelihood)).max(0.0);
            let df = fit.n_params() - p.n_params();
            (stat, df, chi(df).sf(stat).clamp(0.0, 1.0))
        });
        rows.push(LadderRow {
            model: name.to_string(),
            terms: fit.names[1..].to_vec(),
            n_params: fit.n_params(),
            log_likelihood: fit.log_likelihood,
            aic: fit.aic,
            delta_aic: prev.map(|p| fit.aic - p.aic),
            lrt_statistic: lrt.map(|l| l.0),
            lrt_df: lrt.map(|l| l.1),
            lrt_p: lrt.map(|l| l.2),
            note: None,
        });
    }

    let two_stage = two_stage_fit(obs)?;
    let m4 = fits.last().expect("four fits");
    let (_, x, y) = design(obs, LADDER[3].1)?;
    let beta = nalgebra::DVector::from_column_slice(&m4.estimates);
    let mut eta: Vec<f64> = (x * beta).iter().copied().collect();
    if let Some(tau2) = two_stage.slope_variance {
        let mut centre: HashMap<Group, f64> = HashMap::new();
        for g in &two_stage.groups {
            if let Some(m) = g.mean {
                centre.insert(g.group, m);
            }
        }
        let deviation: HashMap<&str, f64> = two_stage
            .sessions
            .iter()
            .map(|s| {
                let shrink = if tau2 > 0.0 { tau2 / (tau2 + s.std_error.powi(2)) } else { 0.0 };
                (s.session_id.as_str(), shrink * (s.slope - centre[&s.group]))
            })
            .collect();
        for (e, o) in eta.iter_mut().zip(obs) {
            if let Some(d) = deviation.get(o.session_id.as_str()) {
                *e += d * o.loss_streak.min(LOSS_STREAK_CAP) as f64;
            }
        }
    }
    let pseudo = bernoulli_loglik(&y, &eta);
    let k5 = m4.n_params() + 1;
    let aic5 = 2.0 * k5 as f64 - 2.0 * pseudo;
    rows.push(LadderRow {
        model: "M5".into(),
        terms: {
            let mut t = m4.names[1..].to_vec();
            t.push("(1 + loss_streak | session)".into());
            t
        },
        n_params: k5,
        log_likelihood: pseudo,
        aic: aic5,
        delta_aic: Some(aic5 - m4.aic),
        lrt_statistic: None,
        lrt_df: None,
        lrt_p: None,
        note: Some(format!("{APPROXIMATE_LABEL}; pseudo-likelihood")),
    });

    Ok(LadderResult {
        n_obs: obs.len(),
        rows,
        fits,
        two_stage,
    })
}
