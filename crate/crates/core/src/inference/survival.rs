use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::hypothesis::TestResult;
use crate::error::{Error, Result};

/// Product-limit estimate over streak lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalEstimate {
    pub label: Option<String>,
    /// Distinct observed lengths (event or censoring), ascending.
    pub times: Vec<u32>,
    /// Episodes with length ≥ time.
    pub at_risk: Vec<usize>,
    pub events: Vec<usize>,
    pub censored: Vec<usize>,
    /// S(t) just after each time.
    pub survival: Vec<f64>,
}

impl SurvivalEstimate {
    /// Right-continuous step function; 1 before the first time.
    pub fn survival_at(&self, t: u32) -> f64 {
        match self.times.iter().rposition(|&x| x <= t) {
            Some(i) => self.survival[i],
            None => 1.0,
        }
    }

    pub fn at_risk_at(&self, t: u32) -> usize {
        match self.times.iter().position(|&x| x >= t) {
            Some(i) => self.at_risk[i],
            None => 0,
        }
    }

    pub fn events_at(&self, t: u32) -> usize {
        self.times.binary_search(&t).map(|i| self.events[i]).unwrap_or(0)
    }

    pub fn n(&self) -> usize {
        self.at_risk.first().copied().unwrap_or(0)
    }

    pub fn total_events(&self) -> usize {
        self.events.iter().sum()
    }

    /// Smallest time with S(t) ≤ 0.5.
    pub fn median(&self) -> Option<u32> {
        self.times
            .iter()
            .zip(&self.survival)
            .find(|(_, &s)| s <= 0.5)
            .map(|(&t, _)| t)
    }
}

/// Censored episodes stay in the risk set through their own length and leave
/// after it.
pub fn km_estimate(lengths: &[u32], censored: &[bool], label: Option<&str>) -> Result<SurvivalEstimate> {
    if lengths.is_empty() {
        return Err(Error::Input("survival estimate needs at least one episode".into()));
    }
    if lengths.len() != censored.len() {
        return Err(Error::Input(format!(
            "{} lengths but {} censor flags",
            lengths.len(),
            censored.len()
        )));
    }
    if let Some(i) = lengths.iter().position(|&l| l == 0) {
        return Err(Error::Input(format!("episode {i} has length 0; lengths must be ≥ 1")));
    }
    let mut pairs: Vec<(u32, bool)> = lengths.iter().copied().zip(censored.iter().copied()).collect();
    pairs.sort_unstable();

    let mut est = SurvivalEstimate {
        label: label.map(str::to_string),
        times: Vec::new(),
        at_risk: Vec::new(),
        events: Vec::new(),
        censored: Vec::new(),
        survival: Vec::new(),
    };
    let mut remaining = pairs.len();
    let mut s = 1.0;
    let mut i = 0;
    while i < pairs.len() {
        let t = pairs[i].0;
        let (mut d, mut c) = (0, 0);
        while i < pairs.len() && pairs[i].0 == t {
            if pairs[i].1 {
                c += 1;
            } else {
                d += 1;
            }
            i += 1;
        }
        s *= 1.0 - d as f64 / remaining as f64;
        est.times.push(t);
        est.at_risk.push(remaining);
        est.events.push(d);
        est.censored.push(c);
        est.survival.push(s);
        remaining -= d + c;
    }
    Ok(est)
}

/// Mantel–Haenszel log-rank test over the pooled event times. The effect
/// size is the ratio (O_a/E_a)/(O_b/E_b); below 1 means group `a` switches
/// at a lower hazard, i.e. survives longer.
pub fn logrank_test(a: &SurvivalEstimate, b: &SurvivalEstimate) -> Result<TestResult> {
    if a.n() == 0 || b.n() == 0 {
        return Err(Error::Input("log-rank needs two nonempty groups".into()));
    }
    let mut times: Vec<u32> = a
        .times
        .iter()
        .zip(&a.events)
        .chain(b.times.iter().zip(&b.events))
        .filter(|(_, &d)| d > 0)
        .map(|(&t, _)| t)
        .collect();
    times.sort_unstable();
    times.dedup();
    if times.is_empty() {
        return Err(Error::UndefinedTest("no events in either group".into()));
    }
    let (mut o_a, mut e_a, mut var) = (0.0, 0.0, 0.0);
    let mut o_b = 0.0;
    for &t in &times {
        let (na, nb) = (a.at_risk_at(t) as f64, b.at_risk_at(t) as f64);
        let (da, db) = (a.events_at(t) as f64, b.events_at(t) as f64);
        let (n, d) = (na + nb, da + db);
        o_a += da;
        o_b += db;
        e_a += d * na / n;
        if n > 1.0 {
            var += d * (na / n) * (nb / n) * (n - d) / (n - 1.0);
        }
    }
    let e_b = o_a + o_b - e_a;
    let statistic = if var > 0.0 { (o_a - e_a).powi(2) / var } else { 0.0 };
    let chi = ChiSquared::new(1.0).expect("df > 0");
    let p = if var > 0.0 { chi.sf(statistic).clamp(0.0, 1.0) } else { 1.0 };
    let ratio = if e_a > 0.0 && e_b > 0.0 && o_b > 0.0 {
        Some((o_a / e_a) / (o_b / e_b))
    } else {
        None
    };
    Ok(TestResult {
        test: "log_rank".into(),
        statistic_name: "chi2".into(),
        statistic,
        df: Some(1.0),
        p_value: p,
        effect_size: ratio,
        effect_name: ratio.map(|_| "hazard_ratio_oe".into()),
        method: None,
        warning: None,
    })
}
