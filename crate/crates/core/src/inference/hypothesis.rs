use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use super::describe::{mean, sample_variance};
use super::logistic::two_sided_normal_p;
use crate::error::{Error, Result};

/// Above this many pairs Mann–Whitney switches from exact enumeration to the
/// normal approximation.
pub const EXACT_MANN_WHITNEY_LIMIT: usize = 400;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub test: String,
    pub statistic_name: String,
    pub statistic: f64,
    pub df: Option<f64>,
    pub p_value: f64,
    pub effect_size: Option<f64>,
    pub effect_name: Option<String>,
    pub method: Option<String>,
    pub warning: Option<String>,
}

impl TestResult {
    pub fn to_text(&self) -> String {
        let df = self.df.map(|d| format!("({d:.2})")).unwrap_or_default();
        let mut s = format!(
            "{}: {}{} = {:.4}, p = {:.4}",
            self.test, self.statistic_name, df, self.statistic, self.p_value
        );
        if let (Some(e), Some(name)) = (self.effect_size, &self.effect_name) {
            s.push_str(&format!(", {name} = {e:.4}"));
        }
        if let Some(m) = &self.method {
            s.push_str(&format!(" [{m}]"));
        }
        if let Some(w) = &self.warning {
            s.push_str(&format!(" (warning: {w})"));
        }
        s
    }
}

/// `#{(x, y): x > y} + ½ #{ties}` for sample `a`.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> f64 {
    let mut u = 0.0;
    for x in a {
        for y in b {
            if x > y {
                u += 1.0;
            } else if x == y {
                u += 0.5;
            }
        }
    }
    u
}

/// Midranks of the pooled sample, doubled so they are integers.
fn doubled_midranks(pooled: &[f64]) -> Vec<u64> {
    let mut idx: Vec<usize> = (0..pooled.len()).collect();
    idx.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut ranks = vec![0u64; pooled.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && pooled[idx[j + 1]] == pooled[idx[i]] {
            j += 1;
        }
        // Positions i..=j hold ranks i+1..=j+1; twice their mean is i+j+2.
        for &k in &idx[i..=j] {
            ranks[k] = (i + j + 2) as u64;
        }
        i = j + 1;
    }
    ranks
}

fn tie_groups(pooled: &[f64]) -> Vec<usize> {
    let mut v = pooled.to_vec();
    v.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    let mut i = 0;
    while i < v.len() {
        let j = v[i..].iter().take_while(|&&x| x == v[i]).count();
        out.push(j);
        i += j;
    }
    out
}

/// Normal approximation with tie-corrected variance and a 0.5 continuity
/// correction.
pub fn mann_whitney_normal_p(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let n = na + nb;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ties: f64 = tie_groups(&pooled).iter().map(|&t| (t * t * t - t) as f64).sum();
    let var = na * nb / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
    if !(var > 0.0) {
        return 1.0;
    }
    let dev = (mann_whitney_u(a, b) - na * nb / 2.0).abs();
    let z = ((dev - 0.5).max(0.0)) / var.sqrt();
    two_sided_normal_p(z)
}

/// Exact two-sided p under the permutation null, ties included: the
/// probability that the rank sum of a random size-|a| subset lies at least as
/// far from its mean as the observed one.
pub fn mann_whitney_exact_p(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = doubled_midranks(&pooled);
    let n = pooled.len();
    // Enumerate subsets of the smaller size; the statistic is symmetric.
    let (m, observed): (usize, u64) = if a.len() <= b.len() {
        (a.len(), ranks[..a.len()].iter().sum())
    } else {
        (b.len(), ranks[a.len()..].iter().sum())
    };
    let max_sum: u64 = {
        let mut r = ranks.clone();
        r.sort_unstable();
        r[n - m..].iter().sum()
    };
    let width = max_sum as usize + 1;
    let mut dp = vec![0.0f64; (m + 1) * width];
    dp[0] = 1.0;
    for (i, &r) in ranks.iter().enumerate() {
        let r = r as usize;
        for j in (1..=m.min(i + 1)).rev() {
            for s in (r..width).rev() {
                let from = dp[(j - 1) * width + s - r];
                if from != 0.0 {
                    dp[j * width + s] += from;
                }
            }
        }
    }
    // Twice the expected doubled rank sum is 2·m(n+1); compare |2R − m(n+1)|
    // in integers to avoid rounding at the boundary.
    let centre = (m * (n + 1)) as i64;
    let obs_dev = (observed as i64 - centre).abs();
    let row = &dp[m * width..(m + 1) * width];
    let total: f64 = row.iter().sum();
    let extreme: f64 = row
        .iter()
        .enumerate()
        .filter(|(s, _)| (*s as i64 - centre).abs() >= obs_dev)
        .map(|(_, c)| c)
        .sum();
    (extreme / total).clamp(0.0, 1.0)
}

/// Two-sided Mann–Whitney test. Exact when `|a|·|b| ≤ 400`. The effect size
/// is the rank-biserial correlation `2U/(|a||b|) − 1`.
pub fn mann_whitney(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Input("Mann–Whitney needs two nonempty samples".into()));
    }
    let u = mann_whitney_u(a, b);
    let pairs = a.len() * b.len();
    let exact = pairs <= EXACT_MANN_WHITNEY_LIMIT;
    let p = if exact {
        mann_whitney_exact_p(a, b)
    } else {
        mann_whitney_normal_p(a, b)
    };
    Ok(TestResult {
        test: "mann_whitney".into(),
        statistic_name: "U".into(),
        statistic: u,
        df: None,
        p_value: p,
        effect_size: Some(2.0 * u / pairs as f64 - 1.0),
        effect_name: Some("rank_biserial".into()),
        method: Some(if exact { "exact" } else { "normal" }.into()),
        warning: None,
    })
}

/// Pearson χ² for a 2×2 table of successes/failures, no continuity correction.
pub fn chi_square_prop(successes_a: u64, n_a: u64, successes_b: u64, n_b: u64) -> Result<TestResult> {
    chi_square_prop_with(successes_a, n_a, successes_b, n_b, false)
}

/// As [`chi_square_prop`], optionally with Yates' correction.
pub fn chi_square_prop_with(successes_a: u64, n_a: u64, successes_b: u64, n_b: u64, yates: bool) -> Result<TestResult> {
    if n_a == 0 || n_b == 0 {
        return Err(Error::Input("both groups need n > 0".into()));
    }
    if successes_a > n_a || successes_b > n_b {
        return Err(Error::Input("successes exceed group size".into()));
    }
    let obs = [
        [successes_a as f64, (n_a - successes_a) as f64],
        [successes_b as f64, (n_b - successes_b) as f64],
    ];
    let rows = [n_a as f64, n_b as f64];
    let cols = [obs[0][0] + obs[1][0], obs[0][1] + obs[1][1]];
    let total = rows[0] + rows[1];
    let mut stat = 0.0;
    let mut min_expected = f64::INFINITY;
    for i in 0..2 {
        for j in 0..2 {
            let e = rows[i] * cols[j] / total;
            min_expected = min_expected.min(e);
            if e > 0.0 {
                let mut d = (obs[i][j] - e).abs();
                if yates {
                    d = (d - 0.5).max(0.0);
                }
                stat += d * d / e;
            }
        }
    }
    let p = ChiSquared::new(1.0).expect("df > 0").sf(stat).clamp(0.0, 1.0);
    let warning = (min_expected < 1.0).then(|| format!("expected cell count {min_expected:.3} is below 1"));
    Ok(TestResult {
        test: "chi_square_prop".into(),
        statistic_name: "chi2".into(),
        statistic: stat,
        df: Some(1.0),
        p_value: p,
        effect_size: Some(obs[0][0] / rows[0] - obs[1][0] / rows[1]),
        effect_name: Some("proportion_difference".into()),
        method: yates.then(|| "yates".into()),
        warning,
    })
}

fn check_two_samples(a: &[f64], b: &[f64]) -> Result<(f64, f64, f64, f64)> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Input(format!(
            "each sample needs at least 2 values, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (ma, mb) = (mean(a).expect("nonempty"), mean(b).expect("nonempty"));
    let (va, vb) = (sample_variance(a).expect("n ≥ 2"), sample_variance(b).expect("n ≥ 2"));
    if va == 0.0 && vb == 0.0 {
        return Err(Error::UndefinedTest("both samples have zero variance".into()));
    }
    Ok((ma, mb, va, vb))
}

/// Cohen's d for `a − b` with the pooled standard deviation.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<f64> {
    let (ma, mb, va, vb) = check_two_samples(a, b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let pooled = (((na - 1.0) * va + (nb - 1.0) * vb) / (na + nb - 2.0)).sqrt();
    Ok((ma - mb) / pooled)
}

/// Welch's unequal-variance t test for `a − b`, Satterthwaite df, with
/// Cohen's d as the effect size.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<TestResult> {
    let (ma, mb, va, vb) = check_two_samples(a, b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (va / na, vb / nb);
    let t = (ma - mb) / (sa + sb).sqrt();
    let df = (sa + sb).powi(2) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Numerical(e.to_string()))?;
    let p = (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0);
    Ok(TestResult {
        test: "welch_t".into(),
        statistic_name: "t".into(),
        statistic: t,
        df: Some(df),
        p_value: p,
        effect_size: Some(cohens_d(a, b)?),
        effect_name: Some("cohens_d".into()),
        method: None,
        warning: None,
    })
}
