//! Corpus analysis: behavioural indices per (group, condition) cell plus the
//! high-vs-normal comparisons, serializable as JSON, flat CSV or text.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{chi_square_prop, km_estimate, logrank_test, mann_whitney, SurvivalEstimate, TestResult};
use crate::log::SessionLog;
use crate::metrics::{
    baseline_summary, bootstrap_ci, freeze_index, hazard_curve, lockin_episodes, persistence_lengths, switch_curve,
    BaselineSummary, BootstrapCi, CurveCell, FreezeCount, FreezeDenominator, LockinSummary, PersistenceEpisode,
    DEFAULT_K_MAX,
};
use crate::protocol::{Condition, Group};
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub k_max: u32,
    pub deltas: Vec<u8>,
    /// Δ used for the between-group freeze comparison.
    pub primary_delta: u8,
    pub lockin_thresholds: Vec<u32>,
    pub baseline_trials: u32,
    pub n_boot: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            k_max: DEFAULT_K_MAX,
            deltas: vec![1, 2, 3],
            primary_delta: 2,
            lockin_thresholds: (3..=8).collect(),
            baseline_trials: 10,
            n_boot: 2000,
            level: 0.95,
            seed: 0,
        }
    }
}

impl AnalysisOptions {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.k_max == 0 {
            errs.push(crate::error::FieldError::new("k_max", "must be ≥ 1"));
        }
        if self.deltas.is_empty() || self.deltas.iter().any(|&d| d == 0 || d > 6) {
            errs.push(crate::error::FieldError::new("deltas", "each delta must lie in 1..=6"));
        }
        if !(1..=6).contains(&self.primary_delta) {
            errs.push(crate::error::FieldError::new("primary_delta", "must lie in 1..=6"));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            errs.push(crate::error::FieldError::new("level", "must lie in (0, 1)"));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveInterval {
    pub k: u32,
    pub ci: Option<BootstrapCi>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistenceSummary {
    pub n_episodes: usize,
    pub n_censored: usize,
    /// Mean length over all episodes, censored ones at their observed length.
    pub mean_length: Option<f64>,
    pub mean_ci: Option<BootstrapCi>,
    pub survival: Option<SurvivalEstimate>,
    pub episodes: Vec<PersistenceEpisode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub group: Group,
    pub condition: Condition,
    pub n_sessions: usize,
    pub switch_curve: Vec<CurveCell>,
    pub switch_curve_ci: Vec<CurveInterval>,
    pub hazard_curve: Vec<CurveCell>,
    pub persistence: PersistenceSummary,
    pub lockin: Vec<LockinSummary>,
    pub freeze: Vec<FreezeCount>,
    pub baseline: BaselineSummary,
}

impl CellReport {
    pub fn freeze_at(&self, delta: u8, mode: FreezeDenominator) -> Option<&FreezeCount> {
        self.freeze.iter().find(|f| f.delta == delta && f.denominator_mode == mode)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupComparison {
    pub condition: Condition,
    /// Mann–Whitney on episode lengths, high vs normal.
    pub persistence: Option<TestResult>,
    /// Log-rank, high vs normal; effect below 1 means high persists longer.
    pub survival: Option<TestResult>,
    /// χ² on freeze trials over loss trials at the primary Δ.
    pub freeze: Option<TestResult>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexReport {
    pub n_sessions: usize,
    pub options: AnalysisOptions,
    pub cells: Vec<CellReport>,
    pub comparisons: Vec<GroupComparison>,
}

fn mean_length(eps: &[&PersistenceEpisode]) -> Option<f64> {
    (!eps.is_empty()).then(|| eps.iter().map(|e| e.length as f64).sum::<f64>() / eps.len() as f64)
}

fn analyze_cell(logs: &[SessionLog], opts: &AnalysisOptions, cell_seed: u64) -> Result<CellReport> {
    let first = &logs[0];
    let episodes = persistence_lengths(logs)?;
    let survival = if episodes.is_empty() {
        None
    } else {
        let lengths: Vec<u32> = episodes.iter().map(|e| e.length).collect();
        let censored: Vec<bool> = episodes.iter().map(|e| e.censored).collect();
        Some(km_estimate(&lengths, &censored, Some(first.group.as_str()))?)
    };

    // Session-level resampling units.
    let per_session: Vec<(Vec<PersistenceEpisode>, Vec<CurveCell>)> = logs
        .iter()
        .map(|l| {
            let s = std::slice::from_ref(l);
            Ok((persistence_lengths(s)?, switch_curve(s, opts.k_max)?))
        })
        .collect::<Result<_>>()?;

    let mean_ci = if episodes.is_empty() {
        None
    } else {
        bootstrap_ci(
            &per_session,
            |sample| {
                let eps: Vec<&PersistenceEpisode> = sample.iter().flat_map(|s| s.0.iter()).collect();
                mean_length(&eps)
            },
            opts.n_boot,
            opts.level,
            derive_seed(cell_seed, 0),
        )
        .ok()
    };
    let switch_curve_ci = (0..=opts.k_max)
        .map(|k| {
            let ci = bootstrap_ci(
                &per_session,
                |sample| {
                    let (n, s) = sample.iter().fold((0, 0), |acc, x| {
                        let c = &x.1[k as usize];
                        (acc.0 + c.at_risk, acc.1 + c.switches)
                    });
                    (n > 0).then(|| s as f64 / n as f64)
                },
                opts.n_boot,
                opts.level,
                derive_seed(cell_seed, 1 + k as u64),
            )
            .ok();
            CurveInterval { k, ci }
        })
        .collect();

    let mut freeze = Vec::new();
    for &d in &opts.deltas {
        for mode in [FreezeDenominator::AllLossTrials, FreezeDenominator::AtRiskDrop] {
            freeze.push(freeze_index(logs, d, mode)?);
        }
    }
    let refs: Vec<&PersistenceEpisode> = episodes.iter().collect();
    Ok(CellReport {
        group: first.group,
        condition: first.experiment_condition,
        n_sessions: logs.len(),
        switch_curve: switch_curve(logs, opts.k_max)?,
        switch_curve_ci,
        hazard_curve: hazard_curve(logs, opts.k_max)?,
        persistence: PersistenceSummary {
            n_episodes: episodes.len(),
            n_censored: episodes.iter().filter(|e| e.censored).count(),
            mean_length: mean_length(&refs),
            mean_ci,
            survival,
            episodes,
        },
        lockin: opts
            .lockin_thresholds
            .iter()
            .map(|&k| lockin_episodes(logs, k))
            .collect::<Result<_>>()?,
        freeze,
        baseline: baseline_summary(logs, opts.baseline_trials),
    })
}

fn compare(high: &CellReport, normal: &CellReport, opts: &AnalysisOptions) -> GroupComparison {
    let mut notes = Vec::new();
    let lengths = |c: &CellReport| c.persistence.episodes.iter().map(|e| e.length as f64).collect::<Vec<_>>();
    let (lh, ln) = (lengths(high), lengths(normal));
    let persistence = if lh.is_empty() || ln.is_empty() {
        notes.push("persistence: a group has no episodes".into());
        None
    } else {
        mann_whitney(&lh, &ln).ok()
    };
    let survival = match (&high.persistence.survival, &normal.persistence.survival) {
        (Some(a), Some(b)) => match logrank_test(a, b) {
            Ok(r) => Some(r),
            Err(e) => {
                notes.push(format!("log-rank: {e}"));
                None
            }
        },
        _ => None,
    };
    let mode = FreezeDenominator::AllLossTrials;
    let freeze = match (high.freeze_at(opts.primary_delta, mode), normal.freeze_at(opts.primary_delta, mode)) {
        (Some(a), Some(b)) if a.denominator > 0 && b.denominator > 0 => chi_square_prop(
            a.freeze_trials as u64,
            a.denominator as u64,
            b.freeze_trials as u64,
            b.denominator as u64,
        )
        .ok(),
        _ => {
            notes.push("freeze: primary delta not computed or no loss trials".into());
            None
        }
    };
    GroupComparison {
        condition: high.condition,
        persistence,
        survival,
        freeze,
        notes,
    }
}

/// Splits sessions into (group, condition) cells, analyzes each, and compares
/// high with normal within every condition where both are present.
pub fn analyze(logs: &[SessionLog], opts: &AnalysisOptions) -> Result<IndexReport> {
    opts.validate()?;
    if logs.is_empty() {
        return Err(Error::Input("no sessions to analyze".into()));
    }
    let mut cells: BTreeMap<(Condition, Group), Vec<SessionLog>> = BTreeMap::new();
    for l in logs {
        cells
            .entry((l.experiment_condition, l.group))
            .or_default()
            .push(l.clone());
    }
    let reports: Vec<CellReport> = cells
        .iter()
        .enumerate()
        .map(|(i, (_, ls))| analyze_cell(ls, opts, derive_seed(opts.seed, i as u64)))
        .collect::<Result<_>>()?;
    let mut comparisons = Vec::new();
    for cond in reports.iter().map(|c| c.condition).collect::<std::collections::BTreeSet<_>>() {
        let find = |g| reports.iter().find(|c| c.condition == cond && c.group == g);
        if let (Some(h), Some(n)) = (find(Group::High), find(Group::Normal)) {
            comparisons.push(compare(h, n, opts));
        }
    }
    Ok(IndexReport {
        n_sessions: logs.len(),
        options: opts.clone(),
        cells: reports,
        comparisons,
    })
}

#[derive(Debug, Serialize)]
struct CsvCell<'a> {
    metric: &'a str,
    group: Group,
    condition: Condition,
    key: String,
    value: Option<f64>,
    n: Option<usize>,
    lower: Option<f64>,
    upper: Option<f64>,
}

impl IndexReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<IndexReport> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })
    }

    /// One row per (metric, group, condition, key) cell.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for c in &self.cells {
            let row = |metric: &'static str, key: String, value: Option<f64>, n: Option<usize>| CsvCell {
                metric,
                group: c.group,
                condition: c.condition,
                key,
                value,
                n,
                lower: None,
                upper: None,
            };
            for (cell, ci) in c.switch_curve.iter().zip(&c.switch_curve_ci) {
                let mut r = row("switch_curve", format!("k={}", cell.k), cell.value, Some(cell.at_risk));
                if let Some(ci) = &ci.ci {
                    r.lower = Some(ci.lower);
                    r.upper = Some(ci.upper);
                }
                w.serialize(r)?;
            }
            for cell in &c.hazard_curve {
                w.serialize(row("hazard_curve", format!("k={}", cell.k), cell.value, Some(cell.at_risk)))?;
            }
            let p = &c.persistence;
            let mut r = row("persistence_mean", String::new(), p.mean_length, Some(p.n_episodes));
            if let Some(ci) = &p.mean_ci {
                r.lower = Some(ci.lower);
                r.upper = Some(ci.upper);
            }
            w.serialize(r)?;
            if let Some(s) = &p.survival {
                for (i, t) in s.times.iter().enumerate() {
                    w.serialize(row("km_survival", format!("t={t}"), Some(s.survival[i]), Some(s.at_risk[i])))?;
                }
            }
            for l in &c.lockin {
                w.serialize(row(
                    "lockin_fraction",
                    format!("k={}", l.threshold),
                    l.fraction_flagged,
                    Some(l.per_session.len()),
                ))?;
            }
            for f in &c.freeze {
                let mode = match f.denominator_mode {
                    FreezeDenominator::AllLossTrials => "all_loss_trials",
                    FreezeDenominator::AtRiskDrop => "at_risk_drop",
                };
                w.serialize(row(
                    "freeze_index",
                    format!("delta={};{mode}", f.delta),
                    f.value,
                    Some(f.denominator),
                ))?;
            }
            let b = &c.baseline;
            let n = Some(b.n_sessions);
            w.serialize(row("win_stay", String::new(), b.win_stay, n))?;
            w.serialize(row("lose_shift", String::new(), b.lose_shift, n))?;
            w.serialize(row("mean_rt_ms", String::new(), b.mean_rt_ms, n))?;
            w.serialize(row("choice_variance", String::new(), b.choice_variance, n))?;
            w.serialize(row("practice_confidence", String::new(), b.practice_confidence, n))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.3}")).unwrap_or_else(|| "n/a".into());
        let _ = writeln!(s, "sessions: {}", self.n_sessions);
        for c in &self.cells {
            let _ = writeln!(
                s,
                "\n[{} / {}] sessions = {}",
                c.group.as_str(),
                c.condition.as_str(),
                c.n_sessions
            );
            let curve = |cells: &[CurveCell]| {
                cells
                    .iter()
                    .map(|x| format!("{}:{}", x.k, opt(x.value)))
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            let _ = writeln!(s, "  P(switch|k)  {}", curve(&c.switch_curve));
            let _ = writeln!(s, "  h(k)         {}", curve(&c.hazard_curve));
            let p = &c.persistence;
            let _ = writeln!(
                s,
                "  persistence  mean {} over {} episodes ({} censored){}",
                opt(p.mean_length),
                p.n_episodes,
                p.n_censored,
                p.mean_ci
                    .as_ref()
                    .map(|ci| format!(", {:.0}% CI [{:.3}, {:.3}]", ci.level * 100.0, ci.lower, ci.upper))
                    .unwrap_or_default()
            );
            let _ = writeln!(
                s,
                "  lock-in      {}",
                c.lockin
                    .iter()
                    .map(|l| format!("k={}:{}", l.threshold, opt(l.fraction_flagged)))
                    .collect::<Vec<_>>()
                    .join(" ")
            );
            for f in &c.freeze {
                let _ = writeln!(
                    s,
                    "  freeze       delta={} {:?}: {} ({}/{})",
                    f.delta, f.denominator_mode, opt(f.value), f.freeze_trials, f.denominator
                );
            }
            let b = &c.baseline;
            let _ = writeln!(
                s,
                "  baseline     win-stay {} lose-shift {} RT {} choice var {}",
                opt(b.win_stay),
                opt(b.lose_shift),
                opt(b.mean_rt_ms),
                opt(b.choice_variance)
            );
        }
        for cmp in &self.comparisons {
            let _ = writeln!(s, "\nhigh vs normal ({})", cmp.condition.as_str());
            for t in [&cmp.persistence, &cmp.survival, &cmp.freeze].into_iter().flatten() {
                let _ = writeln!(s, "  {}", t.to_text());
            }
            for n in &cmp.notes {
                let _ = writeln!(s, "  note: {n}");
            }
        }
        s
    }
}
