use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_mle, FitOptions};
use crate::agents::{run_agent_with_id, AgentKind, AgentParams};
use crate::error::{Error, Result};
use crate::inference::{mean, pearson};
use crate::protocol::TaskConfig;
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ParamDist {
    Fixed { value: f64 },
    Uniform { low: f64, high: f64 },
}

impl ParamDist {
    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            ParamDist::Fixed { value } => value,
            ParamDist::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamSampler {
    pub alpha: ParamDist,
    pub beta: ParamDist,
    pub phi: ParamDist,
}

impl Default for ParamSampler {
    /// α ~ U(0.2, 0.9), β ~ U(1, 10), φ ~ U(0, 1.5).
    fn default() -> Self {
        ParamSampler {
            alpha: ParamDist::Uniform { low: 0.2, high: 0.9 },
            beta: ParamDist::Uniform { low: 1.0, high: 10.0 },
            phi: ParamDist::Uniform { low: 0.0, high: 1.5 },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamVectors {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub phi: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerParam<T> {
    pub alpha: T,
    pub beta: T,
    pub phi: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub n_agents: usize,
    pub n_trials: usize,
    pub truth: ParamVectors,
    pub recovered: ParamVectors,
    /// `None` when either side has zero variance.
    pub correlations: PerParam<Option<f64>>,
    /// Mean of recovered − true.
    pub bias: PerParam<f64>,
    pub fraction_converged: f64,
}

/// Canonical layout stretched to `total_trials`: 10 practice trials, the rest
/// main, reversals every 10 main trials starting at 16.
pub fn recovery_config(total_trials: u32, seed: u64) -> Result<TaskConfig> {
    if total_trials < 30 {
        return Err(Error::Input(format!("{total_trials} trials is too short for a recovery run")));
    }
    let base = TaskConfig::default();
    let main = total_trials - base.practice_trials;
    let cfg = TaskConfig {
        main_trials: main,
        reversal_trials: (16..main).step_by(10).collect(),
        prompt_trials: vec![],
        seed,
        ..base
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Simulates `n_agents` RW + stickiness agents with sampled parameters, fits
/// each, and correlates truth with estimates. Agent `i` draws its parameters
/// from `derive(seed, 3i)`, its schedule from `derive(seed, 3i + 1)` and its
/// choices from `derive(seed, 3i + 2)`. Unconverged fits are kept.
pub fn recover_parameters(
    n_agents: usize,
    sampler: &ParamSampler,
    config: &TaskConfig,
    seed: u64,
    opts: &FitOptions,
) -> Result<RecoveryReport> {
    if n_agents < 20 {
        return Err(Error::Input(format!("recovery needs at least 20 agents, got {n_agents}")));
    }
    let rows: Vec<((f64, f64, f64), (f64, f64, f64), bool, usize)> = (0..n_agents as u64)
        .into_par_iter()
        .map(|i| {
            let mut prng = rng_from_seed(derive_seed(seed, 3 * i));
            let truth = (
                sampler.alpha.sample(&mut prng),
                sampler.beta.sample(&mut prng),
                sampler.phi.sample(&mut prng),
            );
            let params = AgentParams::new(truth.0, truth.1, truth.2);
            let cfg = config.clone().with_seed(derive_seed(seed, 3 * i + 1));
            let log = run_agent_with_id(
                format!("recovery-{i:04}"),
                AgentKind::RwStickiness,
                &params,
                &cfg,
                derive_seed(seed, 3 * i + 2),
            )?;
            let fit = fit_mle(&log, opts)?;
            Ok((truth, (fit.alpha, fit.beta, fit.phi), fit.converged, fit.n_trials))
        })
        .collect::<Result<_>>()?;

    let mut truth = ParamVectors::default();
    let mut recovered = ParamVectors::default();
    for (t, r, _, _) in &rows {
        truth.alpha.push(t.0);
        truth.beta.push(t.1);
        truth.phi.push(t.2);
        recovered.alpha.push(r.0);
        recovered.beta.push(r.1);
        recovered.phi.push(r.2);
    }
    let bias = |t: &[f64], r: &[f64]| {
        let d: Vec<f64> = r.iter().zip(t).map(|(r, t)| r - t).collect();
        mean(&d).expect("n ≥ 20")
    };
    Ok(RecoveryReport {
        n_agents,
        n_trials: rows[0].3,
        correlations: PerParam {
            alpha: pearson(&truth.alpha, &recovered.alpha),
            beta: pearson(&truth.beta, &recovered.beta),
            phi: pearson(&truth.phi, &recovered.phi),
        },
        bias: PerParam {
            alpha: bias(&truth.alpha, &recovered.alpha),
            beta: bias(&truth.beta, &recovered.beta),
            phi: bias(&truth.phi, &recovered.phi),
        },
        fraction_converged: rows.iter().filter(|r| r.2).count() as f64 / n_agents as f64,
        truth,
        recovered,
    })
}
