//! Roofline latency, acceptance and switching-cost models.
//!
//! A forward pass costs `fixed_overhead + max(mem_time, compute_per_token * B * k)`:
//! constant in the batch while weight streaming dominates, linear once
//! arithmetic does. Speculation runs `gamma` sequential draft passes and one
//! target pass over `gamma + 1` positions, so it is nearly free while the
//! target is memory-bound and pays for every rejected position once it is
//! compute-bound.

mod prefill;

pub use prefill::PrefillCostTable;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRole {
    Draft,
    Target,
}

/// Shape of the per-request acceptance-rate distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaPrior {
    pub a: f64,
    pub b: f64,
}

/// Parameters of the draft/target latency model and the acceptance process.
///
/// All times are in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModelParams {
    /// Weight-streaming floor of one target forward pass.
    pub target_mem_time: f64,
    /// Target compute time per (sequence x position).
    pub target_compute_per_token: f64,
    pub draft_mem_time: f64,
    pub draft_compute_per_token: f64,
    /// Launch/scheduling overhead paid by every forward pass.
    pub fixed_overhead: f64,
    /// Probability that a drafted token is accepted.
    pub alpha: f64,
    /// When set, each request draws its own acceptance rate from this Beta
    /// distribution on admission and `alpha` is only used by model-based
    /// policies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_request_alpha: Option<BetaPrior>,
}

impl CostModelParams {
    pub fn validate(&self) -> Result<()> {
        let times = [
            ("target_mem_time", self.target_mem_time),
            ("target_compute_per_token", self.target_compute_per_token),
            ("draft_mem_time", self.draft_mem_time),
            ("draft_compute_per_token", self.draft_compute_per_token),
            ("fixed_overhead", self.fixed_overhead),
        ];
        for (name, v) in times {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be a finite time >= 0, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if self.draft_mem_time > self.target_mem_time || self.draft_compute_per_token > self.target_compute_per_token {
            return Err(Error::InvalidConfig("draft model times must not exceed target model times".into()));
        }
        if self.target_mem_time + self.fixed_overhead <= 0.0 {
            return Err(Error::InvalidConfig("a target forward pass must take positive time".into()));
        }
        if let Some(p) = self.per_request_alpha {
            if !(p.a > 0.0 && p.b > 0.0 && p.a.is_finite() && p.b.is_finite()) {
                return Err(Error::InvalidConfig("per_request_alpha shape parameters must be positive".into()));
            }
        }
        Ok(())
    }

    /// Same latency model with a different acceptance probability.
    pub fn with_alpha(&self, alpha: f64) -> Self {
        Self { alpha, ..self.clone() }
    }

    /// Named parameter sets. They reproduce the memory-bound/compute-bound
    /// crossover qualitatively; absolute numbers mean nothing.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            // 7B target / 0.5B draft on a 24 GB consumer card.
            "7b-4090-like" => Some(Self {
                target_mem_time: 0.014,
                target_compute_per_token: 8.75e-4,
                draft_mem_time: 2.8e-4,
                draft_compute_per_token: 8.75e-6,
                fixed_overhead: 0.002,
                alpha: 0.95,
                per_request_alpha: None,
            }),
            // 13B target / 68M draft on a 40 GB datacenter card.
            "13b-a100-like" => Some(Self {
                target_mem_time: 0.016,
                target_compute_per_token: 1.6e-4,
                draft_mem_time: 0.0004,
                draft_compute_per_token: 2.0e-6,
                fixed_overhead: 0.002,
                alpha: 0.6,
                per_request_alpha: None,
            }),
            // Arithmetic dominates even at small batches; speculation never pays.
            "compute-bound" => Some(Self {
                target_mem_time: 0.004,
                target_compute_per_token: 5.0e-3,
                draft_mem_time: 0.001,
                draft_compute_per_token: 1.0e-4,
                fixed_overhead: 0.001,
                alpha: 0.6,
                per_request_alpha: None,
            }),
            _ => None,
        }
    }

    pub const PRESETS: &'static [&'static str] = &["7b-4090-like", "13b-a100-like", "compute-bound"];
}

/// Latency of one forward pass of `role` over `batch` sequences with `tokens`
/// positions each.
pub fn forward_latency(params: &CostModelParams, batch: usize, tokens: usize, role: ModelRole) -> f64 {
    let (mem, per_token) = match role {
        ModelRole::Draft => (params.draft_mem_time, params.draft_compute_per_token),
        ModelRole::Target => (params.target_mem_time, params.target_compute_per_token),
    };
    let compute = per_token * batch as f64 * tokens as f64;
    params.fixed_overhead + mem.max(compute)
}

/// Latency of one decoding step at speculative length `gamma`, plus the draft
/// KV reconstruction cost when the step re-enables speculation.
pub fn step_latency(params: &CostModelParams, batch: usize, gamma: usize, switch_prefill: Option<f64>) -> Result<f64> {
    if gamma == 0 {
        if switch_prefill.is_some() {
            return Err(Error::SwitchIntoAutoregressive);
        }
        return Ok(forward_latency(params, batch, 1, ModelRole::Target));
    }
    let draft = gamma as f64 * forward_latency(params, batch, 1, ModelRole::Draft);
    let verify = forward_latency(params, batch, gamma + 1, ModelRole::Target);
    Ok(draft + verify + switch_prefill.unwrap_or(0.0))
}

/// Expected tokens emitted per sequence per step: the accepted prefix of
/// `gamma` i.i.d. Bernoulli(`alpha`) drafts plus the bonus token.
pub fn expected_tokens(alpha: f64, gamma: usize) -> f64 {
    if alpha >= 1.0 {
        (gamma + 1) as f64
    } else {
        (1.0 - alpha.powi(gamma as i32 + 1)) / (1.0 - alpha)
    }
}

/// Length of the initial run of successes in `gamma` Bernoulli(`alpha`) trials.
pub fn sample_accepted<R: Rng + ?Sized>(rng: &mut R, alpha: f64, gamma: usize) -> usize {
    let mut accepted = 0;
    while accepted < gamma && rng.gen::<f64>() < alpha {
        accepted += 1;
    }
    accepted
}

/// Expected goodput (tokens/s) of running `gamma` at batch size `batch` with
/// the true parameters. No switching cost.
pub fn expected_goodput(params: &CostModelParams, batch: usize, gamma: usize) -> f64 {
    let latency = step_latency(params, batch, gamma, None).expect("no switch prefill");
    batch as f64 * expected_tokens(params.alpha, gamma) / latency
}

/// The goodput-maximizing speculative length among `0..=gamma_max`; ties go
/// to the smaller length.
pub fn best_gamma(params: &CostModelParams, batch: usize, gamma_max: usize) -> (usize, f64) {
    let mut best = (0, expected_goodput(params, batch, 0));
    for gamma in 1..=gamma_max {
        let g = expected_goodput(params, batch, gamma);
        if g > best.1 {
            best = (gamma, g);
        }
    }
    best
}
