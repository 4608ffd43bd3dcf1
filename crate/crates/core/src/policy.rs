//! The policy interface shared by Nightjar and the baselines, and the
//! configuration-facing [`PolicyKind`].

use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::baselines::{DsdLike, EpsilonGreedy, LinUcb, Oracle, Ucb1};
use crate::cost_model::{CostModelParams, PrefillCostTable};
use crate::error::{Error, Result};
use crate::nightjar::NightjarPolicy;

/// What a policy sees before choosing a speculative length.
pub struct SelectionContext<'a> {
    pub batch_size: usize,
    /// Largest per-request draft-KV lag in the batch. Zero whenever the
    /// previous step speculated.
    pub skip_len: usize,
    pub rng: &'a mut dyn RngCore,
}

/// A selected speculative length and whether it came from an exploration draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Choice {
    pub gamma: usize,
    pub explore: bool,
}

impl Choice {
    pub fn exploit(gamma: usize) -> Self {
        Self { gamma, explore: false }
    }
}

/// Everything the engine reports back after executing a step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feedback {
    pub batch_size: usize,
    pub gamma: usize,
    /// Realized goodput of the step in tokens/s.
    pub reward: f64,
    /// Drafted tokens accepted across the batch.
    pub accepted: usize,
    /// Sequences whose draft was cut short by a rejection.
    pub rejected: usize,
}

impl Feedback {
    pub fn new(batch_size: usize, gamma: usize, reward: f64) -> Self {
        Self { batch_size, gamma, reward, accepted: 0, rejected: 0 }
    }
}

/// A speculative-length policy. Single-threaded; the engine serializes calls.
pub trait SpeculationPolicy: Send {
    fn name(&self) -> String;

    fn select(&mut self, ctx: &mut SelectionContext<'_>) -> Choice;

    fn observe(&mut self, feedback: &Feedback) -> Result<()>;
}

pub(crate) fn check_reward(reward: f64) -> Result<()> {
    if reward.is_finite() && reward >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidReward(reward))
    }
}

/// Upper bound on the speculative length for batches of at least `min_batch`
/// sequences, e.g. to keep large batches out of memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmCapRule {
    pub min_batch: usize,
    pub max_gamma: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ArmCap(pub Vec<ArmCapRule>);

impl ArmCap {
    pub fn max_gamma(&self, batch: usize, gamma_max: usize) -> usize {
        self.0.iter().filter(|r| batch >= r.min_batch).map(|r| r.max_gamma).fold(gamma_max, usize::min)
    }
}

fn default_epsilon() -> f64 {
    0.1
}
fn default_ucb_c() -> f64 {
    2.0_f64.sqrt()
}
fn default_linucb_alpha() -> f64 {
    1.0
}
fn default_linucb_lambda() -> f64 {
    1.0
}
fn default_dsd_decay() -> f64 {
    0.05
}

/// Policy selection as it appears in experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyKind {
    Nightjar {
        #[serde(default, skip_serializing_if = "ArmCap::is_empty")]
        arm_cap: ArmCap,
    },
    FixedGamma {
        gamma: usize,
    },
    NoSpec,
    Oracle,
    EpsilonGreedy {
        #[serde(default = "default_epsilon")]
        epsilon: f64,
        #[serde(default)]
        decay: f64,
    },
    Ucb1 {
        #[serde(default = "default_ucb_c")]
        c: f64,
    },
    #[serde(rename = "linucb")]
    LinUcb {
        #[serde(default = "default_linucb_alpha")]
        alpha: f64,
        #[serde(default = "default_linucb_lambda")]
        lambda: f64,
    },
    DsdLike {
        #[serde(default = "default_dsd_decay")]
        decay: f64,
        #[serde(default)]
        initial_alpha: f64,
    },
}

impl ArmCap {
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl PolicyKind {
    pub fn nightjar() -> Self {
        PolicyKind::Nightjar { arm_cap: ArmCap::default() }
    }

    /// Short stable label used in reports.
    pub fn label(&self) -> String {
        match self {
            PolicyKind::Nightjar { .. } => "nightjar".into(),
            PolicyKind::FixedGamma { gamma } => format!("fixed_gamma_{gamma}"),
            PolicyKind::NoSpec => "no_spec".into(),
            PolicyKind::Oracle => "oracle".into(),
            PolicyKind::EpsilonGreedy { .. } => "epsilon_greedy".into(),
            PolicyKind::Ucb1 { .. } => "ucb1".into(),
            PolicyKind::LinUcb { .. } => "linucb".into(),
            PolicyKind::DsdLike { .. } => "dsd_like".into(),
        }
    }

    pub fn needs_cost_model(&self) -> bool {
        matches!(self, PolicyKind::Oracle | PolicyKind::DsdLike { .. })
    }

    pub fn validate(&self, gamma_max: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        match *self {
            PolicyKind::FixedGamma { gamma } if gamma == 0 || gamma > gamma_max => {
                bad(format!("fixed_gamma needs 1 <= gamma <= {gamma_max}, got {gamma}"))
            }
            PolicyKind::EpsilonGreedy { epsilon, decay } if !(epsilon > 0.0 && epsilon <= 1.0) || decay < 0.0 => {
                bad(format!("epsilon_greedy needs epsilon in (0, 1] and decay >= 0, got ({epsilon}, {decay})"))
            }
            PolicyKind::Ucb1 { c } if !(c > 0.0) => bad(format!("ucb1 needs c > 0, got {c}")),
            PolicyKind::LinUcb { alpha, lambda } if !(alpha > 0.0 && lambda > 0.0) => {
                bad(format!("linucb needs alpha > 0 and lambda > 0, got ({alpha}, {lambda})"))
            }
            PolicyKind::DsdLike { decay, initial_alpha }
                if !(decay > 0.0 && decay <= 1.0) || !(0.0..=1.0).contains(&initial_alpha) =>
            {
                bad(format!(
                    "dsd_like needs decay in (0, 1] and initial_alpha in [0, 1], got ({decay}, {initial_alpha})"
                ))
            }
            _ => Ok(()),
        }
    }

    /// Instantiates the policy. `cost` is the model-based policies' view of
    /// the latency model; Oracle additionally trusts its `alpha`.
    pub fn build(
        &self,
        gamma_max: usize,
        batch_max: usize,
        cost: Option<&CostModelParams>,
        table: Arc<PrefillCostTable>,
    ) -> Result<Box<dyn SpeculationPolicy>> {
        self.validate(gamma_max)?;
        if gamma_max == 0 || batch_max == 0 {
            return Err(Error::InvalidConfig("gamma_max and batch_max must be at least 1".into()));
        }
        Ok(match self {
            PolicyKind::Nightjar { arm_cap } => {
                Box::new(NightjarPolicy::new(gamma_max, batch_max, table)?.with_arm_cap(arm_cap.clone()))
            }
            PolicyKind::FixedGamma { gamma } => Box::new(FixedGamma(*gamma)),
            PolicyKind::NoSpec => Box::new(NoSpec),
            PolicyKind::Oracle => {
                Box::new(Oracle::new(cost.ok_or(Error::MissingCostModel("oracle"))?.clone(), gamma_max))
            }
            PolicyKind::EpsilonGreedy { epsilon, decay } => {
                Box::new(EpsilonGreedy::new(gamma_max, batch_max, *epsilon, *decay))
            }
            PolicyKind::Ucb1 { c } => Box::new(Ucb1::new(gamma_max, batch_max, *c)),
            PolicyKind::LinUcb { alpha, lambda } => Box::new(LinUcb::new(gamma_max, batch_max, *alpha, *lambda)),
            PolicyKind::DsdLike { decay, initial_alpha } => Box::new(DsdLike::new(
                cost.ok_or(Error::MissingCostModel("dsd_like"))?.clone(),
                gamma_max,
                *decay,
                *initial_alpha,
            )),
        })
    }
}

/// Always speculates `gamma` tokens.
#[derive(Debug, Clone, Copy)]
pub struct FixedGamma(pub usize);

impl SpeculationPolicy for FixedGamma {
    fn name(&self) -> String {
        format!("fixed_gamma_{}", self.0)
    }

    fn select(&mut self, _ctx: &mut SelectionContext<'_>) -> Choice {
        Choice::exploit(self.0)
    }

    fn observe(&mut self, feedback: &Feedback) -> Result<()> {
        check_reward(feedback.reward)
    }
}

/// Plain autoregressive decoding.
#[derive(Debug, Clone, Copy)]
pub struct NoSpec;

impl SpeculationPolicy for NoSpec {
    fn name(&self) -> String {
        "no_spec".into()
    }

    fn select(&mut self, _ctx: &mut SelectionContext<'_>) -> Choice {
        Choice::exploit(0)
    }

    fn observe(&mut self, feedback: &Feedback) -> Result<()> {
        check_reward(feedback.reward)
    }
}
