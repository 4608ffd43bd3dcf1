//! Nightjar: per-batch-size bandit over speculative lengths.
//!
//! Every batch size `B` owns an independent schedule of *blocks*, *bins* and
//! *rounds*. Block `j` has size `H = 2^(j-1)`; it holds `floor(sqrt(H))` bins
//! of `floor(sqrt(H))` rounds each, one round per decoding step at that batch
//! size. At the first round of bin `b` the whole bin is committed to
//! exploration with probability `1/sqrt(b)` (uniform arm per round) or to
//! exploitation otherwise.
//!
//! Exploitation minimizes
//!
//! ```text
//! 1 / g(B, gamma) + [gamma_prev == 0 && gamma > 0] * c_prefill(L_max, B) / gamma
//! ```
//!
//! where `g` is the running mean goodput of the arm and `c_prefill` the cost of
//! rebuilding the draft model's KV cache after speculation was off. The
//! previous length `gamma_prev` is engine-wide, not per batch size.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, RngCore};
use serde::Serialize;

use crate::cost_model::PrefillCostTable;
use crate::error::{Error, Result};
use crate::policy::{check_reward, ArmCap, Choice, Feedback, SelectionContext, SpeculationPolicy};

/// Running mean goodput of one `(B, gamma)` arm.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ArmStats {
    pub mean_goodput: f64,
    pub visits: u64,
}

impl ArmStats {
    /// Cumulative moving average: `m_n = m_{n-1} + (r - m_{n-1}) / n`.
    pub fn record(&mut self, reward: f64) {
        self.visits += 1;
        self.mean_goodput += (reward - self.mean_goodput) / self.visits as f64;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BinType {
    Exploration,
    Exploitation,
}

/// Block/bin/round counters and arm statistics for one batch size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchHierarchy {
    pub block_index: u32,
    pub block_size: u64,
    pub bin_index: u64,
    pub round: u64,
    /// Resolved at the first selection of a bin, cleared when the bin ends.
    pub bin_type: Option<BinType>,
    pub arms: Vec<ArmStats>,
}

impl BatchHierarchy {
    pub fn new(gamma_max: usize) -> Self {
        Self {
            block_index: 1,
            block_size: 1,
            bin_index: 1,
            round: 1,
            bin_type: None,
            arms: vec![ArmStats::default(); gamma_max + 1],
        }
    }

    /// Closes the bin once `round > sqrt(H)` and the block once
    /// `bin > sqrt(H)`. Comparisons are done on squares so they are exact.
    pub fn advance(&mut self) {
        if self.round * self.round > self.block_size {
            self.bin_index += 1;
            self.round = 1;
            self.bin_type = None;
            if self.bin_index * self.bin_index > self.block_size {
                self.block_index += 1;
                self.block_size = 1u64 << (self.block_index - 1);
                self.bin_index = 1;
            }
        }
    }
}

/// The Nightjar policy state.
#[derive(Debug, Clone, Serialize)]
pub struct NightjarPolicy {
    gamma_max: usize,
    per_batch: Vec<BatchHierarchy>,
    last_gamma: usize,
    #[serde(skip_serializing_if = "ArmCap::is_empty")]
    arm_cap: ArmCap,
    #[serde(skip)]
    prefill_table: Arc<PrefillCostTable>,
}

/// Timing of repeated arm selections against a fixed state.
#[derive(Debug, Clone)]
pub struct ProbeReport {
    pub median_seconds: f64,
    pub selections: Vec<usize>,
}

impl NightjarPolicy {
    pub fn new(gamma_max: usize, batch_max: usize, prefill_table: Arc<PrefillCostTable>) -> Result<Self> {
        if gamma_max == 0 {
            return Err(Error::InvalidConfig("gamma_max must be at least 1".into()));
        }
        if batch_max == 0 {
            return Err(Error::InvalidConfig("batch_max must be at least 1".into()));
        }
        Ok(Self {
            gamma_max,
            per_batch: (0..batch_max).map(|_| BatchHierarchy::new(gamma_max)).collect(),
            last_gamma: 0,
            arm_cap: ArmCap::default(),
            prefill_table,
        })
    }

    pub fn with_arm_cap(mut self, arm_cap: ArmCap) -> Self {
        self.arm_cap = arm_cap;
        self
    }

    pub fn gamma_max(&self) -> usize {
        self.gamma_max
    }

    pub fn batch_max(&self) -> usize {
        self.per_batch.len()
    }

    pub fn last_gamma(&self) -> usize {
        self.last_gamma
    }

    pub fn hierarchy(&self, batch: usize) -> Result<&BatchHierarchy> {
        self.check_batch(batch)?;
        Ok(&self.per_batch[batch - 1])
    }

    /// JSON snapshot of the full bandit state.
    pub fn snapshot_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("policy state serializes")
    }

    fn check_batch(&self, batch: usize) -> Result<()> {
        if batch == 0 || batch > self.per_batch.len() {
            return Err(Error::BatchOutOfRange { batch, batch_max: self.per_batch.len() });
        }
        Ok(())
    }

    /// Exploitation objective for `gamma_cand`, in seconds per token plus the
    /// amortized switching cost.
    pub fn exploitation_score(
        &self,
        batch: usize,
        gamma_prev: usize,
        gamma_cand: usize,
        skip_len: usize,
    ) -> Result<f64> {
        self.check_batch(batch)?;
        if gamma_cand > self.gamma_max {
            return Err(Error::GammaOutOfRange { gamma: gamma_cand, gamma_max: self.gamma_max });
        }
        let arm = &self.per_batch[batch - 1].arms[gamma_cand];
        if arm.visits == 0 {
            return Err(Error::UnvisitedArm { batch, gamma: gamma_cand });
        }
        let mut score = 1.0 / arm.mean_goodput;
        if gamma_prev == 0 && gamma_cand > 0 {
            score += self.prefill_table.prefill_cost(skip_len, batch) / gamma_cand as f64;
        }
        Ok(score)
    }

    /// Argmin of the exploitation objective over visited arms; smallest gamma
    /// on ties, 0 when nothing has been visited.
    fn exploit(&self, batch: usize, skip_len: usize, cap: usize) -> usize {
        let mut best: Option<(usize, f64)> = None;
        for gamma in 0..=cap {
            let Ok(score) = self.exploitation_score(batch, self.last_gamma, gamma, skip_len) else {
                continue;
            };
            if best.is_none_or(|(_, s)| score < s) {
                best = Some((gamma, score));
            }
        }
        best.map_or(0, |(g, _)| g)
    }

    /// Chooses the speculative length for the next step. Panics if the batch
    /// size is outside `1..=batch_max`.
    pub fn select_gamma(&mut self, batch: usize, skip_len: usize, rng: &mut dyn RngCore) -> Choice {
        self.check_batch(batch).expect("batch size within policy range");
        let cap = self.arm_cap.max_gamma(batch, self.gamma_max);
        let h = &mut self.per_batch[batch - 1];
        let bin = match h.bin_type {
            Some(t) => t,
            None => {
                let p = 1.0 / (h.bin_index as f64).sqrt();
                let t = if rng.gen::<f64>() < p { BinType::Exploration } else { BinType::Exploitation };
                h.bin_type = Some(t);
                t
            }
        };
        match bin {
            BinType::Exploration => Choice { gamma: rng.gen_range(0..=cap), explore: true },
            BinType::Exploitation => Choice::exploit(self.exploit(batch, skip_len, cap)),
        }
    }

    /// Records the goodput of the step just played and advances the schedule
    /// of that batch size.
    pub fn observe_reward(&mut self, batch: usize, gamma: usize, reward: f64) -> Result<()> {
        self.check_batch(batch)?;
        if gamma > self.gamma_max {
            return Err(Error::GammaOutOfRange { gamma, gamma_max: self.gamma_max });
        }
        check_reward(reward)?;
        let h = &mut self.per_batch[batch - 1];
        h.arms[gamma].record(reward);
        h.round += 1;
        h.advance();
        self.last_gamma = gamma;
        Ok(())
    }

    /// Median wall-clock time of `select_gamma` on a copy of this state.
    pub fn decision_latency_probe(
        &self,
        batch: usize,
        skip_len: usize,
        rng: &mut dyn RngCore,
        iterations: usize,
    ) -> Result<ProbeReport> {
        if iterations < 1000 {
            return Err(Error::InvalidConfig(format!("probe needs at least 1000 iterations, got {iterations}")));
        }
        self.check_batch(batch)?;
        let mut scratch = self.clone();
        let mut times = Vec::with_capacity(iterations);
        let mut selections = Vec::with_capacity(iterations);
        for _ in 0..iterations {
            let start = Instant::now();
            let choice = scratch.select_gamma(batch, skip_len, rng);
            times.push(start.elapsed().as_secs_f64());
            selections.push(choice.gamma);
        }
        times.sort_by(f64::total_cmp);
        Ok(ProbeReport { median_seconds: times[times.len() / 2], selections })
    }
}

impl SpeculationPolicy for NightjarPolicy {
    fn name(&self) -> String {
        "nightjar".into()
    }

    fn select(&mut self, ctx: &mut SelectionContext<'_>) -> Choice {
        self.select_gamma(ctx.batch_size, ctx.skip_len, ctx.rng)
    }

    fn observe(&mut self, feedback: &Feedback) -> Result<()> {
        self.observe_reward(feedback.batch_size, feedback.gamma, feedback.reward)
    }
}
