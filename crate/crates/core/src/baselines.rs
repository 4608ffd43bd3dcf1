//! Baseline speculative-length policies: tabular epsilon-greedy and UCB1 keyed
//! by batch size, LinUCB with batch size as its context feature, a clairvoyant
//! oracle, and a DSD-style model-based policy that plugs a running acceptance
//! estimate into the latency model.

use rand::Rng;

use crate::cost_model::{expected_goodput, expected_tokens, step_latency, CostModelParams};
use crate::error::Result;
use crate::nightjar::ArmStats;
use crate::policy::{check_reward, Choice, Feedback, SelectionContext, SpeculationPolicy};

fn argmax_visited(arms: &[ArmStats]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (g, a) in arms.iter().enumerate() {
        if a.visits > 0 && best.is_none_or(|(_, m)| a.mean_goodput > m) {
            best = Some((g, a.mean_goodput));
        }
    }
    best.map(|(g, _)| g)
}

/// Epsilon-greedy with one table of arm means per batch size. The exploration
/// rate at the `n`-th play of a batch size is `epsilon / (1 + decay * n)`.
#[derive(Debug, Clone)]
pub struct EpsilonGreedy {
    epsilon: f64,
    decay: f64,
    arms: Vec<Vec<ArmStats>>,
    plays: Vec<u64>,
}

impl EpsilonGreedy {
    pub fn new(gamma_max: usize, batch_max: usize, epsilon: f64, decay: f64) -> Self {
        Self {
            epsilon,
            decay,
            arms: vec![vec![ArmStats::default(); gamma_max + 1]; batch_max],
            plays: vec![0; batch_max],
        }
    }

    pub fn arms(&self, batch: usize) -> &[ArmStats] {
        &self.arms[batch - 1]
    }
}

impl SpeculationPolicy for EpsilonGreedy {
    fn name(&self) -> String {
        "epsilon_greedy".into()
    }

    fn select(&mut self, ctx: &mut SelectionContext<'_>) -> Choice {
        let b = ctx.batch_size - 1;
        let eps = self.epsilon / (1.0 + self.decay * self.plays[b] as f64);
        if ctx.rng.gen::<f64>() < eps {
            return Choice { gamma: ctx.rng.gen_range(0..self.arms[b].len()), explore: true };
        }
        Choice::exploit(argmax_visited(&self.arms[b]).unwrap_or(0))
    }

    fn observe(&mut self, fb: &Feedback) -> Result<()> {
        check_reward(fb.reward)?;
        let b = fb.batch_size - 1;
        self.arms[b][fb.gamma].record(fb.reward);
        self.plays[b] += 1;
        Ok(())
    }
}

/// UCB1 per batch size. Rewards are rescaled by the largest reward seen at
/// that batch size so the bonus constant `c` is unit-free.
#[derive(Debug, Clone)]
pub struct Ucb1 {
    c: f64,
    arms: Vec<Vec<ArmStats>>,
    plays: Vec<u64>,
    max_reward: Vec<f64>,
}

impl Ucb1 {
    pub fn new(gamma_max: usize, batch_max: usize, c: f64) -> Self {
        Self {
            c,
            arms: vec![vec![ArmStats::default(); gamma_max + 1]; batch_max],
            plays: vec![0; batch_max],
            max_reward: vec![0.0; batch_max],
        }
    }

    pub fn arms(&self, batch: usize) -> &[ArmStats] {
        &self.arms[batch - 1]
    }
}

impl SpeculationPolicy for Ucb1 {
    fn name(&self) -> String {
        "ucb1".into()
    }

    fn select(&mut self, ctx: &mut SelectionContext<'_>) -> Choice {
        let b = ctx.batch_size - 1;
        let arms = &self.arms[b];
        if let Some(g) = arms.iter().position(|a| a.visits == 0) {
            return Choice { gamma: g, explore: true };
        }
        let scale = if self.max_reward[b] > 0.0 { self.max_reward[b] } else { 1.0 };
        let ln_t = (self.plays[b] as f64).ln();
        let mut best = (0, f64::NEG_INFINITY);
        for (g, a) in arms.iter().enumerate() {
            let ucb = a.mean_goodput + self.c * scale * (ln_t / a.visits as f64).sqrt();
            if ucb > best.1 {
                best = (g, ucb);
            }
        }
        Choice::exploit(best.0)
    }

    fn observe(&mut self, fb: &Feedback) -> Result<()> {
        check_reward(fb.reward)?;
        let b = fb.batch_size - 1;
        self.arms[b][fb.gamma].record(fb.reward);
        self.plays[b] += 1;
        self.max_reward[b] = self.max_reward[b].max(fb.reward);
        Ok(())
    }
}

type Mat2 = [[f64; 2]; 2];

fn inverse(m: &Mat2) -> Mat2 {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]]
}

fn mat_vec(m: &Mat2, x: [f64; 2]) -> [f64; 2] {
    [m[0][0] * x[0] + m[0][1] * x[1], m[1][0] * x[0] + m[1][1] * x[1]]
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Disjoint LinUCB over the context `[1, B / B_max]`, one ridge model per arm.
#[derive(Debug, Clone)]
pub struct LinUcb {
    alpha: f64,
    batch_max: usize,
    design: Vec<Mat2>,
    response: Vec<[f64; 2]>,
    max_reward: f64,
}

impl LinUcb {
    pub fn new(gamma_max: usize, batch_max: usize, alpha: f64, lambda: f64) -> Self {
        Self {
            alpha,
            batch_max,
            design: vec![[[lambda, 0.0], [0.0, lambda]]; gamma_max + 1],
            response: vec![[0.0; 2]; gamma_max + 1],
            max_reward: 0.0,
        }
    }

    pub fn context(&self, batch: usize) -> [f64; 2] {
        [1.0, batch as f64 / self.batch_max as f64]
    }

    pub fn design_matrix(&self, gamma: usize) -> Mat2 {
        self.design[gamma]
    }

    pub fn response(&self, gamma: usize) -> [f64; 2] {
        self.response[gamma]
    }
}

impl SpeculationPolicy for LinUcb {
    fn name(&self) -> String {
        "linucb".into()
    }

    fn select(&mut self, ctx: &mut SelectionContext<'_>) -> Choice {
        let x = self.context(ctx.batch_size);
        let scale = if self.max_reward > 0.0 { self.max_reward } else { 1.0 };
        let mut best = (0, f64::NEG_INFINITY);
        for (g, (a, b)) in self.design.iter().zip(&self.response).enumerate() {
            let inv = inverse(a);
            let theta = mat_vec(&inv, *b);
            let width = dot(x, mat_vec(&inv, x)).max(0.0).sqrt();
            let p = dot(theta, x) + self.alpha * scale * width;
            if p > best.1 {
                best = (g, p);
            }
        }
        Choice::exploit(best.0)
    }

    fn observe(&mut self, fb: &Feedback) -> Result<()> {
        check_reward(fb.reward)?;
        let x = self.context(fb.batch_size);
        let a = &mut self.design[fb.gamma];
        for i in 0..2 {
            for j in 0..2 {
                a[i][j] += x[i] * x[j];
            }
        }
        let b = &mut self.response[fb.gamma];
        b[0] += fb.reward * x[0];
        b[1] += fb.reward * x[1];
        self.max_reward = self.max_reward.max(fb.reward);
        Ok(())
    }
}

/// Knows the true latency model and acceptance rate; picks the
/// expected-goodput maximizer every step.
#[derive(Debug, Clone)]
pub struct Oracle {
    params: CostModelParams,
    gamma_max: usize,
}

impl Oracle {
    pub fn new(params: CostModelParams, gamma_max: usize) -> Self {
        Self { params, gamma_max }
    }
}

impl SpeculationPolicy for Oracle {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn select(&mut self, ctx: &mut SelectionContext<'_>) -> Choice {
        Choice::exploit(crate::cost_model::best_gamma(&self.params, ctx.batch_size, self.gamma_max).0)
    }

    fn observe(&mut self, fb: &Feedback) -> Result<()> {
        check_reward(fb.reward)
    }
}

/// Goodput the DSD-style policy predicts for `gamma` when it believes the
/// acceptance rate is `running_alpha`.
pub fn dsd_predicted_goodput(running_alpha: f64, batch: usize, gamma: usize, params: &CostModelParams) -> f64 {
    let latency = step_latency(params, batch, gamma, None).expect("no switch prefill");
    batch as f64 * expected_tokens(running_alpha, gamma) / latency
}

/// Model-based policy driven by an exponential moving average of the observed
/// acceptance rate. Steps at `gamma = 0` draft nothing and leave the estimate
/// untouched, so once it settles on 0 it never learns otherwise.
#[derive(Debug, Clone)]
pub struct DsdLike {
    params: CostModelParams,
    gamma_max: usize,
    decay: f64,
    running_alpha: f64,
}

impl DsdLike {
    pub fn new(params: CostModelParams, gamma_max: usize, decay: f64, initial_alpha: f64) -> Self {
        Self { params, gamma_max, decay, running_alpha: initial_alpha }
    }

    pub fn running_alpha(&self) -> f64 {
        self.running_alpha
    }
}

impl SpeculationPolicy for DsdLike {
    fn name(&self) -> String {
        "dsd_like".into()
    }

    fn select(&mut self, ctx: &mut SelectionContext<'_>) -> Choice {
        let mut best = (0, dsd_predicted_goodput(self.running_alpha, ctx.batch_size, 0, &self.params));
        for g in 1..=self.gamma_max {
            let v = dsd_predicted_goodput(self.running_alpha, ctx.batch_size, g, &self.params);
            if v > best.1 {
                best = (g, v);
            }
        }
        Choice::exploit(best.0)
    }

    fn observe(&mut self, fb: &Feedback) -> Result<()> {
        check_reward(fb.reward)?;
        let trials = fb.accepted + fb.rejected;
        if fb.gamma > 0 && trials > 0 {
            // Prefix acceptance: every accepted draft is a success and every
            // truncated sequence contributes exactly one failure.
            let step_alpha = fb.accepted as f64 / trials as f64;
            self.running_alpha += self.decay * (step_alpha - self.running_alpha);
        }
        Ok(())
    }
}

/// Expected-goodput gap between the best arm and `gamma` at `batch`.
pub fn expected_gap(params: &CostModelParams, batch: usize, gamma: usize, gamma_max: usize) -> f64 {
    crate::cost_model::best_gamma(params, batch, gamma_max).1 - expected_goodput(params, batch, gamma)
}
