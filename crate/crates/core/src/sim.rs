//! Discrete-event simulator of continuous-batching speculative decoding.
//!
//! Time advances only by step latencies and by idle jumps to the next
//! arrival. Each step: admit arrivals, top the running batch up FIFO, ask the
//! policy for one speculative length for the whole batch, sample acceptance,
//! charge latency, feed the realized goodput back, retire finished requests.

use std::collections::VecDeque;
use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::cost_model::{
    best_gamma, expected_goodput, forward_latency, sample_accepted, step_latency, CostModelParams, ModelRole,
    PrefillCostTable,
};
use crate::error::{Error, Result};
use crate::policy::{Feedback, SelectionContext, SpeculationPolicy};

/// One inference request and its lifecycle timestamps.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Request {
    pub id: u64,
    pub arrival_time: f64,
    pub prompt_len: u32,
    pub output_budget: u32,
    pub generated: u32,
    /// Target tokens the draft model has not seen yet.
    pub skip_len: u32,
    pub admit_time: Option<f64>,
    pub first_token_time: Option<f64>,
    pub finish_time: Option<f64>,
    /// Per-request acceptance rate, when drawn from a prior.
    pub alpha: Option<f64>,
}

impl Request {
    pub fn new(id: u64, arrival_time: f64, prompt_len: u32, output_budget: u32) -> Self {
        Self {
            id,
            arrival_time,
            prompt_len,
            output_budget,
            generated: 0,
            // the draft has not encoded the prompt yet
            skip_len: prompt_len,
            admit_time: None,
            first_token_time: None,
            finish_time: None,
            alpha: None,
        }
    }

    pub fn remaining(&self) -> u32 {
        self.output_budget - self.generated
    }

    pub fn e2e_latency(&self) -> Option<f64> {
        self.finish_time.map(|f| f - self.arrival_time)
    }
}

/// Record of one decoding step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepOutcome {
    pub step: u64,
    /// Simulated time at the start of the step.
    pub sim_time: f64,
    pub batch_size: usize,
    pub gamma: usize,
    /// Speculation was re-enabled this step after a `gamma = 0` step.
    pub switched: bool,
    /// The policy drew this length in an exploration phase.
    pub explore: bool,
    pub accepted_total: u64,
    pub bonus_total: u64,
    pub step_latency: f64,
    /// Realized goodput, tokens per second.
    pub reward: f64,
    /// Expected goodput of the best length at this batch size.
    pub oracle_expected_goodput: f64,
    /// Expected goodput of the chosen length at this batch size.
    pub expected_goodput: f64,
}

impl StepOutcome {
    pub fn tokens(&self) -> u64 {
        self.accepted_total + self.bonus_total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    /// Admit only the first `n` requests of the workload.
    Requests(usize),
    /// Admit only requests arriving at or before this time.
    Seconds(f64),
}

fn default_queue_cap() -> usize {
    100_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub batch_max: usize,
    pub gamma_max: usize,
    /// Caps `B * (gamma_max + 1)` per step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_budget: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub warmup_steps: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<Horizon>,
    /// Waiting-queue length treated as overload.
    #[serde(default = "default_queue_cap")]
    pub queue_cap: usize,
    /// Hard stop after this many steps, finished or not.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<u64>,
}

impl SimConfig {
    pub fn new(batch_max: usize, gamma_max: usize) -> Self {
        Self {
            batch_max,
            gamma_max,
            token_budget: None,
            seed: 0,
            warmup_steps: 0,
            horizon: None,
            queue_cap: default_queue_cap(),
            max_steps: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_max == 0 || self.gamma_max == 0 {
            return Err(Error::InvalidConfig("batch_max and gamma_max must be at least 1".into()));
        }
        if let Some(budget) = self.token_budget {
            if budget < self.gamma_max + 1 {
                return Err(Error::InvalidConfig(format!(
                    "token_budget {budget} cannot fit a single sequence at gamma_max {}",
                    self.gamma_max
                )));
            }
        }
        match self.horizon {
            Some(Horizon::Requests(0)) => Err(Error::InvalidConfig("horizon must be positive".into())),
            Some(Horizon::Seconds(s)) if !(s > 0.0) => Err(Error::InvalidConfig("horizon must be positive".into())),
            _ => Ok(()),
        }
    }

    /// Largest batch the engine may run.
    pub fn batch_limit(&self) -> usize {
        match self.token_budget {
            Some(budget) => self.batch_max.min(budget / (self.gamma_max + 1)),
            None => self.batch_max,
        }
    }
}

/// Tops up `running` from the front of `waiting` (FIFO) and returns how many
/// requests were admitted. Admitted requests are appended at the end.
pub fn form_batch(waiting: &mut VecDeque<Request>, running: &mut Vec<Request>, config: &SimConfig) -> usize {
    let limit = config.batch_limit();
    let mut admitted = 0;
    while running.len() < limit {
        let Some(req) = waiting.pop_front() else { break };
        running.push(req);
        admitted += 1;
    }
    admitted
}

/// Inputs of a single step besides the batch itself.
pub struct StepInput<'a> {
    pub step: u64,
    pub sim_time: f64,
    pub gamma: usize,
    pub prev_gamma: usize,
    /// Number of requests at the tail of the batch admitted this step.
    pub fresh: usize,
    pub explore: bool,
    pub gamma_max: usize,
    pub params: &'a CostModelParams,
    pub table: &'a PrefillCostTable,
}

/// Executes one step on `batch`, crediting tokens and updating draft lag.
pub fn execute_step<R: Rng + ?Sized>(
    batch: &mut [Request],
    input: &StepInput<'_>,
    rng: &mut R,
) -> (StepOutcome, Feedback) {
    assert!(!batch.is_empty(), "execute_step needs a nonempty batch");
    let b = batch.len();
    let gamma = input.gamma;
    let params = input.params;
    let switched = input.prev_gamma == 0 && gamma > 0;
    let fresh_start = b - input.fresh;

    let mut extra = 0.0;
    for r in &batch[fresh_start..] {
        extra += forward_latency(params, 1, r.prompt_len as usize, ModelRole::Target);
    }
    let switch_cost = if switched {
        let l_max = batch.iter().map(|r| r.skip_len as usize).max().unwrap_or(0);
        Some(input.table.prefill_cost(l_max, b))
    } else {
        if gamma > 0 {
            for r in &batch[fresh_start..] {
                extra += forward_latency(params, 1, r.prompt_len as usize, ModelRole::Draft);
            }
        }
        None
    };
    let latency = step_latency(params, b, gamma, switch_cost).expect("switch only into gamma > 0") + extra;

    let (mut accepted_total, mut bonus_total) = (0u64, 0u64);
    let (mut raw_accepted, mut rejected) = (0usize, 0usize);
    for r in batch.iter_mut() {
        let credited = if gamma > 0 {
            let a = sample_accepted(rng, r.alpha.unwrap_or(params.alpha), gamma);
            raw_accepted += a;
            rejected += usize::from(a < gamma);
            r.skip_len = 0;
            (a as u32 + 1).min(r.remaining())
        } else {
            r.skip_len += 1;
            1
        };
        if r.generated == 0 {
            r.first_token_time = Some(input.sim_time + latency);
        }
        r.generated += credited;
        accepted_total += u64::from(credited - 1);
        bonus_total += 1;
    }
    let reward = (accepted_total + bonus_total) as f64 / latency;
    let outcome = StepOutcome {
        step: input.step,
        sim_time: input.sim_time,
        batch_size: b,
        gamma,
        switched,
        explore: input.explore,
        accepted_total,
        bonus_total,
        step_latency: latency,
        reward,
        oracle_expected_goodput: best_gamma(params, b, input.gamma_max).1,
        expected_goodput: expected_goodput(params, b, gamma),
    };
    let feedback = Feedback { batch_size: b, gamma, reward, accepted: raw_accepted, rejected };
    (outcome, feedback)
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub steps: Vec<StepOutcome>,
    /// Finished requests ordered by id.
    pub completed: Vec<Request>,
    /// Requests still queued or running when a step cap stopped the run.
    pub unfinished: usize,
    /// Identifies the admitted arrival stream.
    pub workload_fingerprint: u64,
}

/// FNV-1a over arrival times and lengths.
pub fn workload_fingerprint(requests: &[Request]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &byte in bytes {
            h ^= u64::from(byte);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    for r in requests {
        eat(&r.id.to_le_bytes());
        eat(&r.arrival_time.to_bits().to_le_bytes());
        eat(&r.prompt_len.to_le_bytes());
        eat(&r.output_budget.to_le_bytes());
    }
    h
}

/// Runs `policy` over `workload` until every admitted request finishes (or
/// `max_steps` is hit).
pub fn run(
    config: &SimConfig,
    policy: &mut dyn SpeculationPolicy,
    workload: &[Request],
    params: &CostModelParams,
    table: &PrefillCostTable,
) -> Result<SimOutput> {
    config.validate()?;
    params.validate()?;
    if workload.is_empty() {
        return Err(Error::Workload("workload is empty".into()));
    }
    let mut pending: Vec<Request> = workload.to_vec();
    pending.sort_by(|a, b| a.arrival_time.total_cmp(&b.arrival_time).then(a.id.cmp(&b.id)));
    match config.horizon {
        Some(Horizon::Requests(n)) => pending.truncate(n),
        Some(Horizon::Seconds(s)) => pending.retain(|r| r.arrival_time <= s),
        None => {}
    }
    if pending.is_empty() {
        return Err(Error::Workload("no request arrives within the horizon".into()));
    }
    let fingerprint = workload_fingerprint(&pending);
    let mut pending: VecDeque<Request> = pending.into();

    let mut sim_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut policy_rng = ChaCha8Rng::seed_from_u64(config.seed);
    policy_rng.set_stream(1);
    let alpha_prior = params
        .per_request_alpha
        .map(|p| Beta::new(p.a, p.b).map_err(|e| Error::InvalidConfig(format!("per_request_alpha: {e}"))))
        .transpose()?;

    let mut waiting: VecDeque<Request> = VecDeque::new();
    let mut running: Vec<Request> = Vec::new();
    let mut completed = Vec::new();
    let mut steps = Vec::new();
    let mut time = 0.0_f64;
    let mut last_gamma = 0usize;

    loop {
        while pending.front().is_some_and(|r| r.arrival_time <= time) {
            waiting.push_back(pending.pop_front().unwrap());
        }
        if waiting.len() > config.queue_cap {
            return Err(Error::Overload { queued: waiting.len(), cap: config.queue_cap, sim_time: time });
        }
        if config.max_steps.is_some_and(|m| steps.len() as u64 >= m) {
            break;
        }
        let fresh = form_batch(&mut waiting, &mut running, config);
        if running.is_empty() {
            match pending.front() {
                Some(next) => {
                    time = time.max(next.arrival_time);
                    continue;
                }
                None => break,
            }
        }
        let b = running.len();
        for r in &mut running[b - fresh..] {
            r.admit_time = Some(time);
            if let Some(prior) = &alpha_prior {
                r.alpha = Some(prior.sample(&mut sim_rng));
            }
        }

        let skip_len = if last_gamma > 0 { 0 } else { running.iter().map(|r| r.skip_len as usize).max().unwrap_or(0) };
        let choice = policy.select(&mut SelectionContext { batch_size: b, skip_len, rng: &mut policy_rng });
        if choice.gamma > config.gamma_max {
            return Err(Error::GammaOutOfRange { gamma: choice.gamma, gamma_max: config.gamma_max });
        }
        let input = StepInput {
            step: steps.len() as u64,
            sim_time: time,
            gamma: choice.gamma,
            prev_gamma: last_gamma,
            fresh,
            explore: choice.explore,
            gamma_max: config.gamma_max,
            params,
            table,
        };
        let (outcome, feedback) = execute_step(&mut running, &input, &mut sim_rng);
        time += outcome.step_latency;
        last_gamma = choice.gamma;
        policy.observe(&feedback)?;
        steps.push(outcome);

        let mut i = 0;
        while i < running.len() {
            if running[i].remaining() == 0 {
                let mut done = running.remove(i);
                done.finish_time = Some(time);
                completed.push(done);
            } else {
                i += 1;
            }
        }
    }

    completed.sort_by_key(|r| r.id);
    Ok(SimOutput {
        steps,
        completed,
        unfinished: pending.len() + waiting.len() + running.len(),
        workload_fingerprint: fingerprint,
    })
}

/// `batch` requests that arrive together and never finish; with
/// `batch_max = batch` every step runs at exactly that batch size.
pub fn saturated_workload(batch: usize, prompt_len: u32) -> Vec<Request> {
    (0..batch as u64).map(|id| Request::new(id, 0.0, prompt_len, u32::MAX / 2)).collect()
}

/// Steady-state bandit environment: `steps` decoding steps at a constant
/// batch size.
pub fn run_fixed_batch(
    policy: &mut dyn SpeculationPolicy,
    batch: usize,
    gamma_max: usize,
    steps: u64,
    seed: u64,
    params: &CostModelParams,
    table: &PrefillCostTable,
) -> Result<Vec<StepOutcome>> {
    let mut config = SimConfig::new(batch, gamma_max);
    config.seed = seed;
    config.max_steps = Some(steps);
    Ok(run(&config, policy, &saturated_workload(batch, 128), params, table)?.steps)
}

/// Builds a fresh policy from its kind and runs it; convenience for sweeps.
pub fn run_kind(
    config: &SimConfig,
    kind: &crate::policy::PolicyKind,
    workload: &[Request],
    params: &CostModelParams,
    table: Arc<PrefillCostTable>,
) -> Result<SimOutput> {
    let mut policy = kind.build(config.gamma_max, config.batch_max, Some(params), table.clone())?;
    run(config, policy.as_mut(), workload, params, &table)
}

/// Cumulative expected-goodput shortfall of the chosen arm against the best
/// arm at each step's batch size.
pub fn pseudo_regret(outcomes: &[StepOutcome]) -> Vec<f64> {
    outcomes
        .iter()
        .scan(0.0, |acc, o| {
            *acc += o.oracle_expected_goodput - o.expected_goodput;
            Some(*acc)
        })
        .collect()
}

/// Same as [`pseudo_regret`] but against realized rewards.
pub fn realized_regret(outcomes: &[StepOutcome]) -> Vec<f64> {
    outcomes
        .iter()
        .scan(0.0, |acc, o| {
            *acc += o.oracle_expected_goodput - o.reward;
            Some(*acc)
        })
        .collect()
}

pub const STEPS_HEADER: &str = "t,sim_time,B,gamma,switched,accepted,bonus,latency_s,reward_tps";
pub const REQUESTS_HEADER: &str =
    "id,arrival_time,prompt_len,output_budget,generated,admit_time,first_token_time,finish_time,e2e_latency_s";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the per-step CSV. `provenance` lines are emitted first as `#` comments.
pub fn write_steps_csv<W: Write>(mut w: W, outcomes: &[StepOutcome], provenance: &[String]) -> Result<()> {
    for line in provenance {
        writeln!(w, "# {line}")?;
    }
    writeln!(w, "{STEPS_HEADER}")?;
    for o in outcomes {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            o.step,
            o.sim_time,
            o.batch_size,
            o.gamma,
            u8::from(o.switched),
            o.accepted_total,
            o.bonus_total,
            o.step_latency,
            o.reward
        )?;
    }
    Ok(())
}

pub fn write_requests_csv<W: Write>(mut w: W, requests: &[Request], provenance: &[String]) -> Result<()> {
    for line in provenance {
        writeln!(w, "# {line}")?;
    }
    writeln!(w, "{REQUESTS_HEADER}")?;
    for r in requests {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.id,
            r.arrival_time,
            r.prompt_len,
            r.output_budget,
            r.generated,
            opt(r.admit_time),
            opt(r.first_token_time),
            opt(r.finish_time),
            opt(r.e2e_latency())
        )?;
    }
    Ok(())
}
