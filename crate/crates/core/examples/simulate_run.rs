//! One simulated serving run: Poisson arrivals, Nightjar choosing the
//! speculative length each step.

use std::sync::Arc;

use nightjar::cost_model::{CostModelParams, PrefillCostTable};
use nightjar::nightjar::NightjarPolicy;
use nightjar::report::summarize;
use nightjar::sim::{run, SimConfig};
use nightjar::workload::{poisson_workload, LengthDistribution};

fn main() -> nightjar::Result<()> {
    let params = CostModelParams::preset("7b-4090-like").unwrap();
    let table = Arc::new(PrefillCostTable::reference_7b());
    let (input, output) = LengthDistribution::preset("sharegpt-like").unwrap();
    let workload = poisson_workload(1.0, 1_500, &input, &output, 3)?;

    let mut config = SimConfig::new(32, 5);
    config.seed = 3;
    config.warmup_steps = 500;
    let mut policy = NightjarPolicy::new(config.gamma_max, config.batch_max, table.clone())?;
    let out = run(&config, &mut policy, &workload, &params, &table)?;

    let m = summarize(&out, config.warmup_steps, config.gamma_max);
    let switches = out.steps.iter().filter(|s| s.switched).count();
    println!("steps            {}", out.steps.len());
    println!("switches         {switches}");
    println!("throughput       {:.1} tokens/s", m.throughput_tps);
    println!("e2e mean/p95     {:.2} s / {:.2} s", m.mean_e2e_s, m.p95_e2e_s);
    println!("gamma histogram  {:?}", m.gamma_histogram);
    println!("exploit only     {:?}", m.exploit_gamma_histogram);
    Ok(())
}
