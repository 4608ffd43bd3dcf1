//! A model-based policy whose acceptance estimate starts at zero never tries
//! speculation and so never learns otherwise. Nightjar's exploration bins
//! break the loop.

use std::sync::Arc;

use nightjar::baselines::DsdLike;
use nightjar::cost_model::{best_gamma, CostModelParams, PrefillCostTable};
use nightjar::nightjar::NightjarPolicy;
use nightjar::sim::run_fixed_batch;

fn main() -> nightjar::Result<()> {
    let params = CostModelParams::preset("7b-4090-like").unwrap();
    let table = Arc::new(PrefillCostTable::reference_7b());
    let (batch, steps) = (1, 50_000);
    let (oracle, _) = best_gamma(&params, batch, 5);

    let mut dsd = DsdLike::new(params.clone(), 5, 0.05, 0.0);
    let dsd_steps = run_fixed_batch(&mut dsd, batch, 5, steps, 1, &params, &table)?;
    let dsd_spec = dsd_steps.iter().filter(|s| s.gamma > 0).count();
    println!("dsd-like: {dsd_spec} speculative steps out of {steps}, alpha estimate {}", dsd.running_alpha());

    let mut nj = NightjarPolicy::new(5, batch, table.clone())?;
    let nj_steps = run_fixed_batch(&mut nj, batch, 5, steps, 1, &params, &table)?;
    let tail: Vec<_> = nj_steps[steps as usize * 9 / 10..].iter().filter(|s| !s.explore).collect();
    let hits = tail.iter().filter(|s| s.gamma == oracle).count();
    println!("nightjar: oracle arm {oracle} chosen in {hits}/{} late exploitation steps", tail.len());
    Ok(())
}
