//! Drives the bandit by hand against a synthetic goodput curve and prints
//! how the schedule and the arm estimates evolve.

use std::sync::Arc;

use nightjar::cost_model::PrefillCostTable;
use nightjar::nightjar::NightjarPolicy;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

// Mean goodput (tokens/s) of each speculative length at the single batch size
// used here; gamma = 3 is best.
const TRUE_GOODPUT: [f64; 4] = [900.0, 1300.0, 1450.0, 1520.0];

fn main() -> nightjar::Result<()> {
    let table = Arc::new(PrefillCostTable::reference_7b());
    let mut policy = NightjarPolicy::new(3, 4, table)?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let batch = 4;

    for t in 1..=20_000u64 {
        let choice = policy.select_gamma(batch, 0, &mut rng);
        let noise = 1.0 + 0.05 * ((t as f64) * 0.37).sin();
        policy.observe_reward(batch, choice.gamma, TRUE_GOODPUT[choice.gamma] * noise)?;
        if t.is_power_of_two() && t >= 1024 {
            let h = policy.hierarchy(batch)?;
            println!(
                "t={t:>6}  block j={} H={} bin={} means={:?}",
                h.block_index,
                h.block_size,
                h.bin_index,
                h.arms.iter().map(|a| a.mean_goodput.round()).collect::<Vec<_>>()
            );
        }
    }

    // The switch term only applies when leaving autoregressive decoding.
    for prev in [0, 2] {
        let scores: Vec<String> =
            (0..=3).map(|g| format!("{:.3e}", policy.exploitation_score(batch, prev, g, 200).unwrap())).collect();
        println!("scores with previous gamma {prev}: {scores:?}");
    }
    println!("{}", policy.snapshot_json());
    Ok(())
}
