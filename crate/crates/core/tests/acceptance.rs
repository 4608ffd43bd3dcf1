//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any fails.

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nightjar::baselines::DsdLike;
use nightjar::config::ExperimentConfig;
use nightjar::cost_model::{best_gamma, expected_tokens, sample_accepted, CostModelParams, PrefillCostTable};
use nightjar::nightjar::NightjarPolicy;
use nightjar::report::{cmd_run, cmd_sweep};
use nightjar::sim::{pseudo_regret, run_fixed_batch, StepOutcome};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn table() -> Arc<PrefillCostTable> {
    Arc::new(PrefillCostTable::reference_7b())
}

fn within(elapsed: Duration, limit_s: f64, detail: String) -> Verdict {
    if elapsed.as_secs_f64() < limit_s {
        Ok(format!("{detail}; {:.2} s", elapsed.as_secs_f64()))
    } else {
        Err(format!("{detail}; took {:.2} s, limit {limit_s} s", elapsed.as_secs_f64()))
    }
}

fn mean_exactness() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let len = rng.gen_range(1..=10_000);
        let scale = 10f64.powf(rng.gen_range(-2.0..5.0));
        let rewards: Vec<f64> = (0..len).map(|_| rng.gen::<f64>() * scale).collect();
        let mut p = NightjarPolicy::new(1, 1, table()).unwrap();
        for &r in &rewards {
            p.observe_reward(1, 1, r).unwrap();
        }
        let exact = rewards.iter().sum::<f64>() / len as f64;
        let got = p.hierarchy(1).unwrap().arms[1].mean_goodput;
        worst = worst.max((got - exact).abs() / exact);
    }
    let detail = format!("worst relative error {worst:.2e} over 1000 sequences");
    if worst > 1e-9 {
        return Err(detail);
    }
    within(start.elapsed(), 5.0, detail)
}

fn schedule_oracle() -> Verdict {
    let start = Instant::now();
    let batches = [1usize, 3, 8, 17, 64];
    let mut p = NightjarPolicy::new(5, 64, table()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for &b in &batches {
        // j, H, b, tau of Algorithm 1, advanced with real-valued comparisons.
        let (mut j, mut h, mut bin, mut tau) = (1u32, 1f64, 1u64, 1u64);
        let mut plays_in_bin = 0u64;
        for play in 0..100_000u64 {
            let gamma = rng.gen_range(0..=5);
            p.observe_reward(b, gamma, rng.gen::<f64>() * 1000.0).unwrap();
            plays_in_bin += 1;
            tau += 1;
            if tau as f64 > h.sqrt() {
                if plays_in_bin != h.sqrt().floor() as u64 {
                    return Err(format!("B={b} play {play}: bin held {plays_in_bin} plays at H={h}"));
                }
                plays_in_bin = 0;
                bin += 1;
                tau = 1;
                if bin as f64 > h.sqrt() {
                    j += 1;
                    h = 2f64.powi(j as i32 - 1);
                    bin = 1;
                }
            }
            let s = p.hierarchy(b).unwrap();
            if (s.block_index, s.block_size, s.bin_index, s.round) != (j, h as u64, bin, tau) {
                return Err(format!(
                    "B={b} play {play}: policy {:?} vs trace {:?}",
                    (s.block_index, s.block_size, s.bin_index, s.round),
                    (j, h, bin, tau)
                ));
            }
            if s.block_size != 1u64 << (s.block_index - 1) {
                return Err(format!("B={b}: H != 2^(j-1)"));
            }
        }
    }
    within(start.elapsed(), 10.0, "10^5 plays at 5 batch sizes agree with the counter trace".into())
}

fn objective_examples() -> Verdict {
    let check = |name: &str, got: f64, want: f64| -> Result<(), String> {
        if (got - want).abs() <= 1e-12 {
            Ok(())
        } else {
            Err(format!("{name}: {got} vs {want}"))
        }
    };
    // A one-cell table that charges 20 ms for any lag.
    let flat = Arc::new(PrefillCostTable::from_rows([(4096, 256, 20.0)]).unwrap());
    let mut p = NightjarPolicy::new(3, 4, flat).unwrap();
    p.observe_reward(4, 1, 1500.0).unwrap();
    p.observe_reward(4, 2, 1800.0).unwrap();
    p.observe_reward(4, 0, 1000.0).unwrap();
    check("indicator off", p.exploitation_score(4, 2, 1, 100).map_err(|e| e.to_string())?, 1.0 / 1500.0)?;
    check("indicator on", p.exploitation_score(4, 0, 2, 100).map_err(|e| e.to_string())?, 1.0 / 1800.0 + 0.02 / 2.0)?;
    check("gamma 0 candidate", p.exploitation_score(4, 0, 0, 100).map_err(|e| e.to_string())?, 1.0 / 1000.0)?;
    check(
        "gamma 0 candidate after spec",
        p.exploitation_score(4, 3, 0, 100).map_err(|e| e.to_string())?,
        1.0 / 1000.0,
    )?;

    // Selection example: means {1000, 1500, 1800, 1700}, previous gamma 2.
    let mut p = NightjarPolicy::new(3, 1, table()).unwrap();
    let means = [1000.0, 1500.0, 1800.0, 1700.0];
    for g in [0, 1, 3, 2] {
        p.observe_reward(1, g, means[g]).unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut exploit_seen = 0;
    for _ in 0..5000 {
        let c = p.select_gamma(1, 0, &mut rng);
        if !c.explore {
            exploit_seen += 1;
            if c.gamma != 2 {
                return Err(format!("exploitation picked {} instead of 2", c.gamma));
            }
        }
        p.observe_reward(1, c.gamma, means[c.gamma]).unwrap();
    }

    // Tie between gamma 1 and 2 goes to 1.
    let mut p = NightjarPolicy::new(2, 1, table()).unwrap();
    let means = [500.0, 1200.0, 1200.0];
    for g in [0, 2, 1] {
        p.observe_reward(1, g, means[g]).unwrap();
    }
    let mut tie_seen = 0;
    for _ in 0..5000 {
        let c = p.select_gamma(1, 0, &mut rng);
        if !c.explore {
            tie_seen += 1;
            if c.gamma != 1 {
                return Err(format!("tie broken towards {}", c.gamma));
            }
        }
        p.observe_reward(1, c.gamma, means[c.gamma]).unwrap();
    }
    if exploit_seen == 0 || tie_seen == 0 {
        return Err("no exploitation bin reached".into());
    }
    Ok(format!("hand values to 1e-12; argmin 2 in {exploit_seen} and tie-break 1 in {tie_seen} exploitation steps"))
}

fn table_fidelity() -> Verdict {
    let t = PrefillCostTable::reference_7b();
    let grid: [(usize, usize, f64); 6] =
        [(128, 32, 17.87), (128, 64, 28.53), (256, 32, 20.65), (256, 64, 22.33), (512, 32, 24.30), (512, 64, 102.03)];
    for (l, b, ms) in grid {
        let s = t.prefill_cost(l, b);
        if s.to_bits() != (ms / 1000.0).to_bits() || t.cost_ms(l, b).to_bits() != ms.to_bits() {
            return Err(format!("({l}, {b}) -> {s}"));
        }
    }
    let csv = PrefillCostTable::from_csv_path(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/reference_prefill_7b.csv"),
    )
    .map_err(|e| e.to_string())?;
    if csv != t {
        return Err("fixture CSV differs from the built-in table".into());
    }
    let off_grid = [
        ((200, 40), 22.33),
        ((1, 1), 17.87),
        ((129, 33), 22.33),
        ((600, 10), 24.30),
        ((5000, 500), 102.03),
        ((0, 64), 0.0),
    ];
    for ((l, b), ms) in off_grid {
        if t.cost_ms(l, b) != ms {
            return Err(format!("off-grid ({l}, {b}) -> {} ms, want {ms}", t.cost_ms(l, b)));
        }
    }
    Ok("six entries bit-exact, ceiling-with-clamp on off-grid queries".into())
}

fn acceptance_model() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 1_000_000u64;
    let mut worst_z = 0.0f64;
    for alpha in [0.2, 0.5, 0.8, 0.95] {
        for gamma in 1..=5 {
            let (mut sum, mut sum_sq) = (0u64, 0u64);
            for _ in 0..n {
                let x = sample_accepted(&mut rng, alpha, gamma) as u64 + 1;
                sum += x;
                sum_sq += x * x;
            }
            let mean = sum as f64 / n as f64;
            let var = (sum_sq as f64 - n as f64 * mean * mean) / (n - 1) as f64;
            let z = (mean - expected_tokens(alpha, gamma)).abs() / (var / n as f64).sqrt();
            worst_z = worst_z.max(z);
            if z > 3.0 {
                return Err(format!("alpha {alpha} gamma {gamma}: {z:.2} sigma"));
            }
        }
    }
    within(start.elapsed(), 60.0, format!("20 cells, worst deviation {worst_z:.2} sigma"))
}

fn exploit_hit_rate(steps: &[StepOutcome], gamma: usize) -> f64 {
    let tail = &steps[steps.len() * 9 / 10..];
    let exploit: Vec<_> = tail.iter().filter(|s| !s.explore).collect();
    exploit.iter().filter(|s| s.gamma == gamma).count() as f64 / exploit.len().max(1) as f64
}

fn convergence(preset: &str, batch: usize, want_spec: bool) -> Verdict {
    let start = Instant::now();
    let params = CostModelParams::preset(preset).unwrap();
    let t = table();
    let (star, _) = best_gamma(&params, batch, 5);
    if want_spec != (star > 0) {
        return Err(format!("{preset} at B={batch} has oracle arm {star}"));
    }
    let mut rates = Vec::new();
    for seed in 0..5 {
        let mut p = NightjarPolicy::new(5, batch, t.clone()).unwrap();
        let steps = run_fixed_batch(&mut p, batch, 5, 50_000, seed, &params, &t).map_err(|e| e.to_string())?;
        rates.push(exploit_hit_rate(&steps, star));
    }
    let detail = format!("{preset} B={batch} oracle arm {star}: late exploitation hit rates {rates:.3?}");
    if rates.iter().any(|&r| r < 0.95) {
        return Err(detail);
    }
    within(start.elapsed(), 120.0, detail)
}

fn regret_sublinearity() -> Verdict {
    let params = CostModelParams::preset("7b-4090-like").unwrap();
    let t = table();
    let n = 50_000usize;
    let k = n / 10;
    let mut ratios = Vec::new();
    for seed in 0..5 {
        let mut p = NightjarPolicy::new(5, 1, t.clone()).unwrap();
        let steps = run_fixed_batch(&mut p, 1, 5, n as u64, seed, &params, &t).map_err(|e| e.to_string())?;
        let r = pseudo_regret(&steps);
        let early = r[k - 1] / k as f64;
        let late = (r[n - 1] - r[n - 1 - k]) / k as f64;
        ratios.push(late / early);
    }
    let detail = format!("late/early regret-rate ratios {ratios:.3?} (need < 0.10)");
    if ratios.iter().all(|&r| r < 0.10) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn crossover() -> Verdict {
    let start = Instant::now();
    let exp = ExperimentConfig::load(Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/sweep_7b.json"))
        .map_err(|e| e.to_string())?;
    if exp.config.seeds.len() != 5 {
        return Err("sweep config must list 5 seeds".into());
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let sweep = cmd_sweep(&exp, None, dir.path()).map_err(|e| e.to_string())?;
    let fg3 = sweep.throughput_curve("fixed_gamma_3");
    let ns = sweep.throughput_curve("no_spec");
    let nj = sweep.throughput_curve("nightjar");
    let (first, last) = (0, fg3.len() - 1);
    if fg3[first].1 <= ns[first].1 {
        return Err(format!("FixedGamma(3) does not beat NoSpec at {} qps", fg3[first].0));
    }
    if fg3[last].1 >= ns[last].1 {
        return Err(format!("FixedGamma(3) does not lose to NoSpec at {} qps", fg3[last].0));
    }
    let ratios: Vec<f64> = (0..fg3.len()).map(|i| nj[i].1 / fg3[i].1.max(ns[i].1)).collect();
    let detail = format!(
        "crossover in {:?} qps; nightjar / best static {:.3?}",
        sweep.crossover("fixed_gamma_3", "no_spec").unwrap_or_default(),
        ratios
    );
    if ratios.iter().any(|&r| r < 0.97) {
        return Err(detail);
    }
    within(start.elapsed(), 300.0, detail)
}

fn deadlock_escape() -> Verdict {
    let params = CostModelParams::preset("7b-4090-like").unwrap();
    let t = table();
    let (star, _) = best_gamma(&params, 1, 5);
    let mut detail = Vec::new();
    for seed in 0..5 {
        let mut dsd = DsdLike::new(params.clone(), 5, 0.05, 0.0);
        let locked = run_fixed_batch(&mut dsd, 1, 5, 50_000, seed, &params, &t).map_err(|e| e.to_string())?;
        if locked.iter().any(|s| s.gamma > 0) {
            return Err(format!("seed {seed}: the dsd-like baseline did not lock at gamma 0"));
        }
        let mut nj = NightjarPolicy::new(5, 1, t.clone()).unwrap();
        let steps = run_fixed_batch(&mut nj, 1, 5, 50_000, seed, &params, &t).map_err(|e| e.to_string())?;
        let first_spec = steps.iter().position(|s| s.gamma > 0);
        let hit = exploit_hit_rate(&steps, star);
        if first_spec.is_none() || hit < 0.95 {
            return Err(format!("seed {seed}: nightjar hit rate {hit:.3}"));
        }
        detail.push(hit);
    }
    Ok(format!("dsd-like stays at gamma 0; nightjar reaches arm {star} with hit rates {detail:.3?}"))
}

fn policy_overhead() -> Verdict {
    let t = table();
    let mut p = NightjarPolicy::new(5, 64, t).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20_000 {
        let b = rng.gen_range(1..=64);
        let c = p.select_gamma(b, 0, &mut rng);
        p.observe_reward(b, c.gamma, rng.gen_range(100.0..3000.0)).unwrap();
    }
    let probe = p.decision_latency_probe(32, 300, &mut rng, 10_000).map_err(|e| e.to_string())?;
    let detail = format!("median select_gamma {:.2e} s", probe.median_seconds);
    if probe.median_seconds > 0.0 && probe.median_seconds < 1e-5 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn determinism() -> Verdict {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/compare_7b.json");
    let mut exp = ExperimentConfig::load(&path).map_err(|e| e.to_string())?;
    exp.config.policies.truncate(1);
    exp.config.seeds = vec![7];
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    cmd_run(&exp, a.path()).map_err(|e| e.to_string())?;
    cmd_run(&exp, b.path()).map_err(|e| e.to_string())?;
    for file in ["summary.json", "steps.csv", "requests.csv"] {
        let x = std::fs::read(a.path().join(file)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.path().join(file)).map_err(|e| e.to_string())?;
        if x != y {
            return Err(format!("{file} differs between runs"));
        }
    }
    Ok("summary.json, steps.csv and requests.csv byte-identical".into())
}

fn main() {
    let criteria: [Criterion; 12] = [
        ("mean-update exactness", mean_exactness),
        ("hierarchy schedule oracle", schedule_oracle),
        ("exploitation objective", objective_examples),
        ("prefill table fidelity", table_fidelity),
        ("acceptance-model consistency", acceptance_model),
        ("convergence, memory-bound", || convergence("7b-4090-like", 1, true)),
        ("convergence, compute-bound", || convergence("compute-bound", 8, false)),
        ("regret sublinearity", regret_sublinearity),
        ("crossover reproduction", crossover),
        ("decision-deadlock escape", deadlock_escape),
        ("policy overhead", policy_overhead),
        ("determinism", determinism),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let verdict = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match verdict {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} of 12 criteria passed", 12 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
