use nightjar::cost_model::{
    best_gamma, expected_goodput, expected_tokens, forward_latency, sample_accepted, step_latency, CostModelParams,
    ModelRole, PrefillCostTable,
};
use nightjar::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn params(mem: f64, per_token: f64, draft_mem: f64, alpha: f64) -> CostModelParams {
    CostModelParams {
        target_mem_time: mem,
        target_compute_per_token: per_token,
        draft_mem_time: draft_mem,
        draft_compute_per_token: per_token / 50.0,
        fixed_overhead: 0.0,
        alpha,
        per_request_alpha: None,
    }
}

// Brute-force goodput straight from the definitions, summing the geometric
// series term by term.
fn goodput_by_hand(p: &CostModelParams, b: usize, g: usize) -> f64 {
    let fwd = |mem: f64, per: f64, k: usize| p.fixed_overhead + mem.max(per * (b * k) as f64);
    let latency = if g == 0 {
        fwd(p.target_mem_time, p.target_compute_per_token, 1)
    } else {
        g as f64 * fwd(p.draft_mem_time, p.draft_compute_per_token, 1)
            + fwd(p.target_mem_time, p.target_compute_per_token, g + 1)
    };
    let tokens: f64 = (0..=g).map(|i| p.alpha.powi(i as i32)).sum();
    b as f64 * tokens / latency
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[test]
fn forward_latency_examples() {
    let p = CostModelParams { fixed_overhead: 0.001, ..params(0.005, 1e-5, 0.001, 0.5) };
    assert!((forward_latency(&p, 1, 1, ModelRole::Target) - 0.006).abs() < 1e-15);
    assert!((forward_latency(&p, 1000, 1, ModelRole::Target) - 0.011).abs() < 1e-15);
    assert_eq!(forward_latency(&p, 500, 1, ModelRole::Target), forward_latency(&p, 250, 1, ModelRole::Target));
}

#[test]
fn memory_bound_example_has_interior_optimum() {
    let p = params(0.030, 2e-5, 0.002, 0.8);
    let by_hand: Vec<f64> = (0..=5).map(|g| goodput_by_hand(&p, 4, g)).collect();
    let star = argmax(&by_hand);
    assert!(star > 0);
    assert_eq!(best_gamma(&p, 4, 5).0, star);
    for (g, want) in by_hand.iter().enumerate() {
        assert!((expected_goodput(&p, 4, g) - want).abs() <= 1e-9 * want);
    }
}

#[test]
fn compute_bound_example_disables_speculation() {
    let p = params(0.004, 1e-3, 0.001, 0.6);
    let by_hand: Vec<f64> = (0..=5).map(|g| goodput_by_hand(&p, 64, g)).collect();
    assert_eq!(argmax(&by_hand), 0);
    assert_eq!(best_gamma(&p, 64, 5).0, 0);
}

#[test]
fn presets_agree_with_brute_force() {
    for name in CostModelParams::PRESETS {
        let p = CostModelParams::preset(name).unwrap();
        for b in [1, 2, 4, 8, 16, 32, 64] {
            let by_hand: Vec<f64> = (0..=5).map(|g| goodput_by_hand(&p, b, g)).collect();
            assert_eq!(best_gamma(&p, b, 5).0, argmax(&by_hand), "{name} B={b}");
        }
    }
}

#[test]
fn expected_tokens_examples() {
    assert_eq!(expected_tokens(0.0, 4), 1.0);
    assert_eq!(expected_tokens(1.0, 3), 4.0);
    assert!((expected_tokens(0.8, 3) - 2.952).abs() < 1e-12);
}

#[test]
fn sampled_tokens_track_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let n = 200_000;
    for &(alpha, gamma) in &[(0.3, 2), (0.8, 3), (0.9, 5)] {
        let draws: Vec<f64> = (0..n).map(|_| (sample_accepted(&mut rng, alpha, gamma) + 1) as f64).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let sigma = (var / n as f64).sqrt();
        assert!((mean - expected_tokens(alpha, gamma)).abs() < 4.0 * sigma, "alpha {alpha} gamma {gamma}");
    }
}

#[test]
fn step_latency_rejects_switch_into_autoregressive() {
    let p = CostModelParams::preset("7b-4090-like").unwrap();
    assert!(matches!(step_latency(&p, 4, 0, Some(0.01)), Err(Error::SwitchIntoAutoregressive)));
}

#[test]
fn table_examples() {
    let t = PrefillCostTable::reference_7b();
    assert_eq!(t.prefill_cost(128, 32), 17.87 / 1000.0);
    assert_eq!(t.prefill_cost(512, 64), 102.03 / 1000.0);
    assert_eq!(t.cost_ms(200, 40), 22.33);
    assert_eq!(t.prefill_cost(0, 64), 0.0);
}

#[test]
fn table_csv_problems_are_reported() {
    let bad_header = "len,batch,ms\n128,32,1.0\n";
    assert!(matches!(PrefillCostTable::from_csv_reader(bad_header.as_bytes()), Err(Error::PrefillTable(_))));
    let hole = "input_len,batch_size,cost_ms\n128,32,1.0\n256,64,2.0\n";
    assert!(PrefillCostTable::from_csv_reader(hole.as_bytes()).is_err());
    let negative = "input_len,batch_size,cost_ms\n128,32,-1.0\n";
    assert!(PrefillCostTable::from_csv_reader(negative.as_bytes()).is_err());
    assert!(PrefillCostTable::from_csv_reader("input_len,batch_size,cost_ms\n".as_bytes()).is_err());
    let commented = "# measured offline\ninput_len,batch_size,cost_ms\n64,8,3.5\n";
    let t = PrefillCostTable::from_csv_reader(commented.as_bytes()).unwrap();
    assert_eq!(t.cost_ms(1000, 1000), 3.5);
}

fn arb_params() -> impl Strategy<Value = CostModelParams> {
    (1e-4f64..0.05, 1e-7f64..1e-3, 0.0f64..1.0, 0.0f64..1.0, 0.0f64..0.005, 0.0f64..=1.0).prop_map(
        |(mem, per, dm, dc, overhead, alpha)| CostModelParams {
            target_mem_time: mem,
            target_compute_per_token: per,
            draft_mem_time: mem * dm,
            draft_compute_per_token: per * dc,
            fixed_overhead: overhead,
            alpha,
            per_request_alpha: None,
        },
    )
}

proptest! {
    #[test]
    fn forward_latency_is_monotone(p in arb_params(), b in 1usize..256, k in 1usize..8) {
        for role in [ModelRole::Draft, ModelRole::Target] {
            let here = forward_latency(&p, b, k, role);
            prop_assert!(forward_latency(&p, b + 1, k, role) >= here);
            prop_assert!(forward_latency(&p, b, k + 1, role) >= here);
        }
    }

    #[test]
    fn flat_while_memory_bound(p in arb_params(), b in 1usize..256) {
        if p.target_compute_per_token * (b + 1) as f64 <= p.target_mem_time {
            prop_assert_eq!(forward_latency(&p, b, 1, ModelRole::Target), forward_latency(&p, b + 1, 1, ModelRole::Target));
        }
    }

    #[test]
    fn accepted_stays_in_range(alpha in 0.0f64..=1.0, gamma in 1usize..8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..50 {
            prop_assert!(sample_accepted(&mut rng, alpha, gamma) <= gamma);
        }
    }

    #[test]
    fn ceiling_bucket_never_undercharges(skip in 1usize..600, batch in 1usize..80) {
        let t = PrefillCostTable::reference_7b();
        let cost = t.cost_ms(skip, batch);
        let len = *t.length_buckets().iter().find(|&&l| l as usize >= skip).unwrap_or(&512);
        let b = *t.batch_buckets().iter().find(|&&x| x as usize >= batch).unwrap_or(&64);
        prop_assert_eq!(cost, t.cost_ms(len as usize, b as usize));
        if skip <= 512 && batch <= 64 {
            prop_assert!(cost >= t.cost_ms(skip.min(128), batch.min(32)) || skip > 128);
        }
    }
}

#[test]
fn crossover_exists_for_any_compute_slope() {
    for name in CostModelParams::PRESETS {
        let p = CostModelParams::preset(name).unwrap();
        let big = (p.target_mem_time / p.target_compute_per_token).ceil() as usize * 8 + 1;
        assert_eq!(best_gamma(&p, big, 5).0, 0, "{name}");
    }
}
