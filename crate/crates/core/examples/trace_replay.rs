use nightjar::cost_model::{CostModelParams, PrefillCostTable};
use nightjar::policy::PolicyKind;
use nightjar::report::summarize;
use nightjar::sim::{run_kind, SimConfig};
use nightjar::workload::load_trace_csv;
use std::sync::Arc;

/// Replays a recorded arrival trace under two policies.
fn main() -> nightjar::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/trace_small.csv").to_string());
    let trace = load_trace_csv(&path)?;
    for w in &trace.warnings {
        eprintln!("warning: {w}");
    }
    println!("{} requests from {path}", trace.requests.len());

    let params = CostModelParams::preset("7b-4090-like").unwrap();
    let table = Arc::new(PrefillCostTable::reference_7b());
    let config = SimConfig::new(8, 5);
    for kind in [PolicyKind::nightjar(), PolicyKind::NoSpec] {
        let out = run_kind(&config, &kind, &trace.requests, &params, table.clone())?;
        let m = summarize(&out, 0, config.gamma_max);
        println!(
            "{:<10} {:>8.1} tokens/s  mean e2e {:.3} s  over {} steps",
            kind.label(),
            m.throughput_tps,
            m.mean_e2e_s,
            m.steps
        );
    }
    Ok(())
}
