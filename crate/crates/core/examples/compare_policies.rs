//! Runs the policies listed in a config on common arrival streams and prints
//! the relative comparison table. Artifacts go to a temporary directory unless
//! one is passed as the first argument.

use std::path::PathBuf;

use nightjar::config::ExperimentConfig;
use nightjar::report::cmd_compare;

fn main() -> nightjar::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/compare_7b.json");
    let exp = ExperimentConfig::load(path)?;
    let out =
        std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("nightjar-compare"));

    let cmp = cmd_compare(&exp, &out)?;
    println!("{:<16} {:>10} {:>9} {:>9}", "policy", "tokens/s", "vs ref", "e2e vs ref");
    for r in &cmp.rows {
        println!(
            "{:<16} {:>10.1} {:>+8.2}% {:>+8.2}%",
            r.policy, r.throughput_tps, r.throughput_delta_pct, r.latency_delta_pct
        );
    }
    println!("reference: {}; files in {}", cmp.reference, out.display());
    Ok(())
}
