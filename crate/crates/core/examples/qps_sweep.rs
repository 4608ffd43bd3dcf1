//! Throughput of FixedGamma(3), NoSpec and Nightjar across arrival rates,
//! locating where speculation stops paying off.

use nightjar::config::ExperimentConfig;
use nightjar::report::cmd_sweep;

fn main() -> nightjar::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/sweep_7b.json");
    let mut exp = ExperimentConfig::load(path)?;
    exp.config.seeds = vec![0, 1];
    let out = std::env::temp_dir().join("nightjar-sweep");

    let sweep = cmd_sweep(&exp, None, &out)?;
    let fg3 = sweep.throughput_curve("fixed_gamma_3");
    let ns = sweep.throughput_curve("no_spec");
    let nj = sweep.throughput_curve("nightjar");
    println!("{:>6} {:>10} {:>10} {:>10}", "qps", "fixed_g3", "no_spec", "nightjar");
    for i in 0..fg3.len() {
        println!("{:>6} {:>10.1} {:>10.1} {:>10.1}", fg3[i].0, fg3[i].1, ns[i].1, nj[i].1);
    }
    match sweep.crossover("fixed_gamma_3", "no_spec") {
        Some((lo, hi)) => println!("crossover between {lo} and {hi} qps"),
        None => println!("no crossover on this axis"),
    }
    println!("tidy data: {}", out.join("sweep.csv").display());
    Ok(())
}
