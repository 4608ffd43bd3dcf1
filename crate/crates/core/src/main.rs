use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nightjar::config::ExperimentConfig;
use nightjar::report::{self, Comparison, SummaryMetrics};
use nightjar::{Error, Result};

/// Offline simulator for adaptive speculative-length selection.
#[derive(Parser)]
#[command(name = "nightjar", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single policy once per replica seed.
    Run(Common),
    /// Run every listed policy on identical arrival streams.
    Compare(Common),
    /// Repeat `compare` across arrival rates.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated rates overriding `sweep.qps`.
        #[arg(long, value_delimiter = ',')]
        qps: Option<Vec<f64>>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Single replica seed, replacing the config's list.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Replica seeds as a range: `N..M` (exclusive) or `N..=M`.
    #[arg(long, value_parser = parse_seeds)]
    seeds: Option<SeedRange>,
}

#[derive(Clone)]
struct SeedRange(Vec<u64>);

fn parse_seeds(s: &str) -> std::result::Result<SeedRange, String> {
    let (lo, hi, inclusive) = if let Some((a, b)) = s.split_once("..=") {
        (a, b, true)
    } else if let Some((a, b)) = s.split_once("..") {
        (a, b, false)
    } else {
        return Err(format!("expected N..M or N..=M, got `{s}`"));
    };
    let lo: u64 = lo.trim().parse().map_err(|e| format!("bad range start: {e}"))?;
    let hi: u64 = hi.trim().parse().map_err(|e| format!("bad range end: {e}"))?;
    let seeds: Vec<u64> = if inclusive { (lo..=hi).collect() } else { (lo..hi).collect() };
    if seeds.is_empty() {
        return Err(format!("seed range `{s}` is empty"));
    }
    Ok(SeedRange(seeds))
}

fn load(common: &Common) -> Result<nightjar::config::Experiment> {
    let text = std::fs::read_to_string(&common.config)
        .map_err(|e| Error::Config { path: "$".into(), message: format!("{}: {e}", common.config.display()) })?;
    let mut config = ExperimentConfig::from_json(&text)?;
    if let Some(seed) = common.seed {
        config.seeds = vec![seed];
    } else if let Some(SeedRange(seeds)) = &common.seeds {
        config.seeds = seeds.clone();
    }
    let base = common.config.parent().map(PathBuf::from).unwrap_or_default();
    config.resolve(base)
}

fn print_metrics(policy: &str, seed: u64, m: &SummaryMetrics) {
    println!(
        "{policy:<20} seed={seed:<4} tput={:>10.2} tok/s  e2e mean={:.3}s p50={:.3}s p95={:.3}s  regret={:.1}  steps={}  done={}",
        m.throughput_tps, m.mean_e2e_s, m.p50_e2e_s, m.p95_e2e_s, m.cumulative_pseudo_regret, m.steps, m.completed_requests
    );
    println!("{:<20} gamma histogram {:?}", "", m.gamma_histogram);
}

fn print_comparison(cmp: &Comparison) {
    println!("{:<20} {:>12} {:>10} {:>10} {:>9}", "policy", "tput tok/s", "e2e s", "d_tput %", "d_e2e %");
    for r in &cmp.rows {
        println!(
            "{:<20} {:>12.2} {:>10.3} {:>+10.2} {:>+9.2}",
            r.policy, r.throughput_tps, r.mean_e2e_s, r.throughput_delta_pct, r.latency_delta_pct
        );
    }
    println!("(deltas relative to {})", cmp.reference);
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(c) => {
            let exp = load(&c)?;
            for rec in report::cmd_run(&exp, &c.out)? {
                print_metrics(&rec.policy, rec.seed, &rec.metrics);
            }
        }
        Command::Compare(c) => {
            let exp = load(&c)?;
            print_comparison(&report::cmd_compare(&exp, &c.out)?);
        }
        Command::Sweep { common, qps } => {
            let exp = load(&common)?;
            let sweep = report::cmd_sweep(&exp, qps.as_deref(), &common.out)?;
            for (q, cmp) in &sweep.comparisons {
                println!("qps = {q}");
                print_comparison(cmp);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(report::exit_code(&e) as u8)
        }
    }
}
