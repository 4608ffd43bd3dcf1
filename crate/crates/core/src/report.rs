//! Metrics aggregation and the `run` / `compare` / `sweep` drivers.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::Experiment;
use crate::error::{Error, Result};
use crate::policy::PolicyKind;
use crate::sim::{run_kind, write_requests_csv, write_steps_csv, SimOutput};

/// Aggregate metrics of one run, computed after the warmup steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryMetrics {
    /// Credited tokens over busy simulated time.
    pub throughput_tps: f64,
    pub mean_e2e_s: f64,
    pub p50_e2e_s: f64,
    pub p95_e2e_s: f64,
    pub cumulative_pseudo_regret: f64,
    pub steps: u64,
    pub completed_requests: u64,
    pub gamma_histogram: Vec<u64>,
    /// Same histogram restricted to exploitation decisions.
    pub exploit_gamma_histogram: Vec<u64>,
}

/// Nearest-rank percentile of an ascending slice.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn summarize(output: &SimOutput, warmup_steps: u64, gamma_max: usize) -> SummaryMetrics {
    let warmup = (warmup_steps as usize).min(output.steps.len());
    let post = &output.steps[warmup..];
    let tokens: u64 = post.iter().map(|s| s.tokens()).sum();
    let busy: f64 = post.iter().map(|s| s.step_latency).sum();
    let mut hist = vec![0u64; gamma_max + 1];
    let mut exploit_hist = vec![0u64; gamma_max + 1];
    let mut regret = 0.0;
    for s in post {
        hist[s.gamma] += 1;
        if !s.explore {
            exploit_hist[s.gamma] += 1;
        }
        regret += s.oracle_expected_goodput - s.expected_goodput;
    }
    let cutoff = post.first().map_or(f64::INFINITY, |s| s.sim_time);
    let mut lat: Vec<f64> = output
        .completed
        .iter()
        .filter(|r| r.finish_time.is_some_and(|f| f > cutoff))
        .filter_map(|r| r.e2e_latency())
        .collect();
    let mean = if lat.is_empty() { 0.0 } else { lat.iter().sum::<f64>() / lat.len() as f64 };
    lat.sort_by(f64::total_cmp);
    SummaryMetrics {
        throughput_tps: if busy > 0.0 { tokens as f64 / busy } else { 0.0 },
        mean_e2e_s: mean,
        p50_e2e_s: percentile(&lat, 0.50),
        p95_e2e_s: percentile(&lat, 0.95),
        cumulative_pseudo_regret: regret,
        steps: post.len() as u64,
        completed_requests: lat.len() as u64,
        gamma_histogram: hist,
        exploit_gamma_histogram: exploit_hist,
    }
}

/// One policy on one replica.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub policy: String,
    pub seed: u64,
    pub qps: Option<f64>,
    pub metrics: SummaryMetrics,
    pub workload_fingerprint: u64,
}

/// Runs a single policy on one replica and returns the raw output.
pub fn simulate(exp: &Experiment, kind: &PolicyKind, seed: u64, qps: Option<f64>) -> Result<SimOutput> {
    let workload = exp.workload(seed, qps)?;
    run_kind(&exp.sim_config(seed), kind, &workload, &exp.params, exp.table.clone())
}

fn record(exp: &Experiment, kind: &PolicyKind, seed: u64, qps: Option<f64>) -> Result<(RunRecord, SimOutput)> {
    let out = simulate(exp, kind, seed, qps)?;
    let metrics = summarize(&out, exp.config.sim.warmup_steps, exp.config.sim.gamma_max);
    let rec = RunRecord { policy: kind.label(), seed, qps, metrics, workload_fingerprint: out.workload_fingerprint };
    Ok((rec, out))
}

fn provenance(exp: &Experiment, seed: Option<u64>) -> Vec<String> {
    let mut lines = vec![format!("config={}", exp.config.to_json())];
    if let Some(s) = seed {
        lines.push(format!("seed={s}"));
    }
    lines
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[derive(Serialize)]
struct RunSummaryFile<'a> {
    config: &'a crate::config::ExperimentConfig,
    seed: u64,
    policy: &'a str,
    status: &'a str,
    metrics: &'a SummaryMetrics,
}

#[derive(Serialize)]
struct SeedMetrics<'a> {
    seed: u64,
    metrics: &'a SummaryMetrics,
}

#[derive(Serialize)]
struct MultiRunSummaryFile<'a> {
    config: &'a crate::config::ExperimentConfig,
    policy: &'a str,
    status: &'a str,
    runs: Vec<SeedMetrics<'a>>,
    mean_throughput_tps: f64,
    mean_e2e_s: f64,
}

fn write_run_dir(dir: &Path, exp: &Experiment, rec: &RunRecord, out: &SimOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    let prov = provenance(exp, Some(rec.seed));
    write_json(
        &dir.join("summary.json"),
        &RunSummaryFile {
            config: &exp.config,
            seed: rec.seed,
            policy: &rec.policy,
            status: "ok",
            metrics: &rec.metrics,
        },
    )?;
    write_steps_csv(BufWriter::new(fs::File::create(dir.join("steps.csv"))?), &out.steps, &prov)?;
    write_requests_csv(BufWriter::new(fs::File::create(dir.join("requests.csv"))?), &out.completed, &prov)?;
    Ok(())
}

/// `run`: one policy, every replica seed. A single seed writes
/// `summary.json`, `steps.csv` and `requests.csv` into `out`; several seeds
/// get one such directory each plus an aggregate `summary.json`.
pub fn cmd_run(exp: &Experiment, out: &Path) -> Result<Vec<RunRecord>> {
    let [kind] = exp.config.policies.as_slice() else {
        return Err(Error::Config {
            path: "policies".into(),
            message: format!("run expects exactly one policy, found {}", exp.config.policies.len()),
        });
    };
    let results: Vec<(RunRecord, SimOutput)> =
        exp.config.seeds.par_iter().map(|&seed| record(exp, kind, seed, None)).collect::<Result<_>>()?;
    fs::create_dir_all(out)?;
    if let [(rec, output)] = results.as_slice() {
        write_run_dir(out, exp, rec, output)?;
    } else {
        for (rec, output) in &results {
            write_run_dir(&out.join(format!("seed-{}", rec.seed)), exp, rec, output)?;
        }
        let n = results.len() as f64;
        write_json(
            &out.join("summary.json"),
            &MultiRunSummaryFile {
                config: &exp.config,
                policy: &results[0].0.policy,
                status: "ok",
                runs: results.iter().map(|(r, _)| SeedMetrics { seed: r.seed, metrics: &r.metrics }).collect(),
                mean_throughput_tps: results.iter().map(|(r, _)| r.metrics.throughput_tps).sum::<f64>() / n,
                mean_e2e_s: results.iter().map(|(r, _)| r.metrics.mean_e2e_s).sum::<f64>() / n,
            },
        )?;
    }
    Ok(results.into_iter().map(|(r, _)| r).collect())
}

/// One row of a comparison table: seed-averaged metrics of one policy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub policy: String,
    pub seeds: usize,
    pub throughput_tps: f64,
    pub mean_e2e_s: f64,
    pub p50_e2e_s: f64,
    pub p95_e2e_s: f64,
    pub pseudo_regret: f64,
    pub completed_requests: f64,
    /// Relative to the reference policy, in percent.
    pub throughput_delta_pct: f64,
    pub latency_delta_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub reference: String,
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn row(&self, policy: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.policy == policy)
    }
}

pub const COMPARISON_HEADER: &str = "policy,seeds,throughput_tps,mean_e2e_s,p50_e2e_s,p95_e2e_s,pseudo_regret,completed_requests,throughput_delta_pct,latency_delta_pct";

/// Averages runs per policy (in first-seen order) and expresses them
/// relative to `no_spec` when present, else the first policy. Every record
/// of a seed must share one arrival stream.
pub fn compare_records(records: &[RunRecord]) -> Result<Comparison> {
    let mut by_seed: Vec<(u64, u64)> = Vec::new();
    for r in records {
        match by_seed.iter().find(|(s, _)| *s == r.seed) {
            Some((_, fp)) if *fp != r.workload_fingerprint => return Err(Error::MismatchedWorkloads),
            Some(_) => {}
            None => by_seed.push((r.seed, r.workload_fingerprint)),
        }
    }
    let mut order: Vec<&str> = Vec::new();
    for r in records {
        if !order.contains(&r.policy.as_str()) {
            order.push(&r.policy);
        }
    }
    let mut rows: Vec<ComparisonRow> = order
        .iter()
        .map(|&p| {
            let rs: Vec<_> = records.iter().filter(|r| r.policy == p).collect();
            let n = rs.len() as f64;
            let mean = |f: &dyn Fn(&SummaryMetrics) -> f64| rs.iter().map(|r| f(&r.metrics)).sum::<f64>() / n;
            ComparisonRow {
                policy: p.to_string(),
                seeds: rs.len(),
                throughput_tps: mean(&|m| m.throughput_tps),
                mean_e2e_s: mean(&|m| m.mean_e2e_s),
                p50_e2e_s: mean(&|m| m.p50_e2e_s),
                p95_e2e_s: mean(&|m| m.p95_e2e_s),
                pseudo_regret: mean(&|m| m.cumulative_pseudo_regret),
                completed_requests: mean(&|m| m.completed_requests as f64),
                throughput_delta_pct: 0.0,
                latency_delta_pct: 0.0,
            }
        })
        .collect();
    let reference =
        if order.contains(&"no_spec") { "no_spec" } else { order.first().copied().unwrap_or("") }.to_string();
    if let Some(base) = rows.iter().find(|r| r.policy == reference).cloned() {
        for r in &mut rows {
            r.throughput_delta_pct = 100.0 * (r.throughput_tps - base.throughput_tps) / base.throughput_tps;
            r.latency_delta_pct = 100.0 * (r.mean_e2e_s - base.mean_e2e_s) / base.mean_e2e_s;
        }
    }
    Ok(Comparison { reference, rows })
}

fn write_comparison_csv(path: &Path, cmp: &Comparison, prov: &[String]) -> Result<()> {
    use std::io::Write;
    let mut w = BufWriter::new(fs::File::create(path)?);
    for line in prov {
        writeln!(w, "# {line}")?;
    }
    writeln!(w, "# reference={}", cmp.reference)?;
    writeln!(w, "{COMPARISON_HEADER}")?;
    for r in &cmp.rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.policy,
            r.seeds,
            r.throughput_tps,
            r.mean_e2e_s,
            r.p50_e2e_s,
            r.p95_e2e_s,
            r.pseudo_regret,
            r.completed_requests,
            r.throughput_delta_pct,
            r.latency_delta_pct
        )?;
    }
    Ok(())
}

fn check_policy_list(exp: &Experiment) -> Result<()> {
    if exp.config.policies.len() < 2 {
        return Err(Error::Config { path: "policies".into(), message: "compare needs at least two policies".into() });
    }
    let mut labels: Vec<String> = exp.config.policies.iter().map(PolicyKind::label).collect();
    labels.sort();
    labels.dedup();
    if labels.len() != exp.config.policies.len() {
        return Err(Error::Config { path: "policies".into(), message: "policy labels must be distinct".into() });
    }
    Ok(())
}

fn run_cells(exp: &Experiment, qps: Option<f64>) -> Result<Vec<RunRecord>> {
    let cells: Vec<(&PolicyKind, u64)> =
        exp.config.seeds.iter().flat_map(|&s| exp.config.policies.iter().map(move |k| (k, s))).collect();
    cells.par_iter().map(|&(k, s)| record(exp, k, s, qps).map(|(r, _)| r)).collect()
}

#[derive(Serialize)]
struct CompareSummaryFile<'a> {
    config: &'a crate::config::ExperimentConfig,
    status: &'a str,
    comparison: &'a Comparison,
    runs: Vec<RunEntry<'a>>,
}

#[derive(Serialize)]
struct RunEntry<'a> {
    policy: &'a str,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    qps: Option<f64>,
    metrics: &'a SummaryMetrics,
}

fn entries(records: &[RunRecord]) -> Vec<RunEntry<'_>> {
    records.iter().map(|r| RunEntry { policy: &r.policy, seed: r.seed, qps: r.qps, metrics: &r.metrics }).collect()
}

/// `compare`: every policy on the same arrival streams; writes
/// `comparison.csv` and `summary.json`.
pub fn cmd_compare(exp: &Experiment, out: &Path) -> Result<Comparison> {
    check_policy_list(exp)?;
    let records = run_cells(exp, None)?;
    let cmp = compare_records(&records)?;
    fs::create_dir_all(out)?;
    write_comparison_csv(&out.join("comparison.csv"), &cmp, &provenance(exp, None))?;
    write_json(
        &out.join("summary.json"),
        &CompareSummaryFile { config: &exp.config, status: "ok", comparison: &cmp, runs: entries(&records) },
    )?;
    Ok(cmp)
}

/// One cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub qps: f64,
    pub policy: String,
    pub seed: u64,
    pub throughput_tps: f64,
    pub mean_e2e_s: f64,
}

pub const SWEEP_HEADER: &str = "qps,policy,seed,throughput_tps,mean_e2e_s";

/// Result of a sweep: tidy rows plus the per-rate comparisons.
#[derive(Debug, Clone)]
pub struct Sweep {
    pub rows: Vec<SweepRow>,
    pub comparisons: Vec<(f64, Comparison)>,
}

impl Sweep {
    /// Seed-averaged throughput of `policy` at each rate of the axis.
    pub fn throughput_curve(&self, policy: &str) -> Vec<(f64, f64)> {
        self.comparisons.iter().filter_map(|(q, c)| c.row(policy).map(|r| (*q, r.throughput_tps))).collect()
    }

    /// Bracketing rates `(lo, hi)` between which `a - b` changes sign.
    pub fn crossover(&self, a: &str, b: &str) -> Option<(f64, f64)> {
        let ca = self.throughput_curve(a);
        let cb = self.throughput_curve(b);
        let diffs: Vec<(f64, f64)> = ca.iter().zip(&cb).map(|(x, y)| (x.0, x.1 - y.1)).collect();
        diffs.windows(2).find(|w| w[0].1.signum() != w[1].1.signum()).map(|w| (w[0].0, w[1].0))
    }
}

/// `sweep`: `compare` at each arrival rate of the axis (the config's
/// `sweep.qps` unless `axis` is given). Writes `sweep.csv`, one
/// `comparison_qps-<rate>.csv` per rate and `summary.json`.
pub fn cmd_sweep(exp: &Experiment, axis: Option<&[f64]>, out: &Path) -> Result<Sweep> {
    check_policy_list(exp)?;
    let axis: Vec<f64> = match (axis, &exp.config.sweep) {
        (Some(a), _) => a.to_vec(),
        (None, Some(s)) => s.qps.clone(),
        (None, None) => {
            return Err(Error::Config { path: "sweep.qps".into(), message: "no sweep axis given".into() });
        }
    };
    if axis.is_empty() || axis.iter().any(|q| !(*q > 0.0 && q.is_finite())) {
        return Err(Error::Config { path: "sweep.qps".into(), message: "axis must hold positive rates".into() });
    }
    let per_rate: Vec<Vec<RunRecord>> = axis.iter().map(|&q| run_cells(exp, Some(q))).collect::<Result<_>>()?;

    fs::create_dir_all(out)?;
    let prov = provenance(exp, None);
    let mut rows = Vec::new();
    let mut comparisons = Vec::new();
    for (q, records) in axis.iter().zip(&per_rate) {
        let cmp = compare_records(records)?;
        write_comparison_csv(&out.join(format!("comparison_qps-{q}.csv")), &cmp, &prov)?;
        comparisons.push((*q, cmp));
        rows.extend(records.iter().map(|r| SweepRow {
            qps: *q,
            policy: r.policy.clone(),
            seed: r.seed,
            throughput_tps: r.metrics.throughput_tps,
            mean_e2e_s: r.metrics.mean_e2e_s,
        }));
    }
    {
        use std::io::Write;
        let mut w = BufWriter::new(fs::File::create(out.join("sweep.csv"))?);
        for line in &prov {
            writeln!(w, "# {line}")?;
        }
        writeln!(w, "{SWEEP_HEADER}")?;
        for r in &rows {
            writeln!(w, "{},{},{},{},{}", r.qps, r.policy, r.seed, r.throughput_tps, r.mean_e2e_s)?;
        }
    }
    let all: Vec<RunRecord> = per_rate.into_iter().flatten().collect();
    #[derive(Serialize)]
    struct SweepSummaryFile<'a> {
        config: &'a crate::config::ExperimentConfig,
        status: &'a str,
        axis: &'a [f64],
        runs: Vec<RunEntry<'a>>,
    }
    write_json(
        &out.join("summary.json"),
        &SweepSummaryFile { config: &exp.config, status: "ok", axis: &axis, runs: entries(&all) },
    )?;
    Ok(Sweep { rows, comparisons })
}

/// Process exit code for an error: 2 for configuration problems, 3 for an
/// overloaded run, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Overload { .. } => 3,
        Error::Config { .. }
        | Error::InvalidConfig(_)
        | Error::MissingCostModel(_)
        | Error::Workload(_)
        | Error::TraceRow { .. }
        | Error::PrefillTable(_)
        | Error::MismatchedWorkloads => 2,
        _ => 1,
    }
}

/// Default output directory for a config file: `<stem>-out` beside it.
pub fn default_out_dir(config: &Path) -> PathBuf {
    let stem = config.file_stem().and_then(|s| s.to_str()).unwrap_or("experiment");
    config.with_file_name(format!("{stem}-out"))
}
