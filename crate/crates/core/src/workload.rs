//! Request streams: Poisson arrivals, piecewise-constant rate traces and CSV
//! trace replay.

use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::Request;

/// Token-length distribution. Every draw is clamped to `1..=max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LengthDistribution {
    Fixed { len: u32 },
    Uniform { min: u32, max: u32 },
    LogNormal { mu: f64, sigma: f64, max: u32 },
}

impl LengthDistribution {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Workload(m.to_string()));
        match *self {
            LengthDistribution::Fixed { len: 0 } => bad("fixed length must be >= 1"),
            LengthDistribution::Uniform { min, max } if min == 0 || min > max => {
                bad("uniform lengths need 1 <= min <= max")
            }
            LengthDistribution::LogNormal { mu, sigma, max } if !(mu.is_finite() && sigma >= 0.0) || max == 0 => {
                bad("lognormal lengths need finite mu, sigma >= 0 and max >= 1")
            }
            _ => Ok(()),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match *self {
            LengthDistribution::Fixed { len } => len,
            LengthDistribution::Uniform { min, max } => rng.gen_range(min..=max),
            LengthDistribution::LogNormal { mu, sigma, max } => {
                let x: f64 = LogNormal::new(mu, sigma).expect("validated").sample(rng);
                (x.round() as u32).clamp(1, max)
            }
        }
    }

    /// `(input, output)` length distributions loosely shaped like common
    /// chat and benchmark corpora.
    pub fn preset(name: &str) -> Option<(Self, Self)> {
        let ln = |mu: f64, sigma: f64, max| LengthDistribution::LogNormal { mu, sigma, max };
        match name {
            "sharegpt-like" => Some((ln(5.0, 1.0, 2048), ln(5.3, 0.9, 1024))),
            "alpaca-like" => Some((ln(3.0, 0.6, 512), ln(4.6, 0.8, 512))),
            "specbench-like" => Some((ln(5.4, 0.9, 2048), ln(5.5, 0.5, 1024))),
            _ => None,
        }
    }

    pub const PRESETS: &'static [&'static str] = &["sharegpt-like", "alpaca-like", "specbench-like"];
}

/// Piecewise-constant arrival rate. Segment `i` covers
/// `[start_i, start_{i+1})`; the last runs until the generation horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateSegment {
    pub start: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RateTrace(pub Vec<RateSegment>);

impl RateTrace {
    pub fn validate(&self) -> Result<()> {
        let segs = &self.0;
        if segs.is_empty() {
            return Err(Error::Workload("rate trace has no segments".into()));
        }
        if segs[0].start != 0.0 {
            return Err(Error::Workload("rate trace must start at t = 0".into()));
        }
        if segs.windows(2).any(|w| !(w[1].start > w[0].start)) {
            return Err(Error::Workload("rate trace start times must be strictly increasing".into()));
        }
        if segs.iter().any(|s| !(s.rate >= 0.0 && s.rate.is_finite())) {
            return Err(Error::Workload("rate trace rates must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Alternating low/high plateaus in the spirit of a production trace.
    pub fn plateaus(low: f64, high: f64, period: f64, periods: usize) -> Self {
        RateTrace(
            (0..2 * periods)
                .map(|i| RateSegment { start: i as f64 * period / 2.0, rate: if i % 2 == 0 { low } else { high } })
                .collect(),
        )
    }
}

fn make_request<R: Rng + ?Sized>(
    id: u64,
    arrival: f64,
    input: &LengthDistribution,
    output: &LengthDistribution,
    rng: &mut R,
) -> Request {
    let prompt = input.sample(rng);
    let budget = output.sample(rng);
    Request::new(id, arrival, prompt, budget)
}

/// `count` requests with i.i.d. exponential inter-arrival gaps of mean `1/rate`.
pub fn poisson_workload(
    rate: f64,
    count: usize,
    input: &LengthDistribution,
    output: &LengthDistribution,
    seed: u64,
) -> Result<Vec<Request>> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::Workload(format!("arrival rate must be positive, got {rate}")));
    }
    if count == 0 {
        return Err(Error::Workload("request count must be at least 1".into()));
    }
    input.validate()?;
    output.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaps = Exp::new(rate).expect("positive rate");
    let mut t = 0.0;
    Ok((0..count as u64)
        .map(|id| {
            t += gaps.sample(&mut rng);
            make_request(id, t, input, output, &mut rng)
        })
        .collect())
}

/// Piecewise-homogeneous Poisson arrivals over `[0, duration)`.
pub fn rate_trace_workload(
    trace: &RateTrace,
    duration: f64,
    input: &LengthDistribution,
    output: &LengthDistribution,
    seed: u64,
) -> Result<Vec<Request>> {
    trace.validate()?;
    if !(duration > 0.0) {
        return Err(Error::Workload(format!("duration must be positive, got {duration}")));
    }
    input.validate()?;
    output.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let segs = &trace.0;
    for (i, seg) in segs.iter().enumerate() {
        let end = segs.get(i + 1).map_or(duration, |s| s.start).min(duration);
        if seg.start >= end || seg.rate == 0.0 {
            continue;
        }
        let gaps = Exp::new(seg.rate).expect("positive rate");
        let mut t = seg.start;
        loop {
            t += gaps.sample(&mut rng);
            if t >= end {
                break;
            }
            let id = out.len() as u64;
            out.push(make_request(id, t, input, output, &mut rng));
        }
    }
    Ok(out)
}

/// Requests parsed from a trace file, plus any non-fatal notices.
#[derive(Debug, Clone)]
pub struct LoadedTrace {
    pub requests: Vec<Request>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct TraceRow {
    arrival_time_s: f64,
    input_len: u32,
    output_len: u32,
}

/// Reads rows `arrival_time_s,input_len,output_len`. Out-of-order rows are
/// sorted (stable, so ids follow file order among equal arrival times) and
/// reported as a warning.
pub fn load_trace_csv(path: impl AsRef<Path>) -> Result<LoadedTrace> {
    let path = path.as_ref();
    read_trace(std::fs::File::open(path)?, path)
}

pub fn read_trace<R: Read>(reader: R, path: &Path) -> Result<LoadedTrace> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(reader);
    let mut rows: Vec<(f64, u32, u32)> = Vec::new();
    let row_err = |line: u64, message: String| Error::TraceRow { path: path.to_path_buf(), line, message };
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let row: TraceRow = record.deserialize(None).map_err(|e| row_err(line, e.to_string()))?;
        if !(row.arrival_time_s.is_finite() && row.arrival_time_s >= 0.0) {
            return Err(row_err(line, format!("arrival time must be >= 0, got {}", row.arrival_time_s)));
        }
        if row.input_len == 0 || row.output_len == 0 {
            return Err(row_err(line, "input_len and output_len must be >= 1".into()));
        }
        rows.push((row.arrival_time_s, row.input_len, row.output_len));
    }
    let mut warnings = Vec::new();
    if rows.windows(2).any(|w| w[1].0 < w[0].0) {
        warnings.push(format!("{}: rows were not sorted by arrival time; sorted on load", path.display()));
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    let requests = rows.into_iter().enumerate().map(|(i, (t, p, o))| Request::new(i as u64, t, p, o)).collect();
    Ok(LoadedTrace { requests, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXED: LengthDistribution = LengthDistribution::Fixed { len: 16 };

    #[test]
    fn poisson_is_seeded_and_sorted() {
        let a = poisson_workload(2.0, 500, &FIXED, &FIXED, 7).unwrap();
        let b = poisson_workload(2.0, 500, &FIXED, &FIXED, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[0].arrival_time <= w[1].arrival_time));
        assert!(a.iter().enumerate().all(|(i, r)| r.id == i as u64));
        let one = poisson_workload(2.0, 1, &FIXED, &FIXED, 7).unwrap();
        assert_eq!(one.len(), 1);
        assert!(one[0].arrival_time > 0.0);
        assert!(poisson_workload(0.0, 5, &FIXED, &FIXED, 1).is_err());
        assert!(poisson_workload(-1.0, 5, &FIXED, &FIXED, 1).is_err());
    }

    #[test]
    fn zero_rate_segment_is_silent() {
        let trace = RateTrace(vec![
            RateSegment { start: 0.0, rate: 5.0 },
            RateSegment { start: 10.0, rate: 0.0 },
            RateSegment { start: 20.0, rate: 5.0 },
        ]);
        let reqs = rate_trace_workload(&trace, 30.0, &FIXED, &FIXED, 3).unwrap();
        assert!(!reqs.is_empty());
        assert!(reqs.iter().all(|r| !(10.0..20.0).contains(&r.arrival_time)));
        assert!(reqs.iter().all(|r| r.arrival_time < 30.0));
    }

    #[test]
    fn trace_validation() {
        assert!(RateTrace(vec![]).validate().is_err());
        assert!(RateTrace(vec![RateSegment { start: 1.0, rate: 1.0 }]).validate().is_err());
        let dup = RateTrace(vec![RateSegment { start: 0.0, rate: 1.0 }, RateSegment { start: 0.0, rate: 2.0 }]);
        assert!(dup.validate().is_err());
        assert!(RateTrace::plateaus(2.0, 20.0, 60.0, 3).validate().is_ok());
    }

    #[test]
    fn lengths_respect_clamp() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = LengthDistribution::LogNormal { mu: 6.0, sigma: 2.0, max: 300 };
        for _ in 0..10_000 {
            let l = d.sample(&mut rng);
            assert!((1..=300).contains(&l));
        }
        let u = LengthDistribution::Uniform { min: 3, max: 5 };
        for _ in 0..1000 {
            assert!((3..=5).contains(&u.sample(&mut rng)));
        }
        assert!(LengthDistribution::Uniform { min: 0, max: 5 }.validate().is_err());
        for name in LengthDistribution::PRESETS {
            let (i, o) = LengthDistribution::preset(name).unwrap();
            i.validate().unwrap();
            o.validate().unwrap();
        }
    }

    #[test]
    fn csv_trace_rows() {
        let p = Path::new("mem.csv");
        let ok = "arrival_time_s,input_len,output_len\n0.5,10,20\n1.0,5,5\n2.5,7,9\n";
        let t = read_trace(ok.as_bytes(), p).unwrap();
        assert_eq!(t.requests.len(), 3);
        assert!(t.warnings.is_empty());
        assert_eq!(t.requests[2].prompt_len, 7);

        let zero = "arrival_time_s,input_len,output_len\n0.5,10,20\n1.0,0,5\n";
        match read_trace(zero.as_bytes(), p) {
            Err(Error::TraceRow { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }

        let junk = "arrival_time_s,input_len,output_len\nabc,1,1\n";
        assert!(matches!(read_trace(junk.as_bytes(), p), Err(Error::TraceRow { line: 2, .. })));

        let unsorted = "arrival_time_s,input_len,output_len\n3.0,1,1\n1.0,2,2\n2.0,3,3\n";
        let t = read_trace(unsorted.as_bytes(), p).unwrap();
        assert_eq!(t.warnings.len(), 1);
        let arrivals: Vec<_> = t.requests.iter().map(|r| r.arrival_time).collect();
        assert_eq!(arrivals, vec![1.0, 2.0, 3.0]);
        assert_eq!(t.requests[0].prompt_len, 2);
    }
}
