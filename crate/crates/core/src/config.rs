//! Experiment configuration: one JSON document with a `schema_version`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cost_model::{CostModelParams, PrefillCostTable};
use crate::error::{Error, Result};
use crate::policy::PolicyKind;
use crate::sim::{Request, SimConfig};
use crate::workload::{load_trace_csv, poisson_workload, rate_trace_workload, LengthDistribution, RateTrace};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<CostModelParams>,
    /// CSV with header `input_len,batch_size,cost_ms`; the bundled 7B table
    /// when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prefill_table: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ArrivalSpec {
    Poisson { rate: f64, count: usize },
    Trace { segments: RateTrace, duration: f64 },
    Csv { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LengthSpec {
    Preset(String),
    Explicit { input: LengthDistribution, output: LengthDistribution },
}

impl LengthSpec {
    fn resolve(&self) -> Option<(LengthDistribution, LengthDistribution)> {
        match self {
            LengthSpec::Preset(name) => LengthDistribution::preset(name),
            LengthSpec::Explicit { input, output } => Some((input.clone(), output.clone())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub arrivals: ArrivalSpec,
    /// Ignored for CSV traces, which carry their own lengths.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lengths: Option<LengthSpec>,
    /// Arrival-stream seed; the replica seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub qps: Vec<f64>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub policies: Vec<PolicyKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<CostSpec>,
    pub workload: WorkloadSpec,
    pub sim: SimConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

fn field(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config { path: path.into(), message: message.into() }
}

fn under(path: &str, e: Error) -> Error {
    match e {
        Error::InvalidConfig(m) | Error::Workload(m) | Error::PrefillTable(m) => field(path, m),
        other => field(path, other.to_string()),
    }
}

/// A validated configuration with its cost model and switching table loaded.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub params: CostModelParams,
    pub table: Arc<PrefillCostTable>,
    /// Directory relative paths in the config resolve against.
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    /// Parses JSON; errors carry the path of the offending field.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            field(if path == "." { "$".to_string() } else { path }, e.into_inner().to_string())
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Checks every field and loads the cost model and table.
    pub fn resolve(self, base_dir: impl AsRef<Path>) -> Result<Experiment> {
        let base_dir = base_dir.as_ref().to_path_buf();
        if self.schema_version != SCHEMA_VERSION {
            return Err(field(
                "schema_version",
                format!("unsupported schema version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        self.sim.validate().map_err(|e| under("sim", e))?;
        if self.policies.is_empty() {
            return Err(field("policies", "at least one policy is required"));
        }
        for (i, p) in self.policies.iter().enumerate() {
            p.validate(self.sim.gamma_max).map_err(|e| under(&format!("policies[{i}]"), e))?;
        }
        if self.seeds.is_empty() {
            return Err(field("seeds", "at least one seed is required"));
        }

        let Some(cost) = &self.cost else {
            let needs = self.policies.iter().find(|p| p.needs_cost_model()).map(|p| p.label());
            let why = match needs {
                Some(label) => format!("missing cost model (policy `{label}` needs one, and so does the simulator)"),
                None => "missing cost model: give `preset` or `params`".to_string(),
            };
            return Err(field("cost", why));
        };
        let params = match (&cost.preset, &cost.params) {
            (Some(_), Some(_)) => return Err(field("cost", "give either `preset` or `params`, not both")),
            (None, None) => return Err(field("cost", "give `preset` or `params`")),
            (Some(name), None) => CostModelParams::preset(name).ok_or_else(|| {
                field(
                    "cost.preset",
                    format!("unknown preset `{name}` (known: {})", CostModelParams::PRESETS.join(", ")),
                )
            })?,
            (None, Some(p)) => p.clone(),
        };
        params.validate().map_err(|e| under("cost.params", e))?;
        let table = match &cost.prefill_table {
            Some(p) => PrefillCostTable::from_csv_path(base_dir.join(p)).map_err(|e| under("cost.prefill_table", e))?,
            None => PrefillCostTable::reference_7b(),
        };

        match &self.workload.arrivals {
            ArrivalSpec::Poisson { rate, count } => {
                if !(*rate > 0.0 && rate.is_finite()) {
                    return Err(field("workload.arrivals.rate", format!("must be positive, got {rate}")));
                }
                if *count == 0 {
                    return Err(field("workload.arrivals.count", "must be at least 1"));
                }
            }
            ArrivalSpec::Trace { segments, duration } => {
                segments.validate().map_err(|e| under("workload.arrivals.segments", e))?;
                if !(*duration > 0.0) {
                    return Err(field("workload.arrivals.duration", "must be positive"));
                }
            }
            ArrivalSpec::Csv { .. } => {}
        }
        if !matches!(self.workload.arrivals, ArrivalSpec::Csv { .. }) {
            let Some(spec) = &self.workload.lengths else {
                return Err(field("workload.lengths", "required for generated arrivals"));
            };
            let (i, o) = spec.resolve().ok_or_else(|| {
                field("workload.lengths", format!("unknown preset (known: {})", LengthDistribution::PRESETS.join(", ")))
            })?;
            i.validate().map_err(|e| under("workload.lengths.input", e))?;
            o.validate().map_err(|e| under("workload.lengths.output", e))?;
        }
        if let Some(sweep) = &self.sweep {
            if sweep.qps.is_empty() {
                return Err(field("sweep.qps", "axis must not be empty"));
            }
            if let Some(bad) = sweep.qps.iter().find(|q| !(**q > 0.0 && q.is_finite())) {
                return Err(field("sweep.qps", format!("rates must be positive, got {bad}")));
            }
        }
        Ok(Experiment { config: self, params, table: Arc::new(table), base_dir })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Experiment> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| field("$", format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text)?.resolve(base)
    }
}

impl Experiment {
    fn arrival_seed(&self, replica_seed: u64) -> u64 {
        self.config.workload.seed.unwrap_or(replica_seed)
    }

    /// The request stream for one replica. `rate` overrides a Poisson rate.
    pub fn workload(&self, replica_seed: u64, rate: Option<f64>) -> Result<Vec<Request>> {
        let seed = self.arrival_seed(replica_seed);
        let lengths = || {
            self.config
                .workload
                .lengths
                .as_ref()
                .and_then(LengthSpec::resolve)
                .ok_or_else(|| field("workload.lengths", "required for generated arrivals"))
        };
        match &self.config.workload.arrivals {
            ArrivalSpec::Poisson { rate: base, count } => {
                let (i, o) = lengths()?;
                poisson_workload(rate.unwrap_or(*base), *count, &i, &o, seed)
            }
            _ if rate.is_some() => Err(field("workload.arrivals", "a rate sweep needs Poisson arrivals")),
            ArrivalSpec::Trace { segments, duration } => {
                let (i, o) = lengths()?;
                rate_trace_workload(segments, *duration, &i, &o, seed)
            }
            ArrivalSpec::Csv { path } => {
                let loaded =
                    load_trace_csv(self.base_dir.join(path)).map_err(|e| under("workload.arrivals.path", e))?;
                for w in &loaded.warnings {
                    eprintln!("warning: {w}");
                }
                Ok(loaded.requests)
            }
        }
    }

    /// Simulator settings for one replica.
    pub fn sim_config(&self, seed: u64) -> SimConfig {
        SimConfig { seed, ..self.config.sim.clone() }
    }
}
