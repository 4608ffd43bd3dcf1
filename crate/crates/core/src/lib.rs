//! Adaptive speculative-length selection for continuous-batching LLM serving.
//!
//! The crate pairs the [`nightjar`] bandit policy with everything needed to
//! evaluate it offline: a roofline [`cost_model`] with a draft-KV switching
//! cost table, [`baselines`] behind the common [`policy`] interface, request
//! streams from [`workload`], a discrete-event serving simulator in [`sim`],
//! and the experiment driver in [`report`] (configuration, `run`, `compare`,
//! `sweep`).
//!
//! ```
//! use std::sync::Arc;
//! use nightjar::cost_model::{CostModelParams, PrefillCostTable};
//! use nightjar::nightjar::NightjarPolicy;
//! use nightjar::sim::run_fixed_batch;
//!
//! let params = CostModelParams::preset("7b-4090-like").unwrap();
//! let table = Arc::new(PrefillCostTable::reference_7b());
//! let mut policy = NightjarPolicy::new(5, 8, table.clone()).unwrap();
//! let steps = run_fixed_batch(&mut policy, 2, 5, 2_000, 7, &params, &table).unwrap();
//! assert_eq!(steps.len(), 2_000);
//! ```

// Negated comparisons below are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod config;
pub mod cost_model;
pub mod error;
pub mod nightjar;
pub mod policy;
pub mod report;
pub mod sim;
pub mod workload;

pub use error::{Error, Result};
