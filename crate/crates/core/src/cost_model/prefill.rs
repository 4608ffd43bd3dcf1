use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Draft KV reconstruction latency indexed by (effective skip length, batch size).
///
/// Queries round up to the next bucket on both axes and clamp at the largest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefillCostTable {
    length_buckets: Vec<u32>,
    batch_buckets: Vec<u32>,
    /// Row-major by length bucket, milliseconds.
    grid_ms: Vec<f64>,
}

#[derive(Debug, Deserialize)]
struct Row {
    input_len: u32,
    batch_size: u32,
    cost_ms: f64,
}

impl PrefillCostTable {
    /// Measured switching cost of a 7B target / 0.5B draft pair on an RTX 4090.
    pub fn reference_7b() -> Self {
        Self::from_rows([
            (128, 32, 17.87),
            (128, 64, 28.53),
            (256, 32, 20.65),
            (256, 64, 22.33),
            (512, 32, 24.30),
            (512, 64, 102.03),
        ])
        .expect("reference table is a full grid")
    }

    /// Builds a table from `(input_len, batch_size, cost_ms)` triples. The rows
    /// must cover the full cartesian grid exactly once.
    pub fn from_rows<I>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (u32, u32, f64)>,
    {
        let rows: Vec<_> = rows.into_iter().collect();
        if rows.is_empty() {
            return Err(Error::PrefillTable("table is empty".into()));
        }
        let mut length_buckets: Vec<u32> = rows.iter().map(|r| r.0).collect();
        let mut batch_buckets: Vec<u32> = rows.iter().map(|r| r.1).collect();
        length_buckets.sort_unstable();
        length_buckets.dedup();
        batch_buckets.sort_unstable();
        batch_buckets.dedup();

        let cols = batch_buckets.len();
        let mut grid: Vec<Option<f64>> = vec![None; length_buckets.len() * cols];
        for (len, batch, ms) in rows {
            if !(ms.is_finite() && ms > 0.0) {
                return Err(Error::PrefillTable(format!("cost at ({len}, {batch}) must be positive, got {ms}")));
            }
            let i = length_buckets.binary_search(&len).unwrap();
            let j = batch_buckets.binary_search(&batch).unwrap();
            let cell = &mut grid[i * cols + j];
            if cell.is_some() {
                return Err(Error::PrefillTable(format!("duplicate entry for ({len}, {batch})")));
            }
            *cell = Some(ms);
        }
        let grid_ms = grid
            .into_iter()
            .enumerate()
            .map(|(k, c)| {
                c.ok_or_else(|| {
                    Error::PrefillTable(format!(
                        "missing entry for ({}, {})",
                        length_buckets[k / cols],
                        batch_buckets[k % cols]
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { length_buckets, batch_buckets, grid_ms })
    }

    /// Reads CSV with header `input_len,batch_size,cost_ms`.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["input_len", "batch_size", "cost_ms"] {
            return Err(Error::PrefillTable(format!(
                "expected header `input_len,batch_size,cost_ms`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut rows = Vec::new();
        for row in rdr.deserialize::<Row>() {
            let row = row?;
            rows.push((row.input_len, row.batch_size, row.cost_ms));
        }
        Self::from_rows(rows)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn length_buckets(&self) -> &[u32] {
        &self.length_buckets
    }

    pub fn batch_buckets(&self) -> &[u32] {
        &self.batch_buckets
    }

    /// Cost in milliseconds; zero when nothing needs re-encoding.
    pub fn cost_ms(&self, skip_len: usize, batch: usize) -> f64 {
        if skip_len == 0 {
            return 0.0;
        }
        let i = ceil_bucket(&self.length_buckets, skip_len);
        let j = ceil_bucket(&self.batch_buckets, batch);
        self.grid_ms[i * self.batch_buckets.len() + j]
    }

    /// Cost in seconds.
    pub fn prefill_cost(&self, skip_len: usize, batch: usize) -> f64 {
        self.cost_ms(skip_len, batch) / 1000.0
    }
}

fn ceil_bucket(buckets: &[u32], value: usize) -> usize {
    buckets.iter().position(|&b| b as usize >= value).unwrap_or(buckets.len() - 1)
}
