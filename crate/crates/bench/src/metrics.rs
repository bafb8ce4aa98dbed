use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::BenchError;

/// Aggregate over all episodes of one variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub variant: String,
    pub reached_goal_rate: f64,
    pub unsafe_state_rate: f64,
    /// Mean over successful episodes only.
    pub avg_steps_to_goal: Option<f64>,
    /// Final-round finite-cost sample fraction; absent without contingency.
    pub finite_cost_pct: Option<f64>,
}

pub fn write_csv<W: Write>(records: &[MetricsRecord], w: W) -> Result<(), BenchError> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(["variant", "reached_goal_rate", "unsafe_state_rate", "avg_steps_to_goal", "finite_cost_pct"])?;
    for r in records {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(r: R) -> Result<Vec<MetricsRecord>, BenchError> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

pub fn emit_csv(records: &[MetricsRecord], path: &Path) -> Result<(), BenchError> {
    let f = std::fs::File::create(path)?;
    write_csv(records, std::io::BufWriter::new(f))
}

pub fn parse_csv(path: &Path) -> Result<Vec<MetricsRecord>, BenchError> {
    read_csv(std::fs::File::open(path)?)
}
