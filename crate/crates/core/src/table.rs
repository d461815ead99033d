//! The long-format metric table shared by `metrics`, `stats` and `report`.
//!
//! Tab-separated with the header line
//! `model_id, checkpoint_step, seed, group, metric, value` (tabs between
//! the names).
//!
//! `seed` is a seed number or `pooled`. Values are written in Rust's
//! shortest round-trip float notation. Rows are kept in a canonical order so
//! equal tables serialize to equal bytes.

use std::io::{Read, Write};

use thiserror::Error;

use crate::options::SeedKey;
use crate::records::Diagnostic;

pub const HEADER: [&str; 6] = ["model_id", "checkpoint_step", "seed", "group", "metric", "value"];

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub model_id: String,
    pub checkpoint_step: u64,
    pub seed: SeedKey,
    pub group: String,
    pub metric: String,
    pub value: f64,
}

impl MetricRow {
    fn sort_key(&self) -> (&str, u64, SeedKey, &str, &str) {
        (&self.model_id, self.checkpoint_step, self.seed, &self.group, &self.metric)
    }
}

#[derive(Debug, Error)]
pub enum TableError {
    #[error("{0}")]
    Invalid(Diagnostic),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn sort_rows(rows: &mut [MetricRow]) {
    rows.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
}

fn tsv_writer<W: Write>(writer: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().delimiter(b'\t').has_headers(false).from_writer(writer)
}

/// Writes rows in canonical order.
pub fn write_table<W: Write>(rows: &[MetricRow], writer: W) -> Result<(), TableError> {
    let mut sorted: Vec<&MetricRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    let mut w = tsv_writer(writer);
    w.write_record(HEADER)?;
    for r in sorted {
        w.write_record([
            r.model_id.as_str(),
            &r.checkpoint_step.to_string(),
            &r.seed.to_string(),
            &r.group,
            &r.metric,
            &r.value.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a table, rejecting a wrong header, malformed fields and duplicate
/// keys. Diagnostics carry 1-based line numbers.
pub fn read_table<R: Read>(reader: R) -> Result<Vec<MetricRow>, TableError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(false)
        .flexible(true)
        .quoting(false)
        .from_reader(reader);
    let bad = |line: usize, msg: String| TableError::Invalid(Diagnostic::new(line, msg));

    let mut rows = Vec::new();
    let mut saw_header = false;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(i + 1, |p| p.line() as usize);
        if !saw_header {
            if rec.iter().ne(HEADER) {
                return Err(bad(line, format!("expected header '{}'", HEADER.join("\\t"))));
            }
            saw_header = true;
            continue;
        }
        if rec.len() != HEADER.len() {
            return Err(bad(line, format!("expected {} fields, found {}", HEADER.len(), rec.len())));
        }
        let checkpoint_step = rec[1].parse().map_err(|_| bad(line, format!("invalid checkpoint_step '{}'", &rec[1])))?;
        let seed = rec[2].parse().map_err(|e| bad(line, e))?;
        let value: f64 = rec[5].parse().map_err(|_| bad(line, format!("invalid value '{}'", &rec[5])))?;
        if !value.is_finite() {
            return Err(bad(line, format!("non-finite value '{}'", &rec[5])));
        }
        rows.push((
            line,
            MetricRow {
                model_id: rec[0].to_string(),
                checkpoint_step,
                seed,
                group: rec[3].to_string(),
                metric: rec[4].to_string(),
                value,
            },
        ));
    }
    if !saw_header {
        return Err(bad(1, "empty table".into()));
    }
    rows.sort_by(|a, b| a.1.sort_key().cmp(&b.1.sort_key()).then(a.0.cmp(&b.0)));
    for w in rows.windows(2) {
        if w[0].1.sort_key() == w[1].1.sort_key() {
            return Err(bad(w[1].0, format!("duplicate row; first seen on line {}", w[0].0)));
        }
    }
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}
