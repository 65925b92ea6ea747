//! Flat result records and their CSV/JSON serialization.

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalmetrics::RecoveryReport;

/// Exact CSV header; matches the field order of [`ResultRow`].
pub const CSV_HEADER: [&str; 23] = [
    "experiment",
    "p",
    "h",
    "n",
    "d",
    "s_min",
    "delta",
    "trial",
    "seed",
    "method",
    "lambda",
    "gamma",
    "exact_signed_support",
    "support_precision",
    "support_recall",
    "sign_errors",
    "rank_recovered",
    "effective_rank",
    "op_norm_error",
    "frob_error_S",
    "frob_error_L",
    "iterations",
    "wall_ms",
];

/// One `(cell, trial, method)` outcome. `n = 0` marks population-covariance
/// input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub p: usize,
    pub h: usize,
    pub n: usize,
    pub d: usize,
    pub s_min: f64,
    pub delta: f64,
    pub trial: u32,
    pub seed: u64,
    pub method: String,
    pub lambda: f64,
    pub gamma: f64,
    pub exact_signed_support: bool,
    pub support_precision: f64,
    pub support_recall: f64,
    pub sign_errors: usize,
    pub rank_recovered: bool,
    pub effective_rank: usize,
    pub op_norm_error: f64,
    #[serde(rename = "frob_error_S")]
    pub frob_error_s: f64,
    #[serde(rename = "frob_error_L")]
    pub frob_error_l: f64,
    pub iterations: usize,
    pub wall_ms: f64,
}

impl ResultRow {
    pub fn recovery(&self) -> RecoveryReport {
        RecoveryReport {
            exact_signed_support: self.exact_signed_support,
            support_precision: self.support_precision,
            support_recall: self.support_recall,
            sign_errors: self.sign_errors,
            rank_recovered: self.rank_recovered,
            effective_rank: self.effective_rank,
            op_norm_error: self.op_norm_error,
            frob_error_s: self.frob_error_s,
            frob_error_l: self.frob_error_l,
        }
    }

    pub fn success(&self) -> bool {
        self.exact_signed_support && self.rank_recovered
    }

    /// Ordering by cell key `(experiment, method, p, h, n, d, s_min, delta)`,
    /// then trial and seed.
    pub fn key_cmp(&self, other: &Self) -> Ordering {
        self.cell_cmp(other)
            .then(self.trial.cmp(&other.trial))
            .then(self.seed.cmp(&other.seed))
    }

    pub fn cell_cmp(&self, other: &Self) -> Ordering {
        self.experiment
            .cmp(&other.experiment)
            .then_with(|| self.method.cmp(&other.method))
            .then(self.p.cmp(&other.p))
            .then(self.h.cmp(&other.h))
            .then(self.n.cmp(&other.n))
            .then(self.d.cmp(&other.d))
            .then(self.s_min.total_cmp(&other.s_min))
            .then(self.delta.total_cmp(&other.delta))
    }
}

pub fn sort_rows(rows: &mut [ResultRow]) {
    rows.sort_by(ResultRow::key_cmp);
}

/// Concatenates tables and stably sorts by the declared key.
pub fn merge_results(tables: impl IntoIterator<Item = Vec<ResultRow>>) -> Vec<ResultRow> {
    let mut all: Vec<ResultRow> = tables.into_iter().flatten().collect();
    sort_rows(&mut all);
    all
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(Error::param("format", format!("expected csv or json, got `{other}`"))),
        }
    }
}

pub fn results_to_csv(rows: &[ResultRow]) -> Result<Vec<u8>> {
    let mut sorted = rows.to_vec();
    sort_rows(&mut sorted);
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    let csv_err = |source| Error::Csv {
        path: "<memory>".into(),
        source,
    };
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for row in &sorted {
        w.serialize(row).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::io("<memory>", e.into_error()))
}

pub fn results_to_json(rows: &[ResultRow]) -> Result<Vec<u8>> {
    let mut sorted = rows.to_vec();
    sort_rows(&mut sorted);
    let mut bytes = serde_json::to_vec_pretty(&sorted)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Writes the table sorted by key. Non-finite floats become `NaN` in CSV and
/// `null` in JSON.
pub fn emit_results(rows: &[ResultRow], path: impl AsRef<Path>, format: OutputFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = match format {
        OutputFormat::Csv => results_to_csv(rows)?,
        OutputFormat::Json => results_to_json(rows)?,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn parse_results_csv(bytes: &[u8], context: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let header = r.headers().map_err(|source| Error::Csv {
        path: context.into(),
        source,
    })?;
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::Parse {
            context: context.display().to_string(),
            reason: "unexpected CSV header".into(),
        });
    }
    r.deserialize()
        .map(|row| {
            row.map_err(|source| Error::Csv {
                path: context.into(),
                source,
            })
        })
        .collect()
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_results_csv(&bytes, path)
}
