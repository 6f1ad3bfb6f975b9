//! Report rendering.

use clap::ValueEnum;
use serde::Serialize;

use crate::config::Enumeration;
use crate::error::CliError;

/// Identifier written into every JSON report.
pub const REPORT_SCHEMA: &str = "rmflab/report/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Serialize)]
struct JsonReport<'a, P, S, R> {
    schema: &'static str,
    experiment: &'a str,
    seed: u64,
    enumeration: Enumeration,
    params: &'a P,
    summary: &'a S,
    rows: &'a [R],
}

/// The rendered bytes plus the invariants that failed.
pub struct Output {
    pub bytes: Vec<u8>,
    pub violations: Vec<String>,
}

/// Shared header of one report.
pub struct Header<'a, P> {
    pub experiment: &'a str,
    pub seed: u64,
    pub enumeration: Enumeration,
    pub params: &'a P,
}

/// JSON carries header, summary and rows; CSV carries the rows only.
pub fn render<P: Serialize, S: Serialize, R: Serialize>(
    format: Format,
    header: &Header<'_, P>,
    summary: &S,
    rows: &[R],
) -> Result<Vec<u8>, CliError> {
    match format {
        Format::Json => {
            let report = JsonReport {
                schema: REPORT_SCHEMA,
                experiment: header.experiment,
                seed: header.seed,
                enumeration: header.enumeration,
                params: header.params,
                summary,
                rows,
            };
            let mut bytes = serde_json::to_vec_pretty(&report).map_err(|e| CliError::Io(e.to_string()))?;
            bytes.push(b'\n');
            Ok(bytes)
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in rows {
                w.serialize(r).map_err(|e| CliError::Io(e.to_string()))?;
            }
            w.into_inner().map_err(|e| CliError::Io(e.to_string()))
        }
    }
}
