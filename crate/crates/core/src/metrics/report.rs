use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{MetricsLog, MetricsRecord, SummaryStats};
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "round,test_accuracy,test_loss,uplink_units,downlink_units,peer_units";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Config(format!("unknown report format '{other}'"))),
        }
    }
}

/// Full run report: resolved configuration, summary and per-round records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: serde_json::Value,
    pub summary: Option<SummaryStats>,
    /// Control-variate vectors exchanged (SCAFFOLD), kept apart from the
    /// model-parameter counters.
    #[serde(default)]
    pub control_units: u64,
    pub records: MetricsLog,
}

impl Report {
    pub fn write(&self, path: &Path, format: ReportFormat) -> Result<()> {
        let io = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut out = BufWriter::new(File::create(path).map_err(io)?);
        match format {
            ReportFormat::Csv => write_csv(&self.records, &mut out).map_err(io)?,
            ReportFormat::Json => {
                serde_json::to_writer_pretty(&mut out, self)
                    .map_err(|e| io(std::io::Error::other(e)))?;
                writeln!(out).map_err(io)?;
            }
        }
        out.flush().map_err(io)
    }

    pub fn read_json(path: &Path) -> Result<Report> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Report(format!("{}: {e}", path.display())))
    }
}

/// CSV with a fixed column order; accuracy and loss carry six decimals.
pub fn write_csv<W: Write>(log: &MetricsLog, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for MetricsRecord {
        round,
        test_accuracy,
        test_loss,
        uplink_units,
        downlink_units,
        peer_units,
    } in log.records()
    {
        writeln!(
            out,
            "{round},{test_accuracy:.6},{test_loss:.6},{uplink_units},{downlink_units},{peer_units}"
        )?;
    }
    Ok(())
}

pub fn emit(
    log: &MetricsLog,
    summary: Option<&SummaryStats>,
    config: &serde_json::Value,
    path: &Path,
    format: ReportFormat,
) -> Result<()> {
    Report {
        config: config.clone(),
        summary: summary.cloned(),
        control_units: 0,
        records: log.clone(),
    }
    .write(path, format)
}
