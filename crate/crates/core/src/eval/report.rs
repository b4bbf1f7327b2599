//! Flat benchmark reports. CSV columns:
//! `section,algorithm,phase,N,M,K,metric,value,unit,seed`, one metric per row,
//! empty cells where a column does not apply. JSON wraps the same rows in an
//! object carrying `schema_version`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::bench::{LatencyTable, MemoryReport};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    /// `.json` maps to JSON, anything else to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => ReportFormat::Json,
            _ => ReportFormat::Csv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub section: String,
    pub algorithm: String,
    pub phase: String,
    #[serde(rename = "N")]
    pub n: Option<u64>,
    #[serde(rename = "M")]
    pub m: Option<u64>,
    #[serde(rename = "K")]
    pub k: Option<u64>,
    pub metric: String,
    pub value: f64,
    pub unit: String,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub rows: Vec<ReportRow>,
}

impl Default for Report {
    fn default() -> Self {
        Self { schema_version: REPORT_SCHEMA_VERSION, rows: Vec::new() }
    }
}

fn row(section: &str, algorithm: &str, phase: &str, metric: &str, value: f64, unit: &str) -> ReportRow {
    ReportRow {
        section: section.into(),
        algorithm: algorithm.into(),
        phase: phase.into(),
        n: None,
        m: None,
        k: None,
        metric: metric.into(),
        value,
        unit: unit.into(),
        seed: None,
    }
}

impl Report {
    /// Median time and sample count per record, then one slope row per
    /// (algorithm, phase) that has a fit.
    pub fn from_latency(table: &LatencyTable) -> Self {
        let mut rows = Vec::new();
        for r in &table.records {
            let base = ReportRow {
                n: Some(r.n as u64),
                m: Some(r.m as u64),
                k: Some(r.k as u64),
                seed: Some(r.seed),
                ..row("latency", r.algorithm.name(), r.phase.name(), "median", r.median_seconds, "s")
            };
            rows.push(ReportRow { metric: "reps".into(), value: r.reps as f64, unit: "count".into(), ..base.clone() });
            rows.push(base);
        }
        for s in &table.slopes {
            if let Some(slope) = s.slope {
                let first = table.records.iter().find(|r| r.algorithm == s.algorithm && r.phase == s.phase);
                rows.push(ReportRow {
                    m: first.map(|r| r.m as u64),
                    k: first.map(|r| r.k as u64),
                    seed: first.map(|r| r.seed),
                    ..row("slope", s.algorithm.name(), s.phase.name(), "loglog_slope", slope, "1")
                });
            }
        }
        Self { rows, ..Self::default() }
    }

    /// Scalar counts per window size for both layouts, plus their ratio.
    /// `N` holds the voxel count and `K` the window volume.
    pub fn from_memory(report: &MemoryReport) -> Self {
        let mut rows = Vec::new();
        for c in &report.cells {
            let cell = |algorithm: &str, metric: &str, value: f64, unit: &str| ReportRow {
                n: Some(report.n_voxels as u64),
                k: Some(c.window_volume as u64),
                ..row("memory", algorithm, "", metric, value, unit)
            };
            for (name, l) in [("decomposed", &c.decomposed), ("full", &c.full)] {
                rows.push(cell(name, "per_point", l.per_point as f64, "scalars"));
                rows.push(cell(name, "per_offset", l.per_offset as f64, "scalars"));
                rows.push(cell(name, "per_pair", l.per_pair as f64, "scalars"));
                rows.push(cell(name, "total", l.total() as f64, "scalars"));
            }
            rows.push(cell("full/decomposed", "ratio", c.ratio, "1"));
        }
        Self { rows, ..Self::default() }
    }

    /// One row per epoch; `N` holds the epoch index.
    pub fn from_losses(losses: &[f64], seed: u64) -> Self {
        let rows = losses
            .iter()
            .enumerate()
            .map(|(e, &l)| ReportRow { n: Some(e as u64), seed: Some(seed), ..row("train", "toy", "epoch", "loss", l, "nats") })
            .collect();
        Self { rows, ..Self::default() }
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Format(format!("{other:?}")),
    }
}

const CSV_HEADER: [&str; 10] = ["section", "algorithm", "phase", "N", "M", "K", "metric", "value", "unit", "seed"];

pub fn write_report_to(report: &Report, w: &mut impl Write, format: ReportFormat) -> Result<()> {
    match format {
        ReportFormat::Csv => {
            let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
            out.write_record(CSV_HEADER).map_err(csv_err)?;
            for r in &report.rows {
                out.serialize(r).map_err(csv_err)?;
            }
            out.flush()?;
        }
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut *w, report).map_err(|e| Error::Format(e.to_string()))?;
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn read_report_from(r: impl Read, format: ReportFormat) -> Result<Report> {
    match format {
        ReportFormat::Csv => {
            let mut reader = csv::Reader::from_reader(r);
            let header: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(String::from).collect();
            if header != CSV_HEADER {
                return Err(Error::Format(format!("unexpected report header {header:?}")));
            }
            let rows = reader.deserialize().collect::<std::result::Result<Vec<ReportRow>, _>>().map_err(csv_err)?;
            Ok(Report { rows, ..Report::default() })
        }
        ReportFormat::Json => {
            let report: Report = serde_json::from_reader(r).map_err(|e| Error::Format(e.to_string()))?;
            if report.schema_version != REPORT_SCHEMA_VERSION {
                return Err(Error::Format(format!("unsupported report schema {}", report.schema_version)));
            }
            Ok(report)
        }
    }
}

pub fn emit_report(report: &Report, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_report_to(report, &mut w, format)?;
    w.flush()?;
    Ok(())
}

pub fn read_report(path: impl AsRef<Path>, format: ReportFormat) -> Result<Report> {
    read_report_from(BufReader::new(File::open(path)?), format)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::run_memory_bench;

    #[test]
    fn empty_csv_is_header_only() {
        let mut buf = Vec::new();
        write_report_to(&Report::default(), &mut buf, ReportFormat::Csv).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "section,algorithm,phase,N,M,K,metric,value,unit,seed\n");
    }

    #[test]
    fn round_trips() {
        let mem = Report::from_memory(&run_memory_bench(1000, &[3, 5], 16, 0.5).unwrap());
        let mut report = Report::from_losses(&[1.0986, 0.5, 1e-7, 0.1 + 0.2], 9);
        report.rows.extend(mem.rows);
        for format in [ReportFormat::Csv, ReportFormat::Json] {
            let mut buf = Vec::new();
            write_report_to(&report, &mut buf, format).unwrap();
            assert_eq!(read_report_from(buf.as_slice(), format).unwrap(), report);
        }
    }

    #[test]
    fn bad_inputs() {
        assert!(matches!(emit_report(&Report::default(), "/nonexistent/dir/r.csv", ReportFormat::Csv), Err(Error::Io(_))));
        assert!(read_report_from("a,b\n1,2\n".as_bytes(), ReportFormat::Csv).is_err());
        assert!(read_report_from(r#"{"schema_version": 99, "rows": []}"#.as_bytes(), ReportFormat::Json).is_err());
        assert_eq!(ReportFormat::from_path(Path::new("x.JSON")), ReportFormat::Json);
    }
}
