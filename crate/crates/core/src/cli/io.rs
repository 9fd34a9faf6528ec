//! On-disk formats: schema-tagged CSV tables and JSON checkpoints.
//!
//! Every CSV starts with a line `# schema: <name> v<version>` followed by a
//! header row. Readers reject other names and versions.

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::config::ExperimentConfig;
use crate::error::Error;
use crate::policy::{ControllerParams, Parameterization};
use crate::rl::EpochStats;
use crate::tracking::TrackingReport;

pub const SCHEMA_VERSION: u32 = 1;
pub const LEARNING_CURVE: &str = "learning_curve";
pub const TRACKING: &str = "tracking";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn schema_line(name: &str) -> String {
    format!("# schema: {name} v{SCHEMA_VERSION}")
}

fn check_schema(line: &str, name: &str) -> crate::Result<()> {
    let expected = schema_line(name);
    if line.trim_end() == expected {
        return Ok(());
    }
    match line.strip_prefix("# schema: ") {
        Some(found) => Err(Error::Schema(format!("expected `{name} v{SCHEMA_VERSION}`, found `{}`", found.trim_end()))),
        None => Err(Error::Schema(format!("missing schema line, expected `{expected}`"))),
    }
}

/// A parsed schema-tagged CSV: header plus numeric rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> crate::Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
    }

    pub fn values(&self, name: &str) -> crate::Result<Vec<f64>> {
        let i = self.column(name)?;
        Ok(self.rows.iter().map(|r| r[i]).collect())
    }

    /// Columns `prefix1, prefix2, …` in order.
    pub fn numbered(&self, prefix: &str) -> Vec<usize> {
        (1..)
            .map_while(|k| self.header.iter().position(|h| *h == format!("{prefix}{k}")))
            .collect()
    }
}

pub fn read_table(path: &Path, schema: &str) -> anyhow::Result<Table> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut reader = BufReader::new(file);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    if first.is_empty() {
        bail!("{} is empty", path.display());
    }
    check_schema(&first, schema).with_context(|| format!("in {}", path.display()))?;
    let mut csv = csv::Reader::from_reader(reader);
    let header: Vec<String> = csv.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, record) in csv.records().enumerate() {
        let record = record?;
        let row: Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        rows.push(row.with_context(|| format!("{}: bad number in data row {}", path.display(), i + 1))?);
    }
    Ok(Table { header, rows })
}

/// Incremental learning-curve writer; rows are flushed as they arrive so
/// that a failed run leaves its completed epochs on disk.
pub struct CurveWriter {
    out: csv::Writer<BufWriter<File>>,
}

impl CurveWriter {
    pub fn create(path: &Path) -> anyhow::Result<Self> {
        let mut file = BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?);
        writeln!(file, "{}", schema_line(LEARNING_CURVE))?;
        let mut out = csv::Writer::from_writer(file);
        out.write_record(["epoch", "mean_reward", "std_reward", "wall_time_s"])?;
        out.flush()?;
        Ok(Self { out })
    }

    pub fn push(&mut self, s: &EpochStats) -> anyhow::Result<()> {
        self.out.write_record([
            s.epoch.to_string(),
            s.mean_reward.to_string(),
            s.std_reward.to_string(),
            s.wall_time_s.to_string(),
        ])?;
        self.out.flush()?;
        Ok(())
    }
}

pub fn write_tracking(path: &Path, report: &TrackingReport) -> anyhow::Result<()> {
    let mut file = BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?);
    writeln!(file, "{}", schema_line(TRACKING))?;
    let q = report.outputs.first().map_or(0, Vec::len);
    let p = report.inputs.first().map_or(0, Vec::len);
    let mut out = csv::Writer::from_writer(file);
    let mut header = vec!["t".to_string()];
    header.extend((1..=q).map(|k| format!("y{k}")));
    header.extend((1..=q).map(|k| format!("yref{k}")));
    header.extend((1..=p).map(|k| format!("u{k}")));
    header.push("err_l2".into());
    out.write_record(&header)?;
    for (k, e) in report.errors().iter().enumerate() {
        let mut row = vec![report.times[k].to_string()];
        row.extend(report.outputs[k].iter().map(f64::to_string));
        row.extend(report.references[k].iter().map(f64::to_string));
        row.extend(report.inputs[k].iter().map(f64::to_string));
        row.push(e.iter().map(|v| v * v).sum::<f64>().sqrt().to_string());
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Trained parameters together with everything needed to rebuild the
/// controller they belong to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    /// Last completed epoch, `None` for parameters that were never trained.
    pub epoch: Option<usize>,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub parameterization: Parameterization,
    pub theta: ControllerParams,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read checkpoint {}", path.display()))?;
        let c: Self = serde_json::from_str(&text).with_context(|| format!("invalid checkpoint {}", path.display()))?;
        if c.version != CHECKPOINT_VERSION {
            bail!("{}: unsupported checkpoint version {}", path.display(), c.version);
        }
        if c.theta.theta1.len() != c.parameterization.k1() || c.theta.theta2.len() != c.parameterization.k2() {
            bail!("{}: parameter lengths do not match the stored parameterization", path.display());
        }
        Ok(c)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_round_trip_and_version_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        let mut w = CurveWriter::create(&path).unwrap();
        for e in 0..3 {
            w.push(&EpochStats {
                epoch: e,
                mean_reward: -1.0 / (e as f64 + 1.0),
                std_reward: 0.1,
                steps: 10,
                truncated: 0,
                wall_time_s: 0.0,
            })
            .unwrap();
        }
        drop(w);
        let t = read_table(&path, LEARNING_CURVE).unwrap();
        assert_eq!(t.rows.len(), 3);
        assert_eq!(t.values("mean_reward").unwrap()[2], -1.0 / 3.0);
        assert!(read_table(&path, TRACKING).is_err());

        let text = std::fs::read_to_string(&path).unwrap().replace(" v1", " v2");
        std::fs::write(&path, text).unwrap();
        let err = format!("{:#}", read_table(&path, LEARNING_CURVE).unwrap_err());
        assert!(err.contains("v2"), "{err}");
    }

    #[test]
    fn missing_column_is_named() {
        let t = Table {
            header: vec!["t".into()],
            rows: vec![],
        };
        assert!(t.column("y1").unwrap_err().to_string().contains("y1"));
    }
}
