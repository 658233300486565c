//! Experiment reports and their JSON and CSV forms.
//!
//! plotdata.csv has the fixed columns `experiment,rep,stat,value`, one row
//! per (replication, statistic). records.csv is the same data in wide form:
//! `rep,selected` followed by one column per statistic in sorted order.

use crate::config::ExperimentConfig;
use sblab_core::{Error, Model, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub rep: usize,
    pub stats: BTreeMap<String, f64>,
    pub selected: Option<Model>,
    pub warnings: Vec<String>,
}

impl Record {
    pub fn new(rep: usize) -> Self {
        Record { rep, stats: BTreeMap::new(), selected: None, warnings: Vec::new() }
    }

    pub fn set(&mut self, name: impl Into<String>, value: f64) {
        self.stats.insert(name.into(), value);
    }
}

/// Mean and standard error of a statistic over the replications that
/// report it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub se: f64,
    pub count: usize,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Aggregate { mean: 0.0, se: 0.0, count: 0 };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let se = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / ((n - 1) * n) as f64).sqrt()
        } else {
            0.0
        };
        Aggregate { mean, se, count: n }
    }
}

/// Aggregates over records, taken in replication order.
pub fn aggregate(records: &[Record]) -> BTreeMap<String, Aggregate> {
    let mut cols: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in records {
        for (k, v) in &r.stats {
            cols.entry(k.clone()).or_default().push(*v);
        }
    }
    cols.into_iter().map(|(k, v)| (k, Aggregate::of(&v))).collect()
}

/// Default constants in force for a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub version: String,
    pub neighborhood_m_default: f64,
    pub dedup_tol_default: f64,
    pub rank_tol: f64,
    pub lasso_tol: f64,
    pub marginal: sblab_core::exact::MarginalConfig,
    pub enum_budget_default: f64,
    pub diag: sblab_core::diagnostics::DiagConfig,
    pub tv_draws_default: usize,
}

impl Default for Constants {
    fn default() -> Self {
        Constants {
            version: env!("CARGO_PKG_VERSION").to_string(),
            neighborhood_m_default: sblab_core::bvm::DEFAULT_M,
            dedup_tol_default: sblab_core::prediction::DEFAULT_DEDUP_TOL,
            rank_tol: sblab_core::model::RANK_TOL,
            lasso_tol: sblab_core::lasso::DEFAULT_TOL,
            marginal: sblab_core::exact::MarginalConfig::default(),
            enum_budget_default: sblab_core::exact::EnumConfig::default().budget,
            diag: sblab_core::diagnostics::DiagConfig::default(),
            tv_draws_default: sblab_core::bvm::TvConfig::default().mc_draws,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub constants: Constants,
    pub records: Vec<Record>,
    pub aggregates: BTreeMap<String, Aggregate>,
    /// Structured output of single-fit subcommands.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub details: Option<serde_json::Value>,
}

impl ExperimentReport {
    pub fn new(config: &ExperimentConfig, records: Vec<Record>) -> Self {
        ExperimentReport {
            experiment: config.experiment.name().to_string(),
            seed: config.seed,
            config: config.clone(),
            constants: Constants::default(),
            aggregates: aggregate(&records),
            records,
            details: None,
        }
    }

    pub fn mean(&self, stat: &str) -> Option<f64> {
        self.aggregates.get(stat).map(|a| a.mean)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes report.json, records.csv and plotdata.csv into `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.to_json())?;
        self.write_records(&dir.join("records.csv"))?;
        emit_plotdata(self, &dir.join("plotdata.csv"))
    }

    pub fn write_records(&self, path: &Path) -> Result<()> {
        let names: BTreeSet<&String> = self.records.iter().flat_map(|r| r.stats.keys()).collect();
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        let mut header = vec!["rep".to_string(), "selected".to_string()];
        header.extend(names.iter().map(|s| s.to_string()));
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.records {
            let mut row = vec![r.rep.to_string(), r.selected.as_ref().map(|m| m.to_string()).unwrap_or_default()];
            row.extend(names.iter().map(|k| r.stats.get(*k).map(|v| v.to_string()).unwrap_or_default()));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

pub const PLOT_COLUMNS: [&str; 4] = ["experiment", "rep", "stat", "value"];

pub fn emit_plotdata(report: &ExperimentReport, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_plotdata(report, file)
}

pub fn write_plotdata<W: Write>(report: &ExperimentReport, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(PLOT_COLUMNS).map_err(csv_err)?;
    for r in &report.records {
        for (k, v) in &r.stats {
            wr.write_record([report.experiment.as_str(), &r.rep.to_string(), k, &v.to_string()]).map_err(csv_err)?;
        }
    }
    wr.flush()?;
    Ok(())
}

/// Rows of a plotdata file as (experiment, rep, stat, value).
pub fn read_plotdata(path: &Path) -> Result<Vec<(String, usize, String, f64)>> {
    let mut rd = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = rd.headers().map_err(csv_err)?.clone();
    if header.iter().ne(PLOT_COLUMNS) {
        return Err(Error::Parse { line: 1, msg: format!("unexpected plotdata header {header:?}") });
    }
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let bad = |m: &str| Error::Parse { line: i + 2, msg: m.to_string() };
        let rep = rec[1].parse().map_err(|_| bad("rep is not an integer"))?;
        let value = rec[3].parse().map_err(|_| bad("value is not a number"))?;
        out.push((rec[0].to_string(), rep, rec[2].to_string(), value));
    }
    Ok(out)
}
