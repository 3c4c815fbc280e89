//! CSV tables. Every file starts with a header row, even when empty.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use biaffine_core::conditions::ConditionRecord;
use biaffine_core::experiment::ConvergenceRun;
use biaffine_core::{Status, Trajectory};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Header line produced by serializing `T::default()`.
pub fn header_of<T: Serialize + Default>() -> Vec<String> {
    let mut w = csv::WriterBuilder::new().has_headers(true).from_writer(Vec::new());
    w.serialize(T::default()).expect("default row serializes");
    let bytes = w.into_inner().expect("in-memory writer");
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(bytes.as_slice());
    let first = r.records().next().expect("header row").expect("valid header");
    first.iter().map(String::from).collect()
}

pub fn write_rows<W: Write, T: Serialize + Default>(w: W, rows: &[T]) -> csv::Result<W> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wtr.write_record(header_of::<T>())?;
    for row in rows {
        wtr.serialize(row)?;
    }
    wtr.into_inner().map_err(|e| e.into_error().into())
}

pub fn write_table<T: Serialize + Default>(path: &Path, rows: &[T]) -> CliResult<()> {
    let f = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = write_rows(BufWriter::new(f), rows).map_err(|e| CliError::csv(path, e))?;
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_table<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::csv(path, e))?;
    r.deserialize().collect::<Result<_, _>>().map_err(|e| CliError::csv(path, e))
}

/// One row of a trace CSV.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub cost: f64,
    pub cost_gap: f64,
    pub grad_norm: f64,
    pub x_inf: f64,
    pub a_inf: f64,
    pub theta_inf: f64,
    #[serde(rename = "Bv_normsq")]
    pub bv_normsq: Option<f64>,
    pub eps1: Option<f64>,
    pub eps2: Option<f64>,
}

pub fn trace_rows(traj: &Trajectory) -> Vec<TraceRow> {
    traj.rows
        .iter()
        .map(|r| TraceRow {
            step: r.step,
            cost: r.cost,
            cost_gap: r.cost_gap,
            grad_norm: r.grad_norm,
            x_inf: r.x_inf,
            a_inf: r.a_inf,
            theta_inf: r.theta_inf,
            bv_normsq: r.certificate.map(|c| c.bv_normsq),
            eps1: r.certificate.map(|c| c.eps1),
            eps2: r.certificate.map(|c| c.eps2),
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConditionRow {
    pub n: usize,
    pub seed: u64,
    pub replica: u64,
    pub inv_norm2: f64,
    #[serde(rename = "B_norm_inf")]
    pub sel_norm_inf: f64,
    #[serde(rename = "B_norm_1")]
    pub sel_norm_1: f64,
    #[serde(rename = "B_norm_2")]
    pub sel_norm_2: f64,
    pub b_inf: f64,
    pub b_1: f64,
    pub c_inf: f64,
    pub c_1: f64,
    pub grad_core_sq: f64,
    pub overlap0: f64,
    pub inv_max: f64,
    pub adj0_inf: f64,
    pub degenerate: bool,
}

impl From<&ConditionRecord> for ConditionRow {
    fn from(rec: &ConditionRecord) -> Self {
        let r = &rec.report;
        Self {
            n: rec.n,
            seed: rec.seed,
            replica: rec.replica,
            inv_norm2: r.inv_norm2,
            sel_norm_inf: r.sel_norm_inf,
            sel_norm_1: r.sel_norm_1,
            sel_norm_2: r.sel_norm_2,
            b_inf: r.b_inf,
            b_1: r.b_1,
            c_inf: r.c_inf,
            c_1: r.c_1,
            grad_core_sq: r.grad_core_sq,
            overlap0: r.overlap0,
            inv_max: r.inv_max,
            adj0_inf: r.adj0_inf,
            degenerate: r.degenerate,
        }
    }
}

pub fn status_label(status: Status) -> String {
    match status {
        Status::Converged => "converged".into(),
        Status::MaxSteps => "max_steps".into(),
        Status::Failed { step } => format!("failed@{step}"),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub seed: u64,
    /// Steps to reach the target gap; empty when capped or failed.
    pub steps: Option<usize>,
    pub failed: bool,
    pub gap: f64,
    pub replica: u64,
    pub status: String,
    pub capped: bool,
    pub steps_taken: usize,
    pub eta: f64,
    pub c0: f64,
    pub halvings: u32,
    pub initial_gap: f64,
    pub mean_contraction: f64,
    pub contraction_c_fit: Option<f64>,
    pub contraction_r2: Option<f64>,
    pub contraction_c_bound: Option<f64>,
    pub error: String,
}

impl From<&ConvergenceRun> for ConvergenceRow {
    fn from(r: &ConvergenceRun) -> Self {
        Self {
            n: r.n,
            seed: r.seed,
            steps: r.steps_to_eps,
            failed: r.failed(),
            gap: r.final_gap,
            replica: r.replica,
            status: if r.error.is_some() { "error".into() } else { status_label(r.status) },
            capped: r.capped(),
            steps_taken: r.steps_taken,
            eta: r.eta,
            c0: r.c0,
            halvings: r.halvings,
            initial_gap: r.initial_gap,
            mean_contraction: r.mean_contraction,
            contraction_c_fit: r.contraction.map(|c| c.c_fit),
            contraction_r2: r.contraction.map(|c| c.r_squared),
            contraction_c_bound: r.contraction.map(|c| c.c_bound),
            error: r.error.clone().unwrap_or_default(),
        }
    }
}

/// First hitting step of one gap threshold in one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HitRow {
    pub n: usize,
    pub seed: u64,
    pub replica: u64,
    pub eps: f64,
    pub steps: Option<usize>,
}

pub fn hit_rows(runs: &[ConvergenceRun]) -> Vec<HitRow> {
    runs.iter()
        .flat_map(|r| {
            r.hits.iter().map(move |&(eps, steps)| HitRow {
                n: r.n,
                seed: r.seed,
                replica: r.replica,
                eps,
                steps,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResonanceRow {
    pub n: usize,
    pub seed: u64,
    pub replica: u64,
    pub failed: bool,
    pub steps_taken: usize,
    pub x0_inf: f64,
    pub max_x_inf: f64,
    pub max_a_inf: f64,
    pub max_theta_inf: f64,
    pub inv_max: f64,
}

impl From<&ConvergenceRun> for ResonanceRow {
    fn from(r: &ConvergenceRun) -> Self {
        Self {
            n: r.n,
            seed: r.seed,
            replica: r.replica,
            failed: r.failed(),
            steps_taken: r.steps_taken,
            x0_inf: r.x0_inf,
            max_x_inf: r.max_x_inf,
            max_a_inf: r.max_a_inf,
            max_theta_inf: r.max_theta_inf,
            inv_max: r.inv_max,
        }
    }
}

/// Writes `(log n, log value)` pairs under the given column names.
pub fn write_plotdata(path: &Path, value_column: &str, points: &[(usize, f64)]) -> CliResult<()> {
    let f = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(f));
    let res = (|| -> csv::Result<()> {
        w.write_record(["log_n", value_column])?;
        for &(n, v) in points {
            w.serialize(((n as f64).ln(), v.ln()))?;
        }
        w.flush()?;
        Ok(())
    })();
    res.map_err(|e| CliError::csv(path, e))
}
