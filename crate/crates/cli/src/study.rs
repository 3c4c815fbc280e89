//! Parallel study runners and their on-disk outputs.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use biaffine_core::conditions::{condition_record, fit_condition_records, ConditionStudy, ScalingFit};
use biaffine_core::ensembles::EnsembleSpec;
use biaffine_core::experiment::{
    convergence_run, summarize_convergence, summarize_resonance, ConvergenceRun, ConvergenceSummary,
    ExperimentConfig, ResonanceAudit,
};
use biaffine_core::stats::RunningMoments;
use biaffine_core::weingarten::{
    gaussian_moment_block, mc_orthogonal_block, GaussianMomentReport, MomentEstimate, MomentOrder, MIN_SAMPLES,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::tables::{
    hit_rows, write_plotdata, write_table, ConditionRow, ConvergenceRow, ResonanceRow,
};

/// Samples per Monte Carlo block; block `i` draws from substream `mix(seed, i)`.
pub const MC_BLOCK: usize = 10_000;

/// Fixed-size worker pool. Results always come back in input order.
pub struct Workers {
    pool: rayon::ThreadPool,
}

impl Workers {
    pub fn new(threads: Option<usize>) -> CliResult<Self> {
        if threads == Some(0) {
            return Err(CliError::Config("--threads must be >= 1".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.unwrap_or(0))
            .build()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
        Ok(Self { pool })
    }

    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        self.pool.install(|| items.par_iter().map(f).collect())
    }
}

fn grid(ns: &[usize], seeds: u64) -> Vec<(usize, u64)> {
    ns.iter().flat_map(|&n| (0..seeds).map(move |r| (n, r))).collect()
}

pub fn condition_study(
    workers: &Workers,
    template: &EnsembleSpec,
    ns: &[usize],
    seeds: u64,
    master: u64,
) -> CliResult<ConditionStudy> {
    let records = workers.map(&grid(ns, seeds), |&(n, r)| condition_record(template, n, r, master));
    let mut records = records.into_iter().collect::<Result<Vec<_>, _>>()?;
    let fits = fit_condition_records(&mut records)?;
    Ok(ConditionStudy { records, fits })
}

/// Every `(n, replica)` run of `cfg`, sorted by `(n, replica)`.
pub fn convergence_runs(workers: &Workers, cfg: &ExperimentConfig) -> CliResult<Vec<ConvergenceRun>> {
    cfg.validate()?;
    Ok(workers.map(&grid(&cfg.ns, cfg.seeds), |&(n, r)| convergence_run(cfg, n, r)))
}

pub fn convergence_study(
    workers: &Workers,
    cfg: &ExperimentConfig,
) -> CliResult<(Vec<ConvergenceRun>, ConvergenceSummary)> {
    let mut runs = convergence_runs(workers, cfg)?;
    let summary = summarize_convergence(&mut runs);
    Ok((runs, summary))
}

pub fn resonance_audit(workers: &Workers, cfg: &ExperimentConfig) -> CliResult<(Vec<ConvergenceRun>, ResonanceAudit)> {
    let mut runs = convergence_runs(workers, cfg)?;
    let audit = summarize_resonance(&mut runs);
    Ok((runs, audit))
}

fn blocks(samples: usize) -> CliResult<Vec<(u64, usize)>> {
    if samples < MIN_SAMPLES {
        return Err(CliError::Config(format!(
            "Monte Carlo needs at least {MIN_SAMPLES} samples, got {samples}"
        )));
    }
    Ok((0..samples.div_ceil(MC_BLOCK))
        .map(|i| (i as u64, MC_BLOCK.min(samples - i * MC_BLOCK)))
        .collect())
}

fn merge_in_order(parts: impl IntoIterator<Item = RunningMoments>) -> RunningMoments {
    let mut acc = RunningMoments::new();
    for p in parts {
        acc.merge(&p);
    }
    acc
}

/// Haar Monte Carlo estimate, identical for any thread count.
pub fn orthogonal_moment(
    workers: &Workers,
    v: &[f64],
    b: &[f64],
    c: &[f64],
    order: MomentOrder,
    samples: usize,
    seed: u64,
) -> CliResult<MomentEstimate> {
    let parts = workers.map(&blocks(samples)?, |&(i, len)| mc_orthogonal_block(v, b, c, order, len, seed, i));
    let parts = parts.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(MomentEstimate::from_moments(&merge_in_order(parts)))
}

pub fn gaussian_moments(
    workers: &Workers,
    b: &[f64],
    c: &[f64],
    samples: usize,
    seed: u64,
) -> CliResult<GaussianMomentReport> {
    if b.is_empty() {
        return Err(CliError::Config("moment vectors must be non-empty".into()));
    }
    let parts = workers.map(&blocks(samples)?, |&(i, len)| gaussian_moment_block(b, c, len, seed, i));
    let parts = parts.into_iter().collect::<Result<Vec<_>, _>>()?;
    let (overlap, product): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
    Ok(GaussianMomentReport::from_moments(
        b,
        c,
        &merge_in_order(overlap),
        &merge_in_order(product),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitPointJson {
    pub n: usize,
    pub value: f64,
    pub log_stderr: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitJson {
    pub quantity: String,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub excluded: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flagged: Option<bool>,
    pub points: Vec<FitPointJson>,
}

impl From<&ScalingFit> for FitJson {
    fn from(f: &ScalingFit) -> Self {
        Self {
            quantity: f.quantity.clone(),
            slope: f.slope,
            intercept: f.intercept,
            r_squared: f.r_squared,
            excluded: f.excluded,
            flagged: None,
            points: f
                .points
                .iter()
                .map(|p| FitPointJson {
                    n: p.n,
                    value: p.value,
                    log_stderr: p.log_stderr,
                    count: p.count,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unfitted {
    pub quantity: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceJson {
    pub total: usize,
    pub failed: usize,
    pub capped: usize,
    pub fail_fraction: f64,
    /// `1 - 2 (alpha - gamma)`
    pub predicted_exponent: f64,
    pub median_steps: Vec<(usize, f64)>,
}

/// Contents of `fits.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitsFile {
    pub study: String,
    pub fits: Vec<FitJson>,
    #[serde(default)]
    pub unfitted: Vec<Unfitted>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceJson>,
}

impl FitsFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::json(path, e))
    }

    pub fn fit(&self, quantity: &str) -> Option<&FitJson> {
        self.fits.iter().find(|f| f.quantity == quantity)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let f = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::json(path, e))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn fit_points(fit: &ScalingFit) -> Vec<(usize, f64)> {
    fit.points.iter().map(|p| (p.n, p.value)).collect()
}

/// `conditions.csv`, `fits.json` and one `plotdata_<quantity>.csv` per fit.
pub fn write_condition_outputs(dir: &Path, study: &ConditionStudy) -> CliResult<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let mut written = Vec::new();
    let rows: Vec<ConditionRow> = study.records.iter().map(ConditionRow::from).collect();
    let p = dir.join("conditions.csv");
    write_table(&p, &rows)?;
    written.push(p);
    let fits = FitsFile {
        study: "scaling".into(),
        fits: study.fits.iter().map(FitJson::from).collect(),
        unfitted: Vec::new(),
        convergence: None,
    };
    let p = dir.join("fits.json");
    write_json(&p, &fits)?;
    written.push(p);
    for fit in &study.fits {
        let p = dir.join(format!("plotdata_{}.csv", fit.quantity));
        write_plotdata(&p, &format!("log_{}", fit.quantity), &fit_points(fit))?;
        written.push(p);
    }
    Ok(written)
}

/// `convergence.csv`, `hits.csv`, `fits.json` and `plotdata_steps.csv`.
pub fn write_convergence_outputs(
    dir: &Path,
    cfg: &ExperimentConfig,
    runs: &[ConvergenceRun],
    summary: &ConvergenceSummary,
) -> CliResult<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let mut written = Vec::new();
    let rows: Vec<ConvergenceRow> = runs.iter().map(ConvergenceRow::from).collect();
    let p = dir.join("convergence.csv");
    write_table(&p, &rows)?;
    written.push(p);
    let p = dir.join("hits.csv");
    write_table(&p, &hit_rows(runs))?;
    written.push(p);

    let fits = FitsFile {
        study: "converge".into(),
        fits: summary.steps_fit.iter().map(FitJson::from).collect(),
        unfitted: summary
            .fit_error
            .iter()
            .map(|e| Unfitted {
                quantity: "median_steps".into(),
                reason: e.clone(),
            })
            .collect(),
        convergence: Some(ConvergenceJson {
            total: summary.total,
            failed: summary.failed,
            capped: summary.capped,
            fail_fraction: summary.fail_fraction(),
            predicted_exponent: 1.0 - 2.0 * (cfg.alpha - cfg.gamma),
            median_steps: summary.median_steps.clone(),
        }),
    };
    let p = dir.join("fits.json");
    write_json(&p, &fits)?;
    written.push(p);
    let p = dir.join("plotdata_steps.csv");
    write_plotdata(&p, "log_median_steps", &summary.median_steps)?;
    written.push(p);
    Ok(written)
}

/// `resonance.csv`, `fits.json` and one `plotdata_<quantity>.csv` per fit.
pub fn write_resonance_outputs(dir: &Path, runs: &[ConvergenceRun], audit: &ResonanceAudit) -> CliResult<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let mut written = Vec::new();
    let rows: Vec<ResonanceRow> = runs.iter().map(ResonanceRow::from).collect();
    let p = dir.join("resonance.csv");
    write_table(&p, &rows)?;
    written.push(p);
    let fits = FitsFile {
        study: "resonance".into(),
        fits: audit
            .fits
            .iter()
            .map(|f| FitJson {
                flagged: Some(f.flagged),
                ..FitJson::from(&f.fit)
            })
            .collect(),
        unfitted: audit
            .unfitted
            .iter()
            .map(|(q, r)| Unfitted {
                quantity: q.clone(),
                reason: r.clone(),
            })
            .collect(),
        convergence: None,
    };
    let p = dir.join("fits.json");
    write_json(&p, &fits)?;
    written.push(p);
    for f in &audit.fits {
        let p = dir.join(format!("plotdata_{}.csv", f.fit.quantity));
        write_plotdata(&p, &format!("log_{}", f.fit.quantity), &fit_points(&f.fit))?;
        written.push(p);
    }
    Ok(written)
}

/// Fails the study when more than half of the runs failed.
pub fn check_fail_rate(runs: &[ConvergenceRun]) -> CliResult<()> {
    let failed = runs.iter().filter(|r| r.failed()).count();
    if 2 * failed > runs.len() {
        return Err(CliError::StudyFailed {
            failed,
            total: runs.len(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tables::read_table;
    use biaffine_core::ensembles::stream;
    use biaffine_core::weingarten::mc_orthogonal_moment;

    #[test]
    fn block_layout() {
        assert!(blocks(MIN_SAMPLES - 1).is_err());
        let b = blocks(25_000).unwrap();
        assert_eq!(b, vec![(0, 10_000), (1, 10_000), (2, 5_000)]);
    }

    #[test]
    fn thread_count_does_not_change_estimates() {
        let v = [1.0, 2.0, 0.5];
        let b = [1.0, 0.0, 0.0];
        let c = [0.0, 1.0, 1.0];
        let one = orthogonal_moment(&Workers::new(Some(1)).unwrap(), &v, &b, &c, MomentOrder::Fourth, 30_000, 4).unwrap();
        let three = orthogonal_moment(&Workers::new(Some(3)).unwrap(), &v, &b, &c, MomentOrder::Fourth, 30_000, 4).unwrap();
        assert_eq!(one, three);
        let serial = mc_orthogonal_moment(&v, &b, &c, MomentOrder::Fourth, 30_000, &mut stream(99)).unwrap();
        assert!((one.estimate - serial.estimate).abs() < 5.0 * (one.stderr + serial.stderr));
    }

    #[test]
    fn zero_threads_rejected() {
        assert!(matches!(Workers::new(Some(0)), Err(CliError::Config(_))));
    }

    #[test]
    fn convergence_outputs_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::new(EnsembleSpec::gaussian(1, 0), vec![4, 8, 16], 2).unwrap();
        let workers = Workers::new(Some(2)).unwrap();
        let (runs, summary) = convergence_study(&workers, &cfg).unwrap();
        write_convergence_outputs(dir.path(), &cfg, &runs, &summary).unwrap();
        let back: Vec<ConvergenceRow> = read_table(&dir.path().join("convergence.csv")).unwrap();
        let rows: Vec<ConvergenceRow> = runs.iter().map(ConvergenceRow::from).collect();
        assert_eq!(back.len(), rows.len());
        for (a, b) in back.iter().zip(&rows) {
            assert_eq!(format!("{a:?}"), format!("{b:?}"));
        }
        let fits = FitsFile::load(&dir.path().join("fits.json")).unwrap();
        let conv = fits.convergence.unwrap();
        assert_eq!(conv.total, 6);
        assert_eq!(conv.predicted_exponent, 1.0);
    }

    #[test]
    fn empty_study_writes_header_only_files() {
        let dir = tempfile::tempdir().unwrap();
        let study = ConditionStudy {
            records: Vec::new(),
            fits: Vec::new(),
        };
        write_condition_outputs(dir.path(), &study).unwrap();
        let text = fs::read_to_string(dir.path().join("conditions.csv")).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("n,seed,replica,inv_norm2,"));
    }

    #[test]
    fn condition_fits_json_schema() {
        let dir = tempfile::tempdir().unwrap();
        let workers = Workers::new(Some(2)).unwrap();
        let study = condition_study(&workers, &EnsembleSpec::gaussian(2, 0), &[8, 16, 32], 2, 3).unwrap();
        write_condition_outputs(dir.path(), &study).unwrap();
        let v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("fits.json")).unwrap()).unwrap();
        for f in v["fits"].as_array().unwrap() {
            for key in ["quantity", "slope", "intercept", "r_squared"] {
                assert!(!f[key].is_null(), "{key}");
            }
        }
        let back: Vec<ConditionRow> = read_table(&dir.path().join("conditions.csv")).unwrap();
        let rows: Vec<ConditionRow> = study.records.iter().map(ConditionRow::from).collect();
        assert_eq!(back, rows);
        let serial = biaffine_core::conditions::condition_study(&EnsembleSpec::gaussian(2, 0), &[8, 16, 32], 2, 3).unwrap();
        assert_eq!(serial, study);
    }
}
