use std::fs;
use std::path::{Path, PathBuf};

use biaffine_core::conditions::{check_conditions, ConditionReport};
use biaffine_core::ensembles::{EnsembleSpec, InverseHandle};
use biaffine_core::experiment::summarize_resonance;
use biaffine_core::gd::default_step_size;
use biaffine_core::linalg::dot;
use biaffine_core::weingarten::{
    chi_eq_printed, chi_haar, chi_ueq_printed, compare_fourth_moment, fourth_moment_closed,
    fourth_moment_pairing_sum, fourth_moment_printed, second_moment_closed, second_moment_pairing_sum,
    weingarten_table, wg_k2_closed, wg_k2_printed, MomentEstimate, MomentOrder,
};
use biaffine_core::{run_gd, CostSpec, DesignProblem, GdConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::config::{experiment_config, parse_cost, ConfigFile, EnsembleArg, Globals, StudyArgs};
use crate::error::{CliError, CliResult};
use crate::problem::{CostData, ProblemFile};
use crate::study::{
    check_fail_rate, condition_study, convergence_study, convergence_runs, ensure_dir, gaussian_moments,
    orthogonal_moment, write_condition_outputs, write_convergence_outputs, write_resonance_outputs, Workers,
};
use crate::tables::{status_label, trace_rows, write_table};

#[derive(Debug, Parser)]
#[command(name = "biaffine", version, about = "Bi-affine design problems: generation, gradient descent and scaling studies")]
pub struct Cli {
    /// Master seed (problem seed for `gen`, Monte Carlo seed for `weingarten`).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output directory (`gen` also accepts a `.json` file path).
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// JSON file whose fields override the flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a problem instance and write it as JSON.
    Gen(GenArgs),
    /// Run gradient descent on a problem file and write its trace.
    Solve(SolveArgs),
    /// Measure the convergence conditions of a problem file.
    Check(CheckArgs),
    /// Condition-number scaling study.
    Scaling(StudyArgs),
    /// Steps-to-epsilon scaling study.
    Converge(StudyArgs),
    /// Trajectory maxima and max-entry audit.
    Resonance(StudyArgs),
    /// Weingarten tables, closed-form moments and Monte Carlo checks.
    Weingarten(WeingartenArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum, default_value = "gaussian")]
    pub ensemble: EnsembleArg,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0.5)]
    pub gamma: f64,
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub problem: PathBuf,
    /// Step size; defaults to c0 n^(alpha - 3 gamma - 1).
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub c0: f64,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.5)]
    pub gamma: f64,
    /// Number of updates T.
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    /// Stop once the cost gap is at most this value.
    #[arg(long)]
    pub eps_stop: Option<f64>,
    /// Record the per-step descent certificate.
    #[arg(long)]
    pub certificate: bool,
    /// `t,mu,L` with an absolute target t; overrides the file's cost.
    #[arg(long, value_parser = parse_cost)]
    pub cost: Option<CostData>,
    /// JSON array with the initial design; zeros by default.
    #[arg(long)]
    pub theta0: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HandleArg {
    /// Structured inverse when `meta` regenerates the stored matrix.
    Auto,
    Dense,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long)]
    pub problem: PathBuf,
    #[arg(long, value_enum, default_value = "auto")]
    pub handle: HandleArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WgMode {
    Table,
    Closed2,
    Closed4,
    Mc,
    Compare,
    Gaussian,
}

#[derive(Debug, Args)]
pub struct WeingartenArgs {
    #[arg(long, value_enum)]
    pub mode: WgMode,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, default_value_t = 4)]
    pub d: usize,
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    /// Moment order for `mc`: 2 or 4.
    #[arg(long, default_value_t = 4)]
    pub order: u32,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub v: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub b: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub c: Option<Vec<f64>>,
}

/// Runs one parsed command line, returning the JSON printed on stdout.
pub fn run(cli: Cli) -> CliResult<Value> {
    let file = cli.config.as_deref().map(ConfigFile::load).transpose()?;
    let globals = Globals {
        seed: cli.seed,
        out: cli.out.clone(),
        threads: cli.threads,
    }
    .apply(file.as_ref());
    match &cli.command {
        Command::Gen(a) => gen(a, &globals),
        Command::Solve(a) => solve(a, &globals),
        Command::Check(a) => check(a),
        Command::Scaling(a) => scaling(a, file.as_ref(), &globals),
        Command::Converge(a) => converge(a, file.as_ref(), &globals),
        Command::Resonance(a) => resonance(a, file.as_ref(), &globals),
        Command::Weingarten(a) => weingarten(a, &globals),
    }
}

fn paths(written: &[PathBuf]) -> Value {
    written.iter().map(|p| p.display().to_string()).collect()
}

fn gen(a: &GenArgs, g: &Globals) -> CliResult<Value> {
    let mut spec = match a.ensemble {
        EnsembleArg::Gaussian => EnsembleSpec::gaussian(a.n, g.seed),
        EnsembleArg::Svd => EnsembleSpec::svd(a.n, a.gamma, g.seed),
    };
    if let Some(k) = a.k {
        spec.k = k;
    }
    spec.validate()?;
    let inst = spec.generate()?;
    let path = if g.out.extension().is_some_and(|e| e == "json") {
        if let Some(parent) = g.out.parent().filter(|p| !p.as_os_str().is_empty()) {
            ensure_dir(parent)?;
        }
        g.out.clone()
    } else {
        ensure_dir(&g.out)?;
        g.out.join("problem.json")
    };
    ProblemFile::from_instance(&inst).save(&path)?;
    Ok(json!({ "problem": path.display().to_string(), "n": a.n, "seed": g.seed }))
}

fn load_theta0(path: &Path, m: usize) -> CliResult<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let theta: Vec<f64> = serde_json::from_str(&text).map_err(|e| CliError::json(path, e))?;
    if theta.len() != m {
        return Err(CliError::Config(format!("theta0 has length {}, expected m = {m}", theta.len())));
    }
    Ok(theta)
}

fn solve(a: &SolveArgs, g: &Globals) -> CliResult<Value> {
    let file = ProblemFile::load(&a.problem)?;
    let loaded = file.resolve(false)?;
    let sys = loaded.system;
    let (n, m) = (sys.n(), sys.m());
    let cost = match (a.cost, loaded.cost) {
        (Some(c), _) => c.spec()?,
        (None, Some(c)) => c,
        (None, None) => {
            let x0 = sys.forward_solve(&vec![0.0; m])?;
            CostSpec::new(dot(&loaded.c, &x0) + 1.0, 1.0, 2.0)?
        }
    };
    let problem = DesignProblem::new(sys, loaded.c, cost)?;
    let eta = a.eta.unwrap_or_else(|| default_step_size(n, a.alpha, a.gamma, a.c0));
    let mut cfg = GdConfig::new(eta, a.steps)?.with_certificate(a.certificate);
    if let Some(e) = a.eps_stop {
        cfg = cfg.with_eps_stop(e);
    }
    cfg.validate()?;
    let theta0 = match &a.theta0 {
        Some(p) => load_theta0(p, m)?,
        None => vec![0.0; m],
    };
    let traj = run_gd(&problem, &cfg, &theta0)?;
    ensure_dir(&g.out)?;
    let trace = g.out.join("trace.csv");
    write_table(&trace, &trace_rows(&traj))?;
    Ok(json!({
        "trace": trace.display().to_string(),
        "eta": eta,
        "status": status_label(traj.status),
        "steps_taken": traj.steps_taken(),
        "final_cost": traj.rows.last().map(|r| r.cost),
        "final_gap": traj.final_gap(),
        "final_theta": traj.final_theta,
    }))
}

pub fn report_json(r: &ConditionReport) -> Value {
    let mut map = serde_json::Map::new();
    map.insert("n".into(), json!(r.n));
    for (name, v) in ConditionReport::FIELD_NAMES.iter().zip(r.values()) {
        map.insert((*name).into(), json!(v));
    }
    map.insert("degenerate".into(), json!(r.degenerate));
    Value::Object(map)
}

fn check(a: &CheckArgs) -> CliResult<Value> {
    let file = ProblemFile::load(&a.problem)?;
    let loaded = file.resolve(a.handle == HandleArg::Auto)?;
    let report = check_conditions(&loaded.system, &loaded.c, &loaded.handle)?;
    let handle = match loaded.handle {
        InverseHandle::Gaussian { .. } => "gaussian",
        InverseHandle::Svd { .. } => "svd",
        InverseHandle::Dense => "dense",
    };
    Ok(json!({ "handle": handle, "report": report_json(&report) }))
}

fn scaling(a: &StudyArgs, file: Option<&ConfigFile>, g: &Globals) -> CliResult<Value> {
    let cfg = experiment_config(a, file, g.seed)?;
    let workers = Workers::new(g.threads)?;
    let study = condition_study(&workers, &cfg.ensemble, &cfg.ns, cfg.seeds, cfg.master_seed)?;
    let written = write_condition_outputs(&g.out, &study)?;
    let fits: Vec<Value> = study
        .fits
        .iter()
        .map(|f| json!({ "quantity": f.quantity, "slope": f.slope, "r_squared": f.r_squared }))
        .collect();
    Ok(json!({ "files": paths(&written), "fits": fits }))
}

fn converge(a: &StudyArgs, file: Option<&ConfigFile>, g: &Globals) -> CliResult<Value> {
    let cfg = experiment_config(a, file, g.seed)?;
    let workers = Workers::new(g.threads)?;
    let (runs, summary) = convergence_study(&workers, &cfg)?;
    let written = write_convergence_outputs(&g.out, &cfg, &runs, &summary)?;
    check_fail_rate(&runs)?;
    Ok(json!({
        "files": paths(&written),
        "total": summary.total,
        "failed": summary.failed,
        "capped": summary.capped,
        "steps_exponent": summary.steps_fit.as_ref().map(|f| f.slope),
        "predicted_exponent": 1.0 - 2.0 * (cfg.alpha - cfg.gamma),
    }))
}

fn resonance(a: &StudyArgs, file: Option<&ConfigFile>, g: &Globals) -> CliResult<Value> {
    let cfg = experiment_config(a, file, g.seed)?;
    let workers = Workers::new(g.threads)?;
    let mut runs = convergence_runs(&workers, &cfg)?;
    let audit = summarize_resonance(&mut runs);
    let written = write_resonance_outputs(&g.out, &runs, &audit)?;
    check_fail_rate(&runs)?;
    let fits: Vec<Value> = audit
        .fits
        .iter()
        .map(|f| json!({ "quantity": f.fit.quantity, "slope": f.fit.slope, "flagged": f.flagged }))
        .collect();
    Ok(json!({ "files": paths(&written), "fits": fits }))
}

fn unit(d: usize, i: usize) -> Vec<f64> {
    let mut e = vec![0.0; d];
    e[i.min(d - 1)] = 1.0;
    e
}

/// `v`, `b`, `c` from flags; defaults are all-ones, `e_1` and `e_2`.
fn moment_vectors(a: &WeingartenArgs) -> CliResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let d = a
        .v
        .as_ref()
        .or(a.b.as_ref())
        .or(a.c.as_ref())
        .map_or(a.d, Vec::len);
    if d == 0 {
        return Err(CliError::Config("vectors must be non-empty".into()));
    }
    let v = a.v.clone().unwrap_or_else(|| vec![1.0; d]);
    let b = a.b.clone().unwrap_or_else(|| unit(d, 0));
    let c = a.c.clone().unwrap_or_else(|| unit(d, 1));
    if v.len() != d || b.len() != d || c.len() != d {
        return Err(CliError::Config("v, b and c must have equal length".into()));
    }
    Ok((v, b, c))
}

fn estimate_json(e: &MomentEstimate) -> Value {
    json!({ "estimate": e.estimate, "stderr": e.stderr, "samples": e.samples })
}

fn agreement(e: &MomentEstimate, value: f64) -> Value {
    json!({ "value": value, "z": e.z_score(value), "agrees": e.agrees_with(value) })
}

fn weingarten(a: &WeingartenArgs, g: &Globals) -> CliResult<Value> {
    let workers = Workers::new(g.threads)?;
    match a.mode {
        WgMode::Table => {
            let t = weingarten_table(a.k, a.d)?;
            let rows = |m: &biaffine_core::Matrix| -> Vec<Vec<f64>> { (0..m.rows()).map(|i| m.row(i).to_vec()).collect() };
            let mut out = json!({
                "k": t.k,
                "d": t.d,
                "pairings": t.pairings.iter().map(|p| p.to_string()).collect::<Vec<_>>(),
                "gram": rows(&t.gram),
                "wg": rows(&t.wg),
                "inverse_residual": t.inverse_residual(),
            });
            if a.k == 2 {
                let max_dev = |(diag, off): (f64, f64)| {
                    let mut worst = 0.0f64;
                    for i in 0..3 {
                        for j in 0..3 {
                            let want = if i == j { diag } else { off };
                            worst = worst.max((t.wg(i, j) - want).abs());
                        }
                    }
                    worst
                };
                let (cd, co) = wg_k2_closed(a.d);
                let (pd, po) = wg_k2_printed(a.d);
                out["comparisons"] = json!({
                    "closed_form": { "diag": cd, "off": co, "max_abs_diff": max_dev((cd, co)) },
                    "printed_form": { "diag": pd, "off": po, "max_abs_diff": max_dev((pd, po)) },
                });
                out["verdicts"] = json!({
                    "closed_form_matches": max_dev((cd, co)) <= 1e-12,
                    "printed_form_matches": max_dev((pd, po)) <= 1e-12,
                });
            }
            Ok(out)
        }
        WgMode::Closed2 => {
            let (v, b, c) = moment_vectors(a)?;
            let closed = second_moment_closed(&v, &b, &c)?;
            let pairing = second_moment_pairing_sum(&v, &b, &c)?;
            Ok(json!({
                "values": { "closed_form": closed, "pairing_sum": pairing },
                "verdicts": { "agree": (closed - pairing).abs() <= 1e-12 * closed.abs().max(1.0) },
            }))
        }
        WgMode::Closed4 => {
            let (v, b, c) = moment_vectors(a)?;
            let pairing = fourth_moment_pairing_sum(&v, &b, &c)?;
            let closed = fourth_moment_closed(&v, &b, &c)?;
            let printed = fourth_moment_printed(&v, &b, &c)?;
            let (eq, ueq) = chi_haar(&v)?;
            Ok(json!({
                "values": { "pairing_sum": pairing, "closed_form": closed, "printed_form": printed },
                "chi": { "eq": eq, "ueq": ueq, "eq_printed": chi_eq_printed(&v), "ueq_printed": chi_ueq_printed(&v) },
                "comparisons": { "printed_minus_pairing_sum": printed - pairing },
            }))
        }
        WgMode::Mc => {
            let (v, b, c) = moment_vectors(a)?;
            let order = MomentOrder::from_order(a.order)?;
            let est = orthogonal_moment(&workers, &v, &b, &c, order, a.samples, g.seed)?;
            Ok(json!({ "order": a.order, "mc": estimate_json(&est) }))
        }
        WgMode::Compare => {
            let (v, b, c) = moment_vectors(a)?;
            let second = orthogonal_moment(&workers, &v, &b, &c, MomentOrder::Second, a.samples, g.seed)?;
            let fourth = orthogonal_moment(&workers, &v, &b, &c, MomentOrder::Fourth, a.samples, g.seed ^ 1)?;
            let cmp = compare_fourth_moment(&v, &b, &c, fourth)?;
            let closed2 = second_moment_closed(&v, &b, &c)?;
            Ok(json!({
                "second": { "mc": estimate_json(&second), "closed_form": agreement(&second, closed2) },
                "fourth": {
                    "mc": estimate_json(&fourth),
                    "pairing_sum": agreement(&fourth, cmp.pairing_sum),
                    "printed_form": agreement(&fourth, cmp.printed),
                    "discrepancy": cmp.discrepancy(),
                },
                "verdicts": {
                    "second_moment_closed_form": if second.agrees_with(closed2) { "agrees" } else { "deviates" },
                    "fourth_moment_pairing_sum": if cmp.pairing_sum_agrees() { "agrees" } else { "deviates" },
                    "fourth_moment_printed_form": if cmp.printed_agrees() { "agrees" } else { "deviates" },
                },
            }))
        }
        WgMode::Gaussian => {
            let (_, b, c) = moment_vectors(a)?;
            let r = gaussian_moments(&workers, &b, &c, a.samples, g.seed)?;
            Ok(json!({
                "overlap": { "mc": estimate_json(&r.overlap), "expected": agreement(&r.overlap, r.overlap_expected) },
                "product": {
                    "mc": estimate_json(&r.product),
                    "printed_coefficient_1": agreement(&r.product, r.product_printed),
                    "coefficient_2": agreement(&r.product, r.product_alternative),
                },
                "verdicts": {
                    "overlap": r.overlap_agrees(),
                    "printed_coefficient_1": r.printed_agrees(),
                    "coefficient_2": r.alternative_agrees(),
                },
            }))
        }
    }
}
