//! Study configuration from flags, optionally overridden by a JSON file.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use biaffine_core::ensembles::{EnsembleKind, EnsembleSpec, DEFAULT_SPARSITY};
use biaffine_core::experiment::ExperimentConfig;
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::problem::CostData;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleArg {
    Gaussian,
    Svd,
}

impl From<EnsembleArg> for EnsembleKind {
    fn from(e: EnsembleArg) -> Self {
        match e {
            EnsembleArg::Gaussian => EnsembleKind::Gaussian,
            EnsembleArg::Svd => EnsembleKind::SvdHaar,
        }
    }
}

/// Parses `t,mu,L`.
pub fn parse_cost(s: &str) -> Result<CostData, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [t, mu, l] => Ok(CostData { t, mu, l }),
        _ => Err(format!("expected t,mu,L, got {} numbers", parts.len())),
    }
}

/// Flags shared by `scaling`, `converge` and `resonance`.
#[derive(Debug, Clone, Args)]
pub struct StudyArgs {
    #[arg(long, value_enum, default_value = "gaussian")]
    pub ensemble: EnsembleArg,
    /// Spectrum exponent of the svd family; also the step-size gamma.
    #[arg(long, default_value_t = 0.5)]
    pub gamma: f64,
    #[arg(long, default_value_t = DEFAULT_SPARSITY)]
    pub k: usize,
    #[arg(long, value_delimiter = ',', default_value = "32,64,128,256")]
    pub ns: Vec<usize>,
    #[arg(long, default_value_t = 8)]
    pub seeds: u64,
    /// `t,mu,L`; t is the offset added to c^T A^{-1} b.
    #[arg(long, value_parser = parse_cost)]
    pub cost: Option<CostData>,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.5)]
    pub c0: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub eps: f64,
    /// Extra gap thresholds whose hitting times are recorded.
    #[arg(long, value_delimiter = ',', default_value = "1e-2,1e-4")]
    pub eps_ladder: Vec<f64>,
    /// Step cap; defaults to 200 n ln(1/eps).
    #[arg(long)]
    pub max_steps: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleData {
    pub kind: Option<EnsembleArg>,
    pub gamma: Option<f64>,
    pub k: Option<usize>,
}

/// Contents of a `--config` file. Every field is optional and replaces the
/// matching flag.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub ensemble: Option<EnsembleData>,
    pub ns: Option<Vec<usize>>,
    pub seeds: Option<u64>,
    pub master_seed: Option<u64>,
    pub cost: Option<CostData>,
    pub alpha: Option<f64>,
    /// Step-size gamma.
    pub gamma: Option<f64>,
    pub c0: Option<f64>,
    pub eps: Option<f64>,
    pub eps_ladder: Option<Vec<f64>>,
    pub max_steps: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub threads: Option<usize>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let f = File::open(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_reader(BufReader::new(f)).map_err(|e| CliError::json(path, e))
    }
}

/// Global options after applying the config file.
#[derive(Debug, Clone, PartialEq)]
pub struct Globals {
    pub seed: u64,
    pub out: PathBuf,
    pub threads: Option<usize>,
}

impl Globals {
    pub fn apply(mut self, file: Option<&ConfigFile>) -> Self {
        if let Some(f) = file {
            self.seed = f.master_seed.unwrap_or(self.seed);
            self.out = f.out_dir.clone().unwrap_or(self.out);
            self.threads = f.threads.or(self.threads);
        }
        self
    }
}

pub fn experiment_config(args: &StudyArgs, file: Option<&ConfigFile>, master_seed: u64) -> CliResult<ExperimentConfig> {
    let f = file.cloned().unwrap_or_default();
    let ens = f.ensemble.unwrap_or_default();
    let kind: EnsembleKind = ens.kind.unwrap_or(args.ensemble).into();
    let ens_gamma = ens.gamma.unwrap_or(args.gamma);
    let mut template = match kind {
        EnsembleKind::Gaussian => EnsembleSpec::gaussian(1, 0),
        EnsembleKind::SvdHaar => EnsembleSpec::svd(1, ens_gamma, 0),
    };
    template.k = ens.k.unwrap_or(args.k);
    if template.k == 0 {
        return Err(CliError::Config("k must be >= 1".into()));
    }

    let ns = f.ns.unwrap_or_else(|| args.ns.clone());
    let seeds = f.seeds.unwrap_or(args.seeds);
    let mut cfg = ExperimentConfig::new(template, ns, seeds)?;
    cfg.master_seed = master_seed;
    if let Some(cost) = f.cost.or(args.cost) {
        cfg.cost = cost.spec()?;
    }
    cfg.alpha = f.alpha.unwrap_or(args.alpha);
    cfg.gamma = f.gamma.unwrap_or(args.gamma);
    cfg.c0 = f.c0.unwrap_or(args.c0);
    cfg.eps = f.eps.unwrap_or(args.eps);
    cfg.eps_ladder = f.eps_ladder.unwrap_or_else(|| args.eps_ladder.clone());
    cfg.max_steps = f.max_steps.or(args.max_steps);
    cfg.validate()?;
    for &n in &cfg.ns {
        cfg.ensemble.at(n, 0).validate()?;
    }
    Ok(cfg)
}
