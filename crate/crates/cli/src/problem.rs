//! Problem files: JSON with `n`, `m`, `A`, `B`, `b`, `c` and optional
//! `cost` and `meta` blocks.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::Path;

use biaffine_core::ensembles::{EnsembleKind, EnsembleSpec, InverseHandle, ProblemInstance};
use biaffine_core::{CostSpec, Matrix, PhysicalSystem, Selection};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// A matrix given either as one flat row-major array or as nested rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixData {
    Flat(Vec<f64>),
    Nested(Vec<Vec<f64>>),
}

impl MatrixData {
    pub fn to_matrix(&self, rows: usize, cols: usize, what: &str) -> CliResult<Matrix> {
        let flat = match self {
            Self::Flat(v) => v.clone(),
            Self::Nested(r) => {
                if r.len() != rows || r.iter().any(|row| row.len() != cols) {
                    return Err(CliError::Config(format!("{what} must have {rows} rows of {cols} entries")));
                }
                r.concat()
            }
        };
        if flat.len() != rows * cols {
            return Err(CliError::Config(format!(
                "{what} has {} entries, expected {}",
                flat.len(),
                rows * cols
            )));
        }
        Ok(Matrix::from_row_major(rows, cols, flat)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SelectionData {
    /// Only `"identity"` is recognised.
    Tag(String),
    Matrix(MatrixData),
}

impl Default for SelectionData {
    fn default() -> Self {
        Self::Tag("identity".into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostData {
    pub t: f64,
    pub mu: f64,
    #[serde(rename = "L")]
    pub l: f64,
}

impl CostData {
    pub fn spec(&self) -> CliResult<CostSpec> {
        Ok(CostSpec::new(self.t, self.mu, self.l)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemMeta {
    /// `"gaussian"` or `"svd"`.
    pub ensemble: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Singular values of `A` for the svd family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<Vec<f64>>,
    /// True when the orthogonal factors are regenerated from `seed`.
    #[serde(default)]
    pub factors_from_seed: bool,
}

impl ProblemMeta {
    pub fn spec(&self, n: usize) -> CliResult<EnsembleSpec> {
        let mut spec = match self.ensemble.as_str() {
            "gaussian" => EnsembleSpec::gaussian(n, self.seed),
            "svd" => EnsembleSpec::svd(n, self.gamma.unwrap_or(0.5), self.seed),
            other => return Err(CliError::Config(format!("unknown ensemble {other:?}"))),
        };
        if let Some(k) = self.k {
            spec.k = k;
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub a: Option<MatrixData>,
    #[serde(rename = "B", default)]
    pub selection: SelectionData,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<CostData>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<ProblemMeta>,
}

/// A problem file turned into solver inputs.
#[derive(Debug, Clone)]
pub struct LoadedProblem {
    pub system: PhysicalSystem,
    pub c: Vec<f64>,
    pub handle: InverseHandle,
    pub cost: Option<CostSpec>,
}

pub fn ensemble_name(kind: EnsembleKind) -> &'static str {
    match kind {
        EnsembleKind::Gaussian => "gaussian",
        EnsembleKind::SvdHaar => "svd",
    }
}

impl ProblemFile {
    pub fn from_instance(inst: &ProblemInstance) -> Self {
        let spec = inst.spec;
        let s = match &inst.handle {
            InverseHandle::Svd { s, .. } => Some(s.clone()),
            _ => None,
        };
        Self {
            n: inst.system.n(),
            m: inst.system.m(),
            a: Some(MatrixData::Flat(inst.system.physics().as_slice().to_vec())),
            selection: SelectionData::default(),
            b: inst.system.source().to_vec(),
            c: inst.c.clone(),
            cost: None,
            meta: Some(ProblemMeta {
                ensemble: ensemble_name(spec.kind).into(),
                seed: spec.seed,
                gamma: (spec.kind == EnsembleKind::SvdHaar).then_some(spec.gamma),
                k: Some(spec.k),
                factors_from_seed: s.is_some(),
                s,
            }),
        }
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let f = File::open(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_reader(BufReader::new(f)).map_err(|e| CliError::json(path, e))
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        let f = File::create(path).map_err(|e| CliError::io(path, e))?;
        let mut w = BufWriter::new(f);
        write_json_exact(&mut w, self).map_err(|e| CliError::json(path, e))?;
        w.flush().map_err(|e| CliError::io(path, e))
    }

    fn regenerate(&self) -> CliResult<Option<ProblemInstance>> {
        match &self.meta {
            Some(meta) => Ok(Some(meta.spec(self.n)?.generate()?)),
            None => Ok(None),
        }
    }

    /// Builds the system. With `auto_handle`, a file whose `meta` regenerates
    /// the stored `A` exactly gets the structured inverse handle; otherwise
    /// the dense path is used.
    pub fn resolve(&self, auto_handle: bool) -> CliResult<LoadedProblem> {
        let (n, m) = (self.n, self.m);
        if self.b.len() != n || self.c.len() != n {
            return Err(CliError::Config(format!("b and c must have length n = {n}")));
        }
        let cost = self.cost.as_ref().map(CostData::spec).transpose()?;
        let selection = match &self.selection {
            SelectionData::Tag(t) if t == "identity" => {
                if m != n {
                    return Err(CliError::Config(format!("B = identity needs m = n, got m = {m}")));
                }
                Selection::Identity
            }
            SelectionData::Tag(t) => return Err(CliError::Config(format!("unknown B tag {t:?}"))),
            SelectionData::Matrix(d) => Selection::Dense(d.to_matrix(n, m, "B")?),
        };

        let Some(a) = &self.a else {
            let inst = self
                .regenerate()?
                .ok_or_else(|| CliError::Config("problem file has neither A nor meta".into()))?;
            if inst.system.source() != self.b.as_slice() || inst.c != self.c {
                return Err(CliError::Config("b, c do not match the instance regenerated from meta".into()));
            }
            let system = PhysicalSystem::new(inst.system.physics().clone(), selection, self.b.clone())?;
            return Ok(LoadedProblem {
                system,
                c: inst.c,
                handle: inst.handle,
                cost,
            });
        };

        let a = a.to_matrix(n, n, "A")?;
        let mut handle = InverseHandle::Dense;
        if auto_handle {
            if let Some(inst) = self.regenerate()? {
                if inst.system.physics() == &a && inst.system.source() == self.b.as_slice() && inst.c == self.c {
                    handle = inst.handle;
                }
            }
        }
        let system = PhysicalSystem::new(a, selection, self.b.clone())?;
        Ok(LoadedProblem {
            system,
            c: self.c.clone(),
            handle,
            cost,
        })
    }
}

/// Writes doubles with 17 significant digits.
struct ExactFloats;

impl serde_json::ser::Formatter for ExactFloats {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        write!(w, "{v:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, v: f32) -> io::Result<()> {
        write!(w, "{:.16e}", v as f64)
    }
}

pub fn write_json_exact<W: io::Write, T: Serialize + ?Sized>(w: W, value: &T) -> serde_json::Result<()> {
    let mut ser = serde_json::Serializer::with_formatter(w, ExactFloats);
    value.serialize(&mut ser)
}
