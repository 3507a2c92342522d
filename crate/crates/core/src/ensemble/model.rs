//! JSON model files.
//!
//! ```json
//! { "dimension": 2,
//!   "atoms": [ { "weight": 0.5, "matrix": [[1, 1], [0, 1]] },
//!              { "weight": 0.5, "matrix": [1, 0, 1, 1] } ],
//!   "branching": { "constant": 2 } }
//! ```
//!
//! Matrices are row-major, either nested by row or flat. The branching law is
//! `{"constant": c}` or `{"pmf": {"2": 0.5, "3": 0.5}}`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Atom, BranchingLaw, Ensemble, WEIGHT_SUM_TOL};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub dimension: usize,
    pub atoms: Vec<AtomEntry>,
    pub branching: BranchingEntry,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomEntry {
    pub weight: f64,
    pub matrix: MatrixEntry,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixEntry {
    Rows(Vec<Vec<f64>>),
    Flat(Vec<f64>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchingEntry {
    Constant(u32),
    Pmf(BTreeMap<String, f64>),
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::InvalidModel {
        path: path.into(),
        message: message.into(),
    }
}

impl ModelFile {
    pub fn from_ensemble(ensemble: &Ensemble) -> Self {
        let atoms = ensemble
            .atoms()
            .iter()
            .map(|a| AtomEntry {
                weight: a.weight(),
                matrix: MatrixEntry::Rows(a.matrix().rows()),
            })
            .collect();
        let branching = match ensemble.branching() {
            BranchingLaw::Constant(c) => BranchingEntry::Constant(*c),
            BranchingLaw::Finite(pmf) => {
                BranchingEntry::Pmf(pmf.iter().map(|&(n, p)| (n.to_string(), p)).collect())
            }
        };
        Self {
            dimension: ensemble.dim(),
            atoms,
            branching,
        }
    }

    /// Validates every invariant, reporting the first violation with its
    /// JSON path.
    pub fn into_ensemble(self) -> Result<Ensemble> {
        let d = self.dimension;
        if d < 2 {
            return Err(invalid("dimension", format!("must be at least 2, got {d}")));
        }
        if self.atoms.is_empty() {
            return Err(invalid("atoms", "must contain at least one atom"));
        }
        let mut atoms = Vec::with_capacity(self.atoms.len());
        for (i, entry) in self.atoms.into_iter().enumerate() {
            let path = format!("atoms[{i}]");
            let w = entry.weight;
            if !(w > 0.0 && w <= 1.0) {
                return Err(invalid(format!("{path}.weight"), format!("must lie in (0, 1], got {w}")));
            }
            let data = match entry.matrix {
                MatrixEntry::Rows(rows) => {
                    if rows.len() != d {
                        return Err(invalid(
                            format!("{path}.matrix"),
                            format!("has {} rows, expected {d}", rows.len()),
                        ));
                    }
                    let mut data = Vec::with_capacity(d * d);
                    for (r, row) in rows.iter().enumerate() {
                        if row.len() != d {
                            return Err(invalid(
                                format!("{path}.matrix[{r}]"),
                                format!("has {} entries, expected {d}", row.len()),
                            ));
                        }
                        data.extend_from_slice(row);
                    }
                    data
                }
                MatrixEntry::Flat(flat) => {
                    if flat.len() != d * d {
                        return Err(invalid(
                            format!("{path}.matrix"),
                            format!("has {} entries, expected {}", flat.len(), d * d),
                        ));
                    }
                    flat
                }
            };
            for (k, &x) in data.iter().enumerate() {
                if !(x >= 0.0) || !x.is_finite() {
                    return Err(invalid(
                        format!("{path}.matrix[{}][{}]", k / d, k % d),
                        format!("must be finite and nonnegative, got {x}"),
                    ));
                }
            }
            let atom = Atom::new(w, Matrix::from_row_major(d, data)).map_err(|e| match e {
                Error::InvalidModel { path: p, message } => invalid(format!("{path}.{p}"), message),
                other => other,
            })?;
            atoms.push(atom);
        }
        let total: f64 = atoms.iter().map(Atom::weight).sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(invalid("atoms", format!("weights sum to {total}, expected 1")));
        }
        let branching = match self.branching {
            BranchingEntry::Constant(c) => BranchingLaw::constant(c)?,
            BranchingEntry::Pmf(map) => {
                let mut pmf = Vec::with_capacity(map.len());
                for (key, p) in map {
                    let n: u32 = key
                        .parse()
                        .map_err(|_| invalid(format!("branching.pmf.{key}"), "key is not an integer"))?;
                    pmf.push((n, p));
                }
                BranchingLaw::finite(pmf)?
            }
        };
        Ensemble::new(d, atoms, branching)
    }
}

pub fn parse_model(text: &str) -> Result<Ensemble> {
    let file: ModelFile = serde_json::from_str(text)?;
    file.into_ensemble()
}

pub fn load_model(path: &Path) -> Result<Ensemble> {
    parse_model(&std::fs::read_to_string(path)?)
}
