//! Disentanglement and completeness of modeled causal variables.
//!
//! `R[i][j]` is the importance of modeled variable `i` for predicting
//! ground-truth variable `j`. Rows normalized to distributions give
//! `D_i = 1 - H_K(P_i.)`; columns give `C_j = 1 - H_D(P~_.j)`. Totals are
//! mass-weighted averages. `0 log 0 = 0`; an all-zero row or column scores 0
//! with weight 0 and is flagged.

mod forest;
mod lasso;

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::AicmParameters;
use crate::rng::{substream, Stream};

pub const MIN_SAMPLES: usize = 100;
pub const REPORT_FILE: &str = "dci_report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegressorConfig {
    Forest { trees: usize, max_depth: usize, seed: u64 },
    Lasso { alpha: f64, max_iter: usize, tol: f64 },
}

impl Default for RegressorConfig {
    fn default() -> Self {
        RegressorConfig::Forest {
            trees: 100,
            max_depth: 8,
            seed: 0,
        }
    }
}

impl RegressorConfig {
    pub fn lasso() -> Self {
        RegressorConfig::Lasso {
            alpha: 0.01,
            max_iter: 10_000,
            tol: 1e-10,
        }
    }
}

/// Non-negative importances, rows = modeled variables, columns = ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct ImportanceMatrix(Array2<f64>);

impl ImportanceMatrix {
    pub fn new(r: Array2<f64>) -> Result<Self> {
        if r.is_empty() {
            return Err(Error::InvalidArgument("importance matrix is empty".into()));
        }
        if let Some(((i, j), v)) = r.indexed_iter().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidArgument(format!("R[{i}][{j}] = {v} is not a finite non-negative number")));
        }
        Ok(Self(r))
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.0.outer_iter().map(|r| r.to_vec()).collect()
    }

    pub fn zero_rows(&self) -> Vec<usize> {
        (0..self.rows()).filter(|&i| self.0.row(i).sum() == 0.0).collect()
    }

    pub fn zero_columns(&self) -> Vec<usize> {
        (0..self.cols()).filter(|&j| self.0.column(j).sum() == 0.0).collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for ImportanceMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Schema("ragged importance matrix".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let r = Array2::from_shape_vec((rows.len(), cols), flat).map_err(|e| Error::Schema(e.to_string()))?;
        Self::new(r)
    }
}

impl From<ImportanceMatrix> for Vec<Vec<f64>> {
    fn from(m: ImportanceMatrix) -> Self {
        m.to_rows()
    }
}

/// `1 - H_base(p / sum p)`, clamped to `[0, 1]`; 0 for an all-zero vector.
fn one_minus_entropy(mass: impl Iterator<Item = f64> + Clone, base: usize) -> f64 {
    let total: f64 = mass.clone().sum();
    if total <= 0.0 {
        return 0.0;
    }
    if base < 2 {
        return 1.0;
    }
    let h: f64 = mass
        .filter(|&m| m > 0.0)
        .map(|m| {
            let p = m / total;
            -p * p.ln()
        })
        .sum::<f64>()
        / (base as f64).ln();
    (1.0 - h).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Disentanglement {
    pub per_variable: Vec<f64>,
    pub weights: Vec<f64>,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completeness {
    pub per_variable: Vec<f64>,
    pub weights: Vec<f64>,
    pub total: f64,
}

fn weighted(scores: &[f64], mass: &[f64]) -> (Vec<f64>, f64) {
    let all: f64 = mass.iter().sum();
    let weights: Vec<f64> = mass.iter().map(|m| if all > 0.0 { m / all } else { 0.0 }).collect();
    let total = scores.iter().zip(&weights).map(|(s, w)| s * w).sum::<f64>().clamp(0.0, 1.0);
    (weights, total)
}

pub fn disentanglement(r: &ImportanceMatrix) -> Disentanglement {
    let k = r.cols();
    let per_variable: Vec<f64> = r.0.outer_iter().map(|row| one_minus_entropy(row.iter().copied(), k)).collect();
    let mass: Vec<f64> = r.0.outer_iter().map(|row| row.sum()).collect();
    let (weights, total) = weighted(&per_variable, &mass);
    Disentanglement {
        per_variable,
        weights,
        total,
    }
}

pub fn completeness(r: &ImportanceMatrix) -> Completeness {
    let d = r.rows();
    let per_variable: Vec<f64> = r.0.columns().into_iter().map(|col| one_minus_entropy(col.iter().copied(), d)).collect();
    let mass: Vec<f64> = r.0.columns().into_iter().map(|col| col.sum()).collect();
    let (weights, total) = weighted(&per_variable, &mass);
    Completeness {
        per_variable,
        weights,
        total,
    }
}

/// Fits one regressor per ground-truth column on all modeled variables.
pub fn importance_matrix(z_model: ArrayView2<f64>, z_true: ArrayView2<f64>, regressor: &RegressorConfig) -> Result<ImportanceMatrix> {
    let rows = z_model.nrows();
    if z_true.nrows() != rows {
        return Err(Error::InvalidArgument(format!(
            "{rows} modeled rows against {} ground-truth rows",
            z_true.nrows()
        )));
    }
    if rows < MIN_SAMPLES {
        return Err(Error::InvalidArgument(format!("need at least {MIN_SAMPLES} samples, got {rows}")));
    }
    if z_model.ncols() == 0 || z_true.ncols() == 0 {
        return Err(Error::InvalidArgument("no variables".into()));
    }
    if z_model.iter().chain(z_true.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite value in the inputs".into()));
    }
    for (j, col) in z_true.columns().into_iter().enumerate() {
        if col.iter().all(|&v| v == col[0]) {
            return Err(Error::DegenerateColumn(j));
        }
    }
    let (p, k) = (z_model.ncols(), z_true.ncols());
    let mut r = Array2::zeros((p, k));
    match *regressor {
        RegressorConfig::Forest { trees, max_depth, seed } => {
            if trees == 0 {
                return Err(Error::InvalidArgument("forest needs at least one tree".into()));
            }
            let fits: Vec<(usize, Vec<f64>)> = (0..k * trees)
                .into_par_iter()
                .map(|job| {
                    let j = job / trees;
                    let mut rng = substream(seed, Stream::Forest, job as u64);
                    (j, forest::tree_importances(z_model, z_true.column(j), max_depth, &mut rng))
                })
                .collect();
            for (j, imp) in fits {
                for (i, v) in imp.into_iter().enumerate() {
                    r[(i, j)] += v / trees as f64;
                }
            }
        }
        RegressorConfig::Lasso { alpha, max_iter, tol } => {
            for j in 0..k {
                let imp = lasso::lasso_importances(z_model, z_true.column(j), alpha, max_iter, tol);
                r.column_mut(j).assign(&ndarray::Array1::from(imp));
            }
        }
    }
    ImportanceMatrix::new(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DciReport {
    /// Row-major, rows = modeled variables.
    pub importance: ImportanceMatrix,
    pub disentanglement: Vec<f64>,
    pub rho: Vec<f64>,
    pub completeness: Vec<f64>,
    pub completeness_weights: Vec<f64>,
    pub d_total: f64,
    pub c_total: f64,
    pub regressor: RegressorConfig,
    pub samples: usize,
    /// Modeled variables with no importance anywhere.
    pub degenerate_rows: Vec<usize>,
    /// Ground-truth variables no modeled variable helps predict.
    pub degenerate_columns: Vec<usize>,
}

impl DciReport {
    pub fn from_importance(importance: ImportanceMatrix, regressor: RegressorConfig, samples: usize) -> Self {
        let d = disentanglement(&importance);
        let c = completeness(&importance);
        Self {
            degenerate_rows: importance.zero_rows(),
            degenerate_columns: importance.zero_columns(),
            importance,
            disentanglement: d.per_variable,
            rho: d.weights,
            completeness: c.per_variable,
            completeness_weights: c.weights,
            d_total: d.total,
            c_total: c.total,
            regressor,
            samples,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string_pretty(self).expect("report serializes")).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
    }
}

/// Scores `z_model` against `z_true`.
pub fn score(z_model: ArrayView2<f64>, z_true: ArrayView2<f64>, regressor: &RegressorConfig) -> Result<DciReport> {
    let r = importance_matrix(z_model, z_true, regressor)?;
    Ok(DciReport::from_importance(r, regressor.clone(), z_model.nrows()))
}

/// Ground-truth causal variables `z` of every sample, or [`Error::MissingTruth`].
pub fn truth_matrix(data: &Dataset) -> Result<Array2<f64>> {
    let n = data.n();
    let mut out = Array2::zeros((data.len(), n));
    for (b, s) in data.samples.iter().enumerate() {
        let truth = s.truth.as_ref().ok_or(Error::MissingTruth)?;
        out.row_mut(b).assign(&ndarray::aview1(&truth.z));
    }
    Ok(out)
}

pub fn observation_matrix(data: &Dataset) -> Array2<f64> {
    let mut out = Array2::zeros((data.len(), data.n()));
    for (b, s) in data.samples.iter().enumerate() {
        out.row_mut(b).assign(&ndarray::aview1(&s.x));
    }
    out
}

/// DCI of the model's causal variables on the pre-intervention observations of `data`.
pub fn evaluate(params: &AicmParameters, data: &Dataset, regressor: &RegressorConfig) -> Result<DciReport> {
    let z_true = truth_matrix(data)?;
    let x = observation_matrix(data);
    if x.ncols() != params.d() {
        return Err(Error::InvalidArgument(format!(
            "dataset has {} observation columns, model expects {}",
            x.ncols(),
            params.d()
        )));
    }
    let z_model = params.infer_causal_batch(x.view());
    score(z_model.view(), z_true.view(), regressor)
}
