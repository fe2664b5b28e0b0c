//! Oracles shared by the property tests and the acceptance suite. Nothing here
//! calls the library's own scoring or loss code.

#![allow(dead_code)]

use icrlsm_core::dataset::Dataset;
use icrlsm_core::model::{AicmParameters, LatentTriple, ModelConfig};
use icrlsm_core::rng::{substream, Stream};
use icrlsm_core::scm::MixingMap;
use rand::Rng;
use rand_distr::StandardNormal;

/// Small model with every parameter redrawn, so loc, scale, h and the prior
/// mean are all non-trivial.
pub fn random_params(n: usize, seed: u64) -> AicmParameters {
    let mut config = ModelConfig::new(n, n);
    config.coder_hidden = vec![8];
    config.node_hidden = vec![6, 6];
    config.prior_hidden = vec![4];
    let mut p = AicmParameters::init(config, seed).unwrap();
    let mut rng = substream(seed, Stream::Custom(40), 0);
    for v in p.values_mut() {
        *v = 0.6 * rng.sample::<f64, _>(StandardNormal);
    }
    p
}

pub fn gaussian_vec(len: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn without(v: &[f64], skip: usize) -> Vec<f64> {
    v.iter().enumerate().filter(|&(j, _)| j != skip).map(|(_, &x)| x).collect()
}

/// Trapezoidal integral of `exp(transition_log_prob)` over `e~_t`, on a grid
/// of `points` covering +-10 standard deviations of the implied density.
pub fn transition_mass(p: &AicmParameters, e: &[f64], v: &[f64], t: usize, points: usize) -> f64 {
    let rest = without(e, t);
    let scale = p.scale(t, &rest);
    let center = p.solution_inverse(t, p.prior_mean(t, e[t]), &rest, v, true);
    let (lo, hi) = (center - 10.0 * scale, center + 10.0 * scale);
    let step = (hi - lo) / (points - 1) as f64;
    let density = |x: f64| {
        let mut et = e.to_vec();
        et[t] = x;
        let triple = LatentTriple::from_parts(e.to_vec(), et, v.to_vec(), t).unwrap();
        p.transition_log_prob(&triple).unwrap().exp()
    };
    let mut sum = 0.5 * (density(lo) + density(hi));
    for k in 1..points - 1 {
        sum += density(lo + k as f64 * step);
    }
    sum * step
}

/// Relative error between `log_det_jacobian` and the log of a central finite
/// difference slope of `solution_forward` in `e~_t`.
pub fn jacobian_rel_err(p: &AicmParameters, t: usize, et: f64, rest: &[f64], v: &[f64]) -> f64 {
    let h = 1e-5;
    let slope = (p.solution_forward(t, et + h, rest, v, true) - p.solution_forward(t, et - h, rest, v, true)) / (2.0 * h);
    let fd = slope.abs().ln();
    let analytic = p.log_det_jacobian(t, rest);
    (analytic - fd).abs() / analytic.abs().max(1e-3)
}

/// Straight-line scores for R (rows = modeled, columns = truth):
/// `(D_i, rho_i, D_total, C_j, C_total)`.
pub struct Scores {
    pub d: Vec<f64>,
    pub rho: Vec<f64>,
    pub d_total: f64,
    pub c: Vec<f64>,
    pub c_total: f64,
}

pub fn dci_oracle(r: &[Vec<f64>]) -> Scores {
    let rows = r.len();
    let cols = r[0].len();
    let mut total = 0.0;
    for row in r {
        for &v in row {
            total += v;
        }
    }
    let mut d = vec![0.0; rows];
    let mut rho = vec![0.0; rows];
    for i in 0..rows {
        let mut row_sum = 0.0;
        for j in 0..cols {
            row_sum += r[i][j];
        }
        if row_sum == 0.0 {
            continue;
        }
        let mut h = 0.0;
        for j in 0..cols {
            let p = r[i][j] / row_sum;
            if p > 0.0 {
                h -= p * p.log(cols as f64);
            }
        }
        d[i] = if cols == 1 { 1.0 } else { 1.0 - h };
        rho[i] = row_sum / total;
    }
    let mut c = vec![0.0; cols];
    let mut col_w = vec![0.0; cols];
    for j in 0..cols {
        let mut col_sum = 0.0;
        for row in r {
            col_sum += row[j];
        }
        if col_sum == 0.0 {
            continue;
        }
        let mut h = 0.0;
        for row in r {
            let p = row[j] / col_sum;
            if p > 0.0 {
                h -= p * p.log(rows as f64);
            }
        }
        c[j] = if rows == 1 { 1.0 } else { 1.0 - h };
        col_w[j] = col_sum / total;
    }
    let d_total = (0..rows).map(|i| rho[i] * d[i]).sum();
    let c_total = (0..cols).map(|j| col_w[j] * c[j]).sum();
    Scores { d, rho, d_total, c, c_total }
}

/// All indices reachable from `t` by following edges, found by brute force
/// over the adjacency matrix.
pub fn reachable(adjacency: &[Vec<bool>], t: usize) -> Vec<bool> {
    let n = adjacency.len();
    let mut seen = vec![false; n];
    seen[t] = true;
    let mut changed = true;
    while changed {
        changed = false;
        for i in 0..n {
            for j in 0..n {
                if seen[i] && adjacency[i][j] && !seen[j] {
                    seen[j] = true;
                    changed = true;
                }
            }
        }
    }
    seen
}

/// Worst violation of the data-generation invariants over every sample, as
/// `(atomicity_ok, stability_ok, max |(x~ - x) - Q (z~ - z)|)`.
pub fn data_invariants(data: &Dataset, q: &MixingMap) -> (bool, bool, f64) {
    let adjacency = data.meta.adjacency.clone();
    let n = data.n();
    let mut atomic = true;
    let mut stable = true;
    let mut linear: f64 = 0.0;
    for s in &data.samples {
        let truth = s.truth.as_ref().expect("truth");
        let moved = reachable(&adjacency, s.target);
        for j in 0..n {
            if j != s.target && truth.e_tilde[j].to_bits() != truth.e[j].to_bits() {
                atomic = false;
            }
            if !moved[j] && truth.z_tilde[j].to_bits() != truth.z[j].to_bits() {
                stable = false;
            }
        }
        if truth.e_tilde[s.target] == truth.e[s.target] {
            atomic = false;
        }
        for i in 0..n {
            let mut qdz = 0.0;
            for j in 0..n {
                qdz += q.get(i, j) * (truth.z_tilde[j] - truth.z[j]);
            }
            linear = linear.max(((s.x_tilde[i] - s.x[i]) - qdz).abs());
        }
    }
    (atomic, stable, linear)
}

/// `(max |QᵀQ - I|, det Q)` computed without nalgebra.
pub fn rotation_checks(q: &MixingMap) -> (f64, f64) {
    let n = q.n();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let mut dot = 0.0;
            for k in 0..n {
                dot += q.get(k, i) * q.get(k, j);
            }
            let want = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((dot - want).abs());
        }
    }
    (worst, determinant(q))
}

fn determinant(q: &MixingMap) -> f64 {
    // Gaussian elimination with partial pivoting
    let n = q.n();
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| q.get(i, j)).collect()).collect();
    let mut det = 1.0;
    for c in 0..n {
        let pivot = (c..n).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
        if a[pivot][c] == 0.0 {
            return 0.0;
        }
        if pivot != c {
            a.swap(pivot, c);
            det = -det;
        }
        det *= a[c][c];
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
        }
    }
    det
}
