//! Location-scale structural causal models, rotation mixing and soft-intervention pairs.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::CausalGraph;

/// Location network of one node in the generating SCM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mechanism {
    /// `loc(p) = w·p + b`.
    Linear { weights: Vec<f64>, bias: f64 },
    /// `loc(p) = w2·tanh(W1 p + b1) + b2`, `W1` stored row-major.
    Tanh {
        w1: Vec<f64>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: f64,
    },
}

impl Mechanism {
    fn sample<R: Rng + ?Sized>(inputs: usize, hidden: Option<usize>, law: Normal<f64>, rng: &mut R) -> Self {
        let mut draw = |k: usize| -> Vec<f64> { (0..k).map(|_| law.sample(rng)).collect() };
        match hidden {
            None => {
                let weights = draw(inputs);
                let bias = draw(1)[0];
                Mechanism::Linear { weights, bias }
            }
            Some(h) => {
                let w1 = draw(h * inputs);
                let b1 = draw(h);
                let w2 = draw(h);
                let b2 = draw(1)[0];
                Mechanism::Tanh { w1, b1, w2, b2 }
            }
        }
    }

    pub fn inputs(&self) -> usize {
        match self {
            Mechanism::Linear { weights, .. } => weights.len(),
            Mechanism::Tanh { w1, b1, .. } => {
                if b1.is_empty() {
                    0
                } else {
                    w1.len() / b1.len()
                }
            }
        }
    }

    pub fn eval(&self, parents: &[f64]) -> f64 {
        match self {
            Mechanism::Linear { weights, bias } => {
                weights.iter().zip(parents).map(|(w, p)| w * p).sum::<f64>() + bias
            }
            Mechanism::Tanh { w1, b1, w2, b2 } => {
                let p = parents.len();
                b1.iter()
                    .enumerate()
                    .map(|(k, b)| {
                        let pre: f64 = w1[k * p..(k + 1) * p].iter().zip(parents).map(|(w, x)| w * x).sum();
                        w2[k] * (pre + b).tanh()
                    })
                    .sum::<f64>()
                    + b2
            }
        }
    }
}

/// Weight-initialization settings for [`init_scm_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScmInit {
    pub pre_loc_mean: f64,
    pub post_loc_mean: f64,
    /// One hidden tanh layer of this width in every loc network; `None` is linear.
    #[serde(default)]
    pub hidden_units: Option<usize>,
}

impl Default for ScmInit {
    fn default() -> Self {
        Self {
            pre_loc_mean: 0.0,
            post_loc_mean: 3.0,
            hidden_units: None,
        }
    }
}

/// Ground-truth SCM: `z_i = scale * e_i + loc_i(z_pa)`, and under a soft
/// intervention on `i`, `z~_i = scale * e~_i + loc~_i(z_pa)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScmRepr", into = "ScmRepr")]
pub struct LocationScaleScm {
    pub graph: CausalGraph,
    pub loc: Vec<Mechanism>,
    pub loc_tilde: Vec<Mechanism>,
    pub scale_value: f64,
    parents: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct ScmRepr {
    graph: CausalGraph,
    loc: Vec<Mechanism>,
    loc_tilde: Vec<Mechanism>,
    scale_value: f64,
}

impl TryFrom<ScmRepr> for LocationScaleScm {
    type Error = Error;
    fn try_from(r: ScmRepr) -> Result<Self> {
        LocationScaleScm::new(r.graph, r.loc, r.loc_tilde, r.scale_value)
    }
}

impl From<LocationScaleScm> for ScmRepr {
    fn from(s: LocationScaleScm) -> Self {
        ScmRepr {
            graph: s.graph,
            loc: s.loc,
            loc_tilde: s.loc_tilde,
            scale_value: s.scale_value,
        }
    }
}

impl LocationScaleScm {
    pub fn new(graph: CausalGraph, loc: Vec<Mechanism>, loc_tilde: Vec<Mechanism>, scale_value: f64) -> Result<Self> {
        if !(scale_value > 0.0 && scale_value.is_finite()) {
            return Err(Error::InvalidArgument(format!("scale must be positive, got {scale_value}")));
        }
        let n = graph.n();
        if loc.len() != n || loc_tilde.len() != n {
            return Err(Error::InvalidArgument("one loc and one loc~ mechanism per node required".into()));
        }
        let parents: Vec<Vec<usize>> = (0..n).map(|j| graph.parents(j)).collect();
        for j in 0..n {
            if loc[j].inputs() != parents[j].len() || loc_tilde[j].inputs() != parents[j].len() {
                return Err(Error::InvalidArgument(format!(
                    "node {j} has {} parents but its mechanisms take {} / {} inputs",
                    parents[j].len(),
                    loc[j].inputs(),
                    loc_tilde[j].inputs()
                )));
            }
        }
        Ok(Self {
            graph,
            loc,
            loc_tilde,
            scale_value,
            parents,
        })
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    /// Ancestral pass. `intervened` switches that node to its loc~ mechanism.
    pub fn solve(&self, exogenous: &[f64], intervened: Option<usize>) -> Vec<f64> {
        let n = self.n();
        let mut z = vec![0.0; n];
        let mut pa = Vec::with_capacity(n);
        for j in 0..n {
            pa.clear();
            pa.extend(self.parents[j].iter().map(|&p| z[p]));
            let mech = if intervened == Some(j) { &self.loc_tilde[j] } else { &self.loc[j] };
            z[j] = self.scale_value * exogenous[j] + mech.eval(&pa);
        }
        z
    }
}

pub fn init_scm<R: Rng + ?Sized>(graph: CausalGraph, pre_loc_mean: f64, post_loc_mean: f64, rng: &mut R) -> LocationScaleScm {
    init_scm_with(
        graph,
        &ScmInit {
            pre_loc_mean,
            post_loc_mean,
            hidden_units: None,
        },
        rng,
    )
}

/// All loc weights ~ N(pre_loc_mean, 1), all loc~ weights ~ N(post_loc_mean, 1), scale fixed at 1.
pub fn init_scm_with<R: Rng + ?Sized>(graph: CausalGraph, init: &ScmInit, rng: &mut R) -> LocationScaleScm {
    let pre = Normal::new(init.pre_loc_mean, 1.0).expect("unit variance");
    let post = Normal::new(init.post_loc_mean, 1.0).expect("unit variance");
    let n = graph.n();
    let mut loc = Vec::with_capacity(n);
    let mut loc_tilde = Vec::with_capacity(n);
    for j in 0..n {
        let k = graph.parents(j).len();
        loc.push(Mechanism::sample(k, init.hidden_units, pre, rng));
        loc_tilde.push(Mechanism::sample(k, init.hidden_units, post, rng));
    }
    LocationScaleScm::new(graph, loc, loc_tilde, 1.0).expect("shapes built from the graph")
}

/// Linear mixing `x = Q z` with `Q` in SO(n). Stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingMap {
    n: usize,
    rotation: Vec<f64>,
}

impl MixingMap {
    pub fn from_row_major(n: usize, rotation: Vec<f64>) -> Result<Self> {
        if n == 0 || rotation.len() != n * n {
            return Err(Error::Schema(format!(
                "rotation has {} entries, expected {n}x{n}",
                rotation.len()
            )));
        }
        Ok(Self { n, rotation })
    }

    pub fn identity(n: usize) -> Self {
        let mut rotation = vec![0.0; n * n];
        for i in 0..n {
            rotation[i * n + i] = 1.0;
        }
        Self { n, rotation }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row_major(&self) -> &[f64] {
        &self.rotation
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rotation[i * self.n + j]
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        self.rotation
            .chunks_exact(self.n)
            .map(|row| row.iter().zip(z).map(|(q, v)| q * v).sum())
            .collect()
    }

    pub fn as_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.rotation)
    }

    /// `max |QᵀQ - I|`.
    pub fn orthogonality_error(&self) -> f64 {
        let q = self.as_matrix();
        let g = q.transpose() * &q;
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - target).abs());
            }
        }
        worst
    }

    pub fn determinant(&self) -> f64 {
        self.as_matrix().determinant()
    }
}

/// Haar-distributed rotation: QR of a Gaussian matrix, column signs fixed by
/// `sign(diag R)`, then one column flipped if the determinant is negative.
pub fn sample_rotation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<MixingMap> {
    if n == 0 {
        return Err(Error::InvalidArgument("rotation dimension must be positive".into()));
    }
    let g = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    if q.determinant() < 0.0 {
        q.column_mut(0).neg_mut();
    }
    let mut rotation = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            rotation.push(q[(i, j)]);
        }
    }
    Ok(MixingMap { n, rotation })
}

/// Ground-truth latents attached to a sample for evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub z: Vec<f64>,
    pub z_tilde: Vec<f64>,
    pub e: Vec<f64>,
    pub e_tilde: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionalSample {
    pub x: Vec<f64>,
    pub x_tilde: Vec<f64>,
    pub target: usize,
    pub truth: Option<Truth>,
}

impl InterventionalSample {
    pub fn displacement(&self) -> Vec<f64> {
        self.x_tilde.iter().zip(&self.x).map(|(a, b)| a - b).collect()
    }
}

/// One `(x, x~, target)` pair. Only `e~_target` is redrawn; every other
/// exogenous value is reused, and descendants of the target are recomputed
/// through their unchanged mechanisms.
pub fn sample_pair<R: Rng + ?Sized>(
    scm: &LocationScaleScm,
    mix: &MixingMap,
    target: usize,
    rng: &mut R,
) -> Result<InterventionalSample> {
    let n = scm.n();
    if target >= n {
        return Err(Error::InvalidArgument(format!("target {target} out of range for {n} variables")));
    }
    if mix.n() != n {
        return Err(Error::InvalidArgument(format!(
            "mixing map is {0}x{0} but the SCM has {n} variables",
            mix.n()
        )));
    }
    let e: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let mut e_tilde = e.clone();
    e_tilde[target] = StandardNormal.sample(rng);
    let z = scm.solve(&e, None);
    let z_tilde = scm.solve(&e_tilde, Some(target));
    Ok(InterventionalSample {
        x: mix.apply(&z),
        x_tilde: mix.apply(&z_tilde),
        target,
        truth: Some(Truth { z, z_tilde, e, e_tilde }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::graph_from_registry;
    use crate::rng::{substream, Stream};

    fn g3_scm(seed: u64) -> LocationScaleScm {
        init_scm(graph_from_registry("G3").unwrap(), 0.0, 3.0, &mut substream(seed, Stream::Scm, 0))
    }

    #[test]
    fn root_only_scm_is_bias_plus_noise() {
        let g = CausalGraph::empty(1).unwrap();
        let scm = init_scm(g, 0.0, 3.0, &mut substream(1, Stream::Scm, 0));
        let (Mechanism::Linear { weights, bias }, Mechanism::Linear { weights: wt, bias: bt }) =
            (&scm.loc[0], &scm.loc_tilde[0])
        else {
            panic!("linear by default")
        };
        assert!(weights.is_empty() && wt.is_empty());
        let mix = MixingMap::identity(1);
        let s = sample_pair(&scm, &mix, 0, &mut substream(1, Stream::Train, 0)).unwrap();
        let t = s.truth.unwrap();
        assert_eq!(t.z[0], t.e[0] + bias);
        assert_eq!(t.z_tilde[0], t.e_tilde[0] + bt);
        assert_eq!(s.x, t.z);
    }

    #[test]
    fn target_out_of_range() {
        let scm = g3_scm(0);
        let mix = MixingMap::identity(4);
        let err = sample_pair(&scm, &mix, 4, &mut substream(0, Stream::Train, 0)).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn chain_intervention_propagates_to_descendants_only() {
        let g6 = graph_from_registry("G6").unwrap();
        let scm = init_scm(g6.clone(), 0.0, 3.0, &mut substream(5, Stream::Scm, 0));
        let mix = MixingMap::identity(4);
        for k in 0..20 {
            let s = sample_pair(&scm, &mix, 0, &mut substream(5, Stream::Train, k)).unwrap();
            let t = s.truth.unwrap();
            // brute force: walk the chain A -> B -> C by hand
            let cone: Vec<usize> = g6.descendants(0);
            assert_eq!(cone, vec![1, 2]);
            assert_ne!(t.z_tilde[1], t.z[1]);
            assert_ne!(t.z_tilde[2], t.z[2]);
            assert_eq!(t.z_tilde[3], t.z[3]);
        }
    }

    #[test]
    fn loc_weights_follow_requested_means() {
        let g = CausalGraph::complete(6).unwrap();
        let scm = init_scm(g, 0.0, 10.0, &mut substream(2, Stream::Scm, 0));
        let collect = |ms: &[Mechanism]| -> Vec<f64> {
            ms.iter()
                .flat_map(|m| match m {
                    Mechanism::Linear { weights, bias } => {
                        let mut v = weights.clone();
                        v.push(*bias);
                        v
                    }
                    _ => unreachable!(),
                })
                .collect()
        };
        let pre = collect(&scm.loc);
        let post = collect(&scm.loc_tilde);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        // 21 draws each, se = 1/sqrt(21)
        assert!(mean(&pre).abs() < 1.0);
        assert!((mean(&post) - 10.0).abs() < 1.0);
        assert_eq!(scm.scale_value, 1.0);
    }

    #[test]
    fn tanh_mechanisms_have_parent_width() {
        let g = graph_from_registry("G5").unwrap();
        let init = ScmInit {
            hidden_units: Some(8),
            ..ScmInit::default()
        };
        let scm = init_scm_with(g, &init, &mut substream(0, Stream::Scm, 0));
        assert_eq!(scm.loc[3].inputs(), 3);
        assert_eq!(scm.loc[0].inputs(), 0);
        let s = sample_pair(&scm, &MixingMap::identity(4), 2, &mut substream(0, Stream::Train, 0)).unwrap();
        assert!(s.x_tilde.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn rotation_one_dimensional_is_identity() {
        for seed in 0..10 {
            let q = sample_rotation(1, &mut substream(seed, Stream::Rotation, 0)).unwrap();
            assert_eq!(q.row_major(), &[1.0]);
        }
    }

    #[test]
    fn rotations_are_special_orthogonal() {
        for seed in 0..50 {
            for n in [2, 3, 4, 7] {
                let q = sample_rotation(n, &mut substream(seed, Stream::Rotation, n as u64)).unwrap();
                assert!(q.orthogonality_error() < 1e-10);
                assert!((q.determinant() - 1.0).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn rotation_entries_centered() {
        // Haar symmetry: each entry has mean 0 and variance 1/n.
        let n = 4;
        let draws = 1000;
        let mut sums = vec![0.0; n * n];
        for k in 0..draws {
            let q = sample_rotation(n, &mut substream(99, Stream::Rotation, k)).unwrap();
            for (s, v) in sums.iter_mut().zip(q.row_major()) {
                *s += v;
            }
        }
        let se = (1.0 / n as f64 / draws as f64).sqrt();
        for s in sums {
            assert!((s / draws as f64).abs() < 3.0 * se, "mean {}", s / draws as f64);
        }
    }
}
