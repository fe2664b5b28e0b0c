//! Augmented implicit causal model.
//!
//! Latents are the pre-intervention exogenous variables `e`, the
//! post-intervention exogenous variables `e~` and the mechanism switch `v`.
//! Node `i` owns four small networks over a flat parameter vector:
//!
//! * `loc_i(e_/i)` and `scale_i(e_/i)`, the location-scale solution function
//!   `z~_i = (e~_i - loc_i(e_/i) - h_i(v)) / scale_i(e_/i)`;
//! * `h_i(v)`, the switch modulator, dropped at inference time;
//! * `prior_mean_i(e_i)`, the mean of the unit-variance Gaussian `p(z~_i | e_i)`.
//!
//! `e_/i` is `e` with coordinate `i` removed, order preserved.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{softplus, softplus_inverse, Mlp, ParamAllocator};
use crate::rng::{substream, Stream};

pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of causal variables.
    pub n: usize,
    /// Observation dimension.
    pub d: usize,
    /// Hidden widths of the two encoders and two decoders.
    pub coder_hidden: Vec<usize>,
    /// Hidden widths of every `loc_i`, `scale_i` and `h_i`.
    pub node_hidden: Vec<usize>,
    /// Hidden widths of every `prior_mean_i`.
    pub prior_hidden: Vec<usize>,
    /// `scale_i = softplus(raw) + scale_floor`.
    pub scale_floor: f64,
}

impl ModelConfig {
    pub fn new(n: usize, d: usize) -> Self {
        Self {
            n,
            d,
            coder_hidden: vec![64, 64],
            node_hidden: vec![64, 64],
            prior_hidden: vec![64],
            scale_floor: 1e-4,
        }
    }

    /// No hidden layers anywhere; every network is affine.
    pub fn linear(n: usize, d: usize) -> Self {
        Self {
            coder_hidden: vec![],
            node_hidden: vec![],
            prior_hidden: vec![],
            ..Self::new(n, d)
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 {
            return Err(Error::InvalidArgument("model dimensions must be positive".into()));
        }
        if !(self.scale_floor > 0.0) {
            return Err(Error::InvalidArgument("scale floor must be positive".into()));
        }
        Ok(())
    }
}

/// Which per-node network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeNet {
    Loc,
    Scale,
    Switch,
    PriorMean,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeNets {
    pub loc: Mlp,
    pub scale: Mlp,
    pub switch: Mlp,
    pub prior_mean: Mlp,
}

impl NodeNets {
    pub fn get(&self, which: NodeNet) -> &Mlp {
        match which {
            NodeNet::Loc => &self.loc,
            NodeNet::Scale => &self.scale,
            NodeNet::Switch => &self.switch,
            NodeNet::PriorMean => &self.prior_mean,
        }
    }
}

/// Shapes and offsets of every network; parameter values live in [`AicmParameters`].
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub config: ModelConfig,
    pub encoder_e: Mlp,
    pub encoder_v: Mlp,
    pub decoder_e: Mlp,
    pub decoder_v: Mlp,
    pub nodes: Vec<NodeNets>,
    pub obs_log_std: usize,
    pub delta_log_std: usize,
    pub len: usize,
}

impl Architecture {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (n, d) = (config.n, config.d);
        let mut alloc = ParamAllocator::new();
        let encoder_e = Mlp::new(&mut alloc, d, &config.coder_hidden, 2 * n);
        let encoder_v = Mlp::new(&mut alloc, d, &config.coder_hidden, 2 * n);
        let decoder_e = Mlp::new(&mut alloc, n, &config.coder_hidden, d);
        let decoder_v = Mlp::new(&mut alloc, n, &config.coder_hidden, d);
        let nodes = (0..n)
            .map(|_| NodeNets {
                loc: Mlp::new(&mut alloc, n - 1, &config.node_hidden, 1),
                scale: Mlp::new(&mut alloc, n - 1, &config.node_hidden, 1),
                switch: Mlp::new(&mut alloc, n, &config.node_hidden, 1),
                prior_mean: Mlp::new(&mut alloc, 1, &config.prior_hidden, 1),
            })
            .collect();
        let obs_log_std = alloc.take(1);
        let delta_log_std = alloc.take(1);
        Ok(Self {
            config,
            encoder_e,
            encoder_v,
            decoder_e,
            decoder_v,
            nodes,
            obs_log_std,
            delta_log_std,
            len: alloc.len(),
        })
    }

    pub fn n(&self) -> usize {
        self.config.n
    }

    pub fn d(&self) -> usize {
        self.config.d
    }
}

/// Diagonal Gaussian `q(. | input)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPosterior {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl GaussianPosterior {
    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|s| s.exp()).collect()
    }

    /// Reparameterized draw `mean + std * eps`.
    pub fn sample_with(&self, eps: &[f64]) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.log_std)
            .zip(eps)
            .map(|((m, s), e)| m + s.exp() * e)
            .collect()
    }

    pub fn log_prob(&self, x: &[f64]) -> f64 {
        self.mean
            .iter()
            .zip(&self.log_std)
            .zip(x)
            .map(|((&m, &s), &v)| normal_log_density(v, m, s))
            .sum()
    }

    /// `KL(self || N(0, I))`.
    pub fn kl_to_standard_normal(&self) -> f64 {
        self.mean
            .iter()
            .zip(&self.log_std)
            .map(|(&m, &s)| kl_standard_normal(m, s))
            .sum()
    }
}

/// `log N(x; mean, exp(log_std)^2)`.
#[inline]
pub fn normal_log_density(x: f64, mean: f64, log_std: f64) -> f64 {
    let z = (x - mean) * (-log_std).exp();
    -0.5 * z * z - log_std - HALF_LN_2PI
}

/// `KL(N(mean, exp(log_std)^2) || N(0, 1))`.
#[inline]
pub fn kl_standard_normal(mean: f64, log_std: f64) -> f64 {
    0.5 * (mean * mean + (2.0 * log_std).exp() - 1.0) - log_std
}

/// `log p(e)` under independent standard normals.
pub fn prior_log_prob_e(e: &[f64]) -> f64 {
    e.iter().map(|&v| -0.5 * v * v - HALF_LN_2PI).sum()
}

/// `log p(v)` under independent standard normals.
pub fn prior_log_prob_v(v: &[f64]) -> f64 {
    prior_log_prob_e(v)
}

/// `(e, e~, v)` for one intervention on `target`. Off-target coordinates of
/// `e~` are copies of `e`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTriple {
    e: Vec<f64>,
    e_tilde: Vec<f64>,
    v: Vec<f64>,
    target: usize,
}

impl LatentTriple {
    /// Builds `e~` from `e`, reading only `post[target]` from the
    /// post-intervention sample.
    pub fn with_copy(e: Vec<f64>, post: &[f64], v: Vec<f64>, target: usize) -> Result<Self> {
        Self::check_dims(&e, post.len(), &v, target)?;
        let mut e_tilde = e.clone();
        e_tilde[target] = post[target];
        Ok(Self { e, e_tilde, v, target })
    }

    /// Rejects any `e~` that differs from `e` off-target.
    pub fn from_parts(e: Vec<f64>, e_tilde: Vec<f64>, v: Vec<f64>, target: usize) -> Result<Self> {
        Self::check_dims(&e, e_tilde.len(), &v, target)?;
        let t = Self { e, e_tilde, v, target };
        t.check_copy()?;
        Ok(t)
    }

    fn check_dims(e: &[f64], post_len: usize, v: &[f64], target: usize) -> Result<()> {
        let n = e.len();
        if n == 0 || post_len != n || v.len() != n {
            return Err(Error::InvalidArgument(format!(
                "latent lengths differ: e {n}, e~ {post_len}, v {}",
                v.len()
            )));
        }
        if target >= n {
            return Err(Error::InvalidArgument(format!("target {target} out of range for {n} variables")));
        }
        Ok(())
    }

    fn check_copy(&self) -> Result<()> {
        for (j, (a, b)) in self.e.iter().zip(&self.e_tilde).enumerate() {
            if j != self.target && a.to_bits() != b.to_bits() {
                return Err(Error::Contract(format!(
                    "e~[{j}] = {b} differs from e[{j}] = {a} but {j} is not the target"
                )));
            }
        }
        Ok(())
    }

    pub fn e(&self) -> &[f64] {
        &self.e
    }

    pub fn e_tilde(&self) -> &[f64] {
        &self.e_tilde
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn target(&self) -> usize {
        self.target
    }

    /// `e_/target`.
    pub fn e_rest(&self) -> Vec<f64> {
        without(&self.e, self.target)
    }
}

/// `values` without coordinate `skip`.
pub fn without(values: &[f64], skip: usize) -> Vec<f64> {
    values
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != skip)
        .map(|(_, &v)| v)
        .collect()
}

/// Network architecture plus one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AicmParameters {
    arch: Arc<Architecture>,
    values: Vec<f64>,
}

fn row(v: &[f64]) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((1, v.len()), v).expect("row view")
}

impl AicmParameters {
    /// Fan-in uniform initialization from `seed`; both observation log-stds start at 0.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let arch = Architecture::new(config)?;
        let mut values = vec![0.0; arch.len];
        let mut rng = substream(seed, Stream::ModelInit, 0);
        let mut nets: Vec<&Mlp> = vec![&arch.encoder_e, &arch.encoder_v, &arch.decoder_e, &arch.decoder_v];
        for node in &arch.nodes {
            nets.extend([&node.loc, &node.scale, &node.switch, &node.prior_mean]);
        }
        for net in nets {
            net.init(&mut values, &mut rng);
        }
        Ok(Self {
            arch: Arc::new(arch),
            values,
        })
    }

    pub fn from_values(arch: Arc<Architecture>, values: Vec<f64>) -> Result<Self> {
        if values.len() != arch.len {
            return Err(Error::Schema(format!(
                "architecture needs {} parameters, got {}",
                arch.len,
                values.len()
            )));
        }
        Ok(Self { arch, values })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn arch_arc(&self) -> Arc<Architecture> {
        self.arch.clone()
    }

    pub fn config(&self) -> &ModelConfig {
        &self.arch.config
    }

    pub fn n(&self) -> usize {
        self.arch.n()
    }

    pub fn d(&self) -> usize {
        self.arch.d()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn obs_log_std(&self) -> f64 {
        self.values[self.arch.obs_log_std]
    }

    pub fn delta_log_std(&self) -> f64 {
        self.values[self.arch.delta_log_std]
    }

    pub fn set_obs_log_std(&mut self, v: f64) {
        let k = self.arch.obs_log_std;
        self.values[k] = v;
    }

    pub fn set_delta_log_std(&mut self, v: f64) {
        let k = self.arch.delta_log_std;
        self.values[k] = v;
    }

    /// Make one node network constant. For [`NodeNet::Scale`] `value` is the
    /// scale itself (after the positive link), so it must exceed the floor.
    pub fn set_node_constant(&mut self, node: usize, which: NodeNet, value: f64) {
        let raw = match which {
            NodeNet::Scale => {
                let floor = self.arch.config.scale_floor;
                assert!(value > floor, "scale {value} is not above the floor {floor}");
                softplus_inverse(value - floor)
            }
            _ => value,
        };
        let arch = self.arch.clone();
        arch.nodes[node].get(which).set_constant(&mut self.values, raw);
    }

    fn check_input(&self, what: &str, x: &[f64], len: usize) -> Result<()> {
        if x.len() != len {
            return Err(Error::InvalidArgument(format!("{what} has length {}, expected {len}", x.len())));
        }
        if let Some(k) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("{what}[{k}] is not finite")));
        }
        Ok(())
    }

    fn split_posterior(&self, out: ArrayView2<f64>) -> GaussianPosterior {
        let n = self.n();
        let r = out.row(0);
        GaussianPosterior {
            mean: r.iter().take(n).copied().collect(),
            log_std: r.iter().skip(n).copied().collect(),
        }
    }

    /// `q(e | x)`; the same encoder serves `q(e~ | x~)`.
    pub fn encode_exogenous(&self, x: &[f64]) -> Result<GaussianPosterior> {
        self.check_input("x", x, self.d())?;
        let out = self.arch.encoder_e.infer(&self.values, row(x));
        Ok(self.split_posterior(out.view()))
    }

    /// `q(v | x~ - x)`.
    pub fn encode_switch(&self, dx: &[f64]) -> Result<GaussianPosterior> {
        self.check_input("dx", dx, self.d())?;
        let out = self.arch.encoder_v.infer(&self.values, row(dx));
        Ok(self.split_posterior(out.view()))
    }

    /// Mean of `p(x | e)`.
    pub fn decode(&self, e: &[f64]) -> Vec<f64> {
        self.arch.decoder_e.infer(&self.values, row(e)).into_raw_vec_and_offset().0
    }

    /// Mean of `p(x~ - x | v)`.
    pub fn decode_delta(&self, v: &[f64]) -> Vec<f64> {
        self.arch.decoder_v.infer(&self.values, row(v)).into_raw_vec_and_offset().0
    }

    /// `log p(x | e)` with isotropic std `exp(obs_log_std)`.
    pub fn log_likelihood_x(&self, x: &[f64], e: &[f64]) -> f64 {
        let s = self.obs_log_std();
        x.iter().zip(self.decode(e)).map(|(&a, m)| normal_log_density(a, m, s)).sum()
    }

    /// `log p(x~ - x | v)` with isotropic std `exp(delta_log_std)`.
    pub fn log_likelihood_delta(&self, dx: &[f64], v: &[f64]) -> f64 {
        let s = self.delta_log_std();
        dx.iter().zip(self.decode_delta(v)).map(|(&a, m)| normal_log_density(a, m, s)).sum()
    }

    fn scalar(&self, node: usize, which: NodeNet, input: &[f64]) -> f64 {
        self.arch.nodes[node].get(which).infer(&self.values, row(input))[(0, 0)]
    }

    pub fn loc(&self, node: usize, e_rest: &[f64]) -> f64 {
        self.scalar(node, NodeNet::Loc, e_rest)
    }

    /// Always at least `scale_floor`.
    pub fn scale(&self, node: usize, e_rest: &[f64]) -> f64 {
        softplus(self.scalar(node, NodeNet::Scale, e_rest)) + self.arch.config.scale_floor
    }

    pub fn switch_shift(&self, node: usize, v: &[f64]) -> f64 {
        self.scalar(node, NodeNet::Switch, v)
    }

    pub fn prior_mean(&self, node: usize, e_i: f64) -> f64 {
        self.scalar(node, NodeNet::PriorMean, &[e_i])
    }

    /// `z~_i = (e~_i - loc_i(e_/i) - [h_i(v)]) / scale_i(e_/i)`. With the switch
    /// off, `v` is never read.
    pub fn solution_forward(&self, node: usize, e_tilde_i: f64, e_rest: &[f64], v: &[f64], include_switch: bool) -> f64 {
        let shift = if include_switch { self.switch_shift(node, v) } else { 0.0 };
        (e_tilde_i - (self.loc(node, e_rest) + shift)) / self.scale(node, e_rest)
    }

    /// Exact inverse of [`Self::solution_forward`].
    pub fn solution_inverse(&self, node: usize, z_tilde_i: f64, e_rest: &[f64], v: &[f64], include_switch: bool) -> f64 {
        let shift = if include_switch { self.switch_shift(node, v) } else { 0.0 };
        z_tilde_i * self.scale(node, e_rest) + self.loc(node, e_rest) + shift
    }

    /// `log |dz~_i / de~_i| = -log scale_i(e_/i)`.
    pub fn log_det_jacobian(&self, node: usize, e_rest: &[f64]) -> f64 {
        -self.scale(node, e_rest).ln()
    }

    /// `log p(e~ | e, v)` for an atomic intervention. The copied coordinates
    /// contribute nothing; the target contributes
    /// `log N(z~_t; prior_mean_t(e_t), 1) + log |dz~_t / de~_t|`.
    pub fn transition_log_prob(&self, triple: &LatentTriple) -> Result<f64> {
        if triple.e.len() != self.n() {
            return Err(Error::InvalidArgument(format!(
                "triple has {} variables, model has {}",
                triple.e.len(),
                self.n()
            )));
        }
        triple.check_copy()?;
        let t = triple.target;
        let rest = triple.e_rest();
        let z = self.solution_forward(t, triple.e_tilde[t], &rest, &triple.v, true);
        let m = self.prior_mean(t, triple.e[t]);
        Ok(normal_log_density(z, m, 0.0) + self.log_det_jacobian(t, &rest))
    }

    /// Causal variables for one observation: posterior mean of `e`, pushed
    /// through every solution function with the switch dropped.
    pub fn infer_causal_variables(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input("x", x, self.d())?;
        Ok(self.infer_causal_batch(row(x)).into_raw_vec_and_offset().0)
    }

    /// Batched [`Self::infer_causal_variables`]; rows are observations.
    pub fn infer_causal_batch(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let n = self.n();
        let enc = self.arch.encoder_e.infer(&self.values, x);
        let e = enc.slice(ndarray::s![.., 0..n]).to_owned();
        let mut z = Array2::zeros((x.nrows(), n));
        for i in 0..n {
            let rest = drop_column(&e, i);
            let loc = self.arch.nodes[i].loc.infer(&self.values, rest.view());
            let raw = self.arch.nodes[i].scale.infer(&self.values, rest.view());
            for b in 0..x.nrows() {
                let scale = softplus(raw[(b, 0)]) + self.arch.config.scale_floor;
                z[(b, i)] = (e[(b, i)] - loc[(b, 0)]) / scale;
            }
        }
        z
    }

    /// Posterior means of `e` for a batch.
    pub fn exogenous_means(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let n = self.n();
        let enc = self.arch.encoder_e.infer(&self.values, x);
        enc.slice(ndarray::s![.., 0..n]).to_owned()
    }
}

/// Copy of `a` without column `skip`.
pub fn drop_column(a: &Array2<f64>, skip: usize) -> Array2<f64> {
    let keep: Vec<usize> = (0..a.ncols()).filter(|&j| j != skip).collect();
    a.select(Axis(1), &keep)
}

/// Inverse of [`drop_column`]: adds `g` back into `into`, skipping column `skip`.
pub fn scatter_column_grad(into: &mut Array2<f64>, g: &Array2<f64>, skip: usize) {
    let mut k = 0;
    for j in 0..into.ncols() {
        if j == skip {
            continue;
        }
        let mut dst = into.column_mut(j);
        dst += &g.column(k);
        k += 1;
    }
}

pub const CHECKPOINT_PARAMS: &str = "params.bin";
pub const CHECKPOINT_MANIFEST: &str = "manifest.json";
pub const CHECKPOINT_FORMAT: u32 = 1;

/// Everything needed to rebuild and verify a saved model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub n: usize,
    pub d: usize,
    pub model: ModelConfig,
    pub scale_link: String,
    pub posterior_family: String,
    pub transition_prior_std: f64,
    pub observation_log_std_init: f64,
    pub param_count: usize,
    pub params_sha256: String,
    #[serde(default)]
    pub train_config_hash: Option<String>,
    #[serde(default)]
    pub epoch: Option<usize>,
    #[serde(default)]
    pub val_loss: Option<f64>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Extra facts recorded alongside a checkpoint.
#[derive(Debug, Clone, Default)]
pub struct CheckpointInfo {
    pub train_config_hash: Option<String>,
    pub epoch: Option<usize>,
    pub val_loss: Option<f64>,
}

/// Writes `params.bin` (little-endian f64) and `manifest.json` into `dir`.
pub fn save_checkpoint(dir: impl AsRef<Path>, params: &AicmParameters, info: &CheckpointInfo) -> Result<CheckpointManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let bytes: Vec<u8> = params.values.iter().flat_map(|v| v.to_le_bytes()).collect();
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_FORMAT,
        n: params.n(),
        d: params.d(),
        model: params.config().clone(),
        scale_link: "softplus+floor".into(),
        posterior_family: "diagonal-gaussian".into(),
        transition_prior_std: 1.0,
        observation_log_std_init: 0.0,
        param_count: params.values.len(),
        params_sha256: sha256_hex(&bytes),
        train_config_hash: info.train_config_hash.clone(),
        epoch: info.epoch,
        val_loss: info.val_loss,
    };
    let pp = dir.join(CHECKPOINT_PARAMS);
    fs::write(&pp, &bytes).map_err(|e| Error::io(&pp, e))?;
    let mp = dir.join(CHECKPOINT_MANIFEST);
    fs::write(&mp, serde_json::to_string_pretty(&manifest).expect("manifest serializes")).map_err(|e| Error::io(&mp, e))?;
    Ok(manifest)
}

pub fn load_manifest(dir: impl AsRef<Path>) -> Result<CheckpointManifest> {
    let mp = dir.as_ref().join(CHECKPOINT_MANIFEST);
    let text = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", mp.display())))
}

/// Rebuilds the architecture from the manifest and checks the blob against it.
pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<(AicmParameters, CheckpointManifest)> {
    let dir = dir.as_ref();
    let manifest = load_manifest(dir)?;
    if manifest.format_version != CHECKPOINT_FORMAT {
        return Err(Error::Schema(format!("unsupported checkpoint format {}", manifest.format_version)));
    }
    if manifest.n != manifest.model.n || manifest.d != manifest.model.d {
        return Err(Error::Schema("manifest n/d disagree with its model config".into()));
    }
    let arch = Architecture::new(manifest.model.clone())?;
    if arch.len != manifest.param_count {
        return Err(Error::Schema(format!(
            "manifest records {} parameters but the architecture has {}",
            manifest.param_count, arch.len
        )));
    }
    let pp = dir.join(CHECKPOINT_PARAMS);
    let bytes = fs::read(&pp).map_err(|e| Error::io(&pp, e))?;
    if bytes.len() != 8 * arch.len || sha256_hex(&bytes) != manifest.params_sha256 {
        return Err(Error::io(&pp, "parameter blob does not match the manifest"));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((AicmParameters::from_values(Arc::new(arch), values)?, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_mechanisms(p: &mut AicmParameters) {
        for i in 0..p.n() {
            p.set_node_constant(i, NodeNet::Loc, 0.0);
            p.set_node_constant(i, NodeNet::Scale, 1.0);
            p.set_node_constant(i, NodeNet::Switch, 0.0);
            p.set_node_constant(i, NodeNet::PriorMean, 0.0);
        }
    }

    #[test]
    fn encoder_shapes_and_determinism() {
        let p = AicmParameters::init(ModelConfig::new(4, 4), 1).unwrap();
        let q = p.encode_exogenous(&[0.0; 4]).unwrap();
        assert_eq!(q.mean.len(), 4);
        assert_eq!(q.log_std.len(), 4);
        assert!(q.mean.iter().chain(&q.log_std).all(|v| v.is_finite()));
        assert_eq!(q, p.encode_exogenous(&[0.0; 4]).unwrap());
        let s = p.encode_switch(&[0.0; 4]).unwrap();
        assert!(s.std().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn non_finite_input_rejected() {
        let p = AicmParameters::init(ModelConfig::new(2, 2), 1).unwrap();
        assert!(matches!(p.encode_exogenous(&[f64::NAN, 0.0]), Err(Error::InvalidArgument(_))));
        assert!(matches!(p.encode_switch(&[0.0, f64::INFINITY]), Err(Error::InvalidArgument(_))));
        assert!(p.encode_exogenous(&[0.0]).is_err());
    }

    #[test]
    fn identity_mechanism_passes_exogenous_through() {
        let mut p = AicmParameters::init(ModelConfig::new(3, 3), 2).unwrap();
        identity_mechanisms(&mut p);
        let v = [0.3, -0.2, 1.1];
        assert_eq!(p.solution_forward(1, 0.75, &[0.1, 0.2], &v, true), 0.75);
        assert_eq!(p.solution_inverse(1, 0.75, &[0.1, 0.2], &v, true), 0.75);
        let x = [0.5, -1.0, 2.0];
        let e = p.encode_exogenous(&x).unwrap().mean;
        let z = p.infer_causal_variables(&x).unwrap();
        assert_eq!(z, e);
    }

    #[test]
    fn switch_term_vanishes_when_h_is_zero() {
        let mut p = AicmParameters::init(ModelConfig::new(3, 3), 3).unwrap();
        p.set_node_constant(0, NodeNet::Switch, 0.0);
        let v = [1.0, 2.0, 3.0];
        let on = p.solution_forward(0, 0.4, &[0.2, -0.7], &v, true);
        let off = p.solution_forward(0, 0.4, &[0.2, -0.7], &v, false);
        assert_eq!(on, off);
    }

    #[test]
    fn log_det_closed_forms() {
        let mut p = AicmParameters::init(ModelConfig::new(2, 2), 4).unwrap();
        p.set_node_constant(0, NodeNet::Scale, 1.0);
        assert!(p.log_det_jacobian(0, &[0.3]).abs() < 1e-12);
        p.set_node_constant(0, NodeNet::Scale, 2.0);
        assert!((p.log_det_jacobian(0, &[0.3]) + std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn transition_at_zero_is_standard_normal_peak() {
        let mut p = AicmParameters::init(ModelConfig::new(3, 3), 5).unwrap();
        identity_mechanisms(&mut p);
        let t = LatentTriple::with_copy(vec![0.2, 0.0, -0.4], &[9.0, 0.0, 9.0], vec![0.5; 3], 1).unwrap();
        let lp = p.transition_log_prob(&t).unwrap();
        assert!((lp + 0.918_938_5).abs() < 1e-7);
    }

    #[test]
    fn copy_violation_is_contract_error() {
        let err = LatentTriple::from_parts(vec![0.0, 1.0], vec![0.5, 1.5], vec![0.0, 0.0], 0).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
        let t = LatentTriple::with_copy(vec![0.0, 1.0], &[0.5, 7.0], vec![0.0, 0.0], 0).unwrap();
        assert_eq!(t.e_tilde(), &[0.5, 1.0]);
    }

    #[test]
    fn priors_closed_form() {
        assert!((prior_log_prob_e(&[0.0; 4]) + 3.675_754).abs() < 1e-6);
        assert!((prior_log_prob_v(&[1.0, 0.0, 0.0, 0.0]) + 4.175_754).abs() < 1e-6);
    }

    #[test]
    fn decoders_have_observation_width() {
        let p = AicmParameters::init(ModelConfig::new(3, 5), 6).unwrap();
        assert_eq!(p.decode(&[0.1, 0.2, 0.3]).len(), 5);
        assert_eq!(p.decode_delta(&[0.1, 0.2, 0.3]).len(), 5);
        assert_eq!(p.decode(&[0.1, 0.2, 0.3]), p.decode(&[0.1, 0.2, 0.3]));
    }

    #[test]
    fn single_variable_model() {
        let p = AicmParameters::init(ModelConfig::new(1, 1), 7).unwrap();
        let z = p.infer_causal_variables(&[0.4]).unwrap();
        assert_eq!(z.len(), 1);
        assert!(z[0].is_finite());
        let t = LatentTriple::with_copy(vec![0.1], &[0.3], vec![0.0], 0).unwrap();
        assert!(p.transition_log_prob(&t).unwrap().is_finite());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = AicmParameters::init(ModelConfig::new(3, 4), 8).unwrap();
        save_checkpoint(dir.path(), &p, &CheckpointInfo::default()).unwrap();
        let (q, m) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(p, q);
        assert_eq!(m.n, 3);
        fs::write(dir.path().join(CHECKPOINT_PARAMS), [0u8; 16]).unwrap();
        assert!(load_checkpoint(dir.path()).is_err());
    }
}
