//! Negative ELBO and consistency regularizer, batched, with hand-derived gradients.
//!
//! Per sample with intervention target `t`:
//!
//! ```text
//! e ~ q(e|x), e~raw ~ q(e~|x~), v ~ q(v|x~ - x)
//! e~ = e with coordinate t taken from e~raw
//! rec = log p(x|e) + log p(x~|e~) + w_delta log p(x~ - x|v)
//! kl  = KL(q(e|x)||N(0,I)) + KL(q(v|.)||N(0,I)) + log q(e~_t|x~) - log p(e~|e,v)
//! loss = -rec + beta * kl
//! ```
//!
//! Off-target coordinates of the transition prior are delta factors that the
//! copy satisfies exactly, so only the target coordinate carries a KL term.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{drop_column, kl_standard_normal, normal_log_density, scatter_column_grad, AicmParameters};
use crate::nn::{sigmoid, softplus};
use crate::scm::InterventionalSample;

/// A batch of `(x, x~, target)` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Array2<f64>,
    pub x_tilde: Array2<f64>,
    pub dx: Array2<f64>,
    pub targets: Vec<usize>,
}

impl Batch {
    pub fn new(x: Array2<f64>, x_tilde: Array2<f64>, targets: Vec<usize>) -> Result<Self> {
        if x.dim() != x_tilde.dim() || x.nrows() != targets.len() {
            return Err(Error::InvalidArgument("batch arrays disagree in shape".into()));
        }
        let dx = &x_tilde - &x;
        Ok(Self { x, x_tilde, dx, targets })
    }

    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a InterventionalSample>) -> Result<Self> {
        let samples: Vec<_> = samples.into_iter().collect();
        let d = samples.first().map(|s| s.x.len()).unwrap_or(0);
        let mut x = Array2::zeros((samples.len(), d));
        let mut xt = Array2::zeros((samples.len(), d));
        for (b, s) in samples.iter().enumerate() {
            if s.x.len() != d || s.x_tilde.len() != d {
                return Err(Error::InvalidArgument(format!("sample {b} has the wrong width")));
            }
            x.row_mut(b).assign(&ndarray::aview1(&s.x));
            xt.row_mut(b).assign(&ndarray::aview1(&s.x_tilde));
        }
        Self::new(x, xt, samples.iter().map(|s| s.target).collect())
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn select(&self, rows: &[usize]) -> Batch {
        Batch {
            x: self.x.select(Axis(0), rows),
            x_tilde: self.x_tilde.select(Axis(0), rows),
            dx: self.dx.select(Axis(0), rows),
            targets: rows.iter().map(|&r| self.targets[r]).collect(),
        }
    }
}

/// Standard-normal draws behind the three reparameterized samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Noise {
    pub e: Array2<f64>,
    pub e_tilde: Array2<f64>,
    pub v: Array2<f64>,
}

impl Noise {
    pub fn draw<R: Rng + ?Sized>(rows: usize, n: usize, rng: &mut R) -> Self {
        let mut draw = || Array2::from_shape_simple_fn((rows, n), || rng.sample(StandardNormal));
        let e = draw();
        let e_tilde = draw();
        let v = draw();
        Self { e, e_tilde, v }
    }

    pub fn zeros(rows: usize, n: usize) -> Self {
        Self {
            e: Array2::zeros((rows, n)),
            e_tilde: Array2::zeros((rows, n)),
            v: Array2::zeros((rows, n)),
        }
    }

    pub fn select(&self, rows: &[usize]) -> Noise {
        Noise {
            e: self.e.select(Axis(0), rows),
            e_tilde: self.e_tilde.select(Axis(0), rows),
            v: self.v.select(Axis(0), rows),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub beta_kl: f64,
    pub consistency_weight: f64,
    /// Weight of `log p(x~ - x | v)` relative to the other two reconstruction terms.
    pub delta_recon_weight: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            beta_kl: 1.0,
            consistency_weight: 1.0,
            delta_recon_weight: 1.0,
        }
    }
}

/// Batch means of every term. `elbo_loss` and `total` are exact sums of the
/// others (see [`LossBreakdown::recompose`]).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rec_x: f64,
    pub rec_x_tilde: f64,
    pub rec_delta: f64,
    pub kl_e: f64,
    pub kl_v: f64,
    pub kl_transition: f64,
    /// Negative ELBO.
    pub elbo_loss: f64,
    pub consistency: f64,
    /// `elbo_loss + consistency_weight * consistency`.
    pub total: f64,
}

impl LossBreakdown {
    /// `(elbo_loss, total)` rebuilt from the component terms.
    pub fn recompose(&self, w: &LossWeights) -> (f64, f64) {
        let elbo = -(self.rec_x + self.rec_x_tilde + w.delta_recon_weight * self.rec_delta)
            + w.beta_kl * (self.kl_e + self.kl_v + self.kl_transition);
        (elbo, elbo + w.consistency_weight * self.consistency)
    }

    fn check_finite(&self) -> Result<()> {
        let terms = [
            ("rec_x", self.rec_x),
            ("rec_x_tilde", self.rec_x_tilde),
            ("rec_delta", self.rec_delta),
            ("kl_e", self.kl_e),
            ("kl_v", self.kl_v),
            ("kl_transition", self.kl_transition),
            ("consistency", self.consistency),
        ];
        match terms.iter().find(|(_, v)| !v.is_finite()) {
            Some((name, _)) => Err(Error::numeric(*name)),
            None => Ok(()),
        }
    }

    /// Weighted accumulation, for averaging over batches of different sizes.
    pub fn add_scaled(&mut self, other: &LossBreakdown, w: f64) {
        self.rec_x += w * other.rec_x;
        self.rec_x_tilde += w * other.rec_x_tilde;
        self.rec_delta += w * other.rec_delta;
        self.kl_e += w * other.kl_e;
        self.kl_v += w * other.kl_v;
        self.kl_transition += w * other.kl_transition;
        self.elbo_loss += w * other.elbo_loss;
        self.consistency += w * other.consistency;
        self.total += w * other.total;
    }
}

/// Assemble `e~` row by row: a copy of `e` except at the row's target, where
/// the value comes from `post`. `probe` sees every `(row, column)` of `post`
/// that is read.
pub fn copy_assemble(
    e: &Array2<f64>,
    post: &Array2<f64>,
    targets: &[usize],
    mut probe: impl FnMut(usize, usize),
) -> Array2<f64> {
    let mut out = e.clone();
    for (b, &t) in targets.iter().enumerate() {
        probe(b, t);
        out[(b, t)] = post[(b, t)];
    }
    out
}

fn split_halves(h: &Array2<f64>, n: usize) -> (Array2<f64>, Array2<f64>) {
    (h.slice(s![.., 0..n]).to_owned(), h.slice(s![.., n..2 * n]).to_owned())
}

fn join_halves(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    ndarray::concatenate(Axis(1), &[a.view(), b.view()]).expect("same rows")
}

fn reparam(mean: &Array2<f64>, log_std: &Array2<f64>, eps: &Array2<f64>) -> Array2<f64> {
    let mut out = mean.clone();
    ndarray::Zip::from(&mut out).and(log_std).and(eps).for_each(|o, &s, &e| *o += s.exp() * e);
    out
}

/// Sum of `log N(target; mean, exp(log_std)^2)` and, if `grad` is given, adds
/// `scale * d(-sum)/d mean` into it; returns `(sum, d(-sum)/d log_std)`.
fn gaussian_recon(
    target: ArrayView2<f64>,
    mean: &Array2<f64>,
    log_std: f64,
    grad: Option<(&mut Array2<f64>, f64)>,
) -> (f64, f64) {
    let inv_var = (-2.0 * log_std).exp();
    let mut total = 0.0;
    let mut d_log_std = 0.0;
    for (&x, &m) in target.iter().zip(mean.iter()) {
        total += normal_log_density(x, m, log_std);
        let r = x - m;
        d_log_std += 1.0 - r * r * inv_var;
    }
    if let Some((g, scale)) = grad {
        ndarray::Zip::from(g)
            .and(target)
            .and(mean)
            .for_each(|g, &x, &m| *g = -scale * (x - m) * inv_var);
    }
    (total, d_log_std)
}

/// Negative ELBO plus consistency on one batch. When `grads` is given it must
/// have the parameter length; the gradient of `total` is added into it.
pub fn evaluate(
    params: &AicmParameters,
    batch: &Batch,
    noise: &Noise,
    weights: &LossWeights,
    grads: Option<&mut [f64]>,
) -> Result<LossBreakdown> {
    let arch = params.arch();
    let p = params.values();
    let (n, d) = (params.n(), params.d());
    let rows = batch.len();
    if rows == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if batch.x.ncols() != d {
        return Err(Error::InvalidArgument(format!(
            "batch has {} observation columns, model expects {d}",
            batch.x.ncols()
        )));
    }
    if let Some(&t) = batch.targets.iter().find(|&&t| t >= n) {
        return Err(Error::InvalidArgument(format!("target {t} out of range for {n} variables")));
    }
    if noise.e.dim() != (rows, n) || noise.e_tilde.dim() != (rows, n) || noise.v.dim() != (rows, n) {
        return Err(Error::InvalidArgument("noise shape does not match the batch".into()));
    }
    let want_grad = grads.is_some();
    let inv_b = 1.0 / rows as f64;
    let beta = weights.beta_kl;
    let w_delta = weights.delta_recon_weight;
    let w_cons = weights.consistency_weight;

    // encoders
    let (h_e, tape_e) = arch.encoder_e.forward(p, batch.x.view());
    let (h_et, tape_et) = arch.encoder_e.forward(p, batch.x_tilde.view());
    let (h_v, tape_v) = arch.encoder_v.forward(p, batch.dx.view());
    let (mu_e, ls_e) = split_halves(&h_e, n);
    let (mu_et, ls_et) = split_halves(&h_et, n);
    let (mu_v, ls_v) = split_halves(&h_v, n);
    let e = reparam(&mu_e, &ls_e, &noise.e);
    let post = reparam(&mu_et, &ls_et, &noise.e_tilde);
    let v = reparam(&mu_v, &ls_v, &noise.v);
    let e_tilde = copy_assemble(&e, &post, &batch.targets, |_, _| {});

    // reconstruction
    let (xh, tape_dx) = arch.decoder_e.forward(p, e.view());
    let (xth, tape_dxt) = arch.decoder_e.forward(p, e_tilde.view());
    let (dxh, tape_dv) = arch.decoder_v.forward(p, v.view());
    let s_obs = params.obs_log_std();
    let s_del = params.delta_log_std();
    let mut g_xh = Array2::zeros((rows, d));
    let mut g_xth = Array2::zeros((rows, d));
    let mut g_dxh = Array2::zeros((rows, d));
    let (rec_x, ds_x) = gaussian_recon(batch.x.view(), &xh, s_obs, want_grad.then_some((&mut g_xh, inv_b)));
    let (rec_xt, ds_xt) = gaussian_recon(batch.x_tilde.view(), &xth, s_obs, want_grad.then_some((&mut g_xth, inv_b)));
    let (rec_dx, ds_dx) = gaussian_recon(batch.dx.view(), &dxh, s_del, want_grad.then_some((&mut g_dxh, inv_b * w_delta)));

    // analytic KL terms
    let kl_e: f64 = mu_e.iter().zip(ls_e.iter()).map(|(&m, &s)| kl_standard_normal(m, s)).sum();
    let kl_v: f64 = mu_v.iter().zip(ls_v.iter()).map(|(&m, &s)| kl_standard_normal(m, s)).sum();

    // gradient buffers w.r.t. latent samples
    let mut g_e = Array2::<f64>::zeros((rows, n));
    let mut g_post = Array2::<f64>::zeros((rows, n));
    let mut g_v = Array2::<f64>::zeros((rows, n));
    let mut g_ls_et_direct = Array2::<f64>::zeros((rows, n));

    // transition term, grouped by target
    let mut kl_trans = 0.0;
    let mut node_grads: Vec<(usize, Vec<usize>, Array2<f64>, Array2<f64>, Array2<f64>, Array2<f64>)> = Vec::new();
    let mut node_tapes = Vec::new();
    let floor = arch.config.scale_floor;
    for t in 0..n {
        let members: Vec<usize> = (0..rows).filter(|&b| batch.targets[b] == t).collect();
        if members.is_empty() {
            continue;
        }
        let e_sub = e.select(Axis(0), &members);
        let rest = drop_column(&e_sub, t);
        let v_sub = v.select(Axis(0), &members);
        let e_t = e_sub.slice(s![.., t..t + 1]).to_owned();
        let nets = &arch.nodes[t];
        let (loc, tape_loc) = nets.loc.forward(p, rest.view());
        let (raw, tape_scale) = nets.scale.forward(p, rest.view());
        let (shift, tape_h) = nets.switch.forward(p, v_sub.view());
        let (pm, tape_pm) = nets.prior_mean.forward(p, e_t.view());
        let k = members.len();
        let mut g_loc = Array2::zeros((k, 1));
        let mut g_raw = Array2::zeros((k, 1));
        let mut g_h = Array2::zeros((k, 1));
        let mut g_pm = Array2::zeros((k, 1));
        let c = beta * inv_b;
        for (r, &b) in members.iter().enumerate() {
            let scale = softplus(raw[(r, 0)]) + floor;
            let z = (post[(b, t)] - loc[(r, 0)] - shift[(r, 0)]) / scale;
            let m = pm[(r, 0)];
            let log_q = normal_log_density(post[(b, t)], mu_et[(b, t)], ls_et[(b, t)]);
            let log_p = normal_log_density(z, m, 0.0) - scale.ln();
            kl_trans += log_q - log_p;
            if want_grad {
                let gz = c * (z - m);
                g_post[(b, t)] += gz / scale;
                g_loc[(r, 0)] = -gz / scale;
                g_h[(r, 0)] = -gz / scale;
                g_pm[(r, 0)] = -gz;
                let g_scale = c / scale - gz * z / scale;
                g_raw[(r, 0)] = g_scale * sigmoid(raw[(r, 0)]);
                // pathwise d(log q)/d log_std at fixed eps is -1
                g_ls_et_direct[(b, t)] -= c;
            }
        }
        if want_grad {
            node_grads.push((t, members, g_loc, g_raw, g_h, g_pm));
            node_tapes.push((tape_loc, tape_scale, tape_h, tape_pm));
        }
    }

    // consistency: decoders applied to posterior means
    let (cx, tape_cx) = arch.decoder_e.forward(p, mu_e.view());
    let (cxt, tape_cxt) = arch.decoder_e.forward(p, mu_et.view());
    let (cdx, tape_cdx) = arch.decoder_v.forward(p, mu_v.view());
    let denom = (rows * d) as f64;
    let mse = |target: &Array2<f64>, pred: &Array2<f64>| -> f64 {
        target.iter().zip(pred.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / denom
    };
    let consistency = mse(&batch.x, &cx) + mse(&batch.x_tilde, &cxt) + mse(&batch.dx, &cdx);

    let mut out = LossBreakdown {
        rec_x: rec_x * inv_b,
        rec_x_tilde: rec_xt * inv_b,
        rec_delta: rec_dx * inv_b,
        kl_e: kl_e * inv_b,
        kl_v: kl_v * inv_b,
        kl_transition: kl_trans * inv_b,
        elbo_loss: 0.0,
        consistency,
        total: 0.0,
    };
    out.check_finite()?;
    let (elbo, total) = out.recompose(weights);
    out.elbo_loss = elbo;
    out.total = total;

    let Some(grads) = grads else {
        return Ok(out);
    };
    if grads.len() != p.len() {
        return Err(Error::InvalidArgument("gradient buffer has the wrong length".into()));
    }

    // observation noise scales
    grads[arch.obs_log_std] += (ds_x + ds_xt) * inv_b;
    grads[arch.delta_log_std] += w_delta * ds_dx * inv_b;

    // decoders
    g_e += &arch.decoder_e.backward(p, &tape_dx, g_xh, grads);
    let g_et = arch.decoder_e.backward(p, &tape_dxt, g_xth, grads);
    g_v += &arch.decoder_v.backward(p, &tape_dv, g_dxh, grads);
    // e~ = e off-target, post at the target
    for (b, &t) in batch.targets.iter().enumerate() {
        for j in 0..n {
            if j == t {
                g_post[(b, j)] += g_et[(b, j)];
            } else {
                g_e[(b, j)] += g_et[(b, j)];
            }
        }
    }

    // node networks
    for ((t, members, g_loc, g_raw, g_h, g_pm), (tape_loc, tape_scale, tape_h, tape_pm)) in node_grads.into_iter().zip(node_tapes) {
        let nets = &arch.nodes[t];
        let mut g_rest = nets.loc.backward(p, &tape_loc, g_loc, grads);
        g_rest += &nets.scale.backward(p, &tape_scale, g_raw, grads);
        let g_vsub = nets.switch.backward(p, &tape_h, g_h, grads);
        let g_et_col = nets.prior_mean.backward(p, &tape_pm, g_pm, grads);
        let mut g_sub = Array2::zeros((members.len(), n));
        scatter_column_grad(&mut g_sub, &g_rest, t);
        for (r, &b) in members.iter().enumerate() {
            g_sub[(r, t)] += g_et_col[(r, 0)];
            let mut row = g_e.row_mut(b);
            row += &g_sub.row(r);
            let mut vrow = g_v.row_mut(b);
            vrow += &g_vsub.row(r);
        }
    }

    // consistency through decoders into the posterior means
    let cons_grad = |target: &Array2<f64>, pred: &Array2<f64>| -> Array2<f64> {
        let mut g = pred - target;
        g *= 2.0 * w_cons / denom;
        g
    };
    let g_mu_e_cons = arch.decoder_e.backward(p, &tape_cx, cons_grad(&batch.x, &cx), grads);
    let g_mu_et_cons = arch.decoder_e.backward(p, &tape_cxt, cons_grad(&batch.x_tilde, &cxt), grads);
    let g_mu_v_cons = arch.decoder_v.backward(p, &tape_cdx, cons_grad(&batch.dx, &cdx), grads);

    // reparameterization and analytic KL back to encoder outputs
    let kl_c = beta * inv_b;
    let enc_grad = |g_sample: &Array2<f64>,
                    mu: &Array2<f64>,
                    ls: &Array2<f64>,
                    eps: &Array2<f64>,
                    g_mu_extra: &Array2<f64>,
                    with_kl: bool|
     -> Array2<f64> {
        let mut g_mu = g_sample + g_mu_extra;
        let mut g_ls = g_sample.clone();
        ndarray::Zip::from(&mut g_ls).and(ls).and(eps).for_each(|g, &s, &e| *g *= s.exp() * e);
        if with_kl {
            ndarray::Zip::from(&mut g_mu).and(mu).for_each(|g, &m| *g += kl_c * m);
            ndarray::Zip::from(&mut g_ls).and(ls).for_each(|g, &s| *g += kl_c * ((2.0 * s).exp() - 1.0));
        }
        join_halves(&g_mu, &g_ls)
    };
    let out_e = enc_grad(&g_e, &mu_e, &ls_e, &noise.e, &g_mu_e_cons, true);
    let mut out_et = enc_grad(&g_post, &mu_et, &ls_et, &noise.e_tilde, &g_mu_et_cons, false);
    {
        let mut ls_part = out_et.slice_mut(s![.., n..2 * n]);
        ls_part += &g_ls_et_direct;
    }
    let out_v = enc_grad(&g_v, &mu_v, &ls_v, &noise.v, &g_mu_v_cons, true);
    arch.encoder_e.backward(p, &tape_e, out_e, grads);
    arch.encoder_e.backward(p, &tape_et, out_et, grads);
    arch.encoder_v.backward(p, &tape_v, out_v, grads);

    Ok(out)
}

/// Negative ELBO (with its components) at fixed noise; no gradient.
pub fn elbo_loss(params: &AicmParameters, batch: &Batch, noise: &Noise, weights: &LossWeights) -> Result<LossBreakdown> {
    evaluate(params, batch, noise, weights, None)
}

/// Mean squared reconstruction error of `decode(encode mean)` for `x`, `x~`
/// and the displacement channel, summed over the three.
pub fn consistency_loss(params: &AicmParameters, batch: &Batch) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let arch = params.arch();
    let p = params.values();
    let n = params.n();
    let denom = batch.x.len() as f64;
    let channel = |enc: &crate::nn::Mlp, dec: &crate::nn::Mlp, input: &Array2<f64>| -> f64 {
        let mean = enc.infer(p, input.view()).slice(s![.., 0..n]).to_owned();
        let rec = dec.infer(p, mean.view());
        input.iter().zip(rec.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / denom
    };
    Ok(channel(&arch.encoder_e, &arch.decoder_e, &batch.x)
        + channel(&arch.encoder_e, &arch.decoder_e, &batch.x_tilde)
        + channel(&arch.encoder_v, &arch.decoder_v, &batch.dx))
}

/// Loss breakdown and the full gradient of `total`.
pub fn loss_and_gradient(
    params: &AicmParameters,
    batch: &Batch,
    noise: &Noise,
    weights: &LossWeights,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let mut g = vec![0.0; params.values().len()];
    let loss = evaluate(params, batch, noise, weights, Some(&mut g))?;
    if let Some(k) = g.iter().position(|v| !v.is_finite()) {
        return Err(Error::numeric(format!("gradient[{k}]")));
    }
    Ok((loss, g))
}

/// Worst relative disagreement between [`loss_and_gradient`] and central
/// finite differences over every parameter.
///
/// Central differences use a step of `1e-5`, near the cube root of machine
/// epsilon. Relative error per parameter is `|a - f| / max(|a|, |f|, floor)`
/// with `floor = 1e-6`, so parameters whose true gradient is below the
/// finite-difference noise are compared absolutely.
pub fn gradient_check(params: &AicmParameters, batch: &Batch, noise: &Noise, weights: &LossWeights) -> Result<f64> {
    const STEP: f64 = 1e-5;
    const FLOOR: f64 = 1e-6;
    let (_, analytic) = loss_and_gradient(params, batch, noise, weights)?;
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for k in 0..analytic.len() {
        let base = params.values()[k];
        probe.values_mut()[k] = base + STEP;
        let hi = evaluate(&probe, batch, noise, weights, None)?.total;
        probe.values_mut()[k] = base - STEP;
        let lo = evaluate(&probe, batch, noise, weights, None)?.total;
        probe.values_mut()[k] = base;
        let fd = (hi - lo) / (2.0 * STEP);
        let a = analytic[k];
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(FLOOR);
        if rel.is_nan() {
            return Err(Error::numeric(format!("finite difference of parameter {k}")));
        }
        worst = worst.max(rel);
    }
    Ok(worst)
}
