//! Analytic gradients of the batch-mean sequence NLL by backpropagation
//! through time, plus a central-difference checker.

use std::ops::{Deref, DerefMut};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matcore::{lu_factor, sigmoid, softplus, DenseMatrix, RngStream};
use crate::model::derivs::nll_partials;
use crate::model::{forward, DropoutMask, ModelConfig, ModelParams, Mode};

/// Shape-congruent with [`ModelParams`]; one array per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub ModelParams);

impl Deref for Gradients {
    type Target = ModelParams;
    fn deref(&self) -> &ModelParams {
        &self.0
    }
}

impl DerefMut for Gradients {
    fn deref_mut(&mut self) -> &mut ModelParams {
        &mut self.0
    }
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self(params.zeros_like())
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, m)| m.data().iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales so the global L2 norm is at most `max_norm`; returns the
    /// norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            let f = max_norm / norm;
            for (_, m) in self.tensors_mut() {
                m.scale(f);
            }
        }
        norm
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, m) in self.tensors() {
            if !m.is_finite() {
                return Err(Error::NonFiniteGradient(name));
            }
        }
        Ok(())
    }

    fn add_assign(&mut self, other: &Gradients) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.axpy(1.0, b);
        }
    }

    fn scale(&mut self, alpha: f64) {
        for (_, m) in self.tensors_mut() {
            m.scale(alpha);
        }
    }
}

/// Mean NLL over `batch` and its gradient.
///
/// `masks[n]` is the dropout mask for sequence `n` (use
/// [`DropoutMask::eval`] for evaluation). Per-sequence passes may run in
/// parallel; the reduction is always in ascending sequence order.
pub fn backward(
    params: &ModelParams,
    cfg: &ModelConfig,
    batch: &[DenseMatrix],
    masks: &[DropoutMask],
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::TooFewSamples("empty batch".into()));
    }
    if masks.len() != batch.len() {
        return Err(Error::LengthMismatch(format!(
            "{} masks for {} sequences",
            masks.len(),
            batch.len()
        )));
    }
    let t_len = batch[0].rows();
    if batch.iter().any(|x| x.rows() != t_len) {
        return Err(Error::LengthMismatch("sequences differ in length".into()));
    }
    let lu = lu_factor(&params.w).map_err(|_| Error::SingularUnmixing)?;
    let log_det = lu.log_abs_det();

    let per_seq: Vec<(f64, Gradients)> = batch
        .par_iter()
        .zip(masks.par_iter())
        .map(|(x, mask)| sequence_backward(params, cfg, x, mask))
        .collect();

    let n = batch.len() as f64;
    let mut grads = Gradients::zeros_like(params);
    let mut density_nll = 0.0;
    for (nll, g) in &per_seq {
        density_nll += nll;
        grads.add_assign(g);
    }
    grads.scale(1.0 / n);

    // determinant term: d(-T log|det W|)/dW = -T W^{-T}
    let w_inv = lu.inverse();
    let t = t_len as f64;
    for i in 0..params.n_sources() {
        for j in 0..params.n_sources() {
            grads.w[(i, j)] -= t * w_inv[(j, i)];
        }
    }
    grads.check_finite()?;
    Ok((density_nll / n - t * log_det, grads))
}

/// Gradient of `-(sum of log densities)` for one sequence, without the
/// determinant term.
fn sequence_backward(
    params: &ModelParams,
    cfg: &ModelConfig,
    x: &DenseMatrix,
    mask: &DropoutMask,
) -> (f64, Gradients) {
    // rng is unused when a mask is supplied
    let mut rng = RngStream::new(0, 0);
    let tr = forward(params, cfg, x, Mode::Train, Some(mask), &mut rng);
    let d = params.n_sources();
    let h = params.n_hidden();
    let t_len = x.rows();
    let mut g = Gradients::zeros_like(params);

    let mut g_h = vec![0.0; h];
    let mut g_pre = vec![0.0; h];
    let mut g_mu = vec![0.0; d];
    let mut g_raw = vec![0.0; d];
    let mut g_s = vec![0.0; d];
    for t in (0..t_len).rev() {
        for i in 0..d {
            let (gs, gm, gsig) = nll_partials(tr.sources[(t, i)], tr.mu[(t, i)], tr.sigma[(t, i)]);
            g_s[i] = gs;
            g_mu[i] = gm;
            g_raw[i] = gsig * sigmoid(tr.raw_scale[(t, i)]);
        }
        let ht = tr.hidden.row(t);
        g.w.add_outer(1.0, &g_s, x.row(t));
        g.w_mu.add_outer(1.0, &g_mu, ht);
        g.w_sigma.add_outer(1.0, &g_raw, ht);
        params.w_mu.matvec_t_add(&g_mu, &mut g_h);
        params.w_sigma.matvec_t_add(&g_raw, &mut g_h);

        for k in 0..h {
            g_pre[k] = g_h[k] * (1.0 - ht[k] * ht[k]);
        }
        if t > 0 {
            let h_prev = tr.hidden.row(t - 1);
            g.u_r.add_outer(1.0, &g_pre, h_prev);
            g.u_i.add_outer(1.0, &g_pre, x.row(t - 1));
            for (b, &gp) in g.b.data_mut().iter_mut().zip(&g_pre) {
                *b += gp;
            }
            g_h.iter_mut().for_each(|v| *v = 0.0);
            params.u_r.matvec_t_add(&g_pre, &mut g_h);
        } else {
            // initial-state MLP
            let hm = params.n_mlp_hidden();
            let act: Vec<f64> = (0..hm)
                .map(|k| softplus(tr.mlp_pre[k]) * mask.factor(k))
                .collect();
            g.mlp_w2.add_outer(1.0, &g_pre, &act);
            for (b, &gp) in g.mlp_b2.data_mut().iter_mut().zip(&g_pre) {
                *b += gp;
            }
            let mut g_act = vec![0.0; hm];
            params.mlp_w2.matvec_t_add(&g_pre, &mut g_act);
            let g_a1: Vec<f64> = (0..hm)
                .map(|k| g_act[k] * mask.factor(k) * sigmoid(tr.mlp_pre[k]))
                .collect();
            g.mlp_w1.add_outer(1.0, &g_a1, &tr.mlp_input);
            for (b, &ga) in g.mlp_b1.data_mut().iter_mut().zip(&g_a1) {
                *b += ga;
            }
        }
    }
    (-tr.total_log_density(), g)
}

/// Mean NLL over a batch without gradients (determinant term included).
pub fn batch_nll(
    params: &ModelParams,
    cfg: &ModelConfig,
    batch: &[DenseMatrix],
    masks: &[DropoutMask],
) -> Result<f64> {
    Ok(neumaier_sum(&batch_nll_terms(params, cfg, batch, masks)?))
}

/// The individual additive terms of [`batch_nll`]: one determinant term per
/// sequence followed by every negated log-density, all scaled by `1/N`.
pub fn batch_nll_terms(
    params: &ModelParams,
    cfg: &ModelConfig,
    batch: &[DenseMatrix],
    masks: &[DropoutMask],
) -> Result<Vec<f64>> {
    let lu = lu_factor(&params.w).map_err(|_| Error::SingularUnmixing)?;
    let mut rng = RngStream::new(0, 0);
    let inv_n = 1.0 / batch.len() as f64;
    let mut terms = Vec::new();
    for (x, m) in batch.iter().zip(masks) {
        let tr = forward(params, cfg, x, Mode::Train, Some(m), &mut rng);
        terms.push(-(x.rows() as f64) * lu.log_abs_det() * inv_n);
        terms.extend(tr.log_density.data().iter().map(|l| -l * inv_n));
    }
    Ok(terms)
}

/// Compensated summation.
pub fn neumaier_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: &'static str,
    pub worst_index: usize,
    pub coordinates_checked: usize,
    pub pass: bool,
}

/// Coordinates above this count are subsampled.
pub const GRAD_CHECK_MAX_COORDS: usize = 5000;

/// Compares `analytic` against central differences of an objective given
/// as a list of additive terms.
///
/// Each coordinate `θ` is perturbed by `step * max(1, |θ|)`. The two term
/// lists are differenced element-wise before a compensated sum, which keeps
/// the rounding floor near one ulp of a single term rather than of the
/// total. The relative error is `|a - f| / max(|a|, |f|, 1e-8)`.
pub fn check_gradient(
    objective: impl Fn(&ModelParams) -> Vec<f64>,
    params: &ModelParams,
    analytic: &Gradients,
    step: f64,
    tolerance: f64,
    seed: u64,
) -> GradCheckReport {
    assert!(step > 0.0, "step must be positive");
    let mut coords: Vec<(usize, usize)> = Vec::new();
    for (ti, (_, m)) in params.tensors().iter().enumerate() {
        coords.extend((0..m.data().len()).map(|k| (ti, k)));
    }
    if coords.len() > GRAD_CHECK_MAX_COORDS {
        let mut rng = RngStream::new(seed, 0x6772_6164);
        rng.shuffle(&mut coords);
        coords.truncate(GRAD_CHECK_MAX_COORDS);
        coords.sort_unstable();
    }

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: params.tensors()[0].0,
        worst_index: 0,
        coordinates_checked: coords.len(),
        pass: true,
    };
    for &(ti, k) in &coords {
        let theta = params.tensors()[ti].1.data()[k];
        let h = step * theta.abs().max(1.0);
        work.tensors_mut()[ti].1.data_mut()[k] = theta + h;
        let fp = objective(&work);
        work.tensors_mut()[ti].1.data_mut()[k] = theta - h;
        let fm = objective(&work);
        work.tensors_mut()[ti].1.data_mut()[k] = theta;

        let diffs: Vec<f64> = fp.iter().zip(&fm).map(|(a, b)| a - b).collect();
        let numeric = neumaier_sum(&diffs) / (2.0 * h);
        let a = analytic.tensors()[ti].1.data()[k];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if rel > report.max_rel_err || rel.is_nan() {
            report.max_rel_err = rel;
            report.worst_param = params.tensors()[ti].0;
            report.worst_index = k;
        }
    }
    report.pass = report.max_rel_err <= tolerance;
    report
}

/// Runs [`backward`] and checks it against central differences of the
/// batch-mean NLL with the same dropout masks.
pub fn grad_check(
    params: &ModelParams,
    cfg: &ModelConfig,
    batch: &[DenseMatrix],
    masks: &[DropoutMask],
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let (_, grads) = backward(params, cfg, batch, masks)?;
    Ok(check_gradient(
        |p| batch_nll_terms(p, cfg, batch, masks).unwrap_or_else(|_| vec![f64::NAN]),
        params,
        &grads,
        step,
        tolerance,
        0,
    ))
}
