//! RNN-ICA model: parameters, forward pass, and sequence likelihood.
//!
//! Observations `x_t` are unmixed into sources `s_t = W x_t`. A tanh RNN
//! reads the previous observation and predicts a location `mu_t` and a
//! positive scale `sigma_t` for each source; each source is scored under a
//! logistic density. The first hidden state comes from a small MLP with
//! softplus hidden units and (in training) inverted dropout.

use crate::error::{Error, Result};
use crate::matcore::{dot, lu_factor, softplus, DenseMatrix, RngStream};

/// Model hyper-parameters that are not learned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub sigma_floor: f64,
    pub dropout_keep: f64,
    /// When true the initial-state MLP reads `x_1`; otherwise it reads zeros
    /// so `mu_1, sigma_1` do not see the value they score.
    pub leaky_first_step: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            sigma_floor: 1e-4,
            dropout_keep: 0.8,
            leaky_first_step: true,
        }
    }
}

/// All learnable arrays. Vectors are stored as `n x 1` matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Unmixing matrix, D x D.
    pub w: DenseMatrix,
    /// Recurrent weights, H x H.
    pub u_r: DenseMatrix,
    /// Input weights, H x D.
    pub u_i: DenseMatrix,
    /// Recurrent bias, H x 1.
    pub b: DenseMatrix,
    /// Location head, D x H.
    pub w_mu: DenseMatrix,
    /// Scale head, D x H.
    pub w_sigma: DenseMatrix,
    /// Initial-state MLP first layer, H_mlp x D.
    pub mlp_w1: DenseMatrix,
    /// H_mlp x 1.
    pub mlp_b1: DenseMatrix,
    /// Initial-state MLP second layer, H x H_mlp.
    pub mlp_w2: DenseMatrix,
    /// H x 1.
    pub mlp_b2: DenseMatrix,
}

/// Stable names, in storage order.
pub const PARAM_NAMES: [&str; 10] = [
    "W", "U_R", "U_I", "b", "W_mu", "W_sigma", "mlp_W1", "mlp_b1", "mlp_W2", "mlp_b2",
];

impl ModelParams {
    pub fn zeros(d: usize, h: usize, h_mlp: usize) -> Self {
        Self {
            w: DenseMatrix::zeros(d, d),
            u_r: DenseMatrix::zeros(h, h),
            u_i: DenseMatrix::zeros(h, d),
            b: DenseMatrix::zeros(h, 1),
            w_mu: DenseMatrix::zeros(d, h),
            w_sigma: DenseMatrix::zeros(d, h),
            mlp_w1: DenseMatrix::zeros(h_mlp, d),
            mlp_b1: DenseMatrix::zeros(h_mlp, 1),
            mlp_w2: DenseMatrix::zeros(h, h_mlp),
            mlp_b2: DenseMatrix::zeros(h, 1),
        }
    }

    /// Near-identity `W`, Glorot-uniform weights, zero biases.
    pub fn init(d: usize, h: usize, h_mlp: usize, rng: &mut RngStream) -> Self {
        let mut p = Self::zeros(d, h, h_mlp);
        for (i, x) in p.w.data_mut().iter_mut().enumerate() {
            let diag = if i % (d + 1) == 0 { 1.0 } else { 0.0 };
            *x = diag + rng.uniform_range(-0.01, 0.01);
        }
        for m in [
            &mut p.u_r,
            &mut p.u_i,
            &mut p.w_mu,
            &mut p.w_sigma,
            &mut p.mlp_w1,
            &mut p.mlp_w2,
        ] {
            let a = (6.0 / (m.rows() + m.cols()) as f64).sqrt();
            m.data_mut()
                .iter_mut()
                .for_each(|x| *x = rng.uniform_range(-a, a));
        }
        p
    }

    pub fn n_sources(&self) -> usize {
        self.w.rows()
    }

    pub fn n_hidden(&self) -> usize {
        self.u_r.rows()
    }

    pub fn n_mlp_hidden(&self) -> usize {
        self.mlp_w1.rows()
    }

    pub fn tensors(&self) -> [(&'static str, &DenseMatrix); 10] {
        [
            (PARAM_NAMES[0], &self.w),
            (PARAM_NAMES[1], &self.u_r),
            (PARAM_NAMES[2], &self.u_i),
            (PARAM_NAMES[3], &self.b),
            (PARAM_NAMES[4], &self.w_mu),
            (PARAM_NAMES[5], &self.w_sigma),
            (PARAM_NAMES[6], &self.mlp_w1),
            (PARAM_NAMES[7], &self.mlp_b1),
            (PARAM_NAMES[8], &self.mlp_w2),
            (PARAM_NAMES[9], &self.mlp_b2),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut DenseMatrix); 10] {
        [
            (PARAM_NAMES[0], &mut self.w),
            (PARAM_NAMES[1], &mut self.u_r),
            (PARAM_NAMES[2], &mut self.u_i),
            (PARAM_NAMES[3], &mut self.b),
            (PARAM_NAMES[4], &mut self.w_mu),
            (PARAM_NAMES[5], &mut self.w_sigma),
            (PARAM_NAMES[6], &mut self.mlp_w1),
            (PARAM_NAMES[7], &mut self.mlp_b1),
            (PARAM_NAMES[8], &mut self.mlp_w2),
            (PARAM_NAMES[9], &mut self.mlp_b2),
        ]
    }

    pub fn tensor(&self, name: &str) -> Option<&DenseMatrix> {
        self.tensors()
            .into_iter()
            .find(|(n, _)| *n == name)
            .map(|(_, m)| m)
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut DenseMatrix> {
        self.tensors_mut()
            .into_iter()
            .find(|(n, _)| *n == name)
            .map(|(_, m)| m)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.n_sources(), self.n_hidden(), self.n_mlp_hidden())
    }

    pub fn n_coordinates(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.data().len()).sum()
    }

    /// Checks internal shape consistency.
    pub fn validate(&self) -> Result<()> {
        let (d, h, hm) = (self.n_sources(), self.n_hidden(), self.n_mlp_hidden());
        let expected = Self::zeros(d, h, hm);
        for ((name, got), (_, want)) in self.tensors().iter().zip(expected.tensors().iter()) {
            if got.shape() != want.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "{name} is {:?}, expected {:?}",
                    got.shape(),
                    want.shape()
                )));
            }
            if !got.is_finite() {
                return Err(Error::NonFinite(name.to_string()));
            }
        }
        Ok(())
    }
}

/// Binary mask over MLP hidden units with inverted-dropout scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    pub mask: Vec<bool>,
    pub keep: f64,
}

impl DropoutMask {
    /// Evaluation mode: everything kept, no rescaling.
    pub fn eval(n: usize) -> Self {
        Self {
            mask: vec![true; n],
            keep: 1.0,
        }
    }

    pub fn sample(n: usize, keep: f64, rng: &mut RngStream) -> Self {
        if keep >= 1.0 {
            return Self::eval(n);
        }
        Self {
            mask: (0..n).map(|_| rng.bernoulli(keep)).collect(),
            keep,
        }
    }

    /// Multiplier for unit `i`: `mask_i / keep`.
    #[inline]
    pub fn factor(&self, i: usize) -> f64 {
        if self.mask[i] {
            1.0 / self.keep
        } else {
            0.0
        }
    }
}

/// Forward or evaluation mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Everything computed by [`forward`]; rows are time steps.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// T x H.
    pub hidden: DenseMatrix,
    /// T x D.
    pub sources: DenseMatrix,
    /// T x D.
    pub mu: DenseMatrix,
    /// T x D, pre-softplus scale.
    pub raw_scale: DenseMatrix,
    /// T x D.
    pub sigma: DenseMatrix,
    /// T x D, per-element logistic log-density.
    pub log_density: DenseMatrix,
    /// Initial-state MLP pre-activation, H_mlp.
    pub mlp_pre: Vec<f64>,
    /// Input fed to the MLP (x_1 or zeros).
    pub mlp_input: Vec<f64>,
    pub mask: DropoutMask,
}

impl ForwardTrace {
    pub fn len(&self) -> usize {
        self.sources.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total_log_density(&self) -> f64 {
        self.log_density.data().iter().sum()
    }
}

/// Log-density of a logistic with location `mu`, scale `sigma`.
pub fn logistic_log_density(s: f64, mu: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::NonPositiveScale(sigma));
    }
    Ok(logistic_log_density_unchecked(s, mu, sigma))
}

#[inline]
pub(crate) fn logistic_log_density_unchecked(s: f64, mu: f64, sigma: f64) -> f64 {
    let z = (s - mu) / sigma;
    -z - sigma.ln() - 2.0 * softplus(-z)
}

/// One recurrent update, `tanh(U_R h + U_I x + b)`.
pub fn rnn_step(params: &ModelParams, h_prev: &[f64], x_prev: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; params.n_hidden()];
    rnn_step_into(params, h_prev, x_prev, &mut out);
    out
}

#[inline]
fn rnn_step_into(params: &ModelParams, h_prev: &[f64], x_prev: &[f64], out: &mut [f64]) {
    let b = params.b.data();
    for (i, o) in out.iter_mut().enumerate() {
        let pre = dot(params.u_r.row(i), h_prev) + dot(params.u_i.row(i), x_prev) + b[i];
        *o = pre.tanh();
    }
}

/// First hidden state from the two-layer MLP.
pub fn init_state(params: &ModelParams, x1: &[f64], mask: &DropoutMask) -> Vec<f64> {
    let mut h = vec![0.0; params.n_hidden()];
    init_state_into(params, x1, mask, &mut h);
    h
}

/// Returns (pre-activation, masked softplus activation).
fn mlp_hidden(params: &ModelParams, x1: &[f64], mask: &DropoutMask) -> (Vec<f64>, Vec<f64>) {
    let b1 = params.mlp_b1.data();
    let pre: Vec<f64> = (0..params.n_mlp_hidden())
        .map(|k| dot(params.mlp_w1.row(k), x1) + b1[k])
        .collect();
    let act = pre
        .iter()
        .enumerate()
        .map(|(k, &a)| softplus(a) * mask.factor(k))
        .collect();
    (pre, act)
}

fn init_state_into(params: &ModelParams, x1: &[f64], mask: &DropoutMask, out: &mut [f64]) -> Vec<f64> {
    let (pre, act) = mlp_hidden(params, x1, mask);
    let b2 = params.mlp_b2.data();
    for (i, o) in out.iter_mut().enumerate() {
        *o = (dot(params.mlp_w2.row(i), &act) + b2[i]).tanh();
    }
    pre
}

/// Runs the model over one sequence (`x_seq` is T x D).
///
/// `mask` is used in train mode; pass `None` to draw one from `rng`.
pub fn forward(
    params: &ModelParams,
    cfg: &ModelConfig,
    x_seq: &DenseMatrix,
    mode: Mode,
    mask: Option<&DropoutMask>,
    rng: &mut RngStream,
) -> ForwardTrace {
    let t_len = x_seq.rows();
    let d = params.n_sources();
    let h = params.n_hidden();
    assert!(t_len >= 1, "forward needs at least one time step");
    assert_eq!(x_seq.cols(), d, "data dimension must match W");

    let mask = match mode {
        Mode::Eval => DropoutMask::eval(params.n_mlp_hidden()),
        Mode::Train => mask
            .cloned()
            .unwrap_or_else(|| DropoutMask::sample(params.n_mlp_hidden(), cfg.dropout_keep, rng)),
    };

    let mut hidden = DenseMatrix::zeros(t_len, h);
    let mut sources = DenseMatrix::zeros(t_len, d);
    let mut mu = DenseMatrix::zeros(t_len, d);
    let mut raw_scale = DenseMatrix::zeros(t_len, d);
    let mut sigma = DenseMatrix::zeros(t_len, d);
    let mut log_density = DenseMatrix::zeros(t_len, d);

    let mlp_input = if cfg.leaky_first_step {
        x_seq.row(0).to_vec()
    } else {
        vec![0.0; d]
    };
    let mlp_pre = init_state_into(params, &mlp_input, &mask, hidden.row_mut(0));

    let mut h_prev = vec![0.0; h];
    let mut h_cur = vec![0.0; h];
    for t in 0..t_len {
        if t > 0 {
            h_prev.copy_from_slice(hidden.row(t - 1));
            rnn_step_into(params, &h_prev, x_seq.row(t - 1), &mut h_cur);
            hidden.row_mut(t).copy_from_slice(&h_cur);
        }
        let ht = hidden.row(t);
        params.w.matvec_into(x_seq.row(t), sources.row_mut(t));
        params.w_mu.matvec_into(ht, mu.row_mut(t));
        params.w_sigma.matvec_into(ht, raw_scale.row_mut(t));
        for i in 0..d {
            let sg = softplus(raw_scale[(t, i)]) + cfg.sigma_floor;
            sigma[(t, i)] = sg;
            log_density[(t, i)] = logistic_log_density_unchecked(sources[(t, i)], mu[(t, i)], sg);
        }
    }
    debug_assert!(sigma.data().iter().all(|&s| s >= cfg.sigma_floor));

    ForwardTrace {
        hidden,
        sources,
        mu,
        raw_scale,
        sigma,
        log_density,
        mlp_pre,
        mlp_input,
        mask,
    }
}

/// `-(T log|det W| + sum of log densities)` for one sequence.
pub fn sequence_nll(
    params: &ModelParams,
    cfg: &ModelConfig,
    x_seq: &DenseMatrix,
    mode: Mode,
    mask: Option<&DropoutMask>,
    rng: &mut RngStream,
) -> Result<f64> {
    let lu = lu_factor(&params.w).map_err(|_| Error::SingularUnmixing)?;
    let trace = forward(params, cfg, x_seq, mode, mask, rng);
    Ok(-(x_seq.rows() as f64 * lu.log_abs_det() + trace.total_log_density()))
}

/// Derivative helpers shared with the gradient module.
pub(crate) mod derivs {
    /// d(-log p)/d(s, mu, sigma) for one logistic term.
    #[inline]
    pub fn nll_partials(s: f64, mu: f64, sigma: f64) -> (f64, f64, f64) {
        let z = (s - mu) / sigma;
        let th = (0.5 * z).tanh();
        let g_s = th / sigma;
        (g_s, -g_s, (1.0 - z * th) / sigma)
    }
}
