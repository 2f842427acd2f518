//! Data preparation, RMSProp with L2 decay on `W`, and the epoch loop.

use crate::error::{Error, Result};
use crate::grad::{backward, Gradients};
use crate::io::Checkpoint;
use crate::matcore::{lu_factor, mean_var, pca_fit, DenseMatrix, PcaFit, RngStream};
use crate::model::{DropoutMask, ModelConfig, ModelParams};

/// RNG stream ids; each epoch uses `EPOCH_STREAM_BASE + epoch`.
pub const INIT_STREAM: u64 = 0;
pub const EPOCH_STREAM_BASE: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub n_components: usize,
    pub hidden_units: usize,
    pub mlp_hidden: usize,
    pub window: usize,
    pub stride: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2_w: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_eps: f64,
    pub sigma_floor: f64,
    pub dropout_keep: f64,
    pub seed: u64,
    pub leaky_first_step: bool,
    /// Global L2 norm cap applied to the NLL gradient; 0 disables.
    pub grad_clip: f64,
    /// Emit a checkpoint every this many epochs; 0 means only at the end.
    pub checkpoint_every: usize,
    /// Stop when relative NLL improvement over 20 epochs is below 1e-6.
    pub early_stop: bool,
}

impl TrainConfig {
    pub fn new(n_components: usize) -> Self {
        Self {
            n_components,
            hidden_units: 100,
            mlp_hidden: 100,
            window: 20,
            stride: 1,
            batch_size: 100,
            epochs: 500,
            learning_rate: 1e-4,
            l2_w: 0.002,
            rmsprop_decay: 0.9,
            rmsprop_eps: 1e-8,
            sigma_floor: 1e-4,
            dropout_keep: 0.8,
            seed: 0,
            leaky_first_step: true,
            grad_clip: 5.0,
            checkpoint_every: 50,
            early_stop: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.n_components == 0 {
            return bad("n_components must be positive");
        }
        if self.hidden_units == 0 || self.mlp_hidden == 0 {
            return bad("hidden_units and mlp_hidden must be positive");
        }
        if self.window == 0 || self.stride == 0 || self.batch_size == 0 {
            return bad("window, stride and batch_size must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.l2_w >= 0.0) {
            return bad("l2_w must be non-negative");
        }
        if !(0.0..1.0).contains(&self.rmsprop_decay) || !(self.rmsprop_eps > 0.0) {
            return bad("rmsprop_decay must be in [0, 1) and rmsprop_eps positive");
        }
        if !(self.sigma_floor > 0.0) {
            return bad("sigma_floor must be positive");
        }
        if !(self.dropout_keep > 0.0 && self.dropout_keep <= 1.0) {
            return bad("dropout_keep must be in (0, 1]");
        }
        if !(self.grad_clip >= 0.0) {
            return bad("grad_clip must be non-negative");
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            sigma_floor: self.sigma_floor,
            dropout_keep: self.dropout_keep,
            leaky_first_step: self.leaky_first_step,
        }
    }
}

/// Removes the least-squares polynomial fit of the given degree.
///
/// The fit projects onto an orthonormal polynomial basis built by modified
/// Gram-Schmidt (twice) on a time axis scaled to [-1, 1].
pub fn detrend(series: &[f64], degree: usize) -> Result<Vec<f64>> {
    let len = series.len();
    if len <= degree {
        return Err(Error::DegreeTooHigh { degree, len });
    }
    let t: Vec<f64> = (0..len)
        .map(|i| {
            if len == 1 {
                0.0
            } else {
                2.0 * i as f64 / (len - 1) as f64 - 1.0
            }
        })
        .collect();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(degree + 1);
    for k in 0..=degree {
        let mut v: Vec<f64> = t.iter().map(|&x| x.powi(k as i32)).collect();
        for _ in 0..2 {
            for q in &basis {
                let c: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(x, qi)| *x -= c * qi);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    let mut resid = series.to_vec();
    for q in &basis {
        let c: f64 = q.iter().zip(&resid).map(|(a, b)| a * b).sum();
        resid.iter_mut().zip(q).for_each(|(x, qi)| *x -= c * qi);
    }
    Ok(resid)
}

/// Scales to unit sample variance; the mean is scaled, not removed.
pub fn variance_normalize(series: &[f64]) -> Result<Vec<f64>> {
    let (mean, var) = mean_var(series);
    let scale = series.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if series.len() < 2 || var <= (1e-14 * scale).powi(2) {
        return Err(Error::ZeroVariance(format!(
            "series of length {} (mean {mean})",
            series.len()
        )));
    }
    let sd = var.sqrt();
    Ok(series.iter().map(|v| v / sd).collect())
}

/// Number of windows for a sequence of length `len`.
pub fn window_count(len: usize, w: usize, stride: usize) -> usize {
    if len < w || w == 0 || stride == 0 {
        0
    } else {
        (len - w) / stride + 1
    }
}

/// Slices of `w` rows starting at 0, stride, 2*stride, ...
pub fn window(seq: &DenseMatrix, w: usize, stride: usize) -> Result<Vec<DenseMatrix>> {
    if w == 0 || stride == 0 {
        return Err(Error::InvalidConfig("window and stride must be positive".into()));
    }
    if seq.rows() < w {
        return Err(Error::WindowTooLong {
            window: w,
            len: seq.rows(),
        });
    }
    Ok((0..window_count(seq.rows(), w, stride))
        .map(|i| seq.slice_rows(i * stride, i * stride + w))
        .collect())
}

/// Equal-length windows with (subject, start) provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    pub sequences: Vec<DenseMatrix>,
    pub provenance: Vec<(usize, usize)>,
}

impl SequenceBatch {
    /// Materialises the windows named by `provenance`.
    pub fn gather(dataset: &[DenseMatrix], provenance: &[(usize, usize)], w: usize) -> Self {
        Self {
            sequences: provenance
                .iter()
                .map(|&(s, start)| dataset[s].slice_rows(start, start + w))
                .collect(),
            provenance: provenance.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }
}

/// Every (subject, window start) pair across the dataset, in order.
pub fn window_index(dataset: &[DenseMatrix], w: usize, stride: usize) -> Vec<(usize, usize)> {
    dataset
        .iter()
        .enumerate()
        .flat_map(|(s, x)| (0..window_count(x.rows(), w, stride)).map(move |i| (s, i * stride)))
        .collect()
}

/// RMSProp accumulators plus training position.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub mean_square: ModelParams,
    /// Completed epochs.
    pub epoch: usize,
    pub seed: u64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams, seed: u64) -> Self {
        Self {
            mean_square: params.zeros_like(),
            epoch: 0,
            seed,
        }
    }

    /// RNG for the given epoch; shuffling and dropout masks draw from it.
    pub fn epoch_rng(&self, epoch: usize) -> RngStream {
        RngStream::new(self.seed, EPOCH_STREAM_BASE + epoch as u64)
    }
}

/// One RMSProp update with the L2 penalty `l2_w * sum(W^2)` folded into the
/// `W` gradient.
pub fn rmsprop_step(
    params: &mut ModelParams,
    grads: &Gradients,
    opt: &mut OptimizerState,
    cfg: &TrainConfig,
) -> Result<()> {
    let rho = cfg.rmsprop_decay;
    let lr = cfg.learning_rate;
    let eps = cfg.rmsprop_eps;
    let l2 = cfg.l2_w;
    let w_before = params.w.clone();
    for (((name, p), (_, g)), (_, v)) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(opt.mean_square.tensors_mut())
    {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(Error::ShapeMismatch(format!("{name} in rmsprop_step")));
        }
        let is_w = name == "W";
        for (k, ((pi, &gi), vi)) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(v.data_mut())
            .enumerate()
        {
            let g_eff = if is_w {
                gi + 2.0 * l2 * w_before.data()[k]
            } else {
                gi
            };
            *vi = rho * *vi + (1.0 - rho) * g_eff * g_eff;
            let next = *pi - lr * g_eff / (vi.sqrt() + eps);
            if !next.is_finite() {
                return Err(Error::NonFiniteUpdate(name));
            }
            *pi = next;
        }
    }
    Ok(())
}

/// Receives checkpoints during [`fit`].
pub trait CheckpointSink {
    fn save(&mut self, checkpoint: &Checkpoint) -> Result<()>;
}

/// Discards checkpoints.
pub struct NullSink;

impl CheckpointSink for NullSink {
    fn save(&mut self, _: &Checkpoint) -> Result<()> {
        Ok(())
    }
}

/// Keeps every checkpoint in memory.
#[derive(Default)]
pub struct MemorySink(pub Vec<Checkpoint>);

impl CheckpointSink for MemorySink {
    fn save(&mut self, checkpoint: &Checkpoint) -> Result<()> {
        self.0.push(checkpoint.clone());
        Ok(())
    }
}

/// Output of [`fit`].
#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    /// Mean training NLL per epoch.
    pub history: Vec<f64>,
}

/// Starts a fresh run: initial parameters drawn from the init stream.
pub fn initial_checkpoint(cfg: &TrainConfig) -> Checkpoint {
    let mut rng = RngStream::new(cfg.seed, INIT_STREAM);
    let params = ModelParams::init(cfg.n_components, cfg.hidden_units, cfg.mlp_hidden, &mut rng);
    let optimizer = OptimizerState::new(&params, cfg.seed);
    Checkpoint {
        params,
        optimizer,
        history: Vec::new(),
        config: cfg.clone(),
    }
}

/// Trains from scratch.
pub fn fit(
    cfg: &TrainConfig,
    dataset: &[DenseMatrix],
    sink: &mut dyn CheckpointSink,
) -> Result<FitResult> {
    cfg.validate()?;
    resume(cfg, dataset, initial_checkpoint(cfg), sink)
}

/// Continues training from `start` until `cfg.epochs` epochs are complete.
///
/// On a numerical failure the last epoch-boundary state is handed to the
/// sink before the error is returned.
pub fn resume(
    cfg: &TrainConfig,
    dataset: &[DenseMatrix],
    start: Checkpoint,
    sink: &mut dyn CheckpointSink,
) -> Result<FitResult> {
    cfg.validate()?;
    start.check_compatible(cfg)?;
    let Checkpoint {
        mut params,
        optimizer: mut opt,
        mut history,
        ..
    } = start;
    if cfg.epochs == 0 || opt.epoch >= cfg.epochs {
        return Ok(FitResult {
            params,
            optimizer: opt,
            history,
        });
    }
    let mut last_good = Checkpoint {
        params: params.clone(),
        optimizer: opt.clone(),
        history: history.clone(),
        config: cfg.clone(),
    };
    if let Err(e) = check_dataset(cfg, dataset) {
        if matches!(e, Error::SingularUnmixing) {
            sink.save(&last_good)?;
        }
        return Err(e);
    }

    let model_cfg = cfg.model_config();
    let index = window_index(dataset, cfg.window, cfg.stride);
    let hm = cfg.mlp_hidden;

    while opt.epoch < cfg.epochs {
        let mut rng = opt.epoch_rng(opt.epoch);
        let mut order = index.clone();
        rng.shuffle(&mut order);

        let mut total = 0.0;
        let step_result: Result<()> = (|| {
            for chunk in order.chunks(cfg.batch_size) {
                let batch = SequenceBatch::gather(dataset, chunk, cfg.window);
                let masks: Vec<DropoutMask> = (0..batch.len())
                    .map(|_| DropoutMask::sample(hm, cfg.dropout_keep, &mut rng))
                    .collect();
                let (nll, mut grads) = backward(&params, &model_cfg, &batch.sequences, &masks)?;
                if cfg.grad_clip > 0.0 {
                    grads.clip_global_norm(cfg.grad_clip);
                }
                rmsprop_step(&mut params, &grads, &mut opt, cfg)?;
                total += nll * batch.len() as f64;
            }
            Ok(())
        })();
        if let Err(e) = step_result {
            sink.save(&last_good)?;
            return Err(e);
        }
        // a step may have pushed W to singular; catch it at the boundary
        if lu_factor(&params.w).is_err() {
            sink.save(&last_good)?;
            return Err(Error::SingularUnmixing);
        }

        opt.epoch += 1;
        let mean = total / order.len() as f64;
        history.push(mean);
        log::info!("epoch={} mean_nll={:.6}", opt.epoch, mean);

        last_good = Checkpoint {
            params: params.clone(),
            optimizer: opt.clone(),
            history: history.clone(),
            config: cfg.clone(),
        };
        let stop = cfg.early_stop && converged(&history);
        let done = opt.epoch == cfg.epochs || stop;
        if done || (cfg.checkpoint_every > 0 && opt.epoch % cfg.checkpoint_every == 0) {
            sink.save(&last_good)?;
        }
        if stop {
            log::info!("early stop at epoch {}", opt.epoch);
            break;
        }
    }
    Ok(FitResult {
        params,
        optimizer: opt,
        history,
    })
}

fn converged(history: &[f64]) -> bool {
    const SPAN: usize = 20;
    if history.len() <= SPAN {
        return false;
    }
    let old = history[history.len() - 1 - SPAN];
    let new = history[history.len() - 1];
    (old - new) / old.abs().max(1e-300) < 1e-6
}

fn check_dataset(cfg: &TrainConfig, dataset: &[DenseMatrix]) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::TooFewSamples("no subjects in dataset".into()));
    }
    for (i, x) in dataset.iter().enumerate() {
        if x.cols() != cfg.n_components {
            return Err(Error::ConfigMismatch(format!(
                "subject {i} has {} components, config says {}",
                x.cols(),
                cfg.n_components
            )));
        }
        if x.rows() < cfg.window {
            return Err(Error::WindowTooLong {
                window: cfg.window,
                len: x.rows(),
            });
        }
        if !x.is_finite() {
            return Err(Error::NonFinite(format!("subject {i}")));
        }
    }
    // Rank-deficient data leaves W unidentifiable: the likelihood is
    // unbounded along the null directions.
    let d = cfg.n_components;
    let mut cov = DenseMatrix::zeros(d, d);
    let mut n = 0usize;
    for x in dataset {
        for r in 0..x.rows() {
            cov.add_outer(1.0, x.row(r), x.row(r));
            n += 1;
        }
    }
    cov.scale(1.0 / n as f64);
    let scale = (0..d).map(|i| cov[(i, i)]).fold(0.0f64, f64::max);
    let singular = scale == 0.0
        || crate::matcore::sym_eig(&cov)
            .map(|e| e.values[d - 1] <= 1e-12 * scale)
            .unwrap_or(true);
    if singular {
        log::error!("data covariance is singular; W cannot be identified");
        return Err(Error::SingularUnmixing);
    }
    Ok(())
}

/// Variance-normalises and detrends every channel of every subject, then
/// fits PCA on the stacked data and splits the loadings back per subject.
pub fn preprocess(
    subjects: &[DenseMatrix],
    detrend_degree: Option<usize>,
    k: usize,
) -> Result<(Vec<DenseMatrix>, PcaFit)> {
    let mut cleaned = Vec::with_capacity(subjects.len());
    for (si, x) in subjects.iter().enumerate() {
        let mut out = DenseMatrix::zeros(x.rows(), x.cols());
        for c in 0..x.cols() {
            let col = variance_normalize(&x.column(c)).map_err(|e| match e {
                Error::ZeroVariance(_) => {
                    Error::ZeroVariance(format!("subject {si}, channel {c}"))
                }
                other => other,
            })?;
            let col = match detrend_degree {
                Some(deg) => detrend(&col, deg)?,
                None => col,
            };
            for (r, v) in col.into_iter().enumerate() {
                out[(r, c)] = v;
            }
        }
        cleaned.push(out);
    }
    let refs: Vec<&DenseMatrix> = cleaned.iter().collect();
    let stacked = DenseMatrix::vstack(&refs)?;
    let fit = pca_fit(&stacked, k)?;
    let mut out = Vec::with_capacity(subjects.len());
    let mut start = 0;
    for x in &cleaned {
        out.push(fit.loadings.slice_rows(start, start + x.rows()));
        start += x.rows();
    }
    Ok((out, fit))
}
