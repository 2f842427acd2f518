//! Synthetic cohorts: Markov state sequences over covariance patterns,
//! Laplace innovations, per-subject HRF convolution, and linear mixing.

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::io::MatrixBundle;
use crate::matcore::{sym_eig, DenseMatrix, RngStream};

/// RNG stream for the shared mixing matrix; subject `i` uses `i + 1`.
pub const MIXING_STREAM: u64 = 0;

const STOCHASTIC_TOL: f64 = 1e-12;
const MIN_EIGENVALUE: f64 = 1e-8;
const MAX_MIXING_DRAWS: usize = 100_000;

/// Double-gamma HRF shape and per-subject jitter.
#[derive(Debug, Clone, PartialEq)]
pub struct HrfParams {
    pub peak_delay: f64,
    pub undershoot_delay: f64,
    pub peak_disp: f64,
    pub undershoot_disp: f64,
    pub ratio: f64,
    /// Kernel length in samples.
    pub length: usize,
    pub peak_delay_range: (f64, f64),
    pub undershoot_delay_range: (f64, f64),
}

impl Default for HrfParams {
    fn default() -> Self {
        Self {
            peak_delay: 6.0,
            undershoot_delay: 16.0,
            peak_disp: 1.0,
            undershoot_disp: 1.0,
            ratio: 1.0 / 6.0,
            length: 16,
            peak_delay_range: (5.0, 7.0),
            undershoot_delay_range: (14.0, 18.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n_sources: usize,
    pub n_states: usize,
    pub timepoints: usize,
    pub tr: f64,
    pub subjects_a: usize,
    pub subjects_b: usize,
    pub transition_a: DenseMatrix,
    pub transition_b: DenseMatrix,
    pub initial: Vec<f64>,
    pub state_covariances: Vec<DenseMatrix>,
    pub hrf: HrfParams,
    /// Skip HRF convolution entirely (delta kernel).
    pub convolve_hrf: bool,
    pub noise_std: f64,
    pub cond_bound: f64,
    /// Use the identity instead of a random mixing matrix.
    pub identity_mixing: bool,
    pub seed: u64,
}

impl SimConfig {
    /// Defaults for `m` sources and `k` states.
    pub fn new(m: usize, k: usize) -> Self {
        Self {
            n_sources: m,
            n_states: k,
            timepoints: 480,
            tr: 2.0,
            subjects_a: 25,
            subjects_b: 25,
            transition_a: diffuse_transitions(k),
            transition_b: sticky_transitions(k, 0.9),
            initial: vec![1.0 / k as f64; k],
            state_covariances: (0..k).map(|s| default_state_covariance(m, s)).collect(),
            hrf: HrfParams::default(),
            convolve_hrf: true,
            noise_std: 0.1,
            cond_bound: 10.0,
            identity_mixing: false,
            seed: 0,
        }
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects_a + self.subjects_b
    }

    pub fn validate(&self) -> Result<()> {
        let (m, k) = (self.n_sources, self.n_states);
        if m == 0 || k == 0 || self.timepoints == 0 {
            return Err(Error::InvalidConfig(
                "n_sources, n_states and timepoints must be positive".into(),
            ));
        }
        if !(self.tr > 0.0) || !(self.noise_std >= 0.0) || !(self.cond_bound >= 1.0) {
            return Err(Error::InvalidConfig(
                "tr must be positive, noise_std non-negative, cond_bound at least 1".into(),
            ));
        }
        check_stochastic(&self.transition_a, &self.initial)?;
        check_stochastic(&self.transition_b, &self.initial)?;
        if self.transition_a.rows() != k {
            return Err(Error::InvalidStochasticMatrix(format!(
                "transition matrices must be {k}x{k}"
            )));
        }
        if self.state_covariances.len() != k {
            return Err(Error::InvalidConfig(format!(
                "expected {k} state covariances, got {}",
                self.state_covariances.len()
            )));
        }
        for (i, c) in self.state_covariances.iter().enumerate() {
            if c.shape() != (m, m) {
                return Err(Error::ShapeMismatch(format!("state_cov_{} must be {m}x{m}", i + 1)));
            }
        }
        Ok(())
    }
}

/// Off-diagonal mass 0.1 per state (uniform when `k` is large).
pub fn diffuse_transitions(k: usize) -> DenseMatrix {
    if k == 1 {
        return DenseMatrix::identity(1);
    }
    let off = 0.1f64.min(1.0 / k as f64);
    DenseMatrix::from_fn(k, k, |i, j| {
        if i == j {
            1.0 - off * (k - 1) as f64
        } else {
            off
        }
    })
}

/// Diagonal `stay`, remainder spread evenly.
pub fn sticky_transitions(k: usize, stay: f64) -> DenseMatrix {
    if k == 1 {
        return DenseMatrix::identity(1);
    }
    let off = (1.0 - stay) / (k - 1) as f64;
    DenseMatrix::from_fn(k, k, |i, j| if i == j { stay } else { off })
}

/// State `s` (0-based): variance `1 + s`, correlation 0.4 inside blocks of
/// size `s % 3 + 2` shifted by `s`.
pub fn default_state_covariance(m: usize, s: usize) -> DenseMatrix {
    let size = s % 3 + 2;
    let block = |i: usize| (i + s) / size;
    let var = 1.0 + s as f64;
    DenseMatrix::from_fn(m, m, |i, j| {
        if i == j {
            var
        } else if block(i) == block(j) {
            0.4 * var
        } else {
            0.0
        }
    })
}

fn check_stochastic(p: &DenseMatrix, pi0: &[f64]) -> Result<()> {
    let k = p.rows();
    if !p.is_square() || k == 0 {
        return Err(Error::InvalidStochasticMatrix(format!(
            "transition matrix is {}x{}",
            p.rows(),
            p.cols()
        )));
    }
    if pi0.len() != k {
        return Err(Error::InvalidStochasticMatrix(format!(
            "initial distribution has {} entries for {k} states",
            pi0.len()
        )));
    }
    for r in 0..k {
        let row = p.row(r);
        if row.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::InvalidStochasticMatrix(format!("row {r} has a negative entry")));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::InvalidStochasticMatrix(format!("row {r} sums to {sum}")));
        }
    }
    let sum: f64 = pi0.iter().sum();
    if pi0.iter().any(|&v| !(v >= 0.0)) || (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::InvalidStochasticMatrix(format!(
            "initial distribution sums to {sum}"
        )));
    }
    Ok(())
}

/// Markov chain with states coded `1..=K`.
pub fn sample_state_sequence(
    p: &DenseMatrix,
    pi0: &[f64],
    t: usize,
    rng: &mut RngStream,
) -> Result<Vec<usize>> {
    check_stochastic(p, pi0)?;
    let mut states = Vec::with_capacity(t);
    if t == 0 {
        return Ok(states);
    }
    let mut s = rng.categorical(pi0);
    states.push(s + 1);
    for _ in 1..t {
        s = rng.categorical(p.row(s));
        states.push(s + 1);
    }
    Ok(states)
}

/// Symmetric square root via the eigendecomposition.
pub fn spd_sqrt(cov: &DenseMatrix) -> Result<DenseMatrix> {
    let eig = sym_eig(cov)?;
    let min = eig.values.last().copied().unwrap_or(0.0);
    if !(min > MIN_EIGENVALUE) {
        return Err(Error::NotPositiveDefinite(format!("minimum eigenvalue {min:e}")));
    }
    let n = cov.rows();
    let v = &eig.vectors;
    Ok(DenseMatrix::from_fn(n, n, |i, j| {
        (0..n)
            .map(|k| v[(i, k)] * eig.values[k].sqrt() * v[(j, k)])
            .sum()
    }))
}

/// `e_t = Σ_{s_t}^{1/2} z_t` with i.i.d. unit-variance Laplace `z_t`.
pub fn generate_sources(
    states: &[usize],
    covariances: &[DenseMatrix],
    rng: &mut RngStream,
) -> Result<DenseMatrix> {
    if covariances.is_empty() {
        return Err(Error::InvalidConfig("no state covariances".into()));
    }
    let roots = covariances
        .iter()
        .enumerate()
        .map(|(k, c)| {
            spd_sqrt(c).map_err(|e| match e {
                Error::NotPositiveDefinite(msg) => {
                    Error::NotPositiveDefinite(format!("state {}: {msg}", k + 1))
                }
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let m = covariances[0].rows();
    let mut out = DenseMatrix::zeros(states.len(), m);
    let mut z = vec![0.0; m];
    for (t, &s) in states.iter().enumerate() {
        if s == 0 || s > roots.len() {
            return Err(Error::InvalidConfig(format!("state {s} at t={t} out of range")));
        }
        z.iter_mut().for_each(|v| *v = rng.laplace());
        roots[s - 1].matvec_into(&z, out.row_mut(t));
    }
    Ok(out)
}

fn gamma_pdf(t: f64, shape: f64, scale: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    ((shape - 1.0) * t.ln() - t / scale - ln_gamma(shape) - shape * scale.ln()).exp()
}

/// Double-gamma response sampled at `0, TR, 2TR, ...`, scaled to unit peak.
pub fn hrf_kernel(
    peak_delay: f64,
    undershoot_delay: f64,
    peak_disp: f64,
    undershoot_disp: f64,
    ratio: f64,
    tr: f64,
    length: usize,
) -> Result<Vec<f64>> {
    let positive = [peak_delay, undershoot_delay, peak_disp, undershoot_disp, tr];
    if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) || !(ratio >= 0.0) || length == 0 {
        return Err(Error::InvalidHrfParams(format!(
            "delays {peak_delay}/{undershoot_delay}, dispersions {peak_disp}/{undershoot_disp}, \
             ratio {ratio}, TR {tr}, length {length}"
        )));
    }
    let kernel: Vec<f64> = (0..length)
        .map(|i| {
            let t = i as f64 * tr;
            gamma_pdf(t, peak_delay / peak_disp, peak_disp)
                - ratio * gamma_pdf(t, undershoot_delay / undershoot_disp, undershoot_disp)
        })
        .collect();
    let peak = kernel.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(peak > 0.0) {
        return Err(Error::InvalidHrfParams(format!(
            "kernel of length {length} at TR {tr} is identically zero"
        )));
    }
    Ok(kernel.into_iter().map(|v| v / peak).collect())
}

/// Causal convolution truncated to the input length.
pub fn convolve(signal: &[f64], kernel: &[f64]) -> Vec<f64> {
    (0..signal.len())
        .map(|t| {
            kernel
                .iter()
                .take(t + 1)
                .enumerate()
                .map(|(tau, k)| k * signal[t - tau])
                .sum()
        })
        .collect()
}

fn condition_number(m: &DenseMatrix) -> Result<f64> {
    let gram = m.transpose().matmul(m);
    let eig = sym_eig(&gram)?;
    let hi = eig.values[0];
    let lo = *eig.values.last().unwrap();
    Ok(if lo > 0.0 { (hi / lo).sqrt() } else { f64::INFINITY })
}

/// Gaussian matrix redrawn until its 2-norm condition number is within
/// `bound`.
pub fn random_mixing(m: usize, bound: f64, rng: &mut RngStream) -> Result<DenseMatrix> {
    for _ in 0..MAX_MIXING_DRAWS {
        let a = DenseMatrix::from_fn(m, m, |_, _| rng.normal());
        if condition_number(&a)? <= bound {
            return Ok(a);
        }
    }
    Err(Error::InvalidConfig(format!(
        "no {m}x{m} mixing matrix with condition number <= {bound} in {MAX_MIXING_DRAWS} draws"
    )))
}

/// Hidden quantities behind a simulated cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Per subject, states coded `1..=K`.
    pub states: Vec<Vec<usize>>,
    pub sources: Vec<DenseMatrix>,
    /// 0 for group A, 1 for group B.
    pub groups: Vec<usize>,
    pub mixing: DenseMatrix,
    pub config: SimConfig,
}

/// Simulates every subject on its own RNG stream.
pub fn simulate_cohort(cfg: &SimConfig) -> Result<(Vec<DenseMatrix>, GroundTruth)> {
    cfg.validate()?;
    let m = cfg.n_sources;
    let mixing = if cfg.identity_mixing {
        DenseMatrix::identity(m)
    } else {
        random_mixing(m, cfg.cond_bound, &mut RngStream::new(cfg.seed, MIXING_STREAM))?
    };

    let mut observations = Vec::with_capacity(cfg.n_subjects());
    let mut truth = GroundTruth {
        states: Vec::with_capacity(cfg.n_subjects()),
        sources: Vec::with_capacity(cfg.n_subjects()),
        groups: Vec::with_capacity(cfg.n_subjects()),
        mixing,
        config: cfg.clone(),
    };
    for subject in 0..cfg.n_subjects() {
        let mut rng = RngStream::new(cfg.seed, subject as u64 + 1);
        let group = usize::from(subject >= cfg.subjects_a);
        let p = if group == 0 {
            &cfg.transition_a
        } else {
            &cfg.transition_b
        };
        let states = sample_state_sequence(p, &cfg.initial, cfg.timepoints, &mut rng)?;
        let sources = generate_sources(&states, &cfg.state_covariances, &mut rng)?;

        let bold = if cfg.convolve_hrf {
            let h = &cfg.hrf;
            let peak = rng.uniform_range(h.peak_delay_range.0, h.peak_delay_range.1);
            let under = rng.uniform_range(h.undershoot_delay_range.0, h.undershoot_delay_range.1);
            let kernel = hrf_kernel(
                peak,
                under,
                h.peak_disp,
                h.undershoot_disp,
                h.ratio,
                cfg.tr,
                h.length,
            )?;
            let mut out = DenseMatrix::zeros(cfg.timepoints, m);
            for c in 0..m {
                for (t, v) in convolve(&sources.column(c), &kernel).into_iter().enumerate() {
                    out[(t, c)] = v;
                }
            }
            out
        } else {
            sources.clone()
        };

        let mut x = DenseMatrix::zeros(cfg.timepoints, m);
        for t in 0..cfg.timepoints {
            truth.mixing.matvec_into(bold.row(t), x.row_mut(t));
            if cfg.noise_std > 0.0 {
                for v in x.row_mut(t) {
                    *v += cfg.noise_std * rng.normal();
                }
            }
        }
        observations.push(x);
        truth.states.push(states);
        truth.sources.push(sources);
        truth.groups.push(group);
    }
    Ok((observations, truth))
}

/// Packs observations and ground truth into one bundle.
///
/// Arrays: `obs<i>`, `states<i>`, `sources<i>`, `groups`, `mixing`; the
/// config is echoed into metadata.
pub fn cohort_bundle(observations: &[DenseMatrix], truth: &GroundTruth) -> Result<MatrixBundle> {
    let mut b = MatrixBundle::new();
    for (i, x) in observations.iter().enumerate() {
        b.insert_matrix(format!("obs{i}"), x)?;
    }
    for (i, s) in truth.states.iter().enumerate() {
        let v: Vec<f64> = s.iter().map(|&v| v as f64).collect();
        b.insert_vector(format!("states{i}"), &v)?;
    }
    for (i, s) in truth.sources.iter().enumerate() {
        b.insert_matrix(format!("sources{i}"), s)?;
    }
    let g: Vec<f64> = truth.groups.iter().map(|&v| v as f64).collect();
    b.insert_vector("groups", &g)?;
    b.insert_matrix("mixing", &truth.mixing)?;
    b.set_meta("kind", "cohort");
    for (k, v) in crate::io::sim_config_entries(&truth.config) {
        b.set_meta(format!("config.{k}"), v);
    }
    Ok(b)
}

/// Observations, state vectors, and group labels read back from a cohort or
/// data bundle. States and groups are empty when absent.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub observations: Vec<DenseMatrix>,
    pub states: Vec<Vec<usize>>,
    pub groups: Vec<usize>,
}

impl Cohort {
    pub fn from_bundle(b: &MatrixBundle) -> Result<Self> {
        let observations = b.indexed_matrices("obs")?;
        if observations.is_empty() {
            return Err(Error::MissingArray("obs0".into()));
        }
        let to_codes = |v: Vec<f64>, name: &str| -> Result<Vec<usize>> {
            v.into_iter()
                .map(|x| {
                    if x >= 0.0 && x.fract() == 0.0 {
                        Ok(x as usize)
                    } else {
                        Err(Error::Malformed(format!("{name} holds non-integer {x}")))
                    }
                })
                .collect()
        };
        let mut states = Vec::new();
        while let Ok(v) = b.vector(&format!("states{}", states.len())) {
            let name = format!("states{}", states.len());
            states.push(to_codes(v, &name)?);
        }
        let groups = match b.vector("groups") {
            Ok(v) => to_codes(v, "groups")?,
            Err(_) => Vec::new(),
        };
        Ok(Self {
            observations,
            states,
            groups,
        })
    }
}
