//! Independent reference implementations used by the integration suites.
//!
//! Nothing here calls into the numerical code under test: the double-double
//! forward pass, quadrature, gamma function, modularity and step-up
//! procedures are written from their textbook definitions.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rica::analysis::ConnectivityGraph;
use rica::io::{csv_string, Checkpoint, MatrixBundle};
use rica::matcore::{DenseMatrix, RngStream};
use rica::model::{DropoutMask, ModelConfig, ModelParams};
use rica::train::{OptimizerState, TrainConfig};

pub mod dd {
    //! Double-double arithmetic (about 32 significant digits).

    use std::ops::{Add, Div, Mul, Neg, Sub};

    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct Dd {
        pub hi: f64,
        pub lo: f64,
    }

    const LN2: Dd = Dd {
        hi: std::f64::consts::LN_2,
        lo: 2.319_046_813_846_299_6e-17,
    };

    #[inline]
    fn two_sum(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        let bb = s - a;
        (s, (a - (s - bb)) + (b - bb))
    }

    #[inline]
    fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        (s, b - (s - a))
    }

    impl Dd {
        pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
        pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

        pub fn from(x: f64) -> Self {
            Dd { hi: x, lo: 0.0 }
        }

        fn norm(hi: f64, lo: f64) -> Self {
            let (hi, lo) = quick_two_sum(hi, lo);
            Dd { hi, lo }
        }

        pub fn to_f64(self) -> f64 {
            self.hi + self.lo
        }

        pub fn abs(self) -> Self {
            if self.hi < 0.0 {
                -self
            } else {
                self
            }
        }

        fn ldexp(self, k: i32) -> Self {
            let f = 2f64.powi(k);
            Dd {
                hi: self.hi * f,
                lo: self.lo * f,
            }
        }

        pub fn exp(self) -> Self {
            if self.hi < -740.0 {
                return Dd::ZERO;
            }
            assert!(self.hi < 709.0, "exp overflow");
            let k = (self.hi / LN2.hi).round();
            let r = (self - LN2 * Dd::from(k)).ldexp(-10);
            // expm1 by Taylor series, then undo the scaling by squaring
            let mut term = r;
            let mut sum = r;
            for n in 2..=14 {
                term = term * r / Dd::from(n as f64);
                sum = sum + term;
            }
            for _ in 0..10 {
                // (1 + e)^2 - 1 = 2e + e^2
                sum = sum.ldexp(1) + sum * sum;
            }
            (sum + Dd::ONE).ldexp(k as i32)
        }

        pub fn ln(self) -> Self {
            assert!(self.hi > 0.0, "log of non-positive value");
            let mut y = Dd::from(self.hi.ln());
            for _ in 0..2 {
                y = y + self * (-y).exp() - Dd::ONE;
            }
            y
        }

        pub fn tanh(self) -> Self {
            let a = self.abs();
            let e = (Dd::from(-2.0) * a).exp();
            let t = (Dd::ONE - e) / (Dd::ONE + e);
            if self.hi < 0.0 {
                -t
            } else {
                t
            }
        }

        pub fn softplus(self) -> Self {
            let pos = if self.hi > 0.0 { self } else { Dd::ZERO };
            pos + (Dd::ONE + (-self.abs()).exp()).ln()
        }
    }

    impl Neg for Dd {
        type Output = Dd;
        fn neg(self) -> Dd {
            Dd {
                hi: -self.hi,
                lo: -self.lo,
            }
        }
    }

    impl Add for Dd {
        type Output = Dd;
        fn add(self, b: Dd) -> Dd {
            let (s, e) = two_sum(self.hi, b.hi);
            let (t, f) = two_sum(self.lo, b.lo);
            let (s, e) = quick_two_sum(s, e + t);
            Dd::norm(s, e + f)
        }
    }

    impl Sub for Dd {
        type Output = Dd;
        fn sub(self, b: Dd) -> Dd {
            self + (-b)
        }
    }

    impl Mul for Dd {
        type Output = Dd;
        fn mul(self, b: Dd) -> Dd {
            let p = self.hi * b.hi;
            let e = self.hi.mul_add(b.hi, -p);
            Dd::norm(p, e + self.hi * b.lo + self.lo * b.hi)
        }
    }

    impl Div for Dd {
        type Output = Dd;
        fn div(self, b: Dd) -> Dd {
            let q1 = self.hi / b.hi;
            let r = self - b * Dd::from(q1);
            let q2 = r.hi / b.hi;
            let r = r - b * Dd::from(q2);
            let q3 = r.hi / b.hi;
            Dd::from(q1) + Dd::from(q2) + Dd::from(q3)
        }
    }
}

use dd::Dd;

/// Parameter tensors in double-double, in storage order.
#[derive(Clone)]
pub struct DdParams {
    pub tensors: Vec<(usize, usize, Vec<Dd>)>,
}

impl DdParams {
    pub fn from_params(p: &ModelParams) -> Self {
        Self {
            tensors: p
                .tensors()
                .iter()
                .map(|(_, m)| (m.rows(), m.cols(), m.data().iter().map(|&v| Dd::from(v)).collect()))
                .collect(),
        }
    }

    fn at(&self, t: usize, r: usize, c: usize) -> Dd {
        let (_, cols, data) = &self.tensors[t];
        data[r * cols + c]
    }
}

const W: usize = 0;
const U_R: usize = 1;
const U_I: usize = 2;
const B: usize = 3;
const W_MU: usize = 4;
const W_SIGMA: usize = 5;
const MLP_W1: usize = 6;
const MLP_B1: usize = 7;
const MLP_W2: usize = 8;
const MLP_B2: usize = 9;

fn dd_log_abs_det(p: &DdParams) -> Dd {
    let (n, _, data) = &p.tensors[W];
    dd_log_abs_det_of(*n, data.clone())
}

/// `log|det|` of a square row-major matrix by pivoted elimination.
pub fn dd_log_abs_det_of(n: usize, mut a: Vec<Dd>) -> Dd {
    let mut total = Dd::ZERO;
    for k in 0..n {
        let piv = (k..n)
            .max_by(|&i, &j| a[i * n + k].hi.abs().total_cmp(&a[j * n + k].hi.abs()))
            .unwrap();
        if piv != k {
            for c in 0..n {
                a.swap(k * n + c, piv * n + c);
            }
        }
        let d = a[k * n + k];
        total = total + d.abs().ln();
        for i in k + 1..n {
            let f = a[i * n + k] / d;
            for c in k..n {
                a[i * n + c] = a[i * n + c] - f * a[k * n + c];
            }
        }
    }
    total
}

fn matvec(p: &DdParams, t: usize, v: &[Dd]) -> Vec<Dd> {
    let (rows, cols, _) = p.tensors[t];
    (0..rows)
        .map(|r| (0..cols).fold(Dd::ZERO, |acc, c| acc + p.at(t, r, c) * v[c]))
        .collect()
}

/// Batch-mean negative log-likelihood evaluated entirely in double-double.
pub fn dd_batch_nll(
    p: &DdParams,
    cfg: &ModelConfig,
    batch: &[DenseMatrix],
    masks: &[DropoutMask],
) -> Dd {
    let logdet = dd_log_abs_det(p);
    let floor = Dd::from(cfg.sigma_floor);
    let mut total = Dd::ZERO;
    for (x, mask) in batch.iter().zip(masks) {
        let d = x.cols();
        let row = |t: usize| -> Vec<Dd> { x.row(t).iter().map(|&v| Dd::from(v)).collect() };
        let input = if cfg.leaky_first_step {
            row(0)
        } else {
            vec![Dd::ZERO; d]
        };
        let pre = matvec(p, MLP_W1, &input);
        let act: Vec<Dd> = pre
            .iter()
            .enumerate()
            .map(|(k, &a)| (a + p.at(MLP_B1, k, 0)).softplus() * Dd::from(mask.factor(k)))
            .collect();
        let mut h: Vec<Dd> = matvec(p, MLP_W2, &act)
            .iter()
            .enumerate()
            .map(|(i, &v)| (v + p.at(MLP_B2, i, 0)).tanh())
            .collect();
        let mut seq_log_p = Dd::ZERO;
        for t in 0..x.rows() {
            if t > 0 {
                let rec = matvec(p, U_R, &h);
                let inp = matvec(p, U_I, &row(t - 1));
                h = (0..h.len())
                    .map(|i| (rec[i] + inp[i] + p.at(B, i, 0)).tanh())
                    .collect();
            }
            let s = matvec(p, W, &row(t));
            let mu = matvec(p, W_MU, &h);
            let raw = matvec(p, W_SIGMA, &h);
            for i in 0..d {
                let sigma = raw[i].softplus() + floor;
                let z = (s[i] - mu[i]) / sigma;
                seq_log_p = seq_log_p - z - sigma.ln() - Dd::from(2.0) * (-z).softplus();
            }
        }
        total = total - Dd::from(x.rows() as f64) * logdet - seq_log_p;
    }
    total / Dd::from(batch.len() as f64)
}

/// Central differences of [`dd_batch_nll`] for every coordinate, with
/// step `step * max(1, |θ|)`. Returned in storage order per tensor.
pub fn dd_finite_difference_gradient(
    params: &ModelParams,
    cfg: &ModelConfig,
    batch: &[DenseMatrix],
    masks: &[DropoutMask],
    step: f64,
) -> Vec<Vec<f64>> {
    let base = DdParams::from_params(params);
    let mut work = base.clone();
    let mut out = Vec::new();
    for t in 0..base.tensors.len() {
        let mut g = Vec::with_capacity(base.tensors[t].2.len());
        for k in 0..base.tensors[t].2.len() {
            let theta = base.tensors[t].2[k];
            let h = Dd::from(step * theta.hi.abs().max(1.0));
            work.tensors[t].2[k] = theta + h;
            let fp = dd_batch_nll(&work, cfg, batch, masks);
            work.tensors[t].2[k] = theta - h;
            let fm = dd_batch_nll(&work, cfg, batch, masks);
            work.tensors[t].2[k] = theta;
            g.push(((fp - fm) / (Dd::from(2.0) * h)).to_f64());
        }
        out.push(g);
    }
    out
}

/// Random model with every entry perturbed away from its initial value.
pub fn random_model(seed: u64, d: usize, h: usize, hm: usize) -> ModelParams {
    let mut rng = RngStream::new(seed, 0);
    let mut p = ModelParams::init(d, h, hm, &mut rng);
    for (_, m) in p.tensors_mut() {
        for x in m.data_mut() {
            *x += 0.1 * rng.normal();
        }
    }
    p
}

pub fn random_batch(seed: u64, n: usize, t: usize, d: usize) -> Vec<DenseMatrix> {
    let mut rng = RngStream::new(seed, 1);
    (0..n)
        .map(|_| DenseMatrix::from_fn(t, d, |_, _| rng.normal()))
        .collect()
}

/// Adaptive Simpson quadrature on `[a, b]`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    recurse(f, a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, 48)
}

/// `∫_x^∞ pdf` via `u = x / v²`, which maps the tail onto `(0, 1]`.
pub fn upper_tail(pdf: &dyn Fn(f64) -> f64, x: f64) -> f64 {
    assert!(x > 0.0);
    let g = |v: f64| {
        if v <= 0.0 {
            return 0.0;
        }
        let u = x / (v * v);
        pdf(u) * 2.0 * x / (v * v * v)
    };
    integrate(&g, 0.0, 1.0, 1e-15)
}

/// Lanczos approximation (g = 7, 9 terms).
pub fn ln_gamma(x: f64) -> f64 {
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + 7.5;
    for (i, &c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

pub fn t_pdf(x: f64, nu: f64) -> f64 {
    let c = ln_gamma(0.5 * (nu + 1.0))
        - ln_gamma(0.5 * nu)
        - 0.5 * (nu * std::f64::consts::PI).ln();
    (c - 0.5 * (nu + 1.0) * (1.0 + x * x / nu).ln()).exp()
}

pub fn f_pdf(x: f64, d1: f64, d2: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let ln_beta = ln_gamma(0.5 * d1) + ln_gamma(0.5 * d2) - ln_gamma(0.5 * (d1 + d2));
    (0.5 * d1 * (d1 / d2).ln() + (0.5 * d1 - 1.0) * x.ln()
        - 0.5 * (d1 + d2) * (1.0 + d1 * x / d2).ln()
        - ln_beta)
        .exp()
}

pub fn t_two_sided_oracle(t: f64, nu: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    (2.0 * upper_tail(&|x| t_pdf(x, nu), t.abs())).min(1.0)
}

pub fn f_sf_oracle(f: f64, d1: f64, d2: f64) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    upper_tail(&|x| f_pdf(x, d1, d2), f).min(1.0)
}

pub fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0))
}

/// Benjamini-Hochberg applied by hand: find the largest rank `k` with
/// `p_(k) <= k q / m` and reject every p-value at or below `p_(k)`.
pub fn bh_oracle(p: &[f64], q: f64) -> Vec<bool> {
    let mut sorted = p.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = p.len() as f64;
    let mut cutoff = None;
    for (k, &v) in sorted.iter().enumerate() {
        if v <= (k + 1) as f64 * q / m {
            cutoff = Some(v);
        }
    }
    p.iter().map(|&v| cutoff.is_some_and(|c| v <= c)).collect()
}

/// Newman modularity from the definition.
pub fn modularity_oracle(a: &DenseMatrix, labels: &[usize]) -> f64 {
    let n = a.rows();
    let k: Vec<f64> = (0..n).map(|i| a.row(i).iter().sum()).collect();
    let two_m: f64 = k.iter().sum();
    let mut q = 0.0;
    for i in 0..n {
        for j in 0..n {
            if labels[i] == labels[j] {
                q += a[(i, j)] - k[i] * k[j] / two_m;
            }
        }
    }
    q / two_m
}

/// Best modularity over every set partition (restricted growth strings).
pub fn exhaustive_modularity(a: &DenseMatrix) -> f64 {
    fn walk(a: &DenseMatrix, labels: &mut Vec<usize>, max: usize, best: &mut f64) {
        if labels.len() == a.rows() {
            *best = best.max(modularity_oracle(a, labels));
            return;
        }
        for l in 0..=max + 1 {
            labels.push(l);
            walk(a, labels, max.max(l), best);
            labels.pop();
        }
    }
    let mut best = f64::NEG_INFINITY;
    if a.rows() == 0 {
        return 0.0;
    }
    let mut labels = vec![0];
    walk(a, &mut labels, 0, &mut best);
    best
}

/// Best mean `|corr|` over all column permutations (brute force).
pub fn matched_abs_correlation(est: &DenseMatrix, truth: &DenseMatrix) -> f64 {
    let d = truth.cols();
    let corr = DenseMatrix::from_fn(d, d, |i, j| {
        let (a, b) = (est.column(i), truth.column(j));
        let (ma, va) = mean_var(&a);
        let (mb, vb) = mean_var(&b);
        let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>()
            / (a.len() as f64 - 1.0);
        (cov / (va * vb).sqrt()).abs()
    });
    let mut perm: Vec<usize> = (0..d).collect();
    let mut best = 0.0f64;
    permute(&mut perm, 0, &mut |p| {
        let s: f64 = p.iter().enumerate().map(|(i, &j)| corr[(i, j)]).sum();
        best = best.max(s / d as f64);
    });
    best
}

fn permute(p: &mut [usize], k: usize, visit: &mut dyn FnMut(&[usize])) {
    if k == p.len() {
        visit(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, visit);
        p.swap(k, i);
    }
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Runs the command-line binary with logging silenced.
pub fn rica(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rica"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("spawn rica")
}

/// The objects described by `tests/golden/make_golden.py`.
pub fn golden_bundle() -> MatrixBundle {
    let mut b = MatrixBundle::new();
    b.insert_matrix(
        "a",
        &DenseMatrix::from_rows(&[[1.0, -0.5, 1e-300], [std::f64::consts::PI, 0.0, -2.0]]),
    )
    .unwrap();
    b.insert_vector("v", &[0.1, 0.2, 0.3]).unwrap();
    b.set_meta("kind", "test");
    b.set_meta("note", "hello world");
    b
}

pub fn golden_checkpoint() -> Checkpoint {
    let mut cfg = TrainConfig::new(2);
    cfg.hidden_units = 2;
    cfg.mlp_hidden = 1;
    cfg.seed = 7;
    let mut params = ModelParams::zeros(2, 2, 1);
    for (i, (_, m)) in params.tensors_mut().into_iter().enumerate() {
        for (k, v) in m.data_mut().iter_mut().enumerate() {
            *v = i as f64 + k as f64 / 8.0;
        }
    }
    let mut optimizer = OptimizerState::new(&params, 7);
    for (_, m) in optimizer.mean_square.tensors_mut() {
        m.data_mut().iter_mut().for_each(|v| *v = 0.25);
    }
    optimizer.epoch = 2;
    Checkpoint {
        params,
        optimizer,
        history: vec![1.5, 1.25],
        config: cfg,
    }
}

pub fn golden_graph() -> ConnectivityGraph {
    let w = DenseMatrix::from_rows(&[[0.0, 0.5, 0.25], [-1.0, 0.0, 0.0], [0.75, 0.0, 0.0]]);
    let mut g = ConnectivityGraph::new(w).unwrap();
    g.communities = Some(vec![0, 0, 1]);
    g
}

pub fn golden_csv() -> String {
    let m = DenseMatrix::from_rows(&[
        [1.0, -0.5, 1e-300],
        [std::f64::consts::PI, 0.0, 123_456_789.125],
    ]);
    let header: Vec<String> = ["c0", "c1", "c2"].map(String::from).to_vec();
    csv_string(&m, Some(&header))
}
