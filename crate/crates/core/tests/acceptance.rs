//! Acceptance criteria, one line per criterion.
//!
//! Runs as a plain binary so each criterion reports PASS or FAIL with its
//! measured numbers. Pass criterion numbers as arguments to run a subset:
//! `cargo test --test acceptance -- 3 7`.

mod common;

use std::collections::HashSet;
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use common::dd::Dd;
use rica::analysis::{
    anova_1way, eval_trace, extract_sources, fdr_bh, group_tests, louvain, median_abs,
    next_step_jacobian, state_correlation, ttest_1samp, ttest_2samp,
};
use rica::grad::backward;
use rica::io::{export_dot, BUNDLE_MAGIC};
use rica::matcore::{DenseMatrix, RngStream};
use rica::model::{forward, logistic_log_density, DropoutMask, Mode, ModelConfig, ModelParams};
use rica::synth::{random_mixing, simulate_cohort, SimConfig};
use rica::train::{fit, variance_normalize, NullSink, TrainConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

const SEEDS: [u64; 3] = [17, 23, 101];

fn main() {
    let only: HashSet<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(usize, &str, fn() -> Outcome); 11] = [
        (1, "gradient fidelity", gradient_fidelity),
        (2, "determinant gradient identity", determinant_identity),
        (3, "static ICA recovery", static_ica),
        (4, "state tracking", state_tracking),
        (5, "group difference detection", group_difference),
        (6, "jacobian correctness", jacobian_correctness),
        (7, "logistic density normalization", density_normalization),
        (8, "louvain oracle equivalence", louvain_oracle),
        (9, "statistics oracle", statistics_oracle),
        (10, "reproducibility", reproducibility),
        (11, "format conformance", format_conformance),
    ];
    let mut failed = Vec::new();
    for (n, name, run) in criteria {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {n:>2} {verdict} {name}: {} [{:.1}s]",
            o.detail,
            start.elapsed().as_secs_f64()
        );
        if !o.pass {
            failed.push(n);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let (d, h, hm, t, n) = (6, 8, 8, 5, 2);
    let params = common::random_model(1, d, h, hm);
    let batch = common::random_batch(1, n, t, d);
    let mut rng = RngStream::new(1, 2);
    let masks: Vec<_> = (0..n).map(|_| DropoutMask::sample(hm, 0.8, &mut rng)).collect();
    let cfg = ModelConfig::default();
    let (_, grads) = backward(&params, &cfg, &batch, &masks).expect("backward");
    let numeric = common::dd_finite_difference_gradient(&params, &cfg, &batch, &masks, 1e-6);
    let mut worst = (0.0f64, "");
    let mut coords = 0;
    for ((name, g), fd) in grads.tensors().iter().zip(&numeric) {
        for (&a, &f) in g.data().iter().zip(fd) {
            let rel = (a - f).abs() / a.abs().max(f.abs()).max(1e-8);
            coords += 1;
            if rel > worst.0 || rel.is_nan() {
                worst = (rel, name);
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst.0 <= 1e-5 && elapsed < Duration::from_secs(5),
        format!(
            "{coords} coordinates, max rel err {:.2e} (in {}), runtime {:.2}s",
            worst.0,
            worst.1,
            elapsed.as_secs_f64()
        ),
    )
}

/// Gauss-Jordan inverse with partial pivoting.
fn inverse_oracle(a: &DenseMatrix) -> DenseMatrix {
    let n = a.rows();
    let mut m = DenseMatrix::from_fn(n, 2 * n, |i, j| {
        if j < n {
            a[(i, j)]
        } else if j - n == i {
            1.0
        } else {
            0.0
        }
    });
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| m[(i, k)].abs().total_cmp(&m[(j, k)].abs())).unwrap();
        for c in 0..2 * n {
            let tmp = m[(k, c)];
            m[(k, c)] = m[(p, c)];
            m[(p, c)] = tmp;
        }
        let d = m[(k, k)];
        for c in 0..2 * n {
            m[(k, c)] /= d;
        }
        for i in 0..n {
            if i != k {
                let f = m[(i, k)];
                for c in 0..2 * n {
                    m[(i, c)] -= f * m[(k, c)];
                }
            }
        }
    }
    DenseMatrix::from_fn(n, n, |i, j| m[(i, n + j)])
}

fn determinant_identity() -> Outcome {
    let mut worst = 0.0f64;
    let mut worst_fd = 0.0f64;
    let mut cases = 0;
    for (case, d) in [2usize, 3, 5, 8, 12, 20].into_iter().enumerate() {
        let mut rng = RngStream::new(200 + case as u64, 0);
        let mut p = ModelParams::zeros(d, 3, 2);
        p.w = DenseMatrix::from_fn(d, d, |i, j| {
            (if i == j { 2.0 } else { 0.0 }) + 0.3 * rng.normal()
        });
        let t = 4;
        // zero observations: sources vanish, so the density term has no W
        // gradient and backward returns the determinant term alone
        let x = DenseMatrix::zeros(t, d);
        let (_, g) = backward(&p, &ModelConfig::default(), &[x], &[DropoutMask::eval(2)])
            .expect("backward");
        let got = g.w.scaled(-1.0);
        let expect = inverse_oracle(&p.w).transpose().scaled(t as f64);
        let diff = DenseMatrix::from_fn(d, d, |i, j| got[(i, j)] - expect[(i, j)]);
        worst = worst.max(diff.frobenius_norm() / expect.frobenius_norm());

        // the identity itself, against double-double differences of log|det|
        let base: Vec<Dd> = p.w.data().iter().map(|&v| Dd::from(v)).collect();
        let step = 1e-7;
        for k in 0..d * d {
            let mut plus = base.clone();
            let mut minus = base.clone();
            plus[k] = plus[k] + Dd::from(step);
            minus[k] = minus[k] - Dd::from(step);
            let fd = ((common::dd_log_abs_det_of(d, plus) - common::dd_log_abs_det_of(d, minus))
                / Dd::from(2.0 * step))
            .to_f64()
                * t as f64;
            let e = expect.data()[k];
            worst_fd = worst_fd.max((fd - e).abs() / expect.max_abs());
        }
        cases += 1;
    }
    outcome(
        worst <= 1e-8 && worst_fd <= 1e-8,
        format!(
            "{cases} matrices up to 20x20, rel err {worst:.2e}; identity vs differences {worst_fd:.2e}"
        ),
    )
}

fn static_ica_run(seed: u64) -> (f64, usize) {
    let (d, n) = (8, 20_000);
    let mut rng = RngStream::new(seed, 0);
    let truth = DenseMatrix::from_fn(n, d, |_, _| rng.logistic());
    let mixing = random_mixing(d, 10.0, &mut RngStream::new(seed, 1)).expect("mixing");
    let x = truth.matmul(&mixing.transpose());
    let mut cfg = TrainConfig::new(d);
    cfg.window = 1;
    cfg.leaky_first_step = false;
    cfg.dropout_keep = 1.0;
    cfg.hidden_units = 4;
    cfg.mlp_hidden = 4;
    cfg.batch_size = 1000;
    cfg.epochs = 100;
    cfg.learning_rate = 0.01;
    cfg.seed = seed;
    let steps = cfg.epochs * n.div_ceil(cfg.batch_size);
    let r = fit(&cfg, &[x.clone()], &mut NullSink).expect("fit");
    let est = extract_sources(&r.params, &x).expect("sources");
    (common::matched_abs_correlation(&est, &truth), steps)
}

fn static_ica() -> Outcome {
    let start = Instant::now();
    let mut scores = Vec::new();
    let mut steps = 0;
    for seed in SEEDS {
        let (score, s) = static_ica_run(seed);
        scores.push(score);
        steps = s;
    }
    let elapsed = start.elapsed();
    let passing = scores.iter().filter(|&&s| s >= 0.95).count();
    outcome(
        passing >= 2 && steps <= 2000 && elapsed < Duration::from_secs(300),
        format!(
            "matched mean |corr| {:.4?} over seeds {SEEDS:?}, {steps} steps, {passing}/3 at >= 0.95",
            scores
        ),
    )
}

struct TrackingRun {
    seed: u64,
    best_test_median: f64,
    top_train: Vec<usize>,
    top_test: Vec<usize>,
    fdr_rejections: usize,
    min_train_p: f64,
}

const TRACK_HIDDEN: usize = 32;
const TRACK_SOURCES: usize = 10;

fn normalize_channels(x: &DenseMatrix) -> DenseMatrix {
    let mut out = x.clone();
    for c in 0..x.cols() {
        let col = variance_normalize(&x.column(c)).expect("channel variance");
        for (r, v) in col.into_iter().enumerate() {
            out[(r, c)] = v;
        }
    }
    out
}

/// Per-unit rows of per-subject r, hidden units first then scales.
fn unit_correlations(
    params: &ModelParams,
    cfg: &ModelConfig,
    obs: &[DenseMatrix],
    states: &[Vec<usize>],
) -> Vec<Vec<Option<f64>>> {
    let traces: Vec<DenseMatrix> = obs
        .iter()
        .map(|x| {
            let tr = eval_trace(params, cfg, x);
            DenseMatrix::from_fn(x.rows(), TRACK_HIDDEN + TRACK_SOURCES, |t, c| {
                if c < TRACK_HIDDEN {
                    tr.hidden[(t, c)]
                } else {
                    tr.sigma[(t, c - TRACK_HIDDEN)]
                }
            })
        })
        .collect();
    state_correlation(&traces, states).expect("state correlation")
}

fn ranked(per_unit: &[Vec<Option<f64>>]) -> Vec<(usize, f64)> {
    let mut r: Vec<(usize, f64)> = per_unit
        .iter()
        .enumerate()
        .map(|(u, v)| (u, median_abs(v).unwrap_or(0.0)))
        .collect();
    r.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    r
}

fn tracking_run(seed: u64) -> TrackingRun {
    let mut sim = SimConfig::new(TRACK_SOURCES, 3);
    sim.timepoints = 200;
    sim.seed = seed;
    let (obs, truth) = simulate_cohort(&sim).expect("simulate");
    let obs: Vec<DenseMatrix> = obs.iter().map(normalize_channels).collect();
    // five test subjects from each group
    let test: Vec<usize> = (20..25).chain(45..50).collect();
    let train: Vec<usize> = (0..50).filter(|i| !test.contains(i)).collect();
    let pick = |ids: &[usize]| -> (Vec<DenseMatrix>, Vec<Vec<usize>>, Vec<usize>) {
        (
            ids.iter().map(|&i| obs[i].clone()).collect(),
            ids.iter().map(|&i| truth.states[i].clone()).collect(),
            ids.iter().map(|&i| truth.groups[i]).collect(),
        )
    };
    let (x_train, s_train, g_train) = pick(&train);
    let (x_test, s_test, _) = pick(&test);

    let mut cfg = TrainConfig::new(TRACK_SOURCES);
    cfg.hidden_units = TRACK_HIDDEN;
    cfg.mlp_hidden = TRACK_HIDDEN;
    cfg.window = 20;
    cfg.epochs = 300;
    cfg.learning_rate = 3e-4;
    cfg.seed = seed;
    let fitted = fit(&cfg, &x_train, &mut NullSink).expect("fit");
    let mcfg = cfg.model_config();

    let r_train = unit_correlations(&fitted.params, &mcfg, &x_train, &s_train);
    let r_test = unit_correlations(&fitted.params, &mcfg, &x_test, &s_test);
    let rank_train = ranked(&r_train);
    let rank_test = ranked(&r_test);
    let p: Vec<f64> = group_tests(&r_train, &g_train)
        .iter()
        .map(|t| t.map_or(f64::NAN, |t| t.p_value))
        .collect();
    let fdr = fdr_bh(&p, 0.001);
    TrackingRun {
        seed,
        best_test_median: rank_test[0].1,
        top_train: rank_train[..5].iter().map(|u| u.0).collect(),
        top_test: rank_test[..5].iter().map(|u| u.0).collect(),
        fdr_rejections: fdr.reject.iter().filter(|&&r| r).count(),
        min_train_p: p.iter().copied().filter(|v| !v.is_nan()).fold(1.0, f64::min),
    }
}

fn tracking_runs() -> &'static (Vec<TrackingRun>, Duration) {
    static RUNS: OnceLock<(Vec<TrackingRun>, Duration)> = OnceLock::new();
    RUNS.get_or_init(|| {
        let start = Instant::now();
        let runs = SEEDS.iter().map(|&s| tracking_run(s)).collect();
        (runs, start.elapsed())
    })
}

fn unit_name(u: usize) -> String {
    if u < TRACK_HIDDEN {
        format!("h{u}")
    } else {
        format!("sigma{}", u - TRACK_HIDDEN)
    }
}

fn state_tracking() -> Outcome {
    let (runs, elapsed) = tracking_runs();
    let mut lines = Vec::new();
    let mut passing = 0;
    for r in runs {
        let overlap = r.top_train.iter().filter(|u| r.top_test.contains(u)).count();
        let ok = r.best_test_median >= 0.4 && overlap >= 1;
        passing += usize::from(ok);
        lines.push(format!(
            "seed {}: best test median |r| {:.3} ({}), top-5 overlap {overlap}",
            r.seed,
            r.best_test_median,
            unit_name(r.top_test[0])
        ));
    }
    outcome(
        passing >= 2 && *elapsed < Duration::from_secs(1800),
        format!(
            "{}; {passing}/3 seeds pass; training {:.0}s",
            lines.join("; "),
            elapsed.as_secs_f64()
        ),
    )
}

fn group_difference() -> Outcome {
    let (runs, _) = tracking_runs();
    let passing = runs.iter().filter(|r| r.fdr_rejections >= 1).count();
    let lines: Vec<String> = runs
        .iter()
        .map(|r| {
            format!(
                "seed {}: {} units pass BH q=0.001 (min p {:.2e})",
                r.seed, r.fdr_rejections, r.min_train_p
            )
        })
        .collect();
    outcome(passing >= 2, format!("{}; {passing}/3 seeds pass", lines.join("; ")))
}

fn jacobian_correctness() -> Outcome {
    let mut worst = 0.0f64;
    let step = 1e-5;
    for case in 0..20u64 {
        let mut rng = RngStream::new(300 + case, 0);
        let d = 2 + rng.index(5);
        let h = 3 + rng.index(6);
        let hm = 2 + rng.index(4);
        let t_len = 3 + rng.index(5);
        let params = common::random_model(300 + case, d, h, hm);
        let x = common::random_batch(300 + case, 1, t_len, d).remove(0);
        let cfg = ModelConfig {
            leaky_first_step: case % 2 == 0,
            ..ModelConfig::default()
        };
        let jac = next_step_jacobian(&params, &cfg, &x).expect("jacobian");
        let w_inv = inverse_oracle(&params.w);
        let mu_at = |x: &DenseMatrix, t: usize| -> Vec<f64> {
            let tr = forward(&params, &cfg, x, Mode::Eval, None, &mut RngStream::new(0, 0));
            tr.mu.row(t).to_vec()
        };
        for t in 1..t_len {
            let s_prev = params.w.matvec(x.row(t - 1));
            let mut fd = DenseMatrix::zeros(d, d);
            for j in 0..d {
                let shifted = |delta: f64| {
                    let mut s = s_prev.clone();
                    s[j] += delta;
                    let mut xp = x.clone();
                    xp.row_mut(t - 1).copy_from_slice(&w_inv.matvec(&s));
                    mu_at(&xp, t)
                };
                let (up, down) = (shifted(step), shifted(-step));
                for i in 0..d {
                    fd[(i, j)] = (up[i] - down[i]) / (2.0 * step);
                }
            }
            let closed = &jac.steps[t - 1];
            let scale = closed.max_abs().max(fd.max_abs()).max(1e-12);
            worst = worst.max(closed.max_abs_diff(&fd) / scale);
        }
    }
    outcome(
        worst <= 1e-6,
        format!("20 instances, max rel err {worst:.2e}"),
    )
}

fn density_normalization() -> Outcome {
    let mut worst = 0.0f64;
    for sigma in [0.1, 1.0, 10.0] {
        let mu = 0.3;
        let f = |s: f64| logistic_log_density(s, mu, sigma).expect("density").exp();
        let total = common::integrate(&f, mu - 80.0 * sigma, mu + 80.0 * sigma, 1e-13);
        worst = worst.max((total - 1.0).abs());
    }
    outcome(
        worst <= 1e-6,
        format!("sigma in {{0.1, 1, 10}}, max |integral - 1| {worst:.2e}"),
    )
}

/// The declared Louvain suite: random weighted graphs plus structured cases.
fn louvain_suite() -> Vec<DenseMatrix> {
    let mut graphs = Vec::new();
    for g in 0..600u64 {
        let mut rng = RngStream::new(400 + g, 0);
        let n = 2 + (g as usize % 7);
        let density = [0.3, 0.5, 0.8, 1.0][g as usize % 4];
        let mut a = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in i + 1..n {
                if rng.bernoulli(density) {
                    let w = if g % 3 == 0 { 1.0 } else { rng.uniform_range(0.05, 1.0) };
                    a[(i, j)] = w;
                    a[(j, i)] = w;
                }
            }
        }
        if a.max_abs() > 0.0 {
            graphs.push(a);
        }
    }
    let ring = DenseMatrix::from_fn(8, 8, |i, j| f64::from(u8::from((i + 1) % 8 == j || (j + 1) % 8 == i)));
    let star = DenseMatrix::from_fn(7, 7, |i, j| f64::from(u8::from((i == 0) != (j == 0))));
    graphs.push(ring);
    graphs.push(star);
    graphs
}

fn two_cliques() -> DenseMatrix {
    let mut a = DenseMatrix::from_fn(10, 10, |i, j| f64::from(u8::from(i != j && (i < 5) == (j < 5))));
    a[(4, 5)] = 1.0;
    a[(5, 4)] = 1.0;
    a
}

fn louvain_oracle() -> Outcome {
    let suite = louvain_suite();
    let mut worst = 0.0f64;
    let mut mismatched = 0;
    for (k, a) in suite.iter().enumerate() {
        let p = louvain(a, k as u64).expect("louvain");
        let best = common::exhaustive_modularity(a);
        let own = common::modularity_oracle(a, &p.labels);
        let gap = (p.modularity - best).abs().max((own - best).abs());
        worst = worst.max(gap);
        if gap > 1e-9 {
            mismatched += 1;
        }
    }
    let cliques = louvain(&two_cliques(), 0).expect("louvain");
    let l = &cliques.labels;
    let recovered = (0..10).all(|i| (l[i] == l[0]) == (i < 5)) && l[0] != l[5];
    outcome(
        mismatched == 0 && recovered,
        format!(
            "{} graphs with n <= 8, {mismatched} off the exhaustive optimum (max gap {worst:.1e}); two cliques recovered: {recovered}",
            suite.len()
        ),
    )
}

fn statistics_oracle() -> Outcome {
    let mut worst = 0.0f64;
    let mut rng = RngStream::new(500, 0);
    let sample = |rng: &mut RngStream, n: usize, shift: f64, scale: f64| -> Vec<f64> {
        (0..n).map(|_| shift + scale * rng.normal()).collect()
    };
    for case in 0..50 {
        let shift = [0.0, 0.3, 1.0, 2.5][case % 4];
        let (lib, oracle) = match case % 3 {
            0 => {
                let n = 3 + rng.index(30);
                let scale = 1.0 + rng.uniform();
                let v = sample(&mut rng, n, shift, scale);
                let r = ttest_1samp(&v, 0.0).expect("t test");
                let (m, var) = common::mean_var(&v);
                let t = m / (var / n as f64).sqrt();
                assert!((t - r.statistic).abs() <= 1e-10 * t.abs().max(1.0));
                (r.p_value, common::t_two_sided_oracle(t, n as f64 - 1.0))
            }
            1 => {
                let (na, nb) = (2 + rng.index(25), 2 + rng.index(25));
                let (sa, sb) = (0.5 + rng.uniform(), 0.5 + 2.0 * rng.uniform());
                let a = sample(&mut rng, na, shift, sa);
                let b = sample(&mut rng, nb, 0.0, sb);
                let r = ttest_2samp(&a, &b).expect("welch");
                let (ma, va) = common::mean_var(&a);
                let (mb, vb) = common::mean_var(&b);
                let (sa, sb) = (va / na as f64, vb / nb as f64);
                let t = (ma - mb) / (sa + sb).sqrt();
                let df = (sa + sb).powi(2)
                    / (sa * sa / (na as f64 - 1.0) + sb * sb / (nb as f64 - 1.0));
                assert!((t - r.statistic).abs() <= 1e-10 * t.abs().max(1.0));
                (r.p_value, common::t_two_sided_oracle(t, df))
            }
            _ => {
                let k = 2 + rng.index(4);
                let groups: Vec<Vec<f64>> = (0..k)
                    .map(|g| {
                        let n = 2 + rng.index(15);
                        sample(&mut rng, n, shift * g as f64 / k as f64, 1.0)
                    })
                    .collect();
                let refs: Vec<&[f64]> = groups.iter().map(Vec::as_slice).collect();
                let r = anova_1way(&refs).expect("anova");
                let all: Vec<f64> = groups.iter().flatten().copied().collect();
                let n = all.len() as f64;
                let grand = all.iter().sum::<f64>() / n;
                let mut ssb = 0.0;
                let mut ssw = 0.0;
                for g in &groups {
                    let (m, _) = common::mean_var(g);
                    ssb += g.len() as f64 * (m - grand).powi(2);
                    ssw += g.iter().map(|v| (v - m).powi(2)).sum::<f64>();
                }
                let (d1, d2) = (k as f64 - 1.0, n - k as f64);
                let f = (ssb / d1) / (ssw / d2);
                assert!((f - r.statistic).abs() <= 1e-10 * f.max(1.0));
                (r.p_value, common::f_sf_oracle(f, d1, d2))
            }
        };
        worst = worst.max((lib - oracle).abs());
    }

    let mut bh_mismatch = 0;
    for case in 0..20u64 {
        let mut rng = RngStream::new(600 + case, 0);
        let m = 5 + rng.index(60);
        let p: Vec<f64> = (0..m)
            .map(|_| {
                if rng.bernoulli(0.3) {
                    rng.uniform() * 1e-3
                } else {
                    rng.uniform()
                }
            })
            .collect();
        let q = [0.01, 0.05, 0.1, 0.2][case as usize % 4];
        if fdr_bh(&p, q).reject != common::bh_oracle(&p, q) {
            bh_mismatch += 1;
        }
    }
    outcome(
        worst <= 1e-8 && bh_mismatch == 0,
        format!(
            "50 p-values, max |p - quadrature| {worst:.2e}; BH mismatches {bh_mismatch}/20"
        ),
    )
}

const SIM_CFG: &str = "n_sources = 4\nn_states = 3\ntimepoints = 60\nsubjects_a = 3\nsubjects_b = 3\nseed = 9\n";
const TRAIN_CFG: &str = "n_components = 4\nhidden_units = 6\nmlp_hidden = 5\nwindow = 8\nstride = 4\nbatch_size = 16\nepochs = 4\nlearning_rate = 0.003\ncheckpoint_every = 2\nseed = 3\n";

fn run_ok(args: &[&str]) {
    let out = common::rica(args);
    assert!(
        out.status.success(),
        "rica {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// simulate -> preprocess -> train -> extract -> jacobian -> communities ->
/// report; returns every produced file's bytes by relative name.
fn pipeline(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    std::fs::write(p("sim.cfg"), SIM_CFG).unwrap();
    std::fs::write(p("train.cfg"), TRAIN_CFG).unwrap();
    run_ok(&["simulate", "--config", &p("sim.cfg"), "--out", &p("cohort.rmb")]);
    run_ok(&["preprocess", "--data", &p("cohort.rmb"), "--out", &p("data.rmb"), "--components", "4"]);
    run_ok(&["train", "--data", &p("data.rmb"), "--config", &p("train.cfg"), "--out", &p("model.rcp")]);
    run_ok(&["extract", "--model", &p("model.rcp"), "--data", &p("data.rmb"), "--out", &p("extract.rmb")]);
    run_ok(&["jacobian", "--model", &p("model.rcp"), "--data", &p("data.rmb"), "--out", &p("jac.rmb")]);
    run_ok(&["communities", "--jacobian", &p("jac.rmb"), "--out", &p("comm.rmb")]);
    run_ok(&["stats", "statecorr", "--traces", &p("extract.rmb"), "--kind", "hidden", "--out", &p("sc.rmb")]);
    run_ok(&[
        "report", "--sources", &p("extract.rmb"), "--jacobian", &p("jac.rmb"), "--communities",
        &p("comm.rmb"), "--statecorr", &p("sc.rmb"), "--out-dir", &p("report"),
    ]);
    let mut files = Vec::new();
    for sub in [dir.to_path_buf(), dir.join("report")] {
        let mut entries: Vec<_> = std::fs::read_dir(&sub).unwrap().flatten().collect();
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            if e.path().is_file() {
                let name = e.path().strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                files.push((name, std::fs::read(e.path()).unwrap()));
            }
        }
    }
    files
}

fn reproducibility() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = pipeline(a.path());
    let second = pipeline(b.path());
    let differing: Vec<&str> = first
        .iter()
        .zip(&second)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    let same = first.len() == second.len() && differing.is_empty();

    // resume: two epochs, then two more from the checkpoint
    let c = tempfile::tempdir().unwrap();
    let p = |name: &str| c.path().join(name).to_string_lossy().into_owned();
    std::fs::write(p("half.cfg"), TRAIN_CFG.replace("epochs = 4", "epochs = 2")).unwrap();
    std::fs::write(p("train.cfg"), TRAIN_CFG).unwrap();
    let data = a.path().join("data.rmb").to_string_lossy().into_owned();
    run_ok(&["train", "--data", &data, "--config", &p("half.cfg"), "--out", &p("half.rcp")]);
    run_ok(&[
        "train", "--data", &data, "--config", &p("train.cfg"), "--resume", &p("half.rcp"), "--out",
        &p("resumed.rcp"),
    ]);
    let resumed = std::fs::read(p("resumed.rcp")).unwrap();
    let straight = std::fs::read(a.path().join("model.rcp")).unwrap();
    let resume_ok = resumed == straight;
    outcome(
        same && resume_ok,
        format!(
            "{} output files byte-identical across runs: {same} (differing {differing:?}); resumed checkpoint identical: {resume_ok}",
            first.len()
        ),
    )
}

fn format_conformance() -> Outcome {
    let dir = common::golden_dir();
    let read = |name: &str| std::fs::read(dir.join(name)).expect("golden file");
    let checks = [
        ("bundle.rmb", common::golden_bundle().encode(BUNDLE_MAGIC).unwrap() == read("bundle.rmb")),
        ("checkpoint.rcp", common::golden_checkpoint().encode().unwrap() == read("checkpoint.rcp")),
        ("graph.dot", export_dot(&common::golden_graph(), 0.3).into_bytes() == read("graph.dot")),
        ("matrix.csv", common::golden_csv().into_bytes() == read("matrix.csv")),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    outcome(
        failed.is_empty(),
        format!("4 golden files, mismatches: {failed:?}"),
    )
}
