//! Post-training analysis: sources, FNC, next-step Jacobians, community
//! detection, and the statistics used to compare groups.

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};

use crate::error::{Error, Result};
use crate::matcore::{lu_factor, mean_var, pearson, sigmoid, DenseMatrix, RngStream};
use crate::model::{forward, ForwardTrace, Mode, ModelConfig, ModelParams};

/// `s_t = W x_t` over a whole sequence.
pub fn extract_sources(params: &ModelParams, x_seq: &DenseMatrix) -> Result<DenseMatrix> {
    lu_factor(&params.w).map_err(|_| Error::SingularUnmixing)?;
    if x_seq.cols() != params.n_sources() {
        return Err(Error::ShapeMismatch(format!(
            "data has {} columns, model expects {}",
            x_seq.cols(),
            params.n_sources()
        )));
    }
    Ok(x_seq.matmul(&params.w.transpose()))
}

/// Deterministic (dropout-free) forward pass over a whole sequence.
pub fn eval_trace(params: &ModelParams, cfg: &ModelConfig, x_seq: &DenseMatrix) -> ForwardTrace {
    forward(params, cfg, x_seq, Mode::Eval, None, &mut RngStream::new(0, 0))
}

/// Subject-averaged correlation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FncMatrix {
    pub matrix: DenseMatrix,
    /// (subject, component) pairs left out for zero variance.
    pub excluded: Vec<(usize, usize)>,
}

/// Mean over subjects of per-subject Pearson correlations between components.
///
/// A flat component is dropped from that subject's contribution with a
/// warning; if a component is flat in every subject the call fails.
pub fn fnc(sources: &[DenseMatrix]) -> Result<FncMatrix> {
    let first = sources
        .first()
        .ok_or_else(|| Error::TooFewSamples("fnc needs at least one subject".into()))?;
    let d = first.cols();
    let mut sum = DenseMatrix::zeros(d, d);
    let mut count = DenseMatrix::zeros(d, d);
    let mut excluded = Vec::new();
    for (si, s) in sources.iter().enumerate() {
        if s.cols() != d {
            return Err(Error::ShapeMismatch(format!("subject {si} has {} components", s.cols())));
        }
        let cols: Vec<Vec<f64>> = (0..d).map(|c| s.column(c)).collect();
        let flat: Vec<bool> = cols.iter().map(|c| pearson(c, c).is_none()).collect();
        for (c, &f) in flat.iter().enumerate() {
            if f {
                log::warn!("subject {si}: component {c} has zero variance, excluded from FNC");
                excluded.push((si, c));
            }
        }
        for i in 0..d {
            for j in (i + 1)..d {
                if let Some(r) = pearson(&cols[i], &cols[j]) {
                    sum[(i, j)] += r;
                    count[(i, j)] += 1.0;
                }
            }
        }
        for i in 0..d {
            if !flat[i] {
                count[(i, i)] += 1.0;
            }
        }
    }
    let mut matrix = DenseMatrix::identity(d);
    for i in 0..d {
        if count[(i, i)] == 0.0 {
            return Err(Error::ZeroVariance(format!("component {i} in every subject")));
        }
        for j in (i + 1)..d {
            let v = if count[(i, j)] > 0.0 {
                (sum[(i, j)] / count[(i, j)]).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            matrix[(i, j)] = v;
            matrix[(j, i)] = v;
        }
    }
    Ok(FncMatrix { matrix, excluded })
}

/// Per-step Jacobians `J(t)[i, j] = d mu_{i,t} / d s_{j,t-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct NextStepJacobian {
    /// Entry `k` holds `J` at 0-based time `k + 1`.
    pub steps: Vec<DenseMatrix>,
    /// Element-wise mean of `|J|` over steps.
    pub mean_abs: DenseMatrix,
    /// Element-wise mean of signed `J` over steps.
    pub mean: DenseMatrix,
}

/// Closed form `W_mu diag(1 - h_t^2) U_I W^-1`.
///
/// When the first hidden state reads `x_1` the step into `t = 2` has an
/// extra path through the initial MLP, which is included so that the result
/// is the full derivative.
pub fn next_step_jacobian(
    params: &ModelParams,
    cfg: &ModelConfig,
    x_seq: &DenseMatrix,
) -> Result<NextStepJacobian> {
    if x_seq.rows() < 2 {
        return Err(Error::TooFewSamples("jacobian needs at least two time steps".into()));
    }
    let w_inv = lu_factor(&params.w)
        .map_err(|_| Error::SingularUnmixing)?
        .inverse();
    let trace = eval_trace(params, cfg, x_seq);
    let (d, h) = (params.n_sources(), params.n_hidden());
    let input_map = params.u_i.matmul(&w_inv); // H x D

    // d h_1 / d x_1 through the initial MLP (eval mode: no dropout)
    let first_map = if cfg.leaky_first_step {
        let h1 = trace.hidden.row(0);
        let gate: Vec<f64> = trace.mlp_pre.iter().map(|&a| sigmoid(a)).collect();
        let inner = DenseMatrix::from_fn(params.n_mlp_hidden(), d, |k, j| {
            gate[k] * params.mlp_w1[(k, j)]
        });
        let mut dh1 = params.mlp_w2.matmul(&inner);
        for i in 0..h {
            let g = 1.0 - h1[i] * h1[i];
            dh1.row_mut(i).iter_mut().for_each(|v| *v *= g);
        }
        Some(params.u_r.matmul(&dh1).matmul(&w_inv))
    } else {
        None
    };

    let mut steps = Vec::with_capacity(x_seq.rows() - 1);
    for t in 1..x_seq.rows() {
        let ht = trace.hidden.row(t);
        let mut path = input_map.clone();
        if t == 1 {
            if let Some(extra) = &first_map {
                path.axpy(1.0, extra);
            }
        }
        for i in 0..h {
            let g = 1.0 - ht[i] * ht[i];
            path.row_mut(i).iter_mut().for_each(|v| *v *= g);
        }
        steps.push(params.w_mu.matmul(&path));
    }
    let n = steps.len() as f64;
    let mut mean_abs = DenseMatrix::zeros(d, d);
    let mut mean = DenseMatrix::zeros(d, d);
    for j in &steps {
        mean_abs.axpy(1.0 / n, &j.map(f64::abs));
        mean.axpy(1.0 / n, j);
    }
    Ok(NextStepJacobian {
        steps,
        mean_abs,
        mean,
    })
}

/// Mean `|J|` and mean `J` pooled over every step of every sequence.
pub fn mean_jacobian(
    params: &ModelParams,
    cfg: &ModelConfig,
    sequences: &[DenseMatrix],
) -> Result<(DenseMatrix, DenseMatrix)> {
    let per: Vec<NextStepJacobian> = sequences
        .par_iter()
        .map(|x| next_step_jacobian(params, cfg, x))
        .collect::<Result<_>>()?;
    let d = params.n_sources();
    let total: f64 = per.iter().map(|j| j.steps.len() as f64).sum();
    let mut abs = DenseMatrix::zeros(d, d);
    let mut signed = DenseMatrix::zeros(d, d);
    for j in &per {
        let w = j.steps.len() as f64 / total;
        abs.axpy(w, &j.mean_abs);
        signed.axpy(w, &j.mean);
    }
    Ok((abs, signed))
}

/// Pearson correlation between column profiles of the mean Jacobian.
pub fn connectivity_similarity(jbar: &DenseMatrix) -> Result<DenseMatrix> {
    if !jbar.is_finite() {
        return Err(Error::NonFinite("mean jacobian".into()));
    }
    let d = jbar.cols();
    let cols: Vec<Vec<f64>> = (0..d).map(|c| jbar.column(c)).collect();
    let mut rho = DenseMatrix::identity(d);
    for i in 0..d {
        if pearson(&cols[i], &cols[i]).is_none() {
            return Err(Error::ZeroVariance(format!("jacobian column {i}")));
        }
        for j in (i + 1)..d {
            let r = pearson(&cols[i], &cols[j]).expect("columns checked non-flat");
            rho[(i, j)] = r;
            rho[(j, i)] = r;
        }
    }
    Ok(rho)
}

/// Directed weighted graph over components.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivityGraph {
    pub labels: Vec<String>,
    /// `weights[(i, j)]` is the edge `i -> j`.
    pub weights: DenseMatrix,
    pub communities: Option<Vec<usize>>,
}

impl ConnectivityGraph {
    /// Nodes labelled `0..n`.
    pub fn new(weights: DenseMatrix) -> Result<Self> {
        if !weights.is_square() {
            return Err(Error::ShapeMismatch("graph weights must be square".into()));
        }
        if !weights.is_finite() {
            return Err(Error::NonFinite("graph weights".into()));
        }
        Ok(Self {
            labels: (0..weights.rows()).map(|i| i.to_string()).collect(),
            weights,
            communities: None,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.weights.rows()
    }

    /// Graph of `J_bar`: edge `j -> i` carries the influence of component
    /// `j` on the prediction of component `i`.
    pub fn from_jacobian(jbar: &DenseMatrix) -> Result<Self> {
        Self::new(jbar.transpose())
    }
}

/// Community assignment and its Newman modularity.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    /// Contiguous labels from 0, numbered by first appearance.
    pub labels: Vec<usize>,
    pub modularity: f64,
}

/// Newman modularity of `labels` on a symmetric weight matrix.
pub fn modularity(weights: &DenseMatrix, labels: &[usize]) -> f64 {
    let n = weights.rows();
    let two_m: f64 = weights.data().iter().sum();
    if two_m <= 0.0 {
        return 0.0;
    }
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut inside = vec![0.0; k];
    let mut total = vec![0.0; k];
    for i in 0..n {
        for j in 0..n {
            let a = weights[(i, j)];
            total[labels[i]] += a;
            if labels[i] == labels[j] {
                inside[labels[i]] += a;
            }
        }
    }
    inside
        .iter()
        .zip(&total)
        .map(|(i, t)| i / two_m - (t / two_m).powi(2))
        .sum()
}

fn relabel(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect()
}

/// Weighted undirected graph with self-loops, as adjacency lists.
struct LevelGraph {
    adj: Vec<Vec<(usize, f64)>>,
    self_loop: Vec<f64>,
    degree: Vec<f64>,
}

impl LevelGraph {
    fn from_matrix(w: &DenseMatrix) -> Self {
        let n = w.rows();
        let adj: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| j != i && w[(i, j)] > 0.0)
                    .map(|j| (j, w[(i, j)]))
                    .collect()
            })
            .collect();
        let self_loop = vec![0.0; n];
        let degree = (0..n).map(|i| w.row(i).iter().sum()).collect();
        Self {
            adj,
            self_loop,
            degree,
        }
    }

    fn len(&self) -> usize {
        self.adj.len()
    }

    /// Greedy node moves until no move improves modularity.
    fn local_moves(&self, comm: &mut [usize], two_m: f64, order: &[usize]) -> bool {
        let n = self.len();
        let mut tot = vec![0.0; n];
        for i in 0..n {
            tot[comm[i]] += self.degree[i];
        }
        let mut links = vec![0.0; n];
        let mut touched: Vec<usize> = Vec::new();
        let mut any = false;
        loop {
            let mut moved = false;
            for &i in order {
                let ki = self.degree[i];
                let own = comm[i];
                for &(j, w) in &self.adj[i] {
                    let c = comm[j];
                    if links[c] == 0.0 {
                        touched.push(c);
                    }
                    links[c] += w;
                }
                tot[own] -= ki;
                // gain of joining c relative to staying alone
                let gain = |c: usize, l: f64| l - tot[c] * ki / two_m;
                let mut best = own;
                let mut best_gain = gain(own, links[own]);
                for &c in &touched {
                    let g = gain(c, links[c]);
                    if g > best_gain + 1e-12 * two_m.max(1.0) {
                        best = c;
                        best_gain = g;
                    }
                }
                tot[best] += ki;
                if best != own {
                    comm[i] = best;
                    moved = true;
                    any = true;
                }
                for &c in &touched {
                    links[c] = 0.0;
                }
                touched.clear();
            }
            if !moved {
                return any;
            }
        }
    }

    fn aggregate(&self, comm: &[usize], k: usize) -> Self {
        let mut maps: Vec<std::collections::BTreeMap<usize, f64>> = vec![Default::default(); k];
        let mut self_loop = vec![0.0; k];
        let mut degree = vec![0.0; k];
        for i in 0..self.len() {
            let ci = comm[i];
            self_loop[ci] += self.self_loop[i];
            degree[ci] += self.degree[i];
            for &(j, w) in &self.adj[i] {
                let cj = comm[j];
                if ci == cj {
                    self_loop[ci] += w;
                } else {
                    *maps[ci].entry(cj).or_insert(0.0) += w;
                }
            }
        }
        Self {
            adj: maps.into_iter().map(|m| m.into_iter().collect()).collect(),
            self_loop,
            degree,
        }
    }
}

fn check_undirected(w: &DenseMatrix) -> Result<()> {
    if !w.is_square() {
        return Err(Error::ShapeMismatch("adjacency must be square".into()));
    }
    if w.rows() == 0 {
        return Err(Error::EmptyGraph);
    }
    let n = w.rows();
    let scale = w.max_abs().max(1.0);
    for i in 0..n {
        if w[(i, i)] != 0.0 {
            return Err(Error::InvalidConfig(format!("self-loop on node {i}")));
        }
        for j in 0..n {
            let a = w[(i, j)];
            if !(a >= 0.0) || !a.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "edge {i}-{j} has weight {a}; weights must be finite and non-negative"
                )));
            }
            if (a - w[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::NotSymmetric((a - w[(j, i)]).abs()));
            }
        }
    }
    Ok(())
}

/// Independent visit orders tried by [`louvain`].
pub const LOUVAIN_RESTARTS: u64 = 32;

/// Multi-level greedy modularity optimisation.
///
/// Each of [`LOUVAIN_RESTARTS`] passes visits nodes in an order shuffled
/// from `seed`; after its levels converge, node-level moves on the original
/// graph polish the result. The best pass wins, earliest on ties.
pub fn louvain(weights: &DenseMatrix, seed: u64) -> Result<Partition> {
    check_undirected(weights)?;
    let n = weights.rows();
    let two_m: f64 = weights.data().iter().sum();
    if two_m == 0.0 {
        return Ok(Partition {
            labels: (0..n).collect(),
            modularity: 0.0,
        });
    }
    let mut best: Option<Partition> = None;
    for pass in 0..LOUVAIN_RESTARTS {
        let labels = louvain_pass(weights, two_m, &mut RngStream::new(seed, pass));
        let q = modularity(weights, &labels);
        if best.as_ref().map_or(true, |b| q > b.modularity + 1e-12) {
            best = Some(Partition {
                labels,
                modularity: q,
            });
        }
    }
    Ok(best.expect("at least one pass"))
}

fn louvain_pass(weights: &DenseMatrix, two_m: f64, rng: &mut RngStream) -> Vec<usize> {
    let n = weights.rows();
    let base = LevelGraph::from_matrix(weights);
    let mut membership: Vec<usize> = (0..n).collect();
    loop {
        let merged = multilevel(&base, two_m, &mut membership, rng);
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        let polished = base.local_moves(&mut membership, two_m, &order);
        membership = relabel(&membership);
        let split = split_communities(weights, &base, two_m, &mut membership, rng);
        if !(merged || polished || split || kick(weights, &base, two_m, &mut membership, rng)) {
            return membership;
        }
    }
}

/// Tries moving each node into each neighbouring community (or out alone)
/// followed by fresh merging and polishing; keeps the first such move that
/// raises modularity. Escapes optima that need a move and a merge together.
fn kick(
    weights: &DenseMatrix,
    base: &LevelGraph,
    two_m: f64,
    membership: &mut Vec<usize>,
    rng: &mut RngStream,
) -> bool {
    let current = modularity(weights, membership);
    let fresh = membership.iter().max().map_or(0, |m| m + 1);
    for i in 0..membership.len() {
        let mut targets: Vec<usize> = base.adj[i].iter().map(|&(j, _)| membership[j]).collect();
        targets.push(fresh);
        targets.sort_unstable();
        targets.dedup();
        for c in targets.into_iter().filter(|&c| c != membership[i]) {
            let mut candidate = membership.clone();
            candidate[i] = c;
            let mut candidate = relabel(&candidate);
            // hold node i while the others settle so it is not moved straight back
            let others: Vec<usize> = (0..candidate.len()).filter(|&j| j != i).collect();
            base.local_moves(&mut candidate, two_m, &others);
            let mut candidate = relabel(&candidate);
            multilevel(base, two_m, &mut candidate, rng);
            let order: Vec<usize> = (0..candidate.len()).collect();
            base.local_moves(&mut candidate, two_m, &order);
            let candidate = relabel(&candidate);
            if modularity(weights, &candidate) > current + 1e-12 {
                *membership = candidate;
                return true;
            }
        }
    }
    false
}

/// Repeated local moves and aggregation starting from `membership`.
fn multilevel(base: &LevelGraph, two_m: f64, membership: &mut [usize], rng: &mut RngStream) -> bool {
    let mut graph = base.aggregate(membership, membership.iter().max().unwrap() + 1);
    let mut improved = false;
    loop {
        let mut comm: Vec<usize> = (0..graph.len()).collect();
        let mut order: Vec<usize> = (0..graph.len()).collect();
        rng.shuffle(&mut order);
        if !graph.local_moves(&mut comm, two_m, &order) {
            return improved;
        }
        improved = true;
        let comm = relabel(&comm);
        let k = comm.iter().max().unwrap() + 1;
        for m in membership.iter_mut() {
            *m = comm[*m];
        }
        graph = graph.aggregate(&comm, k);
    }
}

/// Re-optimises each community on its own from singletons and keeps any
/// split that raises modularity.
fn split_communities(
    weights: &DenseMatrix,
    base: &LevelGraph,
    two_m: f64,
    membership: &mut Vec<usize>,
    rng: &mut RngStream,
) -> bool {
    let k = membership.iter().max().map_or(0, |m| m + 1);
    let mut changed = false;
    for c in 0..k {
        let nodes: Vec<usize> = (0..membership.len()).filter(|&i| membership[i] == c).collect();
        if nodes.len() < 2 {
            continue;
        }
        let local: std::collections::HashMap<usize, usize> =
            nodes.iter().enumerate().map(|(l, &g)| (g, l)).collect();
        let sub = LevelGraph {
            adj: nodes
                .iter()
                .map(|&g| {
                    base.adj[g]
                        .iter()
                        .filter_map(|&(j, w)| local.get(&j).map(|&l| (l, w)))
                        .collect()
                })
                .collect(),
            self_loop: vec![0.0; nodes.len()],
            degree: nodes.iter().map(|&g| base.degree[g]).collect(),
        };
        let mut sub_m: Vec<usize> = (0..nodes.len()).collect();
        multilevel(&sub, two_m, &mut sub_m, rng);
        let sub_m = relabel(&sub_m);
        if sub_m.iter().all(|&l| l == 0) {
            continue;
        }
        let mut candidate = membership.clone();
        let fresh = candidate.iter().max().unwrap() + 1;
        for (l, &g) in nodes.iter().enumerate() {
            if sub_m[l] > 0 {
                candidate[g] = fresh + sub_m[l] - 1;
            }
        }
        if modularity(weights, &candidate) > modularity(weights, membership) + 1e-12 {
            *membership = candidate;
            changed = true;
        }
    }
    if changed {
        *membership = relabel(membership);
    }
    changed
}

/// Undirected weights from a similarity matrix: negatives clipped to 0,
/// diagonal zeroed.
pub fn similarity_graph(rho: &DenseMatrix) -> DenseMatrix {
    DenseMatrix::from_fn(rho.rows(), rho.cols(), |i, j| {
        if i == j {
            0.0
        } else {
            rho[(i, j)].max(0.0)
        }
    })
}

/// Test statistic with degrees of freedom and a two-sided p-value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatResult {
    pub statistic: f64,
    pub df: f64,
    /// Denominator degrees of freedom for F tests.
    pub df2: Option<f64>,
    pub p_value: f64,
    /// Sign of the effect: -1, 0, or 1.
    pub sign: f64,
}

fn t_two_sided(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
}

fn sign_of(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn require(values: &[f64], what: &str) -> Result<()> {
    if values.len() < 2 {
        return Err(Error::TooFewSamples(format!("{what} has {} values", values.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    Ok(())
}

/// One-sample t test against mean `mu0`.
pub fn ttest_1samp(values: &[f64], mu0: f64) -> Result<StatResult> {
    require(values, "sample")?;
    let n = values.len() as f64;
    let (mean, var) = mean_var(values);
    if var == 0.0 {
        return Err(Error::ZeroVariance("one-sample t test".into()));
    }
    let t = (mean - mu0) / (var / n).sqrt();
    let df = n - 1.0;
    Ok(StatResult {
        statistic: t,
        df,
        df2: None,
        p_value: t_two_sided(t, df),
        sign: sign_of(t),
    })
}

/// Welch's unequal-variance two-sample t test (`a` minus `b`).
pub fn ttest_2samp(a: &[f64], b: &[f64]) -> Result<StatResult> {
    require(a, "first sample")?;
    require(b, "second sample")?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / na, vb / nb);
    if sa + sb == 0.0 {
        return Err(Error::ZeroVariance("two-sample t test".into()));
    }
    let t = (ma - mb) / (sa + sb).sqrt();
    let df = (sa + sb).powi(2) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    Ok(StatResult {
        statistic: t,
        df,
        df2: None,
        p_value: t_two_sided(t, df),
        sign: sign_of(t),
    })
}

/// One-way ANOVA F test.
pub fn anova_1way(groups: &[&[f64]]) -> Result<StatResult> {
    if groups.len() < 2 {
        return Err(Error::TooFewSamples(format!("ANOVA needs 2 groups, got {}", groups.len())));
    }
    for (i, g) in groups.iter().enumerate() {
        require(g, &format!("group {i}"))?;
    }
    let n: f64 = groups.iter().map(|g| g.len() as f64).sum();
    let grand: f64 = groups.iter().flat_map(|g| g.iter()).sum::<f64>() / n;
    let mut ssb = 0.0;
    let mut ssw = 0.0;
    for g in groups {
        let (m, v) = mean_var(g);
        ssb += g.len() as f64 * (m - grand).powi(2);
        ssw += v * (g.len() as f64 - 1.0);
    }
    if ssw == 0.0 {
        return Err(Error::ZeroVariance("ANOVA within-group variance".into()));
    }
    let df1 = groups.len() as f64 - 1.0;
    let df2 = n - groups.len() as f64;
    let f = (ssb / df1) / (ssw / df2);
    let p = if f == 0.0 {
        1.0
    } else {
        FisherSnedecor::new(df1, df2)
            .expect("positive degrees of freedom")
            .sf(f)
            .clamp(0.0, 1.0)
    };
    Ok(StatResult {
        statistic: f,
        df: df1,
        df2: Some(df2),
        p_value: p,
        sign: sign_of(f),
    })
}

/// Benjamini-Hochberg step-up outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct FdrResult {
    pub reject: Vec<bool>,
    /// Largest p-value rejected, or `None` when nothing is.
    pub threshold: Option<f64>,
}

/// Benjamini-Hochberg at level `q`. NaN entries count as missing: they are
/// never rejected and do not add to the number of tests.
pub fn fdr_bh(pvals: &[f64], q: f64) -> FdrResult {
    let mut idx: Vec<usize> = (0..pvals.len()).filter(|&i| !pvals[i].is_nan()).collect();
    idx.sort_by(|&a, &b| pvals[a].total_cmp(&pvals[b]).then(a.cmp(&b)));
    let m = idx.len() as f64;
    let cut = idx
        .iter()
        .enumerate()
        .rposition(|(rank, &i)| pvals[i] <= (rank + 1) as f64 * q / m);
    let mut reject = vec![false; pvals.len()];
    let threshold = cut.map(|c| {
        for &i in &idx[..=c] {
            reject[i] = true;
        }
        pvals[idx[c]]
    });
    FdrResult { reject, threshold }
}

/// Ordinary least-squares fit.
#[derive(Debug, Clone, PartialEq)]
pub struct Regression {
    pub betas: Vec<f64>,
    /// Residual sum of squares over `L - p` (0 when `L == p`).
    pub residual_variance: f64,
}

/// Least squares via the normal equations; `x` should carry an intercept
/// column if one is wanted.
pub fn regress(y: &[f64], x: &DenseMatrix) -> Result<Regression> {
    let (l, p) = x.shape();
    if y.len() != l {
        return Err(Error::LengthMismatch(format!("y has {} rows, X has {l}", y.len())));
    }
    if p == 0 || l < p {
        return Err(Error::RankDeficient);
    }
    let xt = x.transpose();
    let xtx = xt.matmul(x);
    let lu = lu_factor(&xtx).map_err(|_| Error::RankDeficient)?;
    let packed = lu.packed();
    let diag: Vec<f64> = (0..p).map(|i| packed[(i, i)].abs()).collect();
    let scale = (0..p).map(|i| xtx[(i, i)]).fold(0.0f64, f64::max);
    if diag.iter().any(|&d| d <= 1e-12 * scale) {
        return Err(Error::RankDeficient);
    }
    let betas = lu.solve(&xt.matvec(y));
    let fitted = x.matvec(&betas);
    let rss: f64 = y.iter().zip(&fitted).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(Regression {
        betas,
        residual_variance: if l > p { rss / (l - p) as f64 } else { 0.0 },
    })
}

/// Pearson r per (unit, subject) between each trace column and the state
/// codes; flat columns give `None`.
pub fn state_correlation(
    traces: &[DenseMatrix],
    states: &[Vec<usize>],
) -> Result<Vec<Vec<Option<f64>>>> {
    if traces.len() != states.len() {
        return Err(Error::LengthMismatch(format!(
            "{} traces for {} state vectors",
            traces.len(),
            states.len()
        )));
    }
    let units = traces.first().map_or(0, DenseMatrix::cols);
    let mut out = vec![Vec::with_capacity(traces.len()); units];
    for (si, (tr, st)) in traces.iter().zip(states).enumerate() {
        if tr.rows() != st.len() || tr.cols() != units {
            return Err(Error::LengthMismatch(format!(
                "subject {si}: trace is {}x{}, state vector has {} entries",
                tr.rows(),
                tr.cols(),
                st.len()
            )));
        }
        let codes: Vec<f64> = st.iter().map(|&s| s as f64).collect();
        for (u, col) in out.iter_mut().enumerate() {
            col.push(pearson(&tr.column(u), &codes));
        }
    }
    Ok(out)
}

/// Median of `|r|` over the non-missing entries.
pub fn median_abs(values: &[Option<f64>]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().flatten().map(|x| x.abs()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Welch test per unit comparing group 1 against group 0 on the
/// non-missing values; `None` where a test is not defined.
pub fn group_tests(per_unit: &[Vec<Option<f64>>], groups: &[usize]) -> Vec<Option<StatResult>> {
    per_unit
        .iter()
        .map(|vals| {
            let pick = |g: usize| -> Vec<f64> {
                vals.iter()
                    .zip(groups)
                    .filter(|(_, &gr)| gr == g)
                    .filter_map(|(v, _)| *v)
                    .collect()
            };
            ttest_2samp(&pick(1), &pick(0)).ok()
        })
        .collect()
}
