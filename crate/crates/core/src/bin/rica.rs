use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rica::analysis::{
    self, connectivity_similarity, eval_trace, extract_sources, fdr_bh, fnc, group_tests, louvain,
    median_abs, next_step_jacobian, similarity_graph, state_correlation, ConnectivityGraph,
    StatResult,
};
use rica::io::{
    self, csv_table, export_dot, parse_sim_config, parse_train_config, read_bundle,
    read_checkpoint, read_csv, write_bundle, write_checkpoint, write_svg_heatmap, FileSink,
    MatrixBundle, NdArray,
};
use rica::matcore::DenseMatrix;
use rica::synth::{cohort_bundle, simulate_cohort, Cohort};
use rica::train::{fit, preprocess, resume};
use rica::{Error, ErrorKind, Result};

/// Recurrent ICA toolkit: simulate, preprocess, train, and analyse.
#[derive(Parser)]
#[command(name = "rica", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a two-group cohort with ground truth.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Variance-normalise, detrend, and reduce with PCA.
    Preprocess {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Number of principal components to keep.
        #[arg(long)]
        components: usize,
        /// Polynomial degree for detrending.
        #[arg(long, default_value_t = 4)]
        detrend: usize,
        /// Skip detrending.
        #[arg(long)]
        no_detrend: bool,
    },
    /// Fit the model; checkpoints are written to --out as training runs.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Sources, predicted means and scales, and hidden states per subject.
    Extract {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Subject-averaged functional network connectivity.
    Fnc {
        /// Output of `extract`.
        #[arg(long)]
        sources: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Next-step Jacobians averaged per subject and overall.
    Jacobian {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Louvain communities of the Jacobian similarity graph.
    Communities {
        /// Output of `jacobian`.
        #[arg(long)]
        jacobian: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Statistical tests.
    #[command(subcommand)]
    Stats(StatsCommand),
    /// CSV tables, SVG heatmaps, and DOT graphs in a directory.
    Report(ReportArgs),
}

#[derive(Subcommand)]
enum StatsCommand {
    /// Least squares of each column of --y on the design matrix.
    Regress {
        #[arg(long)]
        y: PathBuf,
        #[arg(long)]
        design: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// One-sample t test per column.
    Ttest1 {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        mu: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Welch two-sample t test per column (a minus b).
    Ttest2 {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// One-way ANOVA per column across group files.
    Anova {
        #[arg(long, num_args = 2.., required = true)]
        groups: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Benjamini-Hochberg on the first column of a CSV.
    Fdr {
        #[arg(long)]
        pvals: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        q: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Correlate traces with ground-truth states; compares groups if present.
    Statecorr {
        /// Output of `extract`.
        #[arg(long)]
        traces: PathBuf,
        /// Which trace to correlate: hidden, sigma, mu, or sources.
        #[arg(long, default_value = "hidden")]
        kind: String,
        /// FDR level for the group comparison.
        #[arg(long, default_value_t = 0.001)]
        q: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ReportArgs {
    /// Output of `extract`.
    #[arg(long)]
    sources: PathBuf,
    /// Output of `jacobian`.
    #[arg(long)]
    jacobian: PathBuf,
    /// Output of `communities`.
    #[arg(long)]
    communities: Option<PathBuf>,
    /// Output of `stats statecorr`.
    #[arg(long)]
    statecorr: Option<PathBuf>,
    /// Edges are drawn where the one-sample test of the signed Jacobian
    /// across subjects has p at or below this value.
    #[arg(long, default_value_t = 0.05)]
    p_threshold: f64,
    #[arg(long)]
    out_dir: PathBuf,
}

/// Failure with an optional note appended to the diagnostic.
struct Failure {
    error: Error,
    note: Option<String>,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        Self { error, note: None }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .format_target(false)
        .init();
    if let Some(n) = std::env::var("RICA_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { error, note }) => {
            match note {
                Some(n) => eprintln!("error: {} ({}); {n}", error, error.name()),
                None => eprintln!("error: {} ({})", error, error.name()),
            }
            ExitCode::from(match error.kind() {
                ErrorKind::Usage => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numerical => 4,
            })
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run(command: Command) -> std::result::Result<(), Failure> {
    match command {
        Command::Simulate { config, out } => {
            let cfg = parse_sim_config(&read_text(&config)?)?;
            let (obs, truth) = simulate_cohort(&cfg)?;
            write_bundle(&out, &cohort_bundle(&obs, &truth)?)?;
            log::info!("wrote {} subjects to {}", obs.len(), out.display());
        }
        Command::Preprocess {
            data,
            out,
            components,
            detrend,
            no_detrend,
        } => {
            let input = read_bundle(&data)?;
            let cohort = Cohort::from_bundle(&input)?;
            let degree = (!no_detrend).then_some(detrend);
            let (loadings, pca) = preprocess(&cohort.observations, degree, components)?;
            let mut b = MatrixBundle::new();
            for (i, l) in loadings.iter().enumerate() {
                b.insert_matrix(format!("obs{i}"), l)?;
            }
            copy_labels(&input, &mut b)?;
            b.insert_matrix("pca_components", &pca.components)?;
            b.insert_vector("pca_eigenvalues", &pca.eigenvalues)?;
            b.insert_vector("pca_mean", &pca.mean)?;
            b.set_meta("kind", "data");
            b.set_meta("detrend_degree", degree.map_or("none".into(), |d| d.to_string()));
            write_bundle(&out, &b)?;
        }
        Command::Train {
            data,
            config,
            out,
            resume: from,
        } => {
            let cfg = parse_train_config(&read_text(&config)?)?;
            let cohort = Cohort::from_bundle(&read_bundle(&data)?)?;
            let mut sink = FileSink::new(&out);
            let result = match &from {
                Some(path) => {
                    let start = read_checkpoint(path)?;
                    resume(&cfg, &cohort.observations, start, &mut sink)
                }
                None => fit(&cfg, &cohort.observations, &mut sink),
            };
            let res = result.map_err(|error| {
                let note = if sink.saved > 0 {
                    format!("last checkpoint: {}", out.display())
                } else {
                    "no checkpoint written".to_string()
                };
                Failure {
                    error,
                    note: Some(note),
                }
            })?;
            if sink.saved == 0 {
                // nothing left to train: still leave a checkpoint at --out
                let ckpt = io::Checkpoint {
                    params: res.params,
                    optimizer: res.optimizer,
                    history: res.history,
                    config: cfg,
                };
                write_checkpoint(&out, &ckpt)?;
            }
        }
        Command::Extract { model, data, out } => {
            let ckpt = read_checkpoint(&model)?;
            let input = read_bundle(&data)?;
            let cohort = Cohort::from_bundle(&input)?;
            let mcfg = ckpt.config.model_config();
            let mut b = MatrixBundle::new();
            for (i, x) in cohort.observations.iter().enumerate() {
                let s = extract_sources(&ckpt.params, x)?;
                let tr = eval_trace(&ckpt.params, &mcfg, x);
                b.insert_matrix(format!("sources{i}"), &s)?;
                b.insert_matrix(format!("mu{i}"), &tr.mu)?;
                b.insert_matrix(format!("sigma{i}"), &tr.sigma)?;
                b.insert_matrix(format!("hidden{i}"), &tr.hidden)?;
            }
            copy_labels(&input, &mut b)?;
            b.set_meta("kind", "extract");
            write_bundle(&out, &b)?;
        }
        Command::Fnc { sources, out } => {
            let s = read_bundle(&sources)?.indexed_matrices("sources")?;
            let f = fnc(&s)?;
            let mut b = MatrixBundle::new();
            b.insert_matrix("fnc", &f.matrix)?;
            b.set_meta("kind", "fnc");
            b.set_meta(
                "excluded",
                f.excluded
                    .iter()
                    .map(|(s, c)| format!("{s}:{c}"))
                    .collect::<Vec<_>>()
                    .join(","),
            );
            write_bundle(&out, &b)?;
        }
        Command::Jacobian { model, data, out } => {
            let ckpt = read_checkpoint(&model)?;
            let input = read_bundle(&data)?;
            let cohort = Cohort::from_bundle(&input)?;
            let mcfg = ckpt.config.model_config();
            let d = ckpt.params.n_sources();
            let mut b = MatrixBundle::new();
            let mut abs = DenseMatrix::zeros(d, d);
            let mut signed = DenseMatrix::zeros(d, d);
            let total: usize = cohort.observations.iter().map(|x| x.rows().saturating_sub(1)).sum();
            for (i, x) in cohort.observations.iter().enumerate() {
                let j = next_step_jacobian(&ckpt.params, &mcfg, x)?;
                let w = j.steps.len() as f64 / total as f64;
                abs.axpy(w, &j.mean_abs);
                signed.axpy(w, &j.mean);
                b.insert_matrix(format!("jabs{i}"), &j.mean_abs)?;
                b.insert_matrix(format!("jmean{i}"), &j.mean)?;
            }
            b.insert_matrix("jbar_abs", &abs)?;
            b.insert_matrix("jbar", &signed)?;
            copy_labels(&input, &mut b)?;
            b.set_meta("kind", "jacobian");
            b.set_meta("entry", "J[i,j] = d mu_i(t) / d s_j(t-1)");
            write_bundle(&out, &b)?;
        }
        Command::Communities {
            jacobian,
            out,
            seed,
        } => {
            let jb = read_bundle(&jacobian)?;
            let jbar = jb.matrix("jbar_abs")?;
            let rho = connectivity_similarity(&jbar)?;
            let graph = similarity_graph(&rho);
            let part = louvain(&graph, seed)?;
            let mut b = MatrixBundle::new();
            b.insert_matrix("similarity", &rho)?;
            b.insert_matrix("graph", &graph)?;
            let labels: Vec<f64> = part.labels.iter().map(|&l| l as f64).collect();
            b.insert_vector("labels", &labels)?;
            b.set_meta("kind", "communities");
            b.set_meta("modularity", format!("{:?}", part.modularity));
            b.set_meta("negative_weights", "clipped to 0");
            write_bundle(&out, &b)?;
        }
        Command::Stats(cmd) => run_stats(cmd)?,
        Command::Report(args) => run_report(args)?,
    }
    Ok(())
}

fn copy_labels(from: &MatrixBundle, to: &mut MatrixBundle) -> Result<()> {
    let mut i = 0;
    while let Ok(a) = from.array(&format!("states{i}")) {
        to.insert(format!("states{i}"), a.clone())?;
        i += 1;
    }
    if let Ok(g) = from.array("groups") {
        to.insert("groups", g.clone())?;
    }
    Ok(())
}

fn stat_header() -> Vec<String> {
    ["variable", "statistic", "df", "df2", "p_value", "sign"]
        .map(String::from)
        .to_vec()
}

fn stat_row(i: usize, r: &StatResult) -> Vec<Option<f64>> {
    vec![
        Some(i as f64),
        Some(r.statistic),
        Some(r.df),
        r.df2,
        Some(r.p_value),
        Some(r.sign),
    ]
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn per_column(
    m: &DenseMatrix,
    f: impl Fn(usize, &[f64]) -> Result<StatResult>,
) -> Result<Vec<Vec<Option<f64>>>> {
    (0..m.cols())
        .map(|c| f(c, &m.column(c)).map(|r| stat_row(c, &r)))
        .collect()
}

fn run_stats(cmd: StatsCommand) -> Result<()> {
    match cmd {
        StatsCommand::Regress { y, design, out } => {
            let y = read_csv(&y)?;
            let x = read_csv(&design)?;
            let mut header: Vec<String> = (0..x.cols()).map(|i| format!("beta_{i}")).collect();
            header.push("residual_variance".into());
            let rows = (0..y.cols())
                .map(|c| {
                    let fit = analysis::regress(&y.column(c), &x)?;
                    let mut row: Vec<Option<f64>> = fit.betas.into_iter().map(Some).collect();
                    row.push(Some(fit.residual_variance));
                    Ok(row)
                })
                .collect::<Result<Vec<_>>>()?;
            write_text(&out, &csv_table(&header, &rows))
        }
        StatsCommand::Ttest1 { data, mu, out } => {
            let m = read_csv(&data)?;
            let rows = per_column(&m, |_, v| analysis::ttest_1samp(v, mu))?;
            write_text(&out, &csv_table(&stat_header(), &rows))
        }
        StatsCommand::Ttest2 { a, b, out } => {
            let a = read_csv(&a)?;
            let b = read_csv(&b)?;
            if a.cols() != b.cols() {
                return Err(Error::ShapeMismatch(format!(
                    "{} columns vs {}",
                    a.cols(),
                    b.cols()
                )));
            }
            let rows = per_column(&a, |c, va| analysis::ttest_2samp(va, &b.column(c)))?;
            write_text(&out, &csv_table(&stat_header(), &rows))
        }
        StatsCommand::Anova { groups, out } => {
            let gs = groups.iter().map(read_csv).collect::<Result<Vec<_>>>()?;
            let cols = gs[0].cols();
            if gs.iter().any(|g| g.cols() != cols) {
                return Err(Error::ShapeMismatch("group files differ in columns".into()));
            }
            let rows = (0..cols)
                .map(|c| {
                    let cols: Vec<Vec<f64>> = gs.iter().map(|g| g.column(c)).collect();
                    let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
                    analysis::anova_1way(&refs).map(|r| stat_row(c, &r))
                })
                .collect::<Result<Vec<_>>>()?;
            write_text(&out, &csv_table(&stat_header(), &rows))
        }
        StatsCommand::Fdr { pvals, q, out } => {
            let p = read_csv(&pvals)?.column(0);
            if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidConfig("p-values must lie in [0, 1]".into()));
            }
            let res = fdr_bh(&p, q);
            let rows: Vec<Vec<Option<f64>>> = p
                .iter()
                .zip(&res.reject)
                .map(|(&v, &r)| vec![Some(v), Some(if r { 1.0 } else { 0.0 })])
                .collect();
            write_text(&out, &csv_table(&["p_value".into(), "reject".into()], &rows))
        }
        StatsCommand::Statecorr {
            traces,
            kind,
            q,
            out,
        } => {
            if !["hidden", "sigma", "mu", "sources"].contains(&kind.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "--kind must be hidden, sigma, mu or sources, got `{kind}`"
                )));
            }
            let b = read_bundle(&traces)?;
            let tr = b.indexed_matrices(&kind)?;
            let cohort_states = Cohort::from_bundle(&relabel_sources(&b)?)?;
            if cohort_states.states.is_empty() {
                return Err(Error::MissingArray("states0".into()));
            }
            let r = state_correlation(&tr, &cohort_states.states)?;
            let units = r.len();
            let subjects = tr.len();
            let mut o = MatrixBundle::new();
            let flat: Vec<f64> = r
                .iter()
                .flat_map(|u| u.iter().map(|v| v.unwrap_or(f64::NAN)))
                .collect();
            o.insert("r", NdArray::new(vec![units, subjects], flat)?)?;
            let med: Vec<f64> = r.iter().map(|u| median_abs(u).unwrap_or(f64::NAN)).collect();
            o.insert("median_abs_r", NdArray::new(vec![units], med)?)?;
            if !cohort_states.groups.is_empty() {
                let tests = group_tests(&r, &cohort_states.groups);
                let t: Vec<f64> = tests.iter().map(|t| t.map_or(f64::NAN, |t| t.statistic)).collect();
                let p: Vec<f64> = tests.iter().map(|t| t.map_or(f64::NAN, |t| t.p_value)).collect();
                let rej = fdr_bh(&p, q);
                let rej: Vec<f64> = rej.reject.iter().map(|&x| if x { 1.0 } else { 0.0 }).collect();
                o.insert("group_t", NdArray::new(vec![units], t)?)?;
                o.insert("group_p", NdArray::new(vec![units], p)?)?;
                o.insert("group_reject", NdArray::new(vec![units], rej)?)?;
                o.set_meta("fdr_q", format!("{q:?}"));
                o.set_meta("group_test", "Welch two-sample t on raw r, group 1 minus group 0");
            }
            o.set_meta("kind", "statecorr");
            o.set_meta("trace", kind);
            o.set_meta("state_coding", "raw numeric codes 1..K (ordinal assumption)");
            write_bundle(&out, &o)
        }
    }
}

/// Cohort reader wants `obs<i>`; extract bundles carry `sources<i>`.
fn relabel_sources(b: &MatrixBundle) -> Result<MatrixBundle> {
    let mut out = MatrixBundle::new();
    for (i, s) in b.indexed_matrices("sources")?.iter().enumerate() {
        out.insert_matrix(format!("obs{i}"), s)?;
    }
    copy_labels(b, &mut out)?;
    Ok(out)
}

fn run_report(args: ReportArgs) -> Result<()> {
    let dir = &args.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let ex = read_bundle(&args.sources)?;
    let sources = ex.indexed_matrices("sources")?;
    let f = fnc(&sources)?;
    write_text(&dir.join("fnc.csv"), &io::csv_string(&f.matrix, None))?;
    write_svg_heatmap(dir.join("fnc.svg"), &f.matrix, Some(1.0))?;

    let jb = read_bundle(&args.jacobian)?;
    let jbar = jb.matrix("jbar_abs")?;
    write_text(&dir.join("jacobian.csv"), &io::csv_string(&jbar, None))?;
    write_svg_heatmap(dir.join("jacobian.svg"), &jbar, None)?;

    // edge significance: one-sample t test of per-subject signed mean J
    let per_subject = jb.indexed_matrices("jmean")?;
    let d = jbar.rows();
    let mut pvals = DenseMatrix::from_fn(d, d, |_, _| 1.0);
    if per_subject.len() >= 2 {
        for i in 0..d {
            for j in 0..d {
                let v: Vec<f64> = per_subject.iter().map(|m| m[(i, j)]).collect();
                if let Ok(r) = analysis::ttest_1samp(&v, 0.0) {
                    pvals[(i, j)] = r.p_value;
                }
            }
        }
    }
    write_text(&dir.join("edge_pvalues.csv"), &io::csv_string(&pvals, None))?;
    let masked = DenseMatrix::from_fn(d, d, |i, j| {
        if pvals[(i, j)] <= args.p_threshold {
            jbar[(i, j)]
        } else {
            0.0
        }
    });
    let mut graph = ConnectivityGraph::from_jacobian(&masked)?;
    if let Some(path) = &args.communities {
        let labels = read_bundle(path)?.vector("labels")?;
        if labels.len() != d {
            return Err(Error::ShapeMismatch(format!(
                "{} community labels for {d} components",
                labels.len()
            )));
        }
        graph.communities = Some(labels.iter().map(|&l| l as usize).collect());
    }
    write_text(&dir.join("connectivity.dot"), &export_dot(&graph, f64::MIN_POSITIVE))?;

    if let Some(path) = &args.statecorr {
        let sc = read_bundle(path)?;
        if let (Ok(t), Ok(p), Ok(rej)) = (sc.array("group_t"), sc.array("group_p"), sc.array("group_reject")) {
            let header: Vec<String> = ["unit", "t", "p_value", "neg_log10_p", "reject"]
                .map(String::from)
                .to_vec();
            let finite = |v: f64| v.is_finite().then_some(v);
            let rows: Vec<Vec<Option<f64>>> = (0..t.data.len())
                .map(|u| {
                    let p = p.data[u];
                    vec![
                        Some(u as f64),
                        finite(t.data[u]),
                        finite(p),
                        finite(-p.log10()),
                        Some(rej.data[u]),
                    ]
                })
                .collect();
            write_text(&dir.join("group_differences.csv"), &csv_table(&header, &rows))?;
        }
    }
    log::info!("report written to {}", dir.display());
    Ok(())
}
