//! Command-line front end.
//!
//! Every option can also come from a `key = value` config file passed with
//! `--config`; options given on the command line take precedence.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};

use crate::em::{fit, select_k, FitOptions};
use crate::error::{Error, Result};
use crate::io::{
    read_dataset, read_int_matrix, read_labels, read_matrix, write_dataset, write_key_values, write_labels, write_matrix,
    write_text, ConfigEntry, ConfigMap, HYPERPARAMETER_KEYS,
};
use crate::predict::{fit_transductive, predict_latent};
use crate::simbench::{self, SimConfig};
use crate::types::{Cutpoints, Dataset, Hyperparameters, KernelSpec};

#[derive(Parser, Debug)]
#[command(name = "heteroview", version, about = "Sparse multiview latent model with ordinal GP labels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic block-sparse dataset with its ground truth.
    Simulate(SimulateArgs),
    /// Fit the model and write the posterior summaries.
    Fit(FitArgs),
    /// Fit several latent dimensions and report the bound for each.
    SelectK(SelectKArgs),
    /// Refit jointly with test subjects and decode their labels.
    Predict(PredictArgs),
    /// Score predicted labels and association estimates.
    Evaluate(EvaluateArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    q: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Standard deviation of the noise on the continuous view.
    #[arg(long)]
    x_noise_sd: Option<f64>,
    /// Fraction of subjects held out into `test/`.
    #[arg(long)]
    test_fraction: Option<f64>,
    /// Seed of the train/test partition; defaults to `--seed`.
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Hyperparameter and optimizer overrides shared by the fitting commands.
#[derive(Args, Debug, Default)]
struct ModelArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    /// `linear`, `rbf` or `polynomial`.
    #[arg(long)]
    kernel: Option<String>,
    #[arg(long)]
    lengthscale: Option<f64>,
    #[arg(long)]
    degree: Option<u32>,
    #[arg(long)]
    offset: Option<f64>,
    /// White-noise variance added to the label kernel.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    jitter: Option<f64>,
    #[arg(long)]
    sigma1_sq: Option<f64>,
    #[arg(long)]
    sigma2_sq: Option<f64>,
    /// Comma-separated, e.g. `-inf,-1,1,inf`.
    #[arg(long, allow_hyphen_values = true)]
    cutpoints_z: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    cutpoints_y: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_outer: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    anneal_iters: Option<usize>,
    #[arg(long)]
    f_sweeps: Option<usize>,
    /// Print per-iteration progress to standard error.
    #[arg(long)]
    verbose: bool,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    x: Option<PathBuf>,
    #[arg(long)]
    z: Option<PathBuf>,
    #[arg(long)]
    y: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct SelectKArgs {
    #[arg(long)]
    x: Option<PathBuf>,
    #[arg(long)]
    z: Option<PathBuf>,
    #[arg(long)]
    y: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated latent dimensions to compare.
    #[arg(long)]
    candidates: Option<String>,
    /// Concurrent fits; 0 uses all cores.
    #[arg(long)]
    jobs: Option<usize>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Output directory of a previous `fit`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    x_test: PathBuf,
    #[arg(long)]
    z_test: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    verbose: bool,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Association scores, `p × q`.
    #[arg(long)]
    scores: Option<PathBuf>,
    /// 0/1 link truth, `p × q`.
    #[arg(long)]
    links: Option<PathBuf>,
    /// Training labels for the majority-vote baseline.
    #[arg(long)]
    train_y: Option<PathBuf>,
    #[arg(long)]
    thresholds: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

const OPTION_KEYS: &[&str] = &[
    "seed", "max_outer", "tol", "anneal_iters", "f_sweeps", "jobs", "candidates", "x", "z", "y", "out", "n", "p",
    "q", "x_noise_sd", "test_fraction", "split_seed", "pred", "truth", "scores", "links", "train_y", "thresholds",
    "verbose",
];

/// Runs the command line and returns the process exit code: 0 on success,
/// 2 on a usage error, 1 on a runtime error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let outcome = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit_cmd(a),
        Command::SelectK(a) => select_k_cmd(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Evaluate(a) => evaluate(a),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Config-file entries with command-line values layered on top.
struct Settings(ConfigMap);

impl Settings {
    fn load(config: Option<&Path>) -> Result<Self> {
        let cfg = match config {
            Some(p) => ConfigMap::read(p)?,
            None => ConfigMap {
                path: PathBuf::from("<command line>"),
                entries: Vec::new(),
            },
        };
        let known: Vec<&str> = HYPERPARAMETER_KEYS.iter().chain(OPTION_KEYS).copied().collect();
        cfg.check_keys(&known)?;
        Ok(Self(cfg))
    }

    fn set(&mut self, key: &str, value: Option<impl ToString>) {
        if let Some(v) = value {
            self.0.entries.push(ConfigEntry {
                key: key.to_string(),
                value: v.to_string(),
                line: 0,
            });
        }
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.0.parse_value(key)
    }

    fn or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn path(&self, key: &str) -> Result<PathBuf> {
        self.get::<PathBuf>(key)?
            .ok_or_else(|| Error::InvalidHyperparameter(format!("missing required option --{}", key.replace('_', "-"))))
    }

    fn flag(&self, key: &str) -> Result<bool> {
        self.or(key, false)
    }
}

fn model_settings(m: &ModelArgs) -> Result<Settings> {
    let mut s = Settings::load(m.config.as_deref())?;
    s.set("k", m.k);
    s.set("kernel", m.kernel.as_ref());
    s.set("lengthscale", m.lengthscale);
    s.set("degree", m.degree);
    s.set("offset", m.offset);
    s.set("noise", m.noise);
    s.set("jitter", m.jitter);
    s.set("sigma1_sq", m.sigma1_sq);
    s.set("sigma2_sq", m.sigma2_sq);
    s.set("cutpoints_z", m.cutpoints_z.as_ref());
    s.set("cutpoints_y", m.cutpoints_y.as_ref());
    s.set("seed", m.seed);
    s.set("max_outer", m.max_outer);
    s.set("tol", m.tol);
    s.set("anneal_iters", m.anneal_iters);
    s.set("f_sweeps", m.f_sweeps);
    s.set("verbose", m.verbose.then_some(true));
    Ok(s)
}

fn hyperparameters(s: &Settings) -> Result<Hyperparameters> {
    Hyperparameters::default().apply_config(&s.0)
}

fn fit_options(s: &Settings) -> Result<FitOptions> {
    let d = FitOptions::default();
    Ok(FitOptions {
        seed: s.or("seed", d.seed)?,
        max_outer: s.or("max_outer", d.max_outer)?,
        tol: s.or("tol", d.tol)?,
        anneal_iters: s.or("anneal_iters", d.anneal_iters)?,
        f_sweeps: s.or("f_sweeps", d.f_sweeps)?,
        jobs: s.or("jobs", d.jobs)?,
        verbose: s.flag("verbose")?,
        ..d
    })
}

fn options_config(o: &FitOptions) -> String {
    format!(
        "seed = {}\nmax_outer = {}\ntol = {}\nanneal_iters = {}\nf_sweeps = {}\n",
        o.seed, o.max_outer, o.tol, o.anneal_iters, o.f_sweeps
    )
}

fn load_data(s: &Settings) -> Result<Dataset> {
    let y = s.get::<PathBuf>("y")?;
    read_dataset(&s.path("x")?, &s.path("z")?, y.as_deref())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

/// Lists each written file with its shape and meaning.
#[derive(Default)]
struct Manifest(Vec<(String, usize, usize, String)>);

impl Manifest {
    fn add(&mut self, file: &str, shape: (usize, usize), what: &str) {
        self.0.push((file.to_string(), shape.0, shape.1, what.to_string()));
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let mut s = String::from("# file rows cols description\n");
        for (f, r, c, what) in &self.0 {
            writeln!(s, "{f} {r} {c} {what}").unwrap();
        }
        write_text(&dir.join("MANIFEST"), &s)
    }
}

fn add_dataset(m: &mut Manifest, prefix: &str, d: &Dataset, what: &str) {
    m.add(&format!("{prefix}x.csv"), d.x.shape(), &format!("{what} continuous view, features x subjects"));
    m.add(&format!("{prefix}z.csv"), d.z.shape(), &format!("{what} ordinal view, features x subjects"));
    if d.y.is_some() {
        m.add(&format!("{prefix}y.csv"), (d.n(), 1), &format!("{what} labels, NA when missing"));
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut s = Settings::load(a.config.as_deref())?;
    s.set("n", a.n);
    s.set("p", a.p);
    s.set("q", a.q);
    s.set("k", a.k);
    s.set("seed", a.seed);
    s.set("x_noise_sd", a.x_noise_sd);
    s.set("test_fraction", a.test_fraction);
    s.set("split_seed", a.split_seed);
    let d = SimConfig::default();
    let cfg = SimConfig {
        n: s.or("n", d.n)?,
        p: s.or("p", d.p)?,
        q: s.or("q", d.q)?,
        k: s.or("k", d.k)?,
        x_noise_sd: s.or("x_noise_sd", d.x_noise_sd)?,
        seed: s.or("seed", d.seed)?,
        ..d
    };
    let test_fraction = s.or("test_fraction", 0.1)?;
    let split_seed = s.or("split_seed", cfg.seed)?;
    let (data, truth) = simbench::generate(&cfg)?;
    let (train_idx, test_idx) = simbench::split_indices(cfg.n, test_fraction, split_seed)?;

    let out = &a.out;
    let mut m = Manifest::default();
    create_dir(out)?;
    write_dataset(out, &data)?;
    add_dataset(&mut m, "", &data, "all");
    for (sub, idx) in [("train", &train_idx), ("test", &test_idx)] {
        let dir = out.join(sub);
        create_dir(&dir)?;
        let part = data.select_columns(idx);
        write_dataset(&dir, &part)?;
        add_dataset(&mut m, &format!("{sub}/"), &part, sub);
        let ids = DMatrix::from_iterator(idx.len(), 1, idx.iter().map(|&i| i as i64));
        write_matrix(&dir.join("index.csv"), &ids)?;
        m.add(&format!("{sub}/index.csv"), ids.shape(), "column of each subject in the full data");
    }
    write_matrix(&out.join("g_true.csv"), &truth.g_true)?;
    m.add("g_true.csv", truth.g_true.shape(), "0/1 support of the continuous loadings, features x latent");
    write_matrix(&out.join("h_true.csv"), &truth.h_true)?;
    m.add("h_true.csv", truth.h_true.shape(), "0/1 support of the ordinal loadings, features x latent");
    write_matrix(&out.join("links.csv"), &truth.link_truth)?;
    m.add("links.csv", truth.link_truth.shape(), "0/1 cross-view links, continuous x ordinal features");
    write_matrix(&out.join("u_true.csv"), &truth.u_true)?;
    m.add("u_true.csv", truth.u_true.shape(), "latent features, latent x subjects");
    let f = DMatrix::from_column_slice(cfg.n, 1, &truth.f_true);
    write_matrix(&out.join("f_true.csv"), &f)?;
    m.add("f_true.csv", f.shape(), "label function before thresholding");
    // Hyperparameters matching the generator, for `fit --config`.
    let h = Hyperparameters {
        k: cfg.k,
        kernel: KernelSpec::linear().with_noise(1.0),
        cutpoints_y: Cutpoints::binary(),
        ..Hyperparameters::default()
    };
    write_text(&out.join("model.cfg"), &h.to_config_string())?;
    m.add("model.cfg", (0, 0), "hyperparameters matching the generator");
    m.write(out)
}

/// Writes the posterior summaries of a fit.
fn write_fit(
    dir: &Path,
    m: &mut Manifest,
    u: &crate::types::LatentFeatures,
    st: &crate::types::VariationalState,
    report: &crate::types::FitReport,
) -> Result<()> {
    let files: [(&str, &DMatrix<f64>, &str); 5] = [
        ("u.csv", &u.u, "latent features, latent x subjects"),
        ("g_mean.csv", &st.g_mean, "posterior mean of the continuous loadings"),
        ("h_mean.csv", &st.h_mean, "posterior mean of the ordinal loadings"),
        ("beta.csv", &st.beta, "selection probabilities of the continuous loadings"),
        ("alpha.csv", &st.alpha, "selection probabilities of the ordinal loadings"),
    ];
    for (name, mat, what) in files {
        write_matrix(&dir.join(name), mat)?;
        m.add(name, mat.shape(), what);
    }
    let f = DMatrix::from_column_slice(st.f_expect.len(), 1, st.f_expect.as_slice());
    write_matrix(&dir.join("f_mean.csv"), &f)?;
    m.add("f_mean.csv", f.shape(), "posterior mean of the label function");
    let trace = DMatrix::from_column_slice(report.elbo_trace.len(), 1, &report.elbo_trace);
    write_matrix(&dir.join("elbo_trace.csv"), &trace)?;
    m.add("elbo_trace.csv", trace.shape(), "evidence lower bound per outer iteration");
    let assoc = simbench::association_scores(&st.g_mean, &st.h_mean)?;
    write_matrix(&dir.join("association.csv"), &assoc)?;
    m.add("association.csv", assoc.shape(), "|<G><H>^T| cross-view association scores");
    let kv = [
        ("iterations", report.iterations.to_string()),
        ("warmup_iterations", report.warmup_iterations.to_string()),
        ("converged", (report.converged as u8).to_string()),
        ("line_search_failures", report.line_search_failures.to_string()),
        ("final_elbo", report.final_elbo().to_string()),
        ("k", report.selected_k.to_string()),
    ];
    let kv: Vec<(String, String)> = kv.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    write_key_values(&dir.join("report.csv"), &kv)?;
    m.add("report.csv", (kv.len(), 2), "fit summary as key,value");
    Ok(())
}

fn fit_cmd(a: FitArgs) -> Result<()> {
    let mut s = model_settings(&a.model)?;
    s.set("x", a.x.as_ref().map(|p| p.display()));
    s.set("z", a.z.as_ref().map(|p| p.display()));
    s.set("y", a.y.as_ref().map(|p| p.display()));
    s.set("out", a.out.as_ref().map(|p| p.display()));
    let h = hyperparameters(&s)?;
    let opts = fit_options(&s)?;
    let data = load_data(&s)?;
    let out = s.path("out")?;
    let (u, st, report) = fit(&data, &h, &opts)?;

    create_dir(&out)?;
    let mut m = Manifest::default();
    write_fit(&out, &mut m, &u, &st, &report)?;
    // The training data and settings travel with the model for `predict`.
    write_dataset(&out, &data)?;
    add_dataset(&mut m, "", &data, "training");
    write_text(&out.join("config.txt"), &(h.to_config_string() + &options_config(&opts)))?;
    m.add("config.txt", (0, 0), "hyperparameters and fit options used");
    m.write(&out)
}

fn select_k_cmd(a: SelectKArgs) -> Result<()> {
    let mut s = model_settings(&a.model)?;
    s.set("x", a.x.as_ref().map(|p| p.display()));
    s.set("z", a.z.as_ref().map(|p| p.display()));
    s.set("y", a.y.as_ref().map(|p| p.display()));
    s.set("out", a.out.as_ref().map(|p| p.display()));
    s.set("candidates", a.candidates.as_ref());
    s.set("jobs", a.jobs);
    let h = hyperparameters(&s)?;
    let opts = fit_options(&s)?;
    let data = load_data(&s)?;
    let out = s.path("out")?;
    let text: String = s.or("candidates", "3,5,8".to_string())?;
    let candidates = text
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::InvalidHyperparameter(format!("cannot parse candidate list {text:?}")))?;
    let (best, scores) = select_k(&data, &h, &candidates, &opts)?;

    create_dir(&out)?;
    let mut table = String::new();
    for (k, v) in candidates.iter().zip(&scores) {
        match v {
            Some(v) => writeln!(table, "{k},{v}").unwrap(),
            None => writeln!(table, "{k},NA").unwrap(),
        }
    }
    write_text(&out.join("elbo_by_k.csv"), &table)?;
    write_key_values(&out.join("selected.csv"), &[("k".into(), best.to_string())])?;
    let mut m = Manifest::default();
    m.add("elbo_by_k.csv", (candidates.len(), 2), "latent dimension, final bound (NA if the fit failed)");
    m.add("selected.csv", (1, 2), "selected latent dimension as key,value");
    m.write(&out)
}

fn predict_cmd(a: PredictArgs) -> Result<()> {
    let cfg_path = a.model.join("config.txt");
    let mut s = Settings::load(Some(&cfg_path))?;
    s.set("verbose", a.verbose.then_some(true));
    let h = hyperparameters(&s)?;
    let opts = fit_options(&s)?;
    let m = &a.model;
    let train = read_dataset(&m.join("x.csv"), &m.join("z.csv"), Some(&m.join("y.csv")))?;
    let test = read_dataset(&a.x_test, &a.z_test, None)?;
    let tf = fit_transductive(&train, &test, &h, &opts)?;
    let f_train = DVector::from_iterator(tf.labeled.len(), tf.labeled.iter().map(|&c| tf.state.f_expect[c]));
    let f_test = predict_latent(&tf.u_test, &tf.u_train.columns(&tf.labeled), &f_train, &h.kernel, tf.state.kernel_jitter)?;
    let y: Vec<Option<i64>> = f_test.iter().map(|&v| Some(h.cutpoints_y.region(v) as i64)).collect();

    create_dir(&a.out)?;
    let mut man = Manifest::default();
    write_labels(&a.out.join("y_pred.csv"), &y)?;
    man.add("y_pred.csv", (y.len(), 1), "decoded test labels");
    let f = DMatrix::from_column_slice(f_test.len(), 1, f_test.as_slice());
    write_matrix(&a.out.join("f_test.csv"), &f)?;
    man.add("f_test.csv", f.shape(), "predictive mean of the test label function");
    write_matrix(&a.out.join("u_test.csv"), &tf.u_test.u)?;
    man.add("u_test.csv", tf.u_test.u.shape(), "latent features of the test subjects");
    man.write(&a.out)
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let mut s = Settings::load(a.config.as_deref())?;
    for (key, v) in [
        ("pred", &a.pred),
        ("truth", &a.truth),
        ("scores", &a.scores),
        ("links", &a.links),
        ("train_y", &a.train_y),
        ("out", &a.out),
    ] {
        s.set(key, v.as_ref().map(|p| p.display()));
    }
    s.set("thresholds", a.thresholds);
    let out = s.path("out")?;
    let pred = s.get::<PathBuf>("pred")?;
    let truth = s.get::<PathBuf>("truth")?;
    let scores = s.get::<PathBuf>("scores")?;
    let links = s.get::<PathBuf>("links")?;
    if pred.is_some() != truth.is_some() || scores.is_some() != links.is_some() {
        return Err(Error::InvalidHyperparameter(
            "--pred needs --truth and --scores needs --links".into(),
        ));
    }
    if pred.is_none() && scores.is_none() {
        return Err(Error::InvalidHyperparameter("nothing to evaluate: give --pred/--truth or --scores/--links".into()));
    }

    create_dir(&out)?;
    let mut man = Manifest::default();
    let mut metrics: Vec<(String, String)> = Vec::new();
    if let (Some(pred), Some(truth)) = (pred, truth) {
        let yp = read_labels(&pred)?;
        let yt = read_labels(&truth)?;
        if yp.len() != yt.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} has {} labels but {} has {}",
                pred.display(),
                yp.len(),
                truth.display(),
                yt.len()
            )));
        }
        let mask: Vec<bool> = yp.iter().zip(&yt).map(|(p, t)| p.is_some() && t.is_some()).collect();
        let flat = |v: &[Option<i64>]| v.iter().map(|x| x.unwrap_or(-1)).collect::<Vec<_>>();
        let acc = simbench::accuracy(&flat(&yp), &flat(&yt), &mask)?;
        metrics.push(("accuracy".into(), acc.to_string()));
        metrics.push(("evaluated".into(), mask.iter().filter(|&&m| m).count().to_string()));
        if let Some(train_y) = s.get::<PathBuf>("train_y")? {
            let train: Vec<i64> = read_labels(&train_y)?.into_iter().flatten().collect();
            let maj = simbench::majority_vote(&train)?;
            let acc = simbench::accuracy(&vec![maj; yt.len()], &flat(&yt), &mask)?;
            metrics.push(("majority_label".into(), maj.to_string()));
            metrics.push(("majority_accuracy".into(), acc.to_string()));
        }
    }
    if let (Some(scores), Some(links)) = (scores, links) {
        let sc = read_matrix(&scores)?;
        let lk = read_int_matrix(&links)?;
        let pr = simbench::precision_recall(&sc, &lk, s.or("thresholds", 50)?)?;
        metrics.push(("aupr".into(), pr.aupr.to_string()));
        let mut table = String::new();
        for p in &pr.points {
            writeln!(table, "{},{},{}", p.threshold, p.precision, p.recall).unwrap();
        }
        write_text(&out.join("pr_curve.csv"), &table)?;
        man.add("pr_curve.csv", (pr.points.len(), 3), "threshold, precision, recall at score quantiles");
    }
    write_key_values(&out.join("metrics.csv"), &metrics)?;
    man.add("metrics.csv", (metrics.len(), 2), "metric,value");
    man.write(&out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_flag_is_a_usage_error() {
        assert_eq!(run(["heteroview", "fit", "--bogus"]), 2);
        assert_eq!(run(["heteroview"]), 2);
    }

    #[test]
    fn missing_input_is_a_runtime_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("o");
        let code = run([
            "heteroview",
            "fit",
            "--x",
            "/nonexistent/x.csv",
            "--z",
            "/nonexistent/z.csv",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 1);
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.cfg");
        fs::write(&cfg, "k = 3\nkernel = linear\nseed = 4\n").unwrap();
        let m = ModelArgs {
            config: Some(cfg),
            k: Some(2),
            ..Default::default()
        };
        let s = model_settings(&m).unwrap();
        let h = hyperparameters(&s).unwrap();
        assert_eq!(h.k, 2);
        assert_eq!(h.kernel, KernelSpec::linear());
        assert_eq!(fit_options(&s).unwrap().seed, 4);
    }

    #[test]
    fn unknown_config_key_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.cfg");
        fs::write(&cfg, "kk = 3\n").unwrap();
        let e = Settings::load(Some(&cfg)).err().unwrap().to_string();
        assert!(e.contains("c.cfg:1"), "{e}");
    }
}
