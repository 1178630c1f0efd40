//! Acceptance gate: eight end-to-end criteria, one PASS/FAIL line each.
//! Exits non-zero when any criterion fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use heteroview::em::{fit, instrumented_e_step, select_k, FitOptions};
use heteroview::io::{read_int_matrix, read_key_values, read_labels, read_matrix};
use heteroview::latent_opt::{gradient_f, objective_f, MStepMoments};
use heteroview::predict::fit_transductive;
use heteroview::simbench::{accuracy, association_scores, generate, majority_vote, precision_recall, split_indices, SimConfig};
use heteroview::specialmath::{log_interval_prob, trunc_norm_mean, trunc_norm_second_moment, TruncInterval};
use heteroview::{Cutpoints, Dataset, Hyperparameters, KernelSpec, LatentFeatures};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 3] = [11, 12, 13];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ---------------------------------------------------------------------------
// Oracles written independently of the library.

fn phi(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// 15-point Kronrod rule with its embedded 7-point Gauss rule.
fn gauss_kronrod(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    const XK: [f64; 8] = [
        0.991_455_371_120_812_6,
        0.949_107_912_342_758_5,
        0.864_864_423_359_769_1,
        0.741_531_185_599_394_4,
        0.586_087_235_467_691_1,
        0.405_845_151_377_397_2,
        0.207_784_955_007_898_5,
        0.0,
    ];
    const WK: [f64; 8] = [
        0.022_935_322_010_529_22,
        0.063_092_092_629_978_55,
        0.104_790_010_322_250_2,
        0.140_653_259_715_525_9,
        0.169_004_726_639_267_9,
        0.190_350_578_064_785_4,
        0.204_432_940_075_298_9,
        0.209_482_141_084_728_0,
    ];
    const WG: [f64; 4] = [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WK[7] * fc;
    let mut g = WG[3] * fc;
    for i in 0..7 {
        let (f1, f2) = (f(c - h * XK[i]), f(c + h * XK[i]));
        k += WK[i] * (f1 + f2);
        if i % 2 == 1 {
            g += WG[i / 2] * (f1 + f2);
        }
    }
    (k * h, ((k - g) * h).abs())
}

fn adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let (v, err) = gauss_kronrod(f, a, b);
    if err <= tol.max(1e-300) || depth == 0 {
        return v;
    }
    let m = 0.5 * (a + b);
    adaptive(f, a, m, 0.5 * tol, depth - 1) + adaptive(f, m, b, 0.5 * tol, depth - 1)
}

/// `(mass, E[x], E[x²])` of the standard normal restricted to `[a, b]`.
fn quadrature_moments(a: f64, b: f64) -> (f64, f64, f64) {
    let (lo, hi) = (a.max(-40.0), b.min(40.0));
    let m0 = adaptive(&phi, lo, hi, 1e-18, 40);
    let m1 = adaptive(&|x| x * phi(x), lo, hi, 1e-18, 40);
    let m2 = adaptive(&|x| x * x * phi(x), lo, hi, 1e-18, 40);
    (m0, m1 / m0, m2 / m0)
}

/// Mills ratio `Q(a)/φ(a)` by its asymptotic series, summed to the
/// smallest term.
fn mills_asymptotic(a: f64) -> f64 {
    let inv2 = 1.0 / (a * a);
    let (mut sum, mut term, mut n) = (1.0, 1.0, 1.0);
    loop {
        let next = -term * (2.0 * n - 1.0) * inv2;
        if next.abs() >= term.abs() {
            break;
        }
        sum += next;
        term = next;
        n += 1.0;
        if term.abs() < 1e-18 {
            break;
        }
    }
    sum / a
}

// ---------------------------------------------------------------------------

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst_abs: f64 = 0.0;
    for _ in 0..1000 {
        let (mut a, mut b) = (rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0));
        if a > b {
            std::mem::swap(&mut a, &mut b);
        }
        if b - a < 1e-3 {
            b = a + 1e-3;
        }
        let mu: f64 = rng.random_range(-3.0..3.0);
        let sigma: f64 = rng.random_range(0.5..2.0);
        let iv = TruncInterval::new(mu + sigma * a, mu + sigma * b).unwrap();
        let (m0, m1, m2) = quadrature_moments(a, b);
        let mean_o = mu + sigma * m1;
        let second_o = mu * mu + 2.0 * mu * sigma * m1 + sigma * sigma * m2;
        let errs = [
            (trunc_norm_mean(mu, sigma, iv) - mean_o).abs(),
            (trunc_norm_second_moment(mu, sigma, iv) - second_o).abs(),
            (log_interval_prob(mu, sigma, iv) - m0.ln()).abs(),
        ];
        worst_abs = errs.iter().fold(worst_abs, |w, &e| w.max(e));
    }

    let mut worst_rel: f64 = 0.0;
    for i in 0..1000 {
        let a: f64 = rng.random_range(6.0..37.0);
        let ra = mills_asymptotic(a);
        let (iv, mean_o, second_o, logp_o) = match i % 3 {
            0 => (TruncInterval::new(a, f64::INFINITY).unwrap(), 1.0 / ra, 1.0 + a / ra, ra.ln() + phi(a).ln()),
            1 => (
                TruncInterval::new(f64::NEG_INFINITY, -a).unwrap(),
                -1.0 / ra,
                1.0 + a / ra,
                ra.ln() + phi(a).ln(),
            ),
            _ => {
                let b = rng.random_range(6.0f64..37.0).max(a + 0.01);
                let rb = mills_asymptotic(b);
                // e = φ(b)/φ(a)
                let e = (-(b * b - a * a) / 2.0).exp();
                let mass_scaled = ra - e * rb;
                let mean = -(-(b * b - a * a) / 2.0).exp_m1() / mass_scaled;
                let second = 1.0 + (a - e * b) / mass_scaled;
                (TruncInterval::new(a, b).unwrap(), mean, second, mass_scaled.ln() + phi(a).ln())
            }
        };
        let rel = |x: f64, y: f64| ((x - y) / y).abs();
        worst_rel = worst_rel
            .max(rel(trunc_norm_mean(0.0, 1.0, iv), mean_o))
            .max(rel(trunc_norm_second_moment(0.0, 1.0, iv), second_o))
            .max(rel(log_interval_prob(0.0, 1.0, iv), logp_o));
    }
    let secs = started.elapsed().as_secs_f64();
    outcome(
        worst_abs <= 1e-8 && worst_rel <= 1e-6 && secs < 10.0,
        format!("max abs err {worst_abs:.2e} (≤1e-8) on [-6,6]; max rel err {worst_rel:.2e} (≤1e-6) in tails; {secs:.1}s (<10s)"),
    )
}

fn random_moments(rng: &mut ChaCha8Rng, k: usize, n: usize, p: usize, q: usize, kernel: KernelSpec) -> MStepMoments {
    let mut mat = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
    let a = mat(k, k + 1);
    let b = mat(k, k + 1);
    let g_mean = mat(p, k);
    let h_mean = mat(q, k);
    let c_expect = mat(q, n);
    let fm = mat(n, 1);
    let mut f_outer = &fm * fm.transpose();
    for i in 0..n {
        f_outer[(i, i)] += 0.5;
    }
    MStepMoments {
        eta_mean: 1.3,
        gtg: &a * a.transpose() + &g_mean.transpose() * &g_mean,
        g_mean,
        hth: &b * b.transpose() + &h_mean.transpose() * &h_mean,
        h_mean,
        c_expect,
        f_outer,
        gp_columns: (0..n).collect(),
        kernel,
        jitter: 1e-2,
    }
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst: f64 = 0.0;
    for trial in 0..50 {
        let k = 1 + trial % 4;
        let n = 4 + trial % 9;
        let kernel = if trial % 2 == 0 { KernelSpec::linear() } else { KernelSpec::rbf(rng.random_range(0.7..2.0)) };
        let m = random_moments(&mut rng, k, n, 3, 4, kernel);
        let x = DMatrix::from_fn(3, n, |_, _| rng.random_range(-1.0..1.0));
        let u = LatentFeatures::new(DMatrix::from_fn(k, n, |_, _| rng.random_range(-1.0..1.0)));
        let g = gradient_f(&u, &m, &x).unwrap();
        let step = 1e-5;
        let mut fd = DMatrix::zeros(k, n);
        for i in 0..k * n {
            let mut up = u.clone();
            up.u[i] += step;
            let mut dn = u.clone();
            dn.u[i] -= step;
            fd[i] = (objective_f(&up, &m, &x).unwrap() - objective_f(&dn, &m, &x).unwrap()) / (2.0 * step);
        }
        worst = worst.max((&g - &fd).norm() / fd.norm().max(1e-12));
    }
    outcome(worst <= 1e-4, format!("max relative gradient error {worst:.2e} over 50 instances (≤1e-4)"))
}

fn small_instance(i: u64) -> (Dataset, Hyperparameters) {
    let (d, _) = generate(&SimConfig { n: 30, p: 10, q: 10, k: 2, seed: 300 + i, ..Default::default() }).unwrap();
    let kernel = if i % 2 == 0 { KernelSpec::linear().with_noise(1.0) } else { KernelSpec::rbf(1.0) };
    (d, Hyperparameters { k: 2, kernel, cutpoints_y: Cutpoints::binary(), ..Default::default() })
}

fn criterion_3() -> Outcome {
    let mut worst_outer = f64::INFINITY;
    for i in 0..20 {
        let (d, h) = small_instance(i);
        let (_, _, r) = fit(&d, &h, &FitOptions { seed: i, ..Default::default() }).unwrap();
        for w in r.elbo_trace.windows(2) {
            worst_outer = worst_outer.min(w[1] - w[0]);
        }
    }
    let mut worst_step = f64::INFINITY;
    let mut where_ = String::new();
    for i in 0..5 {
        let (d, h) = small_instance(100 + i);
        let opts = FitOptions { seed: i, max_outer: 2, ..Default::default() };
        let (u, mut st, _) = fit(&d, &h, &opts).unwrap();
        for _ in 0..3 {
            let steps = instrumented_e_step(&mut st, &u, &d, &h, 2).unwrap();
            for w in steps.windows(2) {
                if w[1].1 - w[0].1 < worst_step {
                    worst_step = w[1].1 - w[0].1;
                    where_ = w[1].0.to_string();
                }
            }
        }
    }
    outcome(
        worst_outer >= -1e-6 && worst_step >= -1e-8,
        format!("min outer step {worst_outer:.2e} (≥-1e-6); min coordinate step {worst_step:.2e} at {where_} (≥-1e-8)"),
    )
}

fn sim_hyper() -> Hyperparameters {
    Hyperparameters {
        k: 5,
        kernel: KernelSpec::linear().with_noise(1.0),
        cutpoints_y: Cutpoints::binary(),
        ..Default::default()
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn criteria_4_5() -> (Outcome, Outcome) {
    let h = sim_hyper();
    let (mut auprs, mut leaks, mut ratios) = (Vec::new(), 0usize, Vec::new());
    for &seed in &SEEDS {
        let (d, truth) = generate(&SimConfig { seed, ..Default::default() }).unwrap();
        let (_, st, _) = fit(&d, &h, &FitOptions { seed, ..Default::default() }).unwrap();
        let scores = association_scores(&st.g_mean, &st.h_mean).unwrap();
        auprs.push(precision_recall(&scores, &truth.link_truth, 50).unwrap().aupr);
        let (mut sel, mut uns) = (Vec::new(), Vec::new());
        for (m, s) in st.g_mean.iter().zip(st.beta.iter()).chain(st.h_mean.iter().zip(st.alpha.iter())) {
            if *s < 0.5 {
                leaks += (m.abs() >= 1e-2) as usize;
                uns.push(m.abs());
            } else {
                sel.push(m.abs());
            }
        }
        ratios.push(if uns.is_empty() || sel.is_empty() { 0.0 } else { median(sel) / median(uns) });
    }
    let mean = auprs.iter().sum::<f64>() / auprs.len() as f64;
    let min_ratio = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    (
        outcome(mean >= 0.85, format!("mean AUPR {mean:.4} over seeds, per seed {auprs:.4?} (≥0.85)")),
        outcome(
            leaks == 0 && min_ratio >= 10.0,
            format!("{leaks} unselected loadings with |mean| ≥ 1e-2; min median separation ratio {min_ratio:.3e} (≥10)"),
        ),
    )
}

fn criterion_6() -> Outcome {
    let h = sim_hyper();
    let mut picks = Vec::new();
    for &seed in &SEEDS {
        let (d, _) = generate(&SimConfig { seed, ..Default::default() }).unwrap();
        let (k, _) = select_k(&d, &h, &[3, 5, 8], &FitOptions { seed, ..Default::default() }).unwrap();
        picks.push(k);
    }
    let hits = picks.iter().filter(|&&k| k == 5).count();
    outcome(hits >= 2, format!("selected k per seed {picks:?}; k=5 on {hits}/3 (≥2)"))
}

fn criterion_7() -> Outcome {
    let h = sim_hyper();
    let (mut accs, mut beats) = (Vec::new(), true);
    for &seed in &SEEDS {
        let (d, _) = generate(&SimConfig { seed, ..Default::default() }).unwrap();
        let (train, test) = split_indices(d.n(), 0.1, seed).unwrap();
        let (dtr, dte) = (d.select_columns(&train), d.select_columns(&test));
        let tf = fit_transductive(&dtr, &dte, &h, &FitOptions { seed, ..Default::default() }).unwrap();
        let pred = tf.predict(&h).unwrap();
        let truth: Vec<i64> = dte.y.as_ref().unwrap().iter().map(|v| v.unwrap()).collect();
        let train_y: Vec<i64> = dtr.y.as_ref().unwrap().iter().map(|v| v.unwrap()).collect();
        let mask = vec![true; truth.len()];
        let acc = accuracy(&pred, &truth, &mask).unwrap();
        let base = accuracy(&vec![majority_vote(&train_y).unwrap(); truth.len()], &truth, &mask).unwrap();
        beats &= acc > base;
        accs.push((acc, base));
    }
    let mean = accs.iter().map(|a| a.0).sum::<f64>() / accs.len() as f64;
    outcome(
        mean >= 0.75 && beats,
        format!("mean held-out accuracy {mean:.3} (≥0.75); (accuracy, majority) per seed {accs:.3?}"),
    )
}

fn run_cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_heteroview"))
        .args(args)
        .status()
        .map(|s| s.success())
        .unwrap_or(false)
}

fn pipeline(root: &Path) -> bool {
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    run_cli(&["simulate", "--out", &p("sim"), "--seed", "21"])
        && run_cli(&[
            "fit", "--x", &p("sim/train/x.csv"), "--z", &p("sim/train/z.csv"), "--y", &p("sim/train/y.csv"),
            "--config", &p("sim/model.cfg"), "--seed", "21", "--out", &p("model"),
        ])
        && run_cli(&["predict", "--model", &p("model"), "--x-test", &p("sim/test/x.csv"), "--z-test", &p("sim/test/z.csv"), "--out", &p("pred")])
        && run_cli(&[
            "evaluate", "--pred", &p("pred/y_pred.csv"), "--truth", &p("sim/test/y.csv"), "--scores", &p("model/association.csv"),
            "--links", &p("sim/links.csv"), "--train-y", &p("sim/train/y.csv"), "--out", &p("eval"),
        ])
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

/// Re-reads a CSV with whichever core reader matches its content.
fn reparses(path: &Path) -> bool {
    let name = path.file_name().unwrap().to_string_lossy();
    match name.as_ref() {
        "metrics.csv" | "report.csv" => read_key_values(path).is_ok(),
        "y.csv" | "y_pred.csv" => read_labels(path).is_ok(),
        "z.csv" | "g_true.csv" | "h_true.csv" | "links.csv" | "index.csv" => read_int_matrix(path).is_ok(),
        _ => read_matrix(path).is_ok(),
    }
}

fn criterion_8() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    if !(pipeline(&a) && pipeline(&b)) {
        return outcome(false, "a CLI stage exited unsuccessfully".into());
    }
    let (fa, fb) = (files(&a), files(&b));
    if fa != fb {
        return outcome(false, "the two runs produced different file sets".into());
    }
    let differing: Vec<_> = fa
        .iter()
        .filter(|f| std::fs::read(a.join(f)).unwrap() != std::fs::read(b.join(f)).unwrap())
        .collect();
    let csvs: Vec<_> = fa.iter().filter(|f| f.extension().is_some_and(|e| e == "csv")).collect();
    let broken: Vec<_> = csvs.iter().filter(|f| !reparses(&a.join(f))).collect();
    outcome(
        differing.is_empty() && broken.is_empty(),
        format!(
            "{} files compared, {} differ; {} CSVs re-parsed, {} failed",
            fa.len(),
            differing.len(),
            csvs.len(),
            broken.len()
        ),
    )
}

fn report(id: usize, o: &Outcome, secs: f64, limit: f64) {
    println!(
        "criterion {id}: {} — {} [{secs:.1}s, limit {limit:.0}s]",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail
    );
}

/// Runs a criterion and folds its wall-clock budget into the verdict.
fn timed(id: usize, limit: f64, f: fn() -> Outcome) -> (usize, Outcome) {
    let t = Instant::now();
    let mut o = f();
    let secs = t.elapsed().as_secs_f64();
    o.pass &= secs <= limit;
    report(id, &o, secs, limit);
    (id, o)
}

fn main() {
    // Libtest-style flags (e.g. a name filter) are accepted and ignored.
    let mut results = vec![timed(1, 10.0, criterion_1), timed(2, 30.0, criterion_2), timed(3, 120.0, criterion_3)];
    let t = Instant::now();
    let (mut c4, c5) = criteria_4_5();
    let secs = t.elapsed().as_secs_f64();
    c4.pass &= secs <= 900.0;
    for (id, o) in [(4, c4), (5, c5)] {
        report(id, &o, secs, 900.0);
        results.push((id, o));
    }
    results.push(timed(6, 2700.0, criterion_6));
    results.push(timed(7, 900.0, criterion_7));
    results.push(timed(8, 900.0, criterion_8));
    let failed: Vec<usize> = results.iter().filter(|r| !r.1.pass).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
