//! Outer variational EM loop, the full evidence lower bound, and selection
//! of the latent dimension by maximizing it.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::{kernel_cross, kernel_matrix, kernel_matrix_fixed, KernelMatrix};
use crate::labels_gp::{f_moments, gp_bound, update_f_sweep, GpBlock};
use crate::latent_opt::{optimize_u, MStepMoments, OptimizeOptions};
use crate::specialmath::{beta_log_moments, digamma, ln_beta, ln_gamma, log_interval_prob};
use crate::types::{validate_dataset, Dataset, FitReport, Hyperparameters, LatentFeatures, VariationalState};
use crate::{view_continuous as vc, view_ordinal as vo};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Cap on traced outer iterations (after the warm-up).
    pub max_outer: usize,
    /// Relative ELBO change `|Δ|/(1+|ELBO|)` that counts as converged when
    /// seen twice in a row.
    pub tol: f64,
    pub seed: u64,
    /// Leave-one-out passes over the label auxiliaries per E-step.
    pub f_sweeps: usize,
    /// Outer iterations over which the spike variance shrinks geometrically
    /// from the slab variance to its target. Zero starts at the target.
    pub anneal_iters: usize,
    pub mstep: OptimizeOptions,
    /// Starting latent features; drawn from `N(0, 0.1²)` when absent.
    pub init_u: Option<DMatrix<f64>>,
    /// Per-iteration progress on standard error.
    pub verbose: bool,
    /// Worker threads for [`select_k`]; zero uses the global pool.
    pub jobs: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_outer: 200,
            tol: 1e-5,
            seed: 0,
            f_sweeps: 2,
            anneal_iters: 20,
            mstep: OptimizeOptions::default(),
            init_u: None,
            verbose: false,
            jobs: 0,
        }
    }
}

/// `U₀ ~ N(0, 0.1²)` i.i.d., drawn in column-major order.
pub fn initial_latents(k: usize, n: usize, seed: u64) -> LatentFeatures {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.1).expect("valid scale");
    let v: Vec<f64> = (0..k * n).map(|_| normal.sample(&mut rng)).collect();
    LatentFeatures::new(DMatrix::from_column_slice(k, n, &v))
}

/// Spike variance for outer iteration `t` of the warm-up.
fn annealed(h: &Hyperparameters, t: usize, warmup: usize) -> Hyperparameters {
    let mut ht = h.clone();
    if t < warmup && h.sigma2_sq < h.sigma1_sq {
        let frac = t as f64 / warmup as f64;
        ht.sigma2_sq = h.sigma1_sq * (h.sigma2_sq / h.sigma1_sq).powf(frac);
    }
    ht
}

fn block_kernel(u: &LatentFeatures, block: &GpBlock, h: &Hyperparameters, state: &mut VariationalState) -> Result<Option<KernelMatrix>> {
    if block.is_empty() {
        return Ok(None);
    }
    let ub = u.columns(&block.columns);
    match kernel_matrix_fixed(&ub, &h.kernel, state.kernel_jitter) {
        Ok(km) => Ok(Some(km)),
        Err(_) => {
            let km = kernel_matrix(&ub, &h.kernel, state.kernel_jitter * 10.0)?;
            state.kernel_jitter = km.jitter_applied;
            Ok(Some(km))
        }
    }
}

type Probe<'a> = dyn FnMut(&'static str, &VariationalState) -> Result<()> + 'a;

/// One E-step in the order continuous → ordinal → labels, calling `probe`
/// after every coordinate update.
fn e_step(
    state: &mut VariationalState,
    u: &LatentFeatures,
    d: &Dataset,
    h: &Hyperparameters,
    block: &GpBlock,
    f_sweeps: usize,
    probe: &mut Probe<'_>,
) -> Result<()> {
    vc::update_g_rows(state, &d.x, u, h)?;
    probe("G", state)?;
    vc::update_s_g(state, h)?;
    probe("S_g", state)?;
    vc::update_pi_g(state, h);
    probe("Pi_g", state)?;
    vc::update_eta(state, &d.x, u, h)?;
    probe("eta", state)?;
    vo::update_c(state, &d.z, u, h);
    probe("C", state)?;
    vo::update_h_rows(state, u, h)?;
    probe("H", state)?;
    vo::update_s_h(state, h)?;
    probe("S_h", state)?;
    vo::update_pi_h(state, h);
    probe("Pi_h", state)?;
    if let Some(km) = block_kernel(u, block, h, state)? {
        for _ in 0..f_sweeps {
            update_f_sweep(state, block, &km, &h.cutpoints_y, 1)?;
            probe("f", state)?;
        }
    }
    Ok(())
}

fn m_step_moments(state: &VariationalState, block: &GpBlock, h: &Hyperparameters) -> MStepMoments {
    let (g_mean, gtg) = vc::moments_g(state);
    let (h_mean, hth) = vo::moments_h(state);
    MStepMoments {
        eta_mean: state.eta_mean(),
        g_mean,
        gtg,
        h_mean,
        hth,
        c_expect: state.c_expect.clone(),
        f_outer: f_moments(state, block).1,
        gp_columns: block.columns.clone(),
        kernel: h.kernel,
        jitter: state.kernel_jitter,
    }
}

/// Fits the model to `d`. Labels present in `d` supervise the label
/// process; columns without a label only share the latent features.
pub fn fit(d: &Dataset, h: &Hyperparameters, opts: &FitOptions) -> Result<(LatentFeatures, VariationalState, FitReport)> {
    h.validate()?;
    let d = validate_dataset(d.clone(), h)?;
    let start = Instant::now();
    let (n, p, q, k) = (d.n(), d.p(), d.q(), h.k);
    let mut u = match &opts.init_u {
        Some(u0) if u0.shape() != (k, n) => {
            return Err(Error::DimensionMismatch(format!(
                "initial U is {}x{}, expected {k}x{n}",
                u0.nrows(),
                u0.ncols()
            )))
        }
        Some(u0) => LatentFeatures::new(u0.clone()),
        None => initial_latents(k, n, opts.seed),
    };
    let block = GpBlock::labeled(&d);
    let mut state = VariationalState::initial(n, p, q, h);
    if !block.is_empty() {
        state.kernel_jitter = kernel_matrix(&u.columns(&block.columns), &h.kernel, h.jitter)?.jitter_applied;
    }

    let warmup = if h.sigma2_sq < h.sigma1_sq { opts.anneal_iters } else { 0 };
    let mut trace = Vec::new();
    let mut failures = 0;
    let mut calm = 0;
    let mut converged = false;
    let mut t = 0;
    while trace.len() < opts.max_outer {
        let ht = annealed(h, t, warmup);
        e_step(&mut state, &u, &d, &ht, &block, opts.f_sweeps, &mut |_, _| Ok(()))?;
        let m = m_step_moments(&state, &block, h);
        let out = optimize_u(&u, &m, &d.x, &opts.mstep)?;
        failures += out.line_search_failed as usize;
        u = out.u;
        t += 1;
        if t <= warmup {
            continue;
        }
        let value = elbo_with_block(&state, &u, &d, h, &block)?;
        let delta = trace.last().map_or(f64::INFINITY, |prev| value - prev);
        if opts.verbose {
            eprintln!("iter={} elbo={value} delta={delta}", trace.len() + 1);
        }
        trace.push(value);
        if delta.abs() / (1.0 + value.abs()) < opts.tol {
            calm += 1;
            if calm >= 2 {
                converged = true;
                break;
            }
        } else {
            calm = 0;
        }
    }
    fill_unsupervised_f(&mut state, &u, &block, h)?;
    let report = FitReport {
        iterations: trace.len(),
        elbo_trace: trace,
        converged,
        warmup_iterations: warmup,
        selected_k: k,
        line_search_failures: failures,
        wall_time: start.elapsed().as_secs_f64(),
    };
    Ok((u, state, report))
}

/// Columns outside the label block get the GP predictive distribution
/// given the block's `⟨f⟩`.
fn fill_unsupervised_f(state: &mut VariationalState, u: &LatentFeatures, block: &GpBlock, h: &Hyperparameters) -> Result<()> {
    let n = u.n();
    let rest: Vec<usize> = (0..n).filter(|c| !block.columns.contains(c)).collect();
    if rest.is_empty() {
        return Ok(());
    }
    let ur = u.columns(&rest);
    let prior_var: Vec<f64> = (0..rest.len())
        .map(|i| {
            let ui = ur.columns(&[i]);
            kernel_cross(&ui, &ui, &h.kernel).map(|m| m[(0, 0)] + h.kernel.noise)
        })
        .collect::<Result<_>>()?;
    let (mean, var) = match block_kernel(u, block, h, state)? {
        None => (DVector::zeros(rest.len()), DVector::from_vec(prior_var)),
        Some(km) => {
            let cross = kernel_cross(&ur, &u.columns(&block.columns), &h.kernel)?;
            let fb = f_moments(state, block).0;
            let mean = &cross * km.cholesky().solve(&fb);
            let sol = km.solve(&cross.transpose());
            let var = DVector::from_fn(rest.len(), |i, _| (prior_var[i] - cross.row(i).dot(&sol.column(i).transpose())).max(0.0));
            (mean, var)
        }
    };
    for (pos, &c) in rest.iter().enumerate() {
        state.f_bar[c] = mean[pos];
        state.f_var[c] = var[pos];
        state.f_expect[c] = mean[pos];
        state.f_sq_expect[c] = mean[pos] * mean[pos] + var[pos];
    }
    Ok(())
}

fn gaussian_entropy(cov: &DMatrix<f64>) -> Result<f64> {
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NumericalInconsistency("posterior covariance is not positive definite".into()))?;
    let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok(0.5 * cov.nrows() as f64 * (1.0 + LN_2PI) + 0.5 * log_det)
}

pub fn bernoulli_entropy(p: f64) -> f64 {
    let h = |v: f64| if v > 0.0 { -v * v.ln() } else { 0.0 };
    h(p) + h(1.0 - p)
}

pub fn beta_entropy(a: f64, b: f64) -> Result<f64> {
    Ok(ln_beta(a, b) - (a - 1.0) * digamma(a)? - (b - 1.0) * digamma(b)? + (a + b - 2.0) * digamma(a + b)?)
}

pub fn gamma_entropy(shape: f64, rate: f64) -> Result<f64> {
    Ok(shape - rate.ln() + ln_gamma(shape) + (1.0 - shape) * digamma(shape)?)
}

/// Prior and entropy terms of one spike-and-slab loading matrix with its
/// selection indicators and their Beta probabilities.
#[allow(clippy::too_many_arguments)]
fn spike_slab_terms(
    mean: &DMatrix<f64>,
    cov: &[DMatrix<f64>],
    sel: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    prior: (f64, f64),
    h: &Hyperparameters,
) -> Result<f64> {
    let (s1, s2) = (h.sigma1_sq, h.sigma2_sq);
    let ln_b_prior = ln_beta(prior.0, prior.1);
    let mut total = 0.0;
    for (i, c) in cov.iter().enumerate() {
        total += gaussian_entropy(c)?;
        for j in 0..mean.ncols() {
            let m2 = mean[(i, j)].powi(2) + c[(j, j)];
            let s = sel[(i, j)];
            let (lp, lq) = beta_log_moments(a[(i, j)], b[(i, j)])?;
            total += s * (-0.5 * (LN_2PI + s1.ln()) - 0.5 * m2 / s1) + (1.0 - s) * (-0.5 * (LN_2PI + s2.ln()) - 0.5 * m2 / s2);
            total += s * lp + (1.0 - s) * lq;
            total += (prior.0 - 1.0) * lp + (prior.1 - 1.0) * lq - ln_b_prior;
            total += bernoulli_entropy(s) + beta_entropy(a[(i, j)], b[(i, j)])?;
        }
    }
    Ok(total)
}

/// The complete evidence lower bound, constants included.
pub fn elbo(state: &VariationalState, u: &LatentFeatures, d: &Dataset, h: &Hyperparameters) -> Result<f64> {
    elbo_with_block(state, u, d, h, &GpBlock::labeled(d))
}

pub fn elbo_with_block(state: &VariationalState, u: &LatentFeatures, d: &Dataset, h: &Hyperparameters, block: &GpBlock) -> Result<f64> {
    let (p, n) = d.x.shape();
    let (k, np) = (u.k() as f64, (n * p) as f64);
    let (a, b) = (state.eta_shape, state.eta_rate);
    let eta = a / b;
    let log_eta = digamma(a)? - b.ln();

    // Continuous view.
    let mut total = 0.5 * np * (log_eta - LN_2PI) - 0.5 * eta * vc::expected_residual(state, &d.x, u);
    total += h.r1 * h.r2.ln() - ln_gamma(h.r1) + (h.r1 - 1.0) * log_eta - h.r2 * eta;
    total += gamma_entropy(a, b)?;
    total += spike_slab_terms(&state.g_mean, &state.g_cov, &state.beta, &state.lg1, &state.lg2, (h.l1, h.l2), h)?;

    // Ordinal view.
    total += spike_slab_terms(&state.h_mean, &state.h_cov, &state.alpha, &state.dh1, &state.dh2, (h.d1, h.d2), h)?;
    let hu = &state.h_mean * &u.u;
    for j in 0..n {
        for i in 0..d.q() {
            let cbar = state.c_mean_param[(i, j)];
            let iv = h.cutpoints_z.interval(d.z[(i, j)] as usize);
            total += state.c_expect[(i, j)] * (hu[(i, j)] - cbar) + 0.5 * cbar * cbar + log_interval_prob(cbar, 1.0, iv);
        }
    }
    let (_, hth) = vo::moments_h(state);
    total -= 0.5 * (&u.u * u.u.transpose()).component_mul(&hth).sum();

    // Labels.
    if !block.is_empty() {
        let km = kernel_matrix_fixed(&u.columns(&block.columns), &h.kernel, state.kernel_jitter)?;
        total += gp_bound(state, block, &km, &h.cutpoints_y);
    }

    // Latent prior.
    total += -0.5 * u.u.norm_squared() - 0.5 * k * n as f64 * LN_2PI;
    if !total.is_finite() {
        return Err(Error::NumericalInconsistency(format!("evidence bound is {total}")));
    }
    Ok(total)
}

/// Runs one E-step on `state` and returns the bound after each coordinate
/// update, preceded by the bound at entry.
pub fn instrumented_e_step(
    state: &mut VariationalState,
    u: &LatentFeatures,
    d: &Dataset,
    h: &Hyperparameters,
    f_sweeps: usize,
) -> Result<Vec<(&'static str, f64)>> {
    let block = GpBlock::labeled(d);
    let mut out = vec![("start", elbo_with_block(state, u, d, h, &block)?)];
    e_step(state, u, d, h, &block, f_sweeps, &mut |name, st| {
        out.push((name, elbo_with_block(st, u, d, h, &block)?));
        Ok(())
    })?;
    Ok(out)
}

/// Best latent dimension among `candidates` by final ELBO, with the
/// per-candidate bound (`None` where the fit failed). Ties go to the
/// smaller dimension.
pub fn select_k(d: &Dataset, h_base: &Hyperparameters, candidates: &[usize], opts: &FitOptions) -> Result<(usize, Vec<Option<f64>>)> {
    if candidates.is_empty() {
        return Err(Error::InvalidHyperparameter("no candidate dimensions given".into()));
    }
    let run = |&k: &usize| {
        let h = Hyperparameters { k, ..h_base.clone() };
        match fit(d, &h, opts) {
            Ok((_, _, r)) => Some(r.final_elbo()),
            Err(e) => {
                if opts.verbose {
                    eprintln!("k={k}: {e}");
                }
                None
            }
        }
    };
    let scores: Vec<Option<f64>> = if opts.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| Error::InvalidHyperparameter(format!("thread pool: {e}")))?
            .install(|| candidates.par_iter().map(run).collect())
    } else {
        candidates.par_iter().map(run).collect()
    };
    let mut best: Option<(usize, f64)> = None;
    for (&k, s) in candidates.iter().zip(&scores) {
        if let Some(v) = *s {
            let better = match best {
                None => true,
                Some((bk, bv)) => v > bv || (v == bv && k < bk),
            };
            if better {
                best = Some((k, v));
            }
        }
    }
    let (k, _) = best.ok_or_else(|| Error::NumericalInconsistency("every candidate dimension failed to fit".into()))?;
    Ok((k, scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent_opt::objective_f;
    use rand::Rng;

    fn random_data(seed: u64, n: usize, p: usize, q: usize, labeled: bool) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(p, n, |_, _| rng.random_range(-2.0..2.0));
        let z = DMatrix::from_fn(q, n, |_, _| rng.random_range(0..3));
        let y = labeled.then(|| (0..n).map(|i| (i % 3 != 0).then(|| rng.random_range(0..3))).collect());
        Dataset::new(x, z, y)
    }

    #[test]
    fn closed_form_entropies() {
        assert!((gamma_entropy(1.0, 1.0).unwrap() - 1.0).abs() < 1e-14);
        assert!((bernoulli_entropy(0.5) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(bernoulli_entropy(0.0), 0.0);
        // Uniform on the unit interval.
        assert!(beta_entropy(1.0, 1.0).unwrap().abs() < 1e-14);
        // Beta(2,2), extended-precision oracle.
        assert!((beta_entropy(2.0, 2.0).unwrap() + 0.125_092_802_561_388_33).abs() < 1e-12);
        let cov = DMatrix::identity(2, 2);
        assert!((gaussian_entropy(&cov).unwrap() - (1.0 + LN_2PI)).abs() < 1e-14);
    }

    #[test]
    fn small_fit_is_monotone() {
        let h = Hyperparameters { k: 1, kernel: crate::types::KernelSpec::linear().with_noise(1.0), ..Default::default() };
        let d = random_data(1, 4, 4, 4, true);
        let (_, _, r) = fit(&d, &h, &FitOptions::default()).unwrap();
        assert!(!r.elbo_trace.is_empty());
        for w in r.elbo_trace.windows(2) {
            assert!(w[1] - w[0] >= -1e-6, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn fits_are_deterministic() {
        let h = Hyperparameters { k: 2, ..Default::default() };
        let d = random_data(2, 12, 5, 4, true);
        let opts = FitOptions { seed: 9, max_outer: 15, ..Default::default() };
        let (u1, s1, r1) = fit(&d, &h, &opts).unwrap();
        let (u2, s2, r2) = fit(&d, &h, &opts).unwrap();
        assert_eq!(u1, u2);
        assert_eq!(s1, s2);
        assert!(r1.same_outcome(&r2));
    }

    #[test]
    fn zero_signal_gives_zero_loadings() {
        let n = 20;
        let mut z = DMatrix::from_element(3, n, 1i64);
        z[(0, 0)] = 0;
        z[(0, 1)] = 2;
        let d = Dataset::new(DMatrix::zeros(4, n), z, None);
        let h = Hyperparameters { k: 2, ..Default::default() };
        let (_, st, r) = fit(&d, &h, &FitOptions::default()).unwrap();
        assert!(st.g_mean.amax() < 1e-3, "{}", st.g_mean.amax());
        for w in r.elbo_trace.windows(2) {
            assert!(w[1] - w[0] >= -1e-6);
        }
    }

    #[test]
    fn u_dependent_part_matches_objective() {
        let h = Hyperparameters { k: 2, kernel: crate::types::KernelSpec::rbf(1.5), ..Default::default() };
        let d = random_data(3, 10, 4, 3, true);
        let opts = FitOptions { max_outer: 3, ..Default::default() };
        let (u, st, _) = fit(&d, &h, &opts).unwrap();
        let block = GpBlock::labeled(&d);
        let m = m_step_moments(&st, &block, &h);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let e0 = elbo(&st, &u, &d, &h).unwrap();
        let f0 = objective_f(&u, &m, &d.x).unwrap();
        for _ in 0..5 {
            let u2 = LatentFeatures::new(u.u.map(|v| v + rng.random_range(-0.3..0.3)));
            let de = elbo(&st, &u2, &d, &h).unwrap() - e0;
            let df = objective_f(&u2, &m, &d.x).unwrap() - f0;
            assert!((de - df).abs() < 1e-9 * e0.abs().max(1.0), "{de} vs {df}");
        }
    }

    #[test]
    fn coordinate_updates_never_lower_the_bound() {
        let h = Hyperparameters { k: 2, kernel: crate::types::KernelSpec::linear().with_noise(1.0), ..Default::default() };
        let d = random_data(5, 15, 5, 5, true);
        let opts = FitOptions { max_outer: 2, anneal_iters: 0, ..Default::default() };
        let (u, mut st, _) = fit(&d, &h, &opts).unwrap();
        let steps = instrumented_e_step(&mut st, &u, &d, &h, 2).unwrap();
        for w in steps.windows(2) {
            assert!(w[1].1 - w[0].1 >= -1e-8, "{} lowered the bound: {} -> {}", w[1].0, w[0].1, w[1].1);
        }
    }

    #[test]
    fn single_candidate_and_order() {
        let h = Hyperparameters::default();
        let d = random_data(6, 10, 3, 3, true);
        let opts = FitOptions { max_outer: 5, ..Default::default() };
        let (k, scores) = select_k(&d, &h, &[2], &opts).unwrap();
        assert_eq!(k, 2);
        assert_eq!(scores.len(), 1);
        let (_, scores) = select_k(&d, &h, &[3, 1, 2], &opts).unwrap();
        assert_eq!(scores.len(), 3);
        let single = fit(&d, &Hyperparameters { k: 1, ..h.clone() }, &opts).unwrap().2.final_elbo();
        assert_eq!(scores[1], Some(single));
        assert!(select_k(&d, &h, &[], &opts).is_err());
    }
}
