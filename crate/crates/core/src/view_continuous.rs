//! Coordinate updates for the continuous view: `Q(G)`, `Q(S_g)`, `Q(Π_g)`
//! and `Q(η)`.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::symmetrize;
use crate::specialmath::{beta_log_moments, logistic};
use crate::types::{Hyperparameters, LatentFeatures, VariationalState};

/// Gaussian row posterior shared by both views:
/// `cov = (scale·UUᵀ + diag(s/σ1² + (1−s)/σ2²))⁻¹`, `mean = cov·rhs`.
pub(crate) fn gaussian_row(
    uut: &DMatrix<f64>,
    scale: f64,
    selection: impl Iterator<Item = f64>,
    rhs: DVector<f64>,
    h: &Hyperparameters,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let mut prec = uut * scale;
    for (j, s) in selection.enumerate() {
        prec[(j, j)] += s / h.sigma1_sq + (1.0 - s) / h.sigma2_sq;
    }
    let chol = Cholesky::new(prec).ok_or_else(|| {
        Error::NumericalInconsistency("row precision matrix is not positive definite".into())
    })?;
    let mean = chol.solve(&rhs);
    let mut cov = chol.inverse();
    symmetrize(&mut cov);
    Ok((mean, cov))
}

/// Selection log-odds for one loading given its second moment.
pub(crate) fn selection_prob(a: f64, b: f64, second_moment: f64, h: &Hyperparameters) -> Result<f64> {
    let (log_pi, log_1m_pi) = beta_log_moments(a, b)?;
    let logit = log_pi - log_1m_pi - 0.5 * (h.sigma1_sq / h.sigma2_sq).ln()
        - 0.5 * second_moment * (1.0 / h.sigma1_sq - 1.0 / h.sigma2_sq);
    Ok(clamp_open(logistic(logit)))
}

/// Keeps probabilities inside the open unit interval.
pub(crate) fn clamp_open(p: f64) -> f64 {
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

pub fn update_g_rows(
    state: &mut VariationalState,
    x: &DMatrix<f64>,
    u: &LatentFeatures,
    h: &Hyperparameters,
) -> Result<()> {
    let eta = state.eta_mean();
    let uut = &u.u * u.u.transpose();
    // Column i is U x̃_i.
    let ux = &u.u * x.transpose();
    for i in 0..x.nrows() {
        let rhs = ux.column(i) * eta;
        let (mean, cov) = gaussian_row(&uut, eta, state.beta.row(i).iter().copied(), rhs, h)?;
        state.g_mean.set_row(i, &mean.transpose());
        state.g_cov[i] = cov;
    }
    Ok(())
}

pub fn update_s_g(state: &mut VariationalState, h: &Hyperparameters) -> Result<()> {
    for i in 0..state.beta.nrows() {
        for j in 0..state.beta.ncols() {
            let m2 = state.g_mean[(i, j)].powi(2) + state.g_cov[i][(j, j)];
            state.beta[(i, j)] = selection_prob(state.lg1[(i, j)], state.lg2[(i, j)], m2, h)?;
        }
    }
    Ok(())
}

pub fn update_pi_g(state: &mut VariationalState, h: &Hyperparameters) {
    state.lg1 = state.beta.map(|b| b + h.l1);
    state.lg2 = state.beta.map(|b| 1.0 - b + h.l2);
}

/// `tr(XXᵀ) − 2tr(⟨G⟩UXᵀ) + tr(UUᵀ⟨GᵀG⟩)`, the expected squared residual.
pub fn expected_residual(state: &VariationalState, x: &DMatrix<f64>, u: &LatentFeatures) -> f64 {
    let (g, gtg) = moments_g(state);
    let uut = &u.u * u.u.transpose();
    let cross = (&g * &u.u).component_mul(x).sum();
    x.norm_squared() - 2.0 * cross + uut.component_mul(&gtg).sum()
}

pub fn update_eta(
    state: &mut VariationalState,
    x: &DMatrix<f64>,
    u: &LatentFeatures,
    h: &Hyperparameters,
) -> Result<()> {
    let (p, n) = x.shape();
    let rate = h.r2 + 0.5 * expected_residual(state, x, u);
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(Error::NumericalInconsistency(format!(
            "noise precision rate became {rate}"
        )));
    }
    state.eta_shape = h.r1 + 0.5 * (n * p) as f64;
    state.eta_rate = rate;
    Ok(())
}

/// `(⟨G⟩, ⟨GᵀG⟩ = Σ_i Ω_i + λ_i λ_iᵀ)`.
pub fn moments_g(state: &VariationalState) -> (DMatrix<f64>, DMatrix<f64>) {
    second_moments(&state.g_mean, &state.g_cov)
}

pub(crate) fn second_moments(mean: &DMatrix<f64>, cov: &[DMatrix<f64>]) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut s = mean.transpose() * mean;
    for c in cov {
        s += c;
    }
    symmetrize(&mut s);
    (mean.clone(), s)
}
