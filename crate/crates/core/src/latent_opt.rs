//! M-step: the part of the bound that depends on the latent features,
//! its gradient, and a quasi-Newton maximizer.
//!
//! `F(U) = −½tr(UUᵀ) + ⟨η⟩tr(Xᵀ⟨G⟩U) − ½tr(⟨HᵀH⟩UUᵀ) − ½log|K|
//!        − ½tr(⟨ffᵀ⟩K⁻¹) − (⟨η⟩/2)tr(⟨GᵀG⟩UUᵀ) + tr(⟨C⟩ᵀ⟨H⟩U)`
//!
//! where `K` is the label kernel over the columns in `gp_columns` only.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::{kernel_grad_contract, kernel_matrix_fixed};
use crate::lbfgs::{self, LbfgsOptions};
use crate::types::{KernelSpec, LatentFeatures};

/// Expectations under the current E-step that `F(U)` depends on.
#[derive(Debug, Clone)]
pub struct MStepMoments {
    pub eta_mean: f64,
    pub g_mean: DMatrix<f64>,
    pub gtg: DMatrix<f64>,
    pub h_mean: DMatrix<f64>,
    pub hth: DMatrix<f64>,
    /// `⟨C⟩`, `q × n`.
    pub c_expect: DMatrix<f64>,
    /// `⟨ffᵀ⟩` over `gp_columns`.
    pub f_outer: DMatrix<f64>,
    /// Columns of `U` entering the label kernel, in the order of `f_outer`.
    pub gp_columns: Vec<usize>,
    pub kernel: KernelSpec,
    pub jitter: f64,
}

impl MStepMoments {
    /// `(M, B)` of the quadratic part `−½tr(UᵀMU) + tr(BᵀU)`.
    fn quadratic(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let k = self.gtg.nrows();
        let m = DMatrix::identity(k, k) + &self.gtg * self.eta_mean + &self.hth;
        let b = self.g_mean.transpose() * x * self.eta_mean + self.h_mean.transpose() * &self.c_expect;
        (m, b)
    }

    fn check(&self, u: &LatentFeatures, x: &DMatrix<f64>) -> Result<()> {
        let (k, n) = u.u.shape();
        let ok = self.gtg.shape() == (k, k)
            && self.hth.shape() == (k, k)
            && self.g_mean.shape() == (x.nrows(), k)
            && x.ncols() == n
            && self.h_mean.ncols() == k
            && self.c_expect.shape() == (self.h_mean.nrows(), n)
            && self.f_outer.shape() == (self.gp_columns.len(), self.gp_columns.len())
            && self.gp_columns.iter().all(|&c| c < n);
        if ok {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "moments are inconsistent with U ({k}x{n}) and X ({}x{})",
                x.nrows(),
                x.ncols()
            )))
        }
    }
}

/// Value and gradient of `F` in one pass.
pub fn objective_and_gradient(u: &LatentFeatures, m: &MStepMoments, x: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    m.check(u, x)?;
    let (mq, b) = m.quadratic(x);
    let mu = &mq * &u.u;
    let mut value = -0.5 * u.u.dot(&mu) + b.dot(&u.u);
    let mut grad = b - mu;
    if !m.gp_columns.is_empty() {
        let ub = u.columns(&m.gp_columns);
        let km = kernel_matrix_fixed(&ub, &m.kernel, m.jitter)?;
        let kinv = km.precision();
        let a = &kinv * &m.f_outer;
        value += -0.5 * km.log_det() - 0.5 * a.trace();
        // ∂F/∂K = −½(K⁻¹ − K⁻¹⟨ffᵀ⟩K⁻¹)
        let mut w = &a * &kinv - &kinv;
        crate::kernels::symmetrize(&mut w);
        w *= 0.5;
        let gk = kernel_grad_contract(&ub, &m.kernel, &w)?;
        for (pos, &c) in m.gp_columns.iter().enumerate() {
            let mut col = grad.column_mut(c);
            col += gk.column(pos);
        }
    }
    if !value.is_finite() {
        return Err(Error::NumericalInconsistency(format!("latent objective is {value}")));
    }
    Ok((value, grad))
}

pub fn objective_f(u: &LatentFeatures, m: &MStepMoments, x: &DMatrix<f64>) -> Result<f64> {
    objective_and_gradient(u, m, x).map(|r| r.0)
}

pub fn gradient_f(u: &LatentFeatures, m: &MStepMoments, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    objective_and_gradient(u, m, x).map(|r| r.1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizeOptions {
    pub max_iter: usize,
    /// Gradient-norm tolerance; `None` uses `1e−5·√(kn)`.
    pub gtol: Option<f64>,
    pub history: usize,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            gtol: None,
            history: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub u: LatentFeatures,
    pub value: f64,
    pub iterations: usize,
    pub line_search_failed: bool,
}

/// Maximizes `F` from `u0`. Never returns a point with a lower value than
/// the start.
pub fn optimize_u(u0: &LatentFeatures, m: &MStepMoments, x: &DMatrix<f64>, opts: &OptimizeOptions) -> Result<OptimizeOutcome> {
    let (k, n) = u0.u.shape();
    let f0 = objective_f(u0, m, x)?;
    let lopts = LbfgsOptions {
        history: opts.history,
        max_iter: opts.max_iter,
        gtol: opts.gtol.unwrap_or(1e-5 * ((k * n) as f64).sqrt()),
        ..Default::default()
    };
    let neg = |v: &DVector<f64>| {
        let u = LatentFeatures::new(DMatrix::from_column_slice(k, n, v.as_slice()));
        match objective_and_gradient(&u, m, x) {
            Ok((f, g)) => (-f, DVector::from_column_slice((-g).as_slice())),
            Err(_) => (f64::INFINITY, DVector::zeros(k * n)),
        }
    };
    let r = lbfgs::minimize(neg, DVector::from_column_slice(u0.u.as_slice()), &lopts);
    if -r.fx < f0 || !r.fx.is_finite() {
        return Ok(OptimizeOutcome {
            u: u0.clone(),
            value: f0,
            iterations: r.iterations,
            line_search_failed: true,
        });
    }
    Ok(OptimizeOutcome {
        u: LatentFeatures::new(DMatrix::from_column_slice(k, n, r.x.as_slice())),
        value: -r.fx,
        iterations: r.iterations,
        line_search_failed: r.line_search_failed,
    })
}
