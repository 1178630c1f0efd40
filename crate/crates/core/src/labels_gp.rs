//! Mean-field update of the label auxiliaries `Q(f) = Π_i Q(f_i)`.
//!
//! Each `Q(f_i)` is `N(f̄_i, σ²_fi)` truncated to the region of `y_i`, where
//! `(f̄_i, σ²_fi)` is the leave-one-out GP conditional given the current
//! `⟨f_¬i⟩`. With `P = K⁻¹` those follow from one factorization:
//! `σ²_fi = 1/P_ii` and `f̄_i = ⟨f_i⟩ − (P⟨f⟩)_i / P_ii`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::KernelMatrix;
use crate::specialmath::{standardized, trunc_norm_mean, trunc_norm_second_moment, TruncInterval};
use crate::types::{Cutpoints, Dataset, VariationalState};

/// The subjects entering the GP prior, as indices into the full column set,
/// each with its label or `None` when masked.
#[derive(Debug, Clone, PartialEq)]
pub struct GpBlock {
    pub columns: Vec<usize>,
    pub labels: Vec<Option<usize>>,
}

impl GpBlock {
    /// All labeled columns of `d`; unlabeled columns stay out of the GP terms.
    pub fn labeled(d: &Dataset) -> Self {
        let (columns, labels) = d.labeled().into_iter().map(|(c, l)| (c, Some(l))).unzip();
        Self { columns, labels }
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn interval(&self, pos: usize, cutpoints: &Cutpoints) -> TruncInterval {
        match self.labels[pos] {
            Some(l) => cutpoints.interval(l),
            None => TruncInterval::unbounded(),
        }
    }
}

/// `sweeps` in-order passes of leave-one-out updates over the block.
pub fn update_f_sweep(
    state: &mut VariationalState,
    block: &GpBlock,
    km: &KernelMatrix,
    cutpoints: &Cutpoints,
    sweeps: usize,
) -> Result<()> {
    if km.n() != block.len() {
        return Err(Error::DimensionMismatch(format!(
            "kernel is {}x{} but the label block has {} columns",
            km.n(),
            km.n(),
            block.len()
        )));
    }
    if block.is_empty() {
        return Ok(());
    }
    let prec = km.precision();
    let mut m = DVector::from_iterator(block.len(), block.columns.iter().map(|&c| state.f_expect[c]));
    let mut pm = &prec * &m;
    for _ in 0..sweeps {
        for (pos, &col) in block.columns.iter().enumerate() {
            let p_ii = prec[(pos, pos)];
            if !(p_ii > 0.0) || !p_ii.is_finite() {
                return Err(Error::IllConditionedKernel {
                    jitter: km.jitter_applied,
                });
            }
            let var = 1.0 / p_ii;
            let fbar = m[pos] - pm[pos] / p_ii;
            let iv = block.interval(pos, cutpoints);
            let sd = var.sqrt();
            let mean = trunc_norm_mean(fbar, sd, iv);
            let delta = mean - m[pos];
            if delta != 0.0 {
                pm.axpy(delta, &prec.column(pos), 1.0);
                m[pos] = mean;
            }
            state.f_bar[col] = fbar;
            state.f_var[col] = var;
            state.f_expect[col] = mean;
            state.f_sq_expect[col] = trunc_norm_second_moment(fbar, sd, iv);
        }
    }
    Ok(())
}

/// `(⟨f⟩, ⟨ffᵀ⟩)` over the block, with
/// `⟨ffᵀ⟩ = ⟨f⟩⟨f⟩ᵀ − diag(⟨f⟩²) + diag(⟨f²⟩)`.
pub fn f_moments(state: &VariationalState, block: &GpBlock) -> (DVector<f64>, DMatrix<f64>) {
    let m = DVector::from_iterator(block.len(), block.columns.iter().map(|&c| state.f_expect[c]));
    let mut outer = &m * m.transpose();
    for (pos, &c) in block.columns.iter().enumerate() {
        outer[(pos, pos)] = state.f_sq_expect[c];
    }
    (m, outer)
}

/// `E_Q[log N(f|0,K)] + H[Q(f)]`.
pub fn gp_bound(state: &VariationalState, block: &GpBlock, km: &KernelMatrix, cutpoints: &Cutpoints) -> f64 {
    if block.is_empty() {
        return 0.0;
    }
    let n = block.len() as f64;
    let (_, outer) = f_moments(state, block);
    let prec = km.precision();
    let quad = prec.component_mul(&outer).sum();
    let mut entropy = 0.0;
    for (pos, &c) in block.columns.iter().enumerate() {
        let sd = state.f_var[c].sqrt();
        let st = standardized(state.f_bar[c], sd, block.interval(pos, cutpoints));
        entropy += sd.ln() + st.entropy();
    }
    -0.5 * n * (2.0 * std::f64::consts::PI).ln() - 0.5 * km.log_det() - 0.5 * quad + entropy
}
