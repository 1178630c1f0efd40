//! Coordinate updates for the ordinal view: `Q(C)`, `Q(H)`, `Q(S_h)` and
//! `Q(Π_h)`. The auxiliary noise of the ordinal link is fixed at one.

use nalgebra::DMatrix;

use crate::error::Result;
use crate::specialmath::trunc_norm_mean;
use crate::types::{Dataset, Hyperparameters, LatentFeatures, VariationalState};
use crate::view_continuous::{gaussian_row, second_moments, selection_prob};

/// Sets `c̄_ij = γ_iᵀu_j` and `⟨c_ij⟩` to the mean of `N(c̄_ij, 1)` on the
/// region of `z_ij`.
pub fn update_c(state: &mut VariationalState, z: &DMatrix<i64>, u: &LatentFeatures, h: &Hyperparameters) {
    let cbar = &state.h_mean * &u.u;
    for j in 0..z.ncols() {
        for i in 0..z.nrows() {
            let iv = h.cutpoints_z.interval(z[(i, j)] as usize);
            let m = cbar[(i, j)];
            state.c_expect[(i, j)] = trunc_norm_mean(m, 1.0, iv);
        }
    }
    state.c_mean_param = cbar;
}

pub fn update_h_rows(state: &mut VariationalState, u: &LatentFeatures, h: &Hyperparameters) -> Result<()> {
    let uut = &u.u * u.u.transpose();
    // Column i is U ⟨c̃_i⟩.
    let uc = &u.u * state.c_expect.transpose();
    for i in 0..state.h_mean.nrows() {
        let (mean, cov) = gaussian_row(&uut, 1.0, state.alpha.row(i).iter().copied(), uc.column(i).into_owned(), h)?;
        state.h_mean.set_row(i, &mean.transpose());
        state.h_cov[i] = cov;
    }
    Ok(())
}

pub fn update_s_h(state: &mut VariationalState, h: &Hyperparameters) -> Result<()> {
    for i in 0..state.alpha.nrows() {
        for j in 0..state.alpha.ncols() {
            let m2 = state.h_mean[(i, j)].powi(2) + state.h_cov[i][(j, j)];
            state.alpha[(i, j)] = selection_prob(state.dh1[(i, j)], state.dh2[(i, j)], m2, h)?;
        }
    }
    Ok(())
}

pub fn update_pi_h(state: &mut VariationalState, h: &Hyperparameters) {
    state.dh1 = state.alpha.map(|a| a + h.d1);
    state.dh2 = state.alpha.map(|a| 1.0 - a + h.d2);
}

/// `(⟨H⟩, ⟨HᵀH⟩ = Σ_{i≤q} Λ_i + γ_i γ_iᵀ)`.
pub fn moments_h(state: &VariationalState) -> (DMatrix<f64>, DMatrix<f64>) {
    second_moments(&state.h_mean, &state.h_cov)
}

/// Runs the ordinal block in order `C → H → S_h → Π_h`.
pub fn update_all(state: &mut VariationalState, d: &Dataset, u: &LatentFeatures, h: &Hyperparameters) -> Result<()> {
    update_c(state, &d.z, u, h);
    update_h_rows(state, u, h)?;
    update_s_h(state, h)?;
    update_pi_h(state, h);
    Ok(())
}
