//! Joint fitting over training and test subjects, and label decoding from
//! the label process conditioned on the training auxiliaries.

use nalgebra::{DMatrix, DVector};

use crate::em::{fit, FitOptions};
use crate::error::{Error, Result};
use crate::kernels::{kernel_cross, kernel_matrix};
use crate::types::{Cutpoints, Dataset, FitReport, Hyperparameters, KernelSpec, LatentFeatures, VariationalState};

#[derive(Debug, Clone)]
pub struct TransductiveFit {
    pub u_train: LatentFeatures,
    pub u_test: LatentFeatures,
    /// State over the concatenated subjects, training columns first.
    pub state: VariationalState,
    pub report: FitReport,
    /// Training columns whose labels supervised the fit.
    pub labeled: Vec<usize>,
}

impl TransductiveFit {
    /// Decoded test labels under the fitted model.
    pub fn predict(&self, h: &Hyperparameters) -> Result<Vec<i64>> {
        let f = DVector::from_iterator(self.labeled.len(), self.labeled.iter().map(|&c| self.state.f_expect[c]));
        predict_labels(
            &self.u_test,
            &self.u_train.columns(&self.labeled),
            &f,
            &h.kernel,
            self.state.kernel_jitter,
            &h.cutpoints_y,
        )
    }
}

/// One fit over `train` followed by `test`, where only training labels
/// reach the label process. The test set's labels, if any, are ignored.
pub fn fit_transductive(train: &Dataset, test: &Dataset, h: &Hyperparameters, opts: &FitOptions) -> Result<TransductiveFit> {
    let labeled: Vec<usize> = train.labeled().into_iter().map(|(c, _)| c).collect();
    if labeled.is_empty() {
        return Err(Error::DimensionMismatch("training set carries no labels".into()));
    }
    let joint = train.concat_columns(&test.without_labels())?;
    let (u, state, report) = fit(&joint, h, opts)?;
    let n1 = train.n();
    let idx_train: Vec<usize> = (0..n1).collect();
    let idx_test: Vec<usize> = (n1..joint.n()).collect();
    Ok(TransductiveFit {
        u_train: u.columns(&idx_train),
        u_test: u.columns(&idx_test),
        state,
        report,
        labeled,
    })
}

/// `f_test = K(U_test, U_train)·K(U_train, U_train)⁻¹·⟨f_train⟩`, decoded by
/// region; a value on a cutpoint belongs to the upper region.
pub fn predict_labels(
    u_test: &LatentFeatures,
    u_train: &LatentFeatures,
    f_train: &DVector<f64>,
    spec: &KernelSpec,
    jitter: f64,
    cutpoints_y: &Cutpoints,
) -> Result<Vec<i64>> {
    Ok(predict_latent(u_test, u_train, f_train, spec, jitter)?
        .iter()
        .map(|&v| cutpoints_y.region(v) as i64)
        .collect())
}

/// The undecoded predictive mean behind [`predict_labels`].
pub fn predict_latent(
    u_test: &LatentFeatures,
    u_train: &LatentFeatures,
    f_train: &DVector<f64>,
    spec: &KernelSpec,
    jitter: f64,
) -> Result<DVector<f64>> {
    if u_train.n() != f_train.len() || u_test.k() != u_train.k() {
        return Err(Error::DimensionMismatch(format!(
            "U_train is {}x{}, U_test is {}x{}, and there are {} training auxiliaries",
            u_train.k(),
            u_train.n(),
            u_test.k(),
            u_test.n(),
            f_train.len()
        )));
    }
    if u_test.n() == 0 {
        return Ok(DVector::zeros(0));
    }
    if u_train.n() == 0 {
        return Ok(DVector::zeros(u_test.n()));
    }
    let km = kernel_matrix(u_train, spec, jitter)?;
    let alpha = km.solve(&DMatrix::from_column_slice(f_train.len(), 1, f_train.as_slice()));
    let cross = kernel_cross(u_test, u_train, spec)?;
    Ok((cross * alpha).column(0).into_owned())
}
