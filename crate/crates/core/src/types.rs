//! Domain types shared across the estimator: data, hyperparameters, kernel
//! choice, latent features, the variational state and the fit report.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::specialmath::TruncInterval;

/// Strictly increasing thresholds `−∞ = b₀ < b₁ < … < b_R = +∞`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cutpoints(Vec<f64>);

impl Cutpoints {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidHyperparameter(
                "cutpoints need at least the two infinite sentinels".into(),
            ));
        }
        if values[0] != f64::NEG_INFINITY || *values.last().unwrap() != f64::INFINITY {
            return Err(Error::InvalidHyperparameter(
                "cutpoints must start at -inf and end at inf".into(),
            ));
        }
        if values.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidHyperparameter(format!(
                "cutpoints must be strictly increasing: {values:?}"
            )));
        }
        Ok(Self(values))
    }

    /// Number of ordinal levels `R`.
    pub fn levels(&self) -> usize {
        self.0.len() - 1
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// The region `[b_r, b_{r+1})` of level `r`.
    pub fn interval(&self, level: usize) -> TruncInterval {
        TruncInterval::new(self.0[level], self.0[level + 1]).expect("validated cutpoints")
    }

    /// Level whose half-open region contains `value`; values on a cutpoint go up.
    pub fn region(&self, value: f64) -> usize {
        // Count interior cutpoints at or below the value.
        self.0[1..self.0.len() - 1]
            .iter()
            .take_while(|&&b| b <= value)
            .count()
    }

    /// `(−∞, −1, 1, +∞)`.
    pub fn three_level() -> Self {
        Self(vec![f64::NEG_INFINITY, -1.0, 1.0, f64::INFINITY])
    }

    /// `(−∞, 0, +∞)`.
    pub fn binary() -> Self {
        Self(vec![f64::NEG_INFINITY, 0.0, f64::INFINITY])
    }
}

impl Default for Cutpoints {
    fn default() -> Self {
        Self::three_level()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelFamily {
    /// `aᵀb`
    Linear,
    /// `exp(−|a−b|² / 2ℓ²)`
    Rbf { lengthscale: f64 },
    /// `(aᵀb + c)^d`
    Polynomial { degree: u32, offset: f64 },
}

/// Covariance function over latent features, plus an optional white-noise
/// variance added on the diagonal of training kernel matrices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub noise: f64,
}

impl KernelSpec {
    pub fn linear() -> Self {
        Self {
            family: KernelFamily::Linear,
            noise: 0.0,
        }
    }

    pub fn rbf(lengthscale: f64) -> Self {
        Self {
            family: KernelFamily::Rbf { lengthscale },
            noise: 0.0,
        }
    }

    pub fn polynomial(degree: u32, offset: f64) -> Self {
        Self {
            family: KernelFamily::Polynomial { degree, offset },
            noise: 0.0,
        }
    }

    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.family {
            KernelFamily::Linear => {}
            KernelFamily::Rbf { lengthscale } => {
                if !(lengthscale > 0.0 && lengthscale.is_finite()) {
                    return Err(Error::InvalidHyperparameter(format!(
                        "rbf lengthscale must be positive, got {lengthscale}"
                    )));
                }
            }
            KernelFamily::Polynomial { degree, offset } => {
                if degree == 0 {
                    return Err(Error::InvalidHyperparameter(
                        "polynomial degree must be a positive integer".into(),
                    ));
                }
                if !(offset > 0.0 && offset.is_finite()) {
                    return Err(Error::InvalidHyperparameter(format!(
                        "polynomial offset must be positive, got {offset}"
                    )));
                }
            }
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidHyperparameter(format!(
                "kernel noise must be non-negative, got {}",
                self.noise
            )));
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self.family {
            KernelFamily::Linear => "linear",
            KernelFamily::Rbf { .. } => "rbf",
            KernelFamily::Polynomial { .. } => "polynomial",
        }
    }
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self::rbf(1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparameters {
    /// Slab variance.
    pub sigma1_sq: f64,
    /// Spike variance.
    pub sigma2_sq: f64,
    pub l1: f64,
    pub l2: f64,
    pub d1: f64,
    pub d2: f64,
    /// Gamma shape and rate for the noise precision.
    pub r1: f64,
    pub r2: f64,
    pub cutpoints_z: Cutpoints,
    pub cutpoints_y: Cutpoints,
    pub kernel: KernelSpec,
    pub k: usize,
    pub jitter: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            sigma1_sq: 1.0,
            sigma2_sq: 1e-6,
            l1: 1.0,
            l2: 1.0,
            d1: 1.0,
            d2: 1.0,
            r1: 1e-3,
            r2: 1e-3,
            cutpoints_z: Cutpoints::three_level(),
            cutpoints_y: Cutpoints::three_level(),
            kernel: KernelSpec::default(),
            k: 5,
            jitter: 1e-6,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sigma1_sq", self.sigma1_sq),
            ("sigma2_sq", self.sigma2_sq),
            ("l1", self.l1),
            ("l2", self.l2),
            ("d1", self.d1),
            ("d2", self.d2),
            ("r1", self.r1),
            ("r2", self.r2),
            ("jitter", self.jitter),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidHyperparameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.sigma1_sq > self.sigma2_sq) {
            return Err(Error::InvalidHyperparameter(format!(
                "slab variance {} must exceed spike variance {}",
                self.sigma1_sq, self.sigma2_sq
            )));
        }
        if self.k == 0 {
            return Err(Error::InvalidHyperparameter("latent dimension k must be positive".into()));
        }
        self.kernel.validate()
    }
}

/// Observed data, one column per subject.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Continuous view, `p × n`.
    pub x: DMatrix<f64>,
    /// Ordinal view, `q × n`.
    pub z: DMatrix<i64>,
    /// Ordinal labels, `None` entries are masked.
    pub y: Option<Vec<Option<i64>>>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, z: DMatrix<i64>, y: Option<Vec<Option<i64>>>) -> Self {
        Self { x, z, y }
    }

    pub fn n(&self) -> usize {
        self.x.ncols()
    }

    pub fn p(&self) -> usize {
        self.x.nrows()
    }

    pub fn q(&self) -> usize {
        self.z.nrows()
    }

    /// Ordinal level at `(row, col)`; only meaningful after validation.
    pub fn z_level(&self, row: usize, col: usize) -> usize {
        self.z[(row, col)] as usize
    }

    /// Columns that carry a label, with their levels.
    pub fn labeled(&self) -> Vec<(usize, usize)> {
        match &self.y {
            None => Vec::new(),
            Some(y) => y
                .iter()
                .enumerate()
                .filter_map(|(i, v)| v.map(|l| (i, l as usize)))
                .collect(),
        }
    }

    /// The subjects at `idx`, in that order.
    pub fn select_columns(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_columns(idx.iter()),
            z: self.z.select_columns(idx.iter()),
            y: self.y.as_ref().map(|y| idx.iter().map(|&i| y[i]).collect()),
        }
    }

    /// The same subjects with every label masked.
    pub fn without_labels(&self) -> Dataset {
        Dataset {
            y: None,
            ..self.clone()
        }
    }

    /// Appends the columns of `other`, keeping `self`'s columns first.
    pub fn concat_columns(&self, other: &Dataset) -> Result<Dataset> {
        if self.p() != other.p() || self.q() != other.q() {
            return Err(Error::DimensionMismatch(format!(
                "feature dimensions differ: train has p={} q={}, test has p={} q={}",
                self.p(),
                self.q(),
                other.p(),
                other.q()
            )));
        }
        let (n1, n2) = (self.n(), other.n());
        let mut x = DMatrix::zeros(self.p(), n1 + n2);
        x.columns_mut(0, n1).copy_from(&self.x);
        x.columns_mut(n1, n2).copy_from(&other.x);
        let mut z = DMatrix::zeros(self.q(), n1 + n2);
        z.columns_mut(0, n1).copy_from(&self.z);
        z.columns_mut(n1, n2).copy_from(&other.z);
        let y = match (&self.y, &other.y) {
            (None, None) => None,
            (a, b) => {
                let mut v = a.clone().unwrap_or_else(|| vec![None; n1]);
                v.extend(b.clone().unwrap_or_else(|| vec![None; n2]));
                Some(v)
            }
        };
        Ok(Dataset { x, z, y })
    }
}

/// Checks every dataset invariant against the hyperparameters' cutpoints.
pub fn validate_dataset(d: Dataset, h: &Hyperparameters) -> Result<Dataset> {
    let n = d.x.ncols();
    if n == 0 {
        return Err(Error::DimensionMismatch("dataset has no subjects".into()));
    }
    if d.z.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "X has {n} columns but Z has {} columns",
            d.z.ncols()
        )));
    }
    if d.x.nrows() == 0 || d.z.nrows() == 0 {
        return Err(Error::DimensionMismatch("X and Z need at least one row each".into()));
    }
    if let Some(y) = &d.y {
        if y.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "X has {n} columns but y has {} entries",
                y.len()
            )));
        }
    }
    for col in 0..n {
        for row in 0..d.x.nrows() {
            if !d.x[(row, col)].is_finite() {
                return Err(Error::NonFinite { what: "X", row, col });
            }
        }
    }
    let rz = h.cutpoints_z.levels();
    for col in 0..n {
        for row in 0..d.z.nrows() {
            let v = d.z[(row, col)];
            if v < 0 || v as usize >= rz {
                return Err(Error::OrdinalOutOfRange {
                    what: "Z",
                    row,
                    col,
                    value: v,
                    max: rz - 1,
                });
            }
        }
    }
    if let Some(y) = &d.y {
        let ry = h.cutpoints_y.levels();
        for (col, v) in y.iter().enumerate() {
            if let Some(v) = *v {
                if v < 0 || v as usize >= ry {
                    return Err(Error::OrdinalOutOfRange {
                        what: "y",
                        row: 0,
                        col,
                        value: v,
                        max: ry - 1,
                    });
                }
            }
        }
    }
    Ok(d)
}

/// Latent features `U`, `k × n`; column `i` belongs to subject `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentFeatures {
    pub u: DMatrix<f64>,
}

impl LatentFeatures {
    pub fn new(u: DMatrix<f64>) -> Self {
        Self { u }
    }

    pub fn k(&self) -> usize {
        self.u.nrows()
    }

    pub fn n(&self) -> usize {
        self.u.ncols()
    }

    pub fn columns(&self, idx: &[usize]) -> LatentFeatures {
        LatentFeatures::new(self.u.select_columns(idx.iter()))
    }
}

/// Parameters of every variational factor.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState {
    /// `λ_i` stacked as rows, `p × k`.
    pub g_mean: DMatrix<f64>,
    /// `Ω_i`, one `k × k` covariance per row of `G`.
    pub g_cov: Vec<DMatrix<f64>>,
    /// Selection probabilities `β`, `p × k`.
    pub beta: DMatrix<f64>,
    pub lg1: DMatrix<f64>,
    pub lg2: DMatrix<f64>,
    /// `γ_i` stacked as rows, `q × k`.
    pub h_mean: DMatrix<f64>,
    /// `Λ_i`.
    pub h_cov: Vec<DMatrix<f64>>,
    /// Selection probabilities `α`, `q × k`.
    pub alpha: DMatrix<f64>,
    pub dh1: DMatrix<f64>,
    pub dh2: DMatrix<f64>,
    /// Location parameters `c̄` of the truncated `Q(c_ij)`, `q × n`.
    pub c_mean_param: DMatrix<f64>,
    /// `⟨c_ij⟩`, `q × n`.
    pub c_expect: DMatrix<f64>,
    pub eta_shape: f64,
    pub eta_rate: f64,
    pub f_bar: DVector<f64>,
    pub f_var: DVector<f64>,
    pub f_expect: DVector<f64>,
    pub f_sq_expect: DVector<f64>,
    /// Diagonal jitter the label kernel is currently factorized with.
    pub kernel_jitter: f64,
}

impl VariationalState {
    /// Symmetric starting point: half-selected loadings with zero mean and
    /// slab covariance, prior noise precision, zero label auxiliaries.
    pub fn initial(n: usize, p: usize, q: usize, h: &Hyperparameters) -> Self {
        let k = h.k;
        let slab = DMatrix::identity(k, k) * h.sigma1_sq;
        Self {
            g_mean: DMatrix::zeros(p, k),
            g_cov: vec![slab.clone(); p],
            beta: DMatrix::from_element(p, k, 0.5),
            lg1: DMatrix::from_element(p, k, 0.5 + h.l1),
            lg2: DMatrix::from_element(p, k, 0.5 + h.l2),
            h_mean: DMatrix::zeros(q, k),
            h_cov: vec![slab; q],
            alpha: DMatrix::from_element(q, k, 0.5),
            dh1: DMatrix::from_element(q, k, 0.5 + h.d1),
            dh2: DMatrix::from_element(q, k, 0.5 + h.d2),
            c_mean_param: DMatrix::zeros(q, n),
            c_expect: DMatrix::zeros(q, n),
            eta_shape: h.r1,
            eta_rate: h.r2,
            f_bar: DVector::zeros(n),
            f_var: DVector::from_element(n, 1.0),
            f_expect: DVector::zeros(n),
            f_sq_expect: DVector::from_element(n, 1.0),
            kernel_jitter: h.jitter,
        }
    }

    pub fn k(&self) -> usize {
        self.g_mean.ncols()
    }

    pub fn eta_mean(&self) -> f64 {
        self.eta_shape / self.eta_rate
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Evidence lower bound after each outer iteration at the final
    /// hyperparameters.
    pub elbo_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Outer iterations spent in the spike-variance continuation before the
    /// trace starts.
    pub warmup_iterations: usize,
    pub selected_k: usize,
    /// M-steps whose line search gave up before meeting the tolerance.
    pub line_search_failures: usize,
    pub wall_time: f64,
}

impl FitReport {
    pub fn final_elbo(&self) -> f64 {
        *self.elbo_trace.last().expect("non-empty trace")
    }

    /// Equality ignoring the wall-clock time.
    pub fn same_outcome(&self, other: &FitReport) -> bool {
        self.elbo_trace.len() == other.elbo_trace.len()
            && self
                .elbo_trace
                .iter()
                .zip(&other.elbo_trace)
                .all(|(a, b)| a.to_bits() == b.to_bits())
            && self.converged == other.converged
            && self.iterations == other.iterations
            && self.warmup_iterations == other.warmup_iterations
            && self.selected_k == other.selected_k
            && self.line_search_failures == other.line_search_failures
    }
}
