//! Kernel matrices over latent features and the contraction
//! `Σ_ij w_ij ∂K_ij/∂U` used by the latent-feature gradient.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};
use crate::types::{KernelFamily, KernelSpec, LatentFeatures};

/// Maximum number of tenfold jitter escalations before giving up.
pub const MAX_JITTER_ESCALATIONS: usize = 3;

/// A factorized training kernel matrix.
#[derive(Clone)]
pub struct KernelMatrix {
    /// `K + (noise + jitter)·I`.
    pub values: DMatrix<f64>,
    pub spec: KernelSpec,
    pub jitter_applied: f64,
    chol: Cholesky<f64, Dyn>,
}

impl std::fmt::Debug for KernelMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KernelMatrix")
            .field("n", &self.values.nrows())
            .field("spec", &self.spec)
            .field("jitter_applied", &self.jitter_applied)
            .finish()
    }
}

impl KernelMatrix {
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn cholesky(&self) -> &Cholesky<f64, Dyn> {
        &self.chol
    }

    /// `log|K|`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// `K⁻¹`, obtained from the factor.
    pub fn precision(&self) -> DMatrix<f64> {
        let mut p = self.chol.inverse();
        symmetrize(&mut p);
        p
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

#[inline]
fn pair(spec: &KernelSpec, a: nalgebra::DVectorView<'_, f64>, b: nalgebra::DVectorView<'_, f64>) -> f64 {
    match spec.family {
        KernelFamily::Linear => a.dot(&b),
        KernelFamily::Rbf { lengthscale } => {
            let d2: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
            (-d2 / (2.0 * lengthscale * lengthscale)).exp()
        }
        KernelFamily::Polynomial { degree, offset } => (a.dot(&b) + offset).powi(degree as i32),
    }
}

/// Raw kernel values between two sets of columns, without noise or jitter.
pub fn kernel_cross(u1: &LatentFeatures, u2: &LatentFeatures, spec: &KernelSpec) -> Result<DMatrix<f64>> {
    if u1.k() != u2.k() {
        return Err(Error::DimensionMismatch(format!(
            "latent dimensions differ: {} vs {}",
            u1.k(),
            u2.k()
        )));
    }
    let (n1, n2) = (u1.n(), u2.n());
    if matches!(spec.family, KernelFamily::Linear) {
        return Ok(u1.u.transpose() * &u2.u);
    }
    let mut k = DMatrix::zeros(n1, n2);
    for j in 0..n2 {
        let b = u2.u.column(j);
        for i in 0..n1 {
            k[(i, j)] = pair(spec, u1.u.column(i).as_view(), b.as_view());
        }
    }
    Ok(k)
}

fn gram(u: &LatentFeatures, spec: &KernelSpec) -> DMatrix<f64> {
    let n = u.n();
    let mut k = if matches!(spec.family, KernelFamily::Linear) {
        u.u.transpose() * &u.u
    } else {
        let mut k = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in 0..=j {
                let v = pair(spec, u.u.column(i).as_view(), u.u.column(j).as_view());
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    };
    symmetrize(&mut k);
    k
}

/// Builds and factorizes `K(U) + (noise + jitter)·I`, escalating the
/// jitter tenfold up to [`MAX_JITTER_ESCALATIONS`] times.
pub fn kernel_matrix(u: &LatentFeatures, spec: &KernelSpec, jitter: f64) -> Result<KernelMatrix> {
    if u.u.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "U",
            row: 0,
            col: u.u.iter().position(|v| !v.is_finite()).unwrap() / u.k().max(1),
        });
    }
    let base = gram(u, spec);
    let mut j = jitter;
    for attempt in 0..=MAX_JITTER_ESCALATIONS {
        if let Some(km) = factorize(&base, spec, j) {
            return Ok(km);
        }
        if attempt < MAX_JITTER_ESCALATIONS {
            j *= 10.0;
        }
    }
    Err(Error::IllConditionedKernel { jitter: j })
}

/// Like [`kernel_matrix`] but with a fixed jitter and no escalation.
pub fn kernel_matrix_fixed(u: &LatentFeatures, spec: &KernelSpec, jitter: f64) -> Result<KernelMatrix> {
    factorize(&gram(u, spec), spec, jitter).ok_or(Error::IllConditionedKernel { jitter })
}

fn factorize(base: &DMatrix<f64>, spec: &KernelSpec, jitter: f64) -> Option<KernelMatrix> {
    let mut values = base.clone();
    for i in 0..values.nrows() {
        values[(i, i)] += spec.noise + jitter;
    }
    let chol = Cholesky::new(values.clone())?;
    if chol.l_dirty().diagonal().iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
        return None;
    }
    Some(KernelMatrix {
        values,
        spec: *spec,
        jitter_applied: jitter,
        chol,
    })
}

/// `Σ_ij w_ij ∂K_ij/∂U` for symmetric `w`, as a `k × n` matrix.
pub fn kernel_grad_contract(u: &LatentFeatures, spec: &KernelSpec, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = u.n();
    if w.nrows() != n || w.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "weight matrix is {}x{}, expected {n}x{n}",
            w.nrows(),
            w.ncols()
        )));
    }
    Ok(match spec.family {
        KernelFamily::Linear => 2.0 * &u.u * w,
        KernelFamily::Rbf { lengthscale } => {
            // ∂K_ij/∂u_i = −K_ij (u_i − u_j)/ℓ²; both (i,j) and (j,i) contribute.
            let k = gram(u, spec);
            let a = w.component_mul(&k);
            let row_sums = a.column_sum();
            let mut g = &u.u * &a;
            for i in 0..n {
                let s = row_sums[i];
                for r in 0..u.k() {
                    g[(r, i)] -= s * u.u[(r, i)];
                }
            }
            g * (2.0 / (lengthscale * lengthscale))
        }
        KernelFamily::Polynomial { degree, offset } => {
            let dot = u.u.transpose() * &u.u;
            let d = dot.map(|v| degree as f64 * (v + offset).powi(degree as i32 - 1));
            2.0 * &u.u * w.component_mul(&d)
        }
    })
}
