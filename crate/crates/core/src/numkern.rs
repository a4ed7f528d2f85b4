//! Dense numerical kernels: Hermitian and generalized eigendecomposition,
//! per-BS water-filling and orthogonal-complement projectors.
//!
//! Problem sizes are small (tens of antennas), so everything is dense and
//! built on `nalgebra`.

use std::ops::Deref;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::{CMat, Error, Result, C64};

/// Relative tolerance on `||M - M^H||_max` accepted by [`HermitianMatrix::new`].
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Relative tolerance of the water-filling bisection on the power budget.
pub const BISECTION_REL_TOL: f64 = 1e-9;

/// Iteration cap of the water-filling bisection.
pub const BISECTION_MAX_ITER: usize = 200;

/// Streams with `sigma1` below this fraction of the largest `sigma1` are
/// treated as null directions.
pub const NULL_GAIN_REL: f64 = 1e-14;

/// Hermitian complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix(CMat);

impl HermitianMatrix {
    /// Validates squareness, finiteness and Hermitian symmetry.
    pub fn new(m: CMat) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::Validation(format!(
                "Hermitian matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Validation("matrix has non-finite entries".into()));
        }
        let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
        let n = m.nrows();
        for i in 0..n {
            for j in i..n {
                if (m[(i, j)] - m[(j, i)].conj()).norm() > HERMITIAN_TOL * scale {
                    return Err(Error::Validation(format!(
                        "matrix is not Hermitian at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self::hermitize(m))
    }

    /// Replaces `m` by `(m + m^H) / 2` without any check. For matrices that are
    /// Hermitian by construction up to rounding.
    pub fn hermitize(m: CMat) -> Self {
        let h = (&m + m.adjoint()) * C64::new(0.5, 0.0);
        HermitianMatrix(h)
    }

    pub fn identity(n: usize) -> Self {
        HermitianMatrix(CMat::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        HermitianMatrix(CMat::zeros(n, n))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &CMat {
        &self.0
    }

    pub fn into_inner(self) -> CMat {
        self.0
    }

    /// Real trace.
    pub fn trace_re(&self) -> f64 {
        (0..self.dim()).map(|i| self.0[(i, i)].re).sum()
    }
}

impl Deref for HermitianMatrix {
    type Target = CMat;

    fn deref(&self) -> &CMat {
        &self.0
    }
}

/// Eigenvalues sorted in descending order with matching unit-norm eigenvector columns.
#[derive(Debug, Clone)]
pub struct EigenPairs {
    pub values: DVector<f64>,
    pub vectors: CMat,
}

/// Full eigendecomposition of a Hermitian matrix, values descending.
pub fn hermitian_eig(m: &HermitianMatrix) -> EigenPairs {
    let n = m.dim();
    if n == 0 {
        return EigenPairs {
            values: DVector::zeros(0),
            vectors: CMat::zeros(0, 0),
        };
    }
    let eig = SymmetricEigen::new(m.as_matrix().clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    EigenPairs { values, vectors }
}

fn cholesky(a: &CMat) -> Option<Cholesky<C64, Dyn>> {
    let chol = Cholesky::new(a.clone())?;
    let l = chol.l_dirty();
    let ok = (0..a.nrows()).all(|i| {
        // complex sqrt of a negative pivot lands on the imaginary axis
        let d = l[(i, i)];
        d.re.is_finite() && d.re > 0.0 && d.im.abs() <= 1e-8 * d.re
    });
    ok.then_some(chol)
}

/// Top-`d` eigenpairs of the pencil `(b, a)`, i.e. `b v = mu a v`, with `a`
/// positive definite.
///
/// Reduced to an ordinary Hermitian problem through the Cholesky factor
/// `a = L L^H`: the eigenvectors `y` of `L^-1 b L^-H` map back as `v = L^-H y`.
/// Returned vectors have unit Euclidean norm.
pub fn generalized_eig_top(b: &HermitianMatrix, a: &HermitianMatrix, d: usize) -> Result<EigenPairs> {
    let n = a.dim();
    if b.dim() != n {
        return Err(Error::dims("generalized_eig_top", n, b.dim()));
    }
    if d == 0 || d > n {
        return Err(Error::Validation(format!(
            "requested {d} generalized eigenpairs of a {n}x{n} pencil"
        )));
    }
    let chol = cholesky(a.as_matrix())
        .ok_or_else(|| Error::SingularPencil("right-hand matrix is not positive definite".into()))?;
    let l = chol.l();
    let x = l
        .solve_lower_triangular(b.as_matrix())
        .ok_or_else(|| Error::SingularPencil("triangular solve failed".into()))?;
    let c = l
        .solve_lower_triangular(&x.adjoint())
        .ok_or_else(|| Error::SingularPencil("triangular solve failed".into()))?;
    let full = hermitian_eig(&HermitianMatrix::hermitize(c));
    let lh = l.adjoint();
    let y = full.vectors.columns(0, d).into_owned();
    let mut v = lh
        .solve_upper_triangular(&y)
        .ok_or_else(|| Error::SingularPencil("triangular solve failed".into()))?;
    for mut col in v.column_iter_mut() {
        let nrm = col.norm();
        if nrm > 0.0 {
            col /= C64::new(nrm, 0.0);
        }
    }
    Ok(EigenPairs {
        values: full.values.rows(0, d).into_owned(),
        vectors: v,
    })
}

/// One stream entering the per-BS water-filling: rate weight `u`, useful
/// gain `sigma1` and interference leakage `sigma2` of a unit-norm direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stream {
    pub u: f64,
    pub sigma1: f64,
    pub sigma2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaterfillResult {
    pub powers: Vec<f64>,
    pub lambda: f64,
}

impl WaterfillResult {
    pub fn total(&self) -> f64 {
        self.powers.iter().sum()
    }
}

fn active_mask(streams: &[Stream]) -> Vec<bool> {
    let smax = streams.iter().map(|s| s.sigma1).fold(0.0, f64::max);
    streams
        .iter()
        .map(|s| smax > 0.0 && s.sigma1 > NULL_GAIN_REL * smax)
        .collect()
}

fn leakage_aware_powers(streams: &[Stream], active: &[bool], lambda: f64) -> Vec<f64> {
    streams
        .iter()
        .zip(active)
        .map(|(s, &on)| {
            if on {
                (s.u / (s.sigma2 + lambda) - 1.0 / s.sigma1).max(0.0)
            } else {
                0.0
            }
        })
        .collect()
}

/// Interference-leakage-aware water-filling over all streams of one BS.
///
/// `power_j = (u_j / (sigma2_j + lambda) - 1 / sigma1_j)^+` with `lambda >= 0`
/// set by bisection so the powers sum to `budget`, or `lambda = 0` when the
/// unconstrained allocation already fits.
pub fn waterfill_bs(streams: &[Stream], budget: f64) -> Result<WaterfillResult> {
    if streams.is_empty() {
        return Err(Error::Validation("water-filling needs at least one stream".into()));
    }
    if !(budget > 0.0 && budget.is_finite()) {
        return Err(Error::Validation(format!("power budget must be positive, got {budget}")));
    }
    for s in streams {
        if !(s.u > 0.0 && s.sigma1 >= 0.0 && s.sigma2 >= 0.0)
            || !(s.u.is_finite() && s.sigma1.is_finite() && s.sigma2.is_finite())
        {
            return Err(Error::Validation(format!("invalid stream {s:?}")));
        }
    }
    let active = active_mask(streams);
    if !active.iter().any(|&a| a) {
        return Ok(WaterfillResult {
            powers: vec![0.0; streams.len()],
            lambda: 0.0,
        });
    }
    let total = |lambda: f64| leakage_aware_powers(streams, &active, lambda).iter().sum::<f64>();

    let unbounded_at_zero = streams.iter().zip(&active).any(|(s, &on)| on && s.sigma2 == 0.0);
    if !unbounded_at_zero && total(0.0) <= budget {
        return Ok(WaterfillResult {
            powers: leakage_aware_powers(streams, &active, 0.0),
            lambda: 0.0,
        });
    }

    let mut lo = 0.0;
    let mut hi = 1.0;
    while total(hi) >= budget {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Numeric("water-filling bracket overflow".into()));
        }
    }
    for _ in 0..BISECTION_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        let t = total(mid);
        if (t - budget).abs() <= BISECTION_REL_TOL * budget {
            return Ok(WaterfillResult {
                powers: leakage_aware_powers(streams, &active, mid),
                lambda: mid,
            });
        }
        if t > budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::NoConvergence {
        what: "water-filling bisection",
        iterations: BISECTION_MAX_ITER,
    })
}

/// Projector onto the orthogonal complement of the column space of `m`.
///
/// Uses `I - U_r U_r^H` from the SVD of `m`; singular values at or below
/// `max(rows, cols) * eps * sigma_max` are treated as zero, which is the
/// pseudoinverse convention for rank-deficient `m`. An `m` with no columns
/// yields the identity.
pub fn proj_orth_complement(m: &CMat) -> HermitianMatrix {
    let n = m.nrows();
    if m.ncols() == 0 || n == 0 {
        return HermitianMatrix::identity(n);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = (n.max(m.ncols()) as f64) * f64::EPSILON * smax;
    let mut p = CMat::identity(n, n);
    for (j, &s) in svd.singular_values.iter().enumerate() {
        if s > tol {
            let col = u.column(j);
            p -= col * col.adjoint();
        }
    }
    HermitianMatrix::hermitize(p)
}

/// `ln det` of a Hermitian positive definite matrix via Cholesky.
pub fn logdet_hpd(m: &CMat) -> Result<f64> {
    let chol = cholesky(m).ok_or_else(|| Error::Numeric("ln det of a non positive definite matrix".into()))?;
    let l = chol.l_dirty();
    Ok((0..m.nrows()).map(|i| 2.0 * l[(i, i)].re.ln()).sum())
}

/// Inverse of a Hermitian positive definite matrix via Cholesky.
pub fn inv_hpd(m: &CMat) -> Result<CMat> {
    let chol = cholesky(m).ok_or_else(|| Error::Numeric("inverse of a non positive definite matrix".into()))?;
    let inv = chol.inverse();
    Ok((&inv + inv.adjoint()) * C64::new(0.5, 0.0))
}

/// Solves `m x = rhs` for Hermitian positive definite `m`.
pub fn solve_hpd(m: &CMat, rhs: &CMat) -> Result<CMat> {
    let chol = cholesky(m).ok_or_else(|| Error::Numeric("solve with a non positive definite matrix".into()))?;
    Ok(chol.solve(rhs))
}

/// `m^{-1/2}` of a Hermitian positive definite matrix through its eigendecomposition.
pub fn inv_sqrt_hpd(m: &HermitianMatrix) -> Result<CMat> {
    let eig = hermitian_eig(m);
    let n = m.dim();
    let vmax = eig.values.iter().cloned().fold(0.0, f64::max);
    if n > 0 && eig.values[n - 1] <= 1e-12 * vmax.max(f64::MIN_POSITIVE) {
        return Err(Error::Numeric("inverse square root of a singular matrix".into()));
    }
    let scale = DMatrix::from_diagonal(&eig.values.map(|v| C64::new(1.0 / v.sqrt(), 0.0)));
    Ok(&eig.vectors * scale * eig.vectors.adjoint())
}

/// Diagonal part of a square matrix, as a real vector.
pub fn diag_re(m: &CMat) -> DVector<f64> {
    DVector::from_iterator(m.nrows(), (0..m.nrows()).map(|i| m[(i, i)].re))
}

/// Builds a complex diagonal matrix from real entries.
pub fn diag_matrix(d: &[f64]) -> CMat {
    let mut m = CMat::zeros(d.len(), d.len());
    for (i, &x) in d.iter().enumerate() {
        m[(i, i)] = C64::new(x, 0.0);
    }
    m
}

/// Spectral norm of a Hermitian matrix (largest absolute eigenvalue).
pub fn hermitian_norm(m: &HermitianMatrix) -> f64 {
    hermitian_eig(m).values.iter().map(|v| v.abs()).fold(0.0, f64::max)
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    pub fn randn_c<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> CMat {
        CMat::from_fn(rows, cols, |_, _| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
        })
    }

    pub fn rand_hermitian<R: Rng>(rng: &mut R, n: usize) -> HermitianMatrix {
        HermitianMatrix::hermitize(randn_c(rng, n, n))
    }

    pub fn rand_psd<R: Rng>(rng: &mut R, n: usize, rank: usize) -> HermitianMatrix {
        let x = randn_c(rng, n, rank);
        HermitianMatrix::hermitize(&x * x.adjoint())
    }

    pub fn rand_pd<R: Rng>(rng: &mut R, n: usize) -> HermitianMatrix {
        let x = randn_c(rng, n, n);
        HermitianMatrix::hermitize(&x * x.adjoint() + CMat::identity(n, n) * C64::new(0.5, 0.0))
    }
}
