//! Dense linear-algebra and special-function primitives shared by the filters.
//!
//! Everything here is a pure function of its inputs. Covariance matrices are
//! pre-symmetrized before factorization, and [`cholesky`] retries once with a
//! trace-scaled jitter so long Monte Carlo campaigns survive marginal
//! conditioning without masking genuine divergence.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative symmetry tolerance accepted by [`SymMatrix::new`].
const SYMMETRY_TOL: f64 = 1e-12;

/// Scale of the single jitter retry in [`cholesky`]: `1e-9 * trace / dim`.
const JITTER_SCALE: f64 = 1e-9;

/// A square matrix kept exactly symmetric.
///
/// Construction symmetrizes as `(a + aᵀ)/2`; floating-point drift in
/// covariance recursions otherwise breaks Cholesky factorizations.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix {
    m: DMatrix<f64>,
}

impl SymMatrix {
    /// Validates that `m` is square and symmetric within `1e-12` relative,
    /// then stores the symmetrized matrix.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::domain("matrix must be square"));
        }
        let scale = m.norm().max(1.0);
        let asym = (&m - m.transpose()).norm();
        if !asym.is_finite() || asym > SYMMETRY_TOL * scale {
            return Err(Error::domain("matrix is not symmetric"));
        }
        Ok(Self::from_symmetrized(m))
    }

    /// Symmetrizes `m` unconditionally. Intended for matrices that are
    /// symmetric up to floating-point drift by construction.
    pub fn from_symmetrized(m: DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "SymMatrix requires a square matrix");
        let sym = (&m + m.transpose()) * 0.5;
        SymMatrix { m: sym }
    }

    pub fn identity(dim: usize) -> Self {
        SymMatrix {
            m: DMatrix::identity(dim, dim),
        }
    }

    pub fn scaled_identity(dim: usize, scale: f64) -> Self {
        SymMatrix {
            m: DMatrix::identity(dim, dim) * scale,
        }
    }

    pub fn zeros(dim: usize) -> Self {
        SymMatrix {
            m: DMatrix::zeros(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    /// Smallest eigenvalue, used by the PSD checks in the test suites.
    pub fn min_eigenvalue(&self) -> f64 {
        self.m
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }
}

/// A lower-triangular matrix with strictly positive diagonal, as produced by
/// [`cholesky`].
#[derive(Clone, Debug, PartialEq)]
pub struct LowerTriangular {
    l: DMatrix<f64>,
}

impl LowerTriangular {
    /// Validates triangularity (zero above the diagonal) and a positive
    /// diagonal.
    pub fn new(l: DMatrix<f64>) -> Result<Self> {
        if l.nrows() != l.ncols() {
            return Err(Error::domain("factor must be square"));
        }
        for i in 0..l.nrows() {
            if !(l[(i, i)] > 0.0) {
                return Err(Error::domain("factor diagonal must be positive"));
            }
            for j in (i + 1)..l.ncols() {
                if l[(i, j)] != 0.0 {
                    return Err(Error::domain("factor must be lower triangular"));
                }
            }
        }
        Ok(LowerTriangular { l })
    }

    /// Wraps a factor coming straight out of a successful Cholesky
    /// decomposition.
    fn from_factor(l: DMatrix<f64>) -> Self {
        LowerTriangular { l }
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// Solves `L x = b` by forward substitution.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.l
            .solve_lower_triangular(b)
            .expect("positive diagonal guaranteed by construction")
    }

    /// Solves `Lᵀ x = b` by back substitution.
    pub fn solve_transpose(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.l
            .tr_solve_lower_triangular(b)
            .expect("positive diagonal guaranteed by construction")
    }

    /// Dense inverse of the factor.
    pub fn inverse(&self) -> DMatrix<f64> {
        self.solve(&DMatrix::identity(self.dim(), self.dim()))
    }

    /// Reassembles `L·Lᵀ`.
    pub fn reconstruct(&self) -> SymMatrix {
        SymMatrix::from_symmetrized(&self.l * self.l.transpose())
    }
}

/// Cholesky factorization with one jitter retry.
///
/// On a pivot failure, `1e-9·trace(a)/dim · I` is added once; a second
/// failure reports [`Error::NotPositiveDefinite`].
pub fn cholesky(a: &SymMatrix) -> Result<LowerTriangular> {
    let m = a.as_matrix();
    if let Some(c) = m.clone().cholesky() {
        return Ok(LowerTriangular::from_factor(c.l()));
    }
    let dim = m.nrows();
    let jitter = JITTER_SCALE * m.trace() / dim as f64;
    if !(jitter > 0.0) {
        return Err(Error::NotPositiveDefinite);
    }
    let retry = m + DMatrix::identity(dim, dim) * jitter;
    match retry.cholesky() {
        Some(c) => Ok(LowerTriangular::from_factor(c.l())),
        None => Err(Error::NotPositiveDefinite),
    }
}

/// Solves `a·x = b` for symmetric positive definite `a`.
pub fn solve_spd(a: &SymMatrix, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.dim() != b.nrows() {
        return Err(Error::domain("right-hand side has incompatible rows"));
    }
    let l = cholesky(a)?;
    Ok(l.solve_transpose(&l.solve(b)))
}

/// Convenience wrapper of [`solve_spd`] for a single right-hand-side vector.
pub fn solve_spd_vec(a: &SymMatrix, b: &DVector<f64>) -> Result<DVector<f64>> {
    let cols = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
    let x = solve_spd(a, &cols)?;
    Ok(DVector::from_column_slice(x.as_slice()))
}

// Lanczos approximation, g = 7 with 9 coefficients. Relative error is well
// below the 1e-10 contract everywhere on the positive axis.
const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Full-precision float formatting: 17 significant digits, enough to
/// round-trip any f64 exactly. Used by every CSV emitter in the crate.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Gamma function for positive arguments.
pub fn gamma_fn(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::domain("gamma function requires x > 0"));
    }
    Ok(gamma_positive(x))
}

fn gamma_positive(x: f64) -> f64 {
    use std::f64::consts::PI;
    if x < 0.5 {
        // Reflection keeps the Lanczos series in its accurate range.
        PI / ((PI * x).sin() * gamma_positive(1.0 - x))
    } else {
        let x = x - 1.0;
        let mut acc = LANCZOS[0];
        for (i, c) in LANCZOS.iter().enumerate().skip(1) {
            acc += c / (x + i as f64);
        }
        let t = x + LANCZOS_G + 0.5;
        (2.0 * PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * acc
    }
}
