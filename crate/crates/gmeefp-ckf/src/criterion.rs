//! The GMEEFP learning criterion: generalized Gaussian kernel, blended
//! information potential, weight matrices, and analytic gradient.
//!
//! The criterion scores a whitened error vector `e` with a λ-blend of a
//! generalized-correntropy term (errors against a fixed zero fiducial point)
//! and a generalized minimum-error-entropy term (all error pairs):
//!
//! ```text
//! J(e) = λ · Σᵢ G_{α₁,β₁}(eᵢ) + (1−λ) · Σᵢ Σⱼ G_{α₂,β₂}(eᵢ−eⱼ)
//! ```
//!
//! with `G_{α,β}(e) = [α/(2βΓ(1/α))]·exp(−|e|^α/β^α)` the generalized
//! Gaussian density. Maximizing `J` anchors errors to zero (the correntropy
//! term) while making them mutually similar (the entropy term). At λ=1 the
//! criterion is generalized maximum correntropy; at λ=0 it is pure GMEE;
//! α₁=α₂=2 recovers the Gaussian-kernel blend.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{gamma_fn, SymMatrix};

/// Floor for `|e|` inside `|e|^{α−2}` when `α < 2`; caps the singular
/// reweighting at coincident errors.
const WEIGHT_EPS: f64 = 1e-12;

/// Which matrix weights the fixed-point normal equations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingForm {
    /// `Ω = λ₁Π + λ₂(ΨᵀΨ + ΦᵀΦ)` — the form the filter recursion is
    /// written in. Positive semidefinite by construction.
    #[default]
    OmegaPaper,
    /// `Λ = λ₁Π + λ₂(Ψ − Φ)` — the matrix appearing in the analytic
    /// derivative of the cost; its fixed points are stationary points of
    /// the criterion. The two forms are not equivalent in general.
    LambdaDerivative,
}

/// Sign convention for the measurement block of the augmented residual
/// covariance used in the whitened regression.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualCovSign {
    /// Schur-complement form `P_yy − P_xyᵀP_xx⁻¹P_xy`, the consistent
    /// covariance of the linearization residual plus measurement noise.
    #[default]
    SchurMinus,
    /// `P_yy + P_xyᵀP_xx⁻¹P_xy`, kept available for comparison.
    PaperPlus,
}

/// Parameters of the GMEEFP criterion and its fixed-point solver.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmeefpParams {
    /// Shape of the fiducial (correntropy) kernel.
    pub alpha1: f64,
    /// Scale of the fiducial kernel.
    pub beta1: f64,
    /// Shape of the entropy kernel.
    pub alpha2: f64,
    /// Scale of the entropy kernel.
    pub beta2: f64,
    /// Equilibrium factor in `[0, 1]`: 1 keeps only the fiducial term,
    /// 0 keeps only the entropy term.
    pub lambda: f64,
    /// Relative-step convergence tolerance of the fixed-point iteration.
    pub tau: f64,
    /// Iteration cap; reaching it flags non-convergence without failing.
    pub max_iter: usize,
    pub weighting_form: WeightingForm,
    pub residual_cov_sign: ResidualCovSign,
}

impl Default for GmeefpParams {
    fn default() -> Self {
        GmeefpParams {
            alpha1: 2.0,
            beta1: 2.0,
            alpha2: 2.2,
            beta2: 6.0,
            lambda: 0.5,
            tau: 1e-6,
            max_iter: 20,
            weighting_form: WeightingForm::default(),
            residual_cov_sign: ResidualCovSign::default(),
        }
    }
}

impl GmeefpParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha1 > 0.0 && self.beta1 > 0.0 && self.alpha2 > 0.0 && self.beta2 > 0.0) {
            return Err(Error::domain("kernel shapes and scales must be positive"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::domain("lambda must lie in [0, 1]"));
        }
        if !(self.tau > 0.0) {
            return Err(Error::domain("tau must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::domain("max_iter must be at least 1"));
        }
        Ok(())
    }

    /// `λ₁ = λ·α₁/β₁^{α₁}` — constant in front of the fiducial weights.
    pub fn lambda1(&self) -> f64 {
        self.lambda * self.alpha1 / self.beta1.powf(self.alpha1)
    }

    /// `λ₂ = (1−λ)·2α₂/β₂^{α₂}` — constant in front of the entropy weights.
    pub fn lambda2(&self) -> f64 {
        (1.0 - self.lambda) * 2.0 * self.alpha2 / self.beta2.powf(self.alpha2)
    }
}

/// Precomputed generalized Gaussian density `G_{α,β}`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct GgdKernel {
    alpha: f64,
    inv_beta_alpha: f64,
    norm: f64,
}

impl GgdKernel {
    pub(crate) fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0) || !(beta > 0.0) {
            return Err(Error::domain("kernel shape and scale must be positive"));
        }
        let norm = alpha / (2.0 * beta * gamma_fn(1.0 / alpha)?);
        Ok(GgdKernel {
            alpha,
            inv_beta_alpha: beta.powf(-alpha),
            norm,
        })
    }

    #[inline]
    pub(crate) fn eval(&self, e: f64) -> f64 {
        self.norm * (-e.abs().powf(self.alpha) * self.inv_beta_alpha).exp()
    }
}

/// Generalized Gaussian density `G_{α,β}(e)`.
pub fn ggd_kernel(e: f64, alpha: f64, beta: f64) -> Result<f64> {
    Ok(GgdKernel::new(alpha, beta)?.eval(e))
}

/// `|e|^{α−2}` with `0⁰ := 1` at α = 2 and the `1e-12` floor guarding the
/// singular exponents below α = 2.
#[inline]
fn weight_exponent(e: f64, alpha: f64) -> f64 {
    let p = alpha - 2.0;
    if p == 0.0 {
        1.0
    } else if p > 0.0 {
        e.abs().powf(p)
    } else {
        e.abs().max(WEIGHT_EPS).powf(p)
    }
}

/// GMEEFP cost of an error vector. The fiducial error `e₀ = 0` is implicit
/// in the first term; the constants `G(0)` and `1/(N+1)²` of the raw
/// information potential are dropped since they do not move the maximizer.
pub fn gmeefp_cost(e: &DVector<f64>, p: &GmeefpParams) -> f64 {
    let k1 = GgdKernel::new(p.alpha1, p.beta1).expect("validated params");
    let k2 = GgdKernel::new(p.alpha2, p.beta2).expect("validated params");
    let fiducial: f64 = e.iter().map(|&ei| k1.eval(ei)).sum();
    let mut entropy = 0.0;
    for &ei in e.iter() {
        for &ej in e.iter() {
            entropy += k2.eval(ei - ej);
        }
    }
    p.lambda * fiducial + (1.0 - p.lambda) * entropy
}

/// The weight matrices of the criterion derivative, evaluated at `e`:
/// diagonal `Π` (fiducial), diagonal `Ψ` and full `Φ` (entropy pairs), plus
/// the constants `λ₁`, `λ₂`.
#[derive(Clone, Debug)]
pub struct WeightMatrices {
    /// Diagonal of `Π`: `G_{α₁,β₁}(eᵢ)·|eᵢ|^{α₁−2}`.
    pub pi: DVector<f64>,
    /// Diagonal of `Ψ`: `Σⱼ G_{α₂,β₂}(eᵢ−eⱼ)·|eᵢ−eⱼ|^{α₂−2}`.
    pub psi: DVector<f64>,
    /// Full matrix `Φ`: `[Φ]ᵢⱼ = G_{α₂,β₂}(eⱼ−eᵢ)·|eⱼ−eᵢ|^{α₂−2}`.
    pub phi: DMatrix<f64>,
    pub lambda1: f64,
    pub lambda2: f64,
}

/// Populates [`WeightMatrices`] for an error vector.
pub fn weight_matrices(e: &DVector<f64>, p: &GmeefpParams) -> WeightMatrices {
    let k1 = GgdKernel::new(p.alpha1, p.beta1).expect("validated params");
    let k2 = GgdKernel::new(p.alpha2, p.beta2).expect("validated params");
    let n = e.len();

    let pi = DVector::from_fn(n, |i, _| k1.eval(e[i]) * weight_exponent(e[i], p.alpha1));

    // Φ is symmetric because both the kernel and |·| are even.
    let mut phi = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let u = e[i] - e[j];
            let v = k2.eval(u) * weight_exponent(u, p.alpha2);
            phi[(i, j)] = v;
            phi[(j, i)] = v;
        }
    }
    let psi = DVector::from_fn(n, |i, _| phi.row(i).sum());

    WeightMatrices {
        pi,
        psi,
        phi,
        lambda1: p.lambda1(),
        lambda2: p.lambda2(),
    }
}

/// `Λ = λ₁Π + λ₂(Ψ − Φ)`. Symmetric; `Ψ − Φ` is a weighted graph Laplacian,
/// so `Λ` is also positive semidefinite.
pub fn lambda_matrix(w: &WeightMatrices) -> SymMatrix {
    let n = w.pi.len();
    let mut m = &w.phi * (-w.lambda2);
    for i in 0..n {
        m[(i, i)] += w.lambda1 * w.pi[i] + w.lambda2 * w.psi[i];
    }
    SymMatrix::from_symmetrized(m)
}

/// `Ω = λ₁Π + λ₂(ΨᵀΨ + ΦᵀΦ)`. Symmetric positive semidefinite: a
/// nonnegative diagonal plus two Gram matrices.
pub fn omega_matrix(w: &WeightMatrices) -> SymMatrix {
    let n = w.pi.len();
    let mut m = w.phi.transpose() * &w.phi * w.lambda2;
    for i in 0..n {
        m[(i, i)] += w.lambda1 * w.pi[i] + w.lambda2 * w.psi[i] * w.psi[i];
    }
    SymMatrix::from_symmetrized(m)
}

/// Analytic gradient of the cost of the linear residual model
/// `e = d − W·x` with respect to `x`: `WᵀΛd − WᵀΛWx`.
pub fn cost_gradient(
    d: &DVector<f64>,
    w: &DMatrix<f64>,
    x: &DVector<f64>,
    p: &GmeefpParams,
) -> DVector<f64> {
    let e = d - w * x;
    let wm = weight_matrices(&e, p);
    let lambda = lambda_matrix(&wm);
    w.transpose() * (lambda.as_matrix() * e)
}
