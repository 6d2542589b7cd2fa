//! Third-degree cubature Kalman filter: cubature-point generation, time
//! update, measurement-moment computation, and the classical update.
//!
//! The rule places `2n` equally weighted points at `±√n` along the columns of
//! the covariance square root. It has no tuning parameters and is exact for
//! linear and quadratic integrands, which is what the linear-oracle tests
//! lean on.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics::{cholesky, solve_spd, SymMatrix};
use crate::state_space::StateSpaceModel;

/// A Gaussian state belief `(x̂, P)` carried through predict/update.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: SymMatrix,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: SymMatrix) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::domain("mean and covariance dimensions differ"));
        }
        Ok(GaussianBelief { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// The `2n` cubature points of a belief, each carrying weight `1/(2n)`.
#[derive(Clone, Debug)]
pub struct CubatureSet {
    pub points: Vec<DVector<f64>>,
    pub weight: f64,
}

/// Predicted measurement moments: `ŷ`, `P_yy` (including `R`), and the
/// state-measurement cross covariance `P_xy`.
#[derive(Clone, Debug)]
pub struct MeasurementMoments {
    pub y_pred: DVector<f64>,
    pub pyy: SymMatrix,
    pub pxy: DMatrix<f64>,
    /// Copied from the model so downstream updates can wrap angular
    /// residuals without carrying the model around.
    pub angle_wrapped: Vec<bool>,
}

impl MeasurementMoments {
    /// `y - ŷ` with angular components wrapped.
    pub fn residual(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut diff = y - &self.y_pred;
        for (i, wrap) in self.angle_wrapped.iter().enumerate() {
            if *wrap {
                diff[i] = crate::state_space::wrap_angle(diff[i]);
            }
        }
        diff
    }
}

/// Generates the cubature points `ξ_i = S·(±√n e_i) + x̂` with `S` the lower
/// Cholesky factor of the covariance. Points come in index order, the `+√n`
/// block first.
pub fn cubature_points(belief: &GaussianBelief) -> Result<CubatureSet> {
    let n = belief.dim();
    let s = cholesky(&belief.cov)?;
    let scale = (n as f64).sqrt();
    let mut points = Vec::with_capacity(2 * n);
    for sign in [1.0, -1.0] {
        for i in 0..n {
            let offset = s.as_matrix().column(i) * (sign * scale);
            points.push(&belief.mean + offset);
        }
    }
    Ok(CubatureSet {
        points,
        weight: 1.0 / (2 * n) as f64,
    })
}

/// Time update: propagates the cubature points through `f` and fuses them
/// back into mean and covariance, adding the process noise `Q`.
pub fn predict(belief: &GaussianBelief, model: &StateSpaceModel) -> Result<GaussianBelief> {
    let set = cubature_points(belief)?;
    let propagated: Vec<DVector<f64>> =
        set.points.iter().map(|p| model.propagate(p)).collect();

    let n = belief.dim();
    let mut mean = DVector::zeros(n);
    for p in &propagated {
        mean += p;
    }
    mean *= set.weight;

    let mut cov = DMatrix::zeros(n, n);
    for p in &propagated {
        let d = p - &mean;
        cov += &d * d.transpose();
    }
    cov *= set.weight;
    cov += model.process_cov().as_matrix();

    GaussianBelief::new(mean, SymMatrix::from_symmetrized(cov))
}

/// Measurement moments from fresh cubature points of the predicted belief:
/// `ŷ`, `P_yy = (1/2n)Σ γ̂γ̂ᵀ + R`, `P_xy = (1/2n)Σ X̂γ̂ᵀ`.
pub fn measurement_moments(
    predicted: &GaussianBelief,
    model: &StateSpaceModel,
) -> Result<MeasurementMoments> {
    let set = cubature_points(predicted)?;
    let mut projected = Vec::with_capacity(set.points.len());
    for p in &set.points {
        projected.push(model.measure(p)?);
    }

    let m = model.measurement_dim();
    let n = predicted.dim();
    let mut y_pred = DVector::zeros(m);
    for g in &projected {
        y_pred += g;
    }
    y_pred *= set.weight;

    let mut pyy = DMatrix::zeros(m, m);
    let mut pxy = DMatrix::zeros(n, m);
    for (p, g) in set.points.iter().zip(&projected) {
        let mut dy = g - &y_pred;
        for (i, wrap) in model.angle_wrapped().iter().enumerate() {
            if *wrap {
                dy[i] = crate::state_space::wrap_angle(dy[i]);
            }
        }
        let dx = p - &predicted.mean;
        pyy += &dy * dy.transpose();
        pxy += dx * dy.transpose();
    }
    pyy *= set.weight;
    pyy += model.measurement_cov().as_matrix();
    pxy *= set.weight;

    Ok(MeasurementMoments {
        y_pred,
        pyy: SymMatrix::from_symmetrized(pyy),
        pxy,
        angle_wrapped: model.angle_wrapped().to_vec(),
    })
}

/// Classical update: `K = P_xy·P_yy⁻¹`, `x̂ += K·(y − ŷ)`,
/// `P = P⁻ − K·P_yy·Kᵀ`, with the angular residual components wrapped.
pub fn ckf_update(
    predicted: &GaussianBelief,
    moments: &MeasurementMoments,
    y: &DVector<f64>,
) -> Result<GaussianBelief> {
    let gain = kalman_gain(moments)?;
    let innovation = moments.residual(y);
    let mean = &predicted.mean + &gain * innovation;
    let cov = predicted.cov.as_matrix() - &gain * moments.pyy.as_matrix() * gain.transpose();
    GaussianBelief::new(mean, SymMatrix::from_symmetrized(cov))
}

/// `K = P_xy·P_yy⁻¹`, computed through the SPD solver rather than an
/// explicit inverse.
pub fn kalman_gain(moments: &MeasurementMoments) -> Result<DMatrix<f64>> {
    // K = Pxy·Pyy⁻¹  ⇔  Pyy·Kᵀ = Pxyᵀ.
    let kt = solve_spd(&moments.pyy, &moments.pxy.transpose())?;
    Ok(kt.transpose())
}
