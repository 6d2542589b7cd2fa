//! State-space models, the constant-velocity tracking scenario with a
//! range-bearing sensor, and noise generators including the mixed-Gaussian
//! impulsive model.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::SymMatrix;

type DynamicsFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type MeasurementFn = Arc<dyn Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync>;

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut r = a % two_pi;
    if r <= -PI {
        r += two_pi;
    } else if r > PI {
        r -= two_pi;
    }
    r
}

/// A discrete-time nonlinear model `x_k = f(x_{k-1}) + q`, `y_k = h(x_k) + r`.
///
/// `q` and `r` are the covariances the *filter* assumes; the simulator may
/// draw noise from a different distribution (the whole point of the impulsive
/// benchmark).
#[derive(Clone)]
pub struct StateSpaceModel {
    n: usize,
    m: usize,
    f: DynamicsFn,
    h: MeasurementFn,
    q: SymMatrix,
    r: SymMatrix,
    /// Measurement components that live on the circle; residuals against
    /// these components are wrapped to `(-π, π]` inside the filters.
    angle_wrapped: Vec<bool>,
}

impl fmt::Debug for StateSpaceModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StateSpaceModel")
            .field("n", &self.n)
            .field("m", &self.m)
            .field("angle_wrapped", &self.angle_wrapped)
            .finish()
    }
}

impl StateSpaceModel {
    pub fn new(
        n: usize,
        m: usize,
        f: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        h: impl Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync + 'static,
        q: SymMatrix,
        r: SymMatrix,
    ) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::domain("state and measurement dimensions must be positive"));
        }
        if q.dim() != n || r.dim() != m {
            return Err(Error::domain("noise covariance dimensions do not match the model"));
        }
        Ok(StateSpaceModel {
            n,
            m,
            f: Arc::new(f),
            h: Arc::new(h),
            q,
            r,
            angle_wrapped: vec![false; m],
        })
    }

    pub fn with_angle_wrapped(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.m {
            return Err(Error::domain("angle mask length must equal the measurement dimension"));
        }
        self.angle_wrapped = mask;
        Ok(self)
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn measurement_dim(&self) -> usize {
        self.m
    }

    pub fn process_cov(&self) -> &SymMatrix {
        &self.q
    }

    pub fn measurement_cov(&self) -> &SymMatrix {
        &self.r
    }

    pub fn angle_wrapped(&self) -> &[bool] {
        &self.angle_wrapped
    }

    pub fn propagate(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.f)(x)
    }

    pub fn measure(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        (self.h)(x)
    }

    /// `y - y_pred` with angular components wrapped to `(-π, π]`.
    pub fn residual(&self, y: &DVector<f64>, y_pred: &DVector<f64>) -> DVector<f64> {
        let mut diff = y - y_pred;
        for (i, wrap) in self.angle_wrapped.iter().enumerate() {
            if *wrap {
                diff[i] = wrap_angle(diff[i]);
            }
        }
        diff
    }
}

/// Range and bearing of a planar target whose position occupies the first two
/// state components. Uses the four-quadrant arctangent; the bearing is
/// undefined at the origin.
pub fn range_bearing(x: &DVector<f64>) -> Result<DVector<f64>> {
    if x.len() < 2 {
        return Err(Error::domain("range_bearing needs at least two state components"));
    }
    let (p1, p2) = (x[0], x[1]);
    if p1 == 0.0 && p2 == 0.0 {
        return Err(Error::domain("bearing is undefined at the origin"));
    }
    let range = p1.hypot(p2);
    let bearing = wrap_angle(p2.atan2(p1));
    Ok(DVector::from_vec(vec![range, bearing]))
}

/// Constant-velocity planar tracking model: state `[p1, p2, v1, v2]`,
/// measurements `[range, bearing]`, `Q = q_var·I₄`, `R = r_nominal·I₂`.
pub fn make_cv_model(dt: f64, q_var: f64, r_nominal: f64) -> Result<StateSpaceModel> {
    if !(dt > 0.0) {
        return Err(Error::domain("dt must be positive"));
    }
    if !(q_var > 0.0) || !(r_nominal > 0.0) {
        return Err(Error::domain("noise variances must be positive"));
    }
    let f = move |x: &DVector<f64>| {
        DVector::from_vec(vec![x[0] + dt * x[2], x[1] + dt * x[3], x[2], x[3]])
    };
    StateSpaceModel::new(
        4,
        2,
        f,
        range_bearing,
        SymMatrix::scaled_identity(4, q_var),
        SymMatrix::scaled_identity(2, r_nominal),
    )?
    .with_angle_wrapped(vec![false, true])
}

/// One additive-noise component: a zero-mean Gaussian of the given variance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseComponent {
    pub weight: f64,
    pub variance: f64,
}

/// Per-coordinate noise distribution: a finite Gaussian mixture applied
/// independently to every coordinate. A single component is plain Gaussian
/// noise; two components with a rare large-variance part model impulsive
/// disturbances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub dim: usize,
    pub components: Vec<NoiseComponent>,
}

impl NoiseSpec {
    pub fn gaussian(dim: usize, variance: f64) -> Result<Self> {
        let spec = NoiseSpec {
            dim,
            components: vec![NoiseComponent {
                weight: 1.0,
                variance,
            }],
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn mixture(dim: usize, components: &[(f64, f64)]) -> Result<Self> {
        let spec = NoiseSpec {
            dim,
            components: components
                .iter()
                .map(|&(weight, variance)| NoiseComponent { weight, variance })
                .collect(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn is_gaussian(&self) -> bool {
        self.components.len() == 1
    }

    /// Variance of one coordinate by the law of total variance.
    pub fn total_variance(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c.weight * c.variance)
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::domain("noise dimension must be positive"));
        }
        if self.components.is_empty() {
            return Err(Error::domain("noise spec needs at least one component"));
        }
        let mut total = 0.0;
        for c in &self.components {
            if !(c.weight >= 0.0) || !c.weight.is_finite() {
                return Err(Error::domain("noise weights must be nonnegative"));
            }
            if !(c.variance >= 0.0) || !c.variance.is_finite() {
                return Err(Error::domain("noise variances must be nonnegative"));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::domain("noise weights must sum to 1"));
        }
        Ok(())
    }
}

/// Draws one noise vector: each coordinate picks a mixture component by
/// weight, then samples a zero-mean Gaussian of that component's variance.
pub fn sample_noise<R: Rng + ?Sized>(spec: &NoiseSpec, rng: &mut R) -> DVector<f64> {
    let mut out = DVector::zeros(spec.dim);
    for i in 0..spec.dim {
        let sd = if spec.components.len() == 1 {
            spec.components[0].variance.sqrt()
        } else {
            let u: f64 = rng.random();
            let mut cum = 0.0;
            let mut chosen = spec.components.len() - 1;
            for (j, c) in spec.components.iter().enumerate() {
                cum += c.weight;
                if u < cum {
                    chosen = j;
                    break;
                }
            }
            spec.components[chosen].variance.sqrt()
        };
        let z: f64 = StandardNormal.sample(rng);
        out[i] = sd * z;
    }
    out
}

/// A simulated ground-truth trajectory with its measurements, reproducible
/// bit-exactly from the generating seed.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// True states `x_k` for `k = 1..=steps`.
    pub states: Vec<DVector<f64>>,
    /// Measurements `y_k` for `k = 1..=steps`.
    pub measurements: Vec<DVector<f64>>,
    pub seed: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// CSV export: header `k,x1,..,xn,y1,..,ym`, one row per step, full double
    /// precision (17 significant digits).
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.states.first().map_or(0, |s| s.len());
        let m = self.measurements.first().map_or(0, |s| s.len());
        let mut header = String::from("k");
        for i in 1..=n {
            header.push_str(&format!(",x{i}"));
        }
        for i in 1..=m {
            header.push_str(&format!(",y{i}"));
        }
        writeln!(w, "{header}")?;
        for (k, (x, y)) in self.states.iter().zip(&self.measurements).enumerate() {
            let mut row = format!("{}", k + 1);
            for v in x.iter().chain(y.iter()) {
                row.push(',');
                row.push_str(&crate::numerics::fmt_f64(*v));
            }
            writeln!(w, "{row}")?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("CSV output is ASCII")
    }
}

/// Simulates `x_k = f(x_{k-1}) + q_{k-1}`, `y_k = h(x_k) + r_k` for
/// `steps` steps. Deterministic given the seed.
pub fn simulate(
    model: &StateSpaceModel,
    process: &NoiseSpec,
    measurement: &NoiseSpec,
    x0: &DVector<f64>,
    steps: usize,
    seed: u64,
) -> Result<Trajectory> {
    if steps == 0 {
        return Err(Error::domain("steps must be at least 1"));
    }
    if x0.len() != model.state_dim() {
        return Err(Error::domain("x0 dimension does not match the model"));
    }
    if process.dim != model.state_dim() || measurement.dim != model.measurement_dim() {
        return Err(Error::domain("noise spec dimensions do not match the model"));
    }
    process.validate()?;
    measurement.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = Vec::with_capacity(steps);
    let mut measurements = Vec::with_capacity(steps);
    let mut x = x0.clone();
    for _ in 0..steps {
        x = model.propagate(&x) + sample_noise(process, &mut rng);
        let y = model.measure(&x)? + sample_noise(measurement, &mut rng);
        states.push(x.clone());
        measurements.push(y);
    }
    Ok(Trajectory {
        states,
        measurements,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cv_model_propagates_hand_computed_state() {
        let model = make_cv_model(0.5, 0.1, 1.0).unwrap();
        let x = DVector::from_vec(vec![1.0, 1.0, 10.0, 20.0]);
        let fx = model.propagate(&x);
        assert_eq!(fx.as_slice(), &[6.0, 11.0, 10.0, 20.0]);
        assert_eq!(model.state_dim(), 4);
        assert_eq!(model.measurement_dim(), 2);
    }

    #[test]
    fn cv_model_rejects_degenerate_inputs() {
        assert!(matches!(make_cv_model(0.0, 0.1, 1.0), Err(Error::Domain(_))));
        assert!(matches!(make_cv_model(0.5, 0.0, 1.0), Err(Error::Domain(_))));
        assert!(matches!(make_cv_model(0.5, 0.1, -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn cv_model_process_covariance_is_scaled_identity() {
        let model = make_cv_model(0.5, 0.1, 1.0).unwrap();
        let q = model.process_cov().as_matrix();
        for i in 0..4 {
            for j in 0..4 {
                let expected = if i == j { 0.1 } else { 0.0 };
                assert!((q[(i, j)] - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn range_bearing_three_four_five() {
        let y = range_bearing(&DVector::from_vec(vec![3.0, 4.0, 7.0, -2.0])).unwrap();
        assert!((y[0] - 5.0).abs() < 1e-12);
        assert!((y[1] - 4.0_f64.atan2(3.0)).abs() < 1e-12);
        assert!((y[1] - 0.927_295_218_001_612_2).abs() < 1e-12);
    }

    #[test]
    fn range_bearing_on_axis() {
        let y = range_bearing(&DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert_eq!(y[0], 1.0);
        assert_eq!(y[1], 0.0);
    }

    #[test]
    fn range_bearing_rejects_origin() {
        let r = range_bearing(&DVector::from_vec(vec![0.0, 0.0, 1.0, 1.0]));
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn wrap_angle_covers_branch_points() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(1.5 * PI) + 0.5 * PI).abs() < 1e-12);
        assert!((wrap_angle(-1.5 * PI) - 0.5 * PI).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_noise_is_zero() {
        let spec = NoiseSpec::gaussian(3, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = sample_noise(&spec, &mut rng);
        assert_eq!(v.as_slice(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn mixture_matches_law_of_total_variance() {
        let spec = NoiseSpec::mixture(1, &[(0.96, 1.0), (0.04, 100.0)]).unwrap();
        assert!((spec.total_variance() - 4.96).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let draws = 1_000_000;
        let mut sum_sq = 0.0;
        for _ in 0..draws {
            let v = sample_noise(&spec, &mut rng)[0];
            sum_sq += v * v;
        }
        let empirical = sum_sq / draws as f64;
        assert!(
            (empirical - 4.96).abs() / 4.96 < 0.02,
            "empirical variance {empirical}"
        );
    }

    #[test]
    fn single_component_mixture_is_standard_gaussian() {
        // Kolmogorov-Smirnov against the standard normal CDF at the 1% level.
        let spec = NoiseSpec::mixture(1, &[(1.0, 1.0)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 10_000;
        let mut samples: Vec<f64> = (0..n).map(|_| sample_noise(&spec, &mut rng)[0]).collect();
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut d = 0.0_f64;
        for (i, s) in samples.iter().enumerate() {
            let cdf = 0.5 * (1.0 + erf(s / 2.0_f64.sqrt()));
            let hi = (i + 1) as f64 / n as f64 - cdf;
            let lo = cdf - i as f64 / n as f64;
            d = d.max(hi).max(lo);
        }
        let critical = 1.63 / (n as f64).sqrt();
        assert!(d < critical, "KS statistic {d} exceeds {critical}");
    }

    // Abramowitz-Stegun 7.1.26; |error| < 1.5e-7, far below the KS threshold.
    fn erf(x: f64) -> f64 {
        let sign = if x < 0.0 { -1.0 } else { 1.0 };
        let x = x.abs();
        let t = 1.0 / (1.0 + 0.327_591_1 * x);
        let poly = t
            * (0.254_829_592
                + t * (-0.284_496_736 + t * (1.421_413_741 + t * (-1.453_152_027 + t * 1.061_405_429))));
        sign * (1.0 - poly * (-x * x).exp())
    }

    #[test]
    fn noise_spec_validation_catches_bad_weights() {
        assert!(NoiseSpec::mixture(1, &[(0.9, 1.0), (0.2, 2.0)]).is_err());
        assert!(NoiseSpec::mixture(1, &[(1.0, -1.0)]).is_err());
        assert!(NoiseSpec::mixture(0, &[(1.0, 1.0)]).is_err());
    }

    #[test]
    fn simulate_zero_noise_is_deterministic_propagation() {
        let model = make_cv_model(0.5, 0.1, 1.0).unwrap();
        let zero4 = NoiseSpec::gaussian(4, 0.0).unwrap();
        let zero2 = NoiseSpec::gaussian(2, 0.0).unwrap();
        let x0 = DVector::from_vec(vec![1.0, 1.0, 10.0, 20.0]);
        let traj = simulate(&model, &zero4, &zero2, &x0, 3, 0).unwrap();
        let expected = [
            DVector::from_vec(vec![6.0, 11.0, 10.0, 20.0]),
            DVector::from_vec(vec![11.0, 21.0, 10.0, 20.0]),
            DVector::from_vec(vec![16.0, 31.0, 10.0, 20.0]),
        ];
        for (got, want) in traj.states.iter().zip(&expected) {
            assert!((got - want).norm() < 1e-12);
        }
        for (x, y) in traj.states.iter().zip(&traj.measurements) {
            let direct = range_bearing(x).unwrap();
            assert!((y - direct).norm() < 1e-12);
        }
    }

    #[test]
    fn simulate_is_bit_identical_for_same_seed() {
        let model = make_cv_model(0.5, 0.1, 1.0).unwrap();
        let process = NoiseSpec::gaussian(4, 0.1).unwrap();
        let measurement = NoiseSpec::mixture(2, &[(0.96, 1.0), (0.04, 100.0)]).unwrap();
        let x0 = DVector::from_vec(vec![1.0, 1.0, 10.0, 20.0]);
        let a = simulate(&model, &process, &measurement, &x0, 50, 1234).unwrap();
        let b = simulate(&model, &process, &measurement, &x0, 50, 1234).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn paper_scenario_measurements_stay_finite() {
        let model = make_cv_model(0.5, 0.1, 1.0).unwrap();
        let process = NoiseSpec::gaussian(4, 0.1).unwrap();
        let measurement = NoiseSpec::mixture(2, &[(0.96, 1.0), (0.04, 100.0)]).unwrap();
        let x0 = DVector::from_vec(vec![1.0, 1.0, 10.0, 20.0]);
        for seed in 0..5 {
            let traj = simulate(&model, &process, &measurement, &x0, 200, seed).unwrap();
            for (x, y) in traj.states.iter().zip(&traj.measurements) {
                assert!(x.iter().all(|v| v.is_finite()));
                assert!(y.iter().all(|v| v.is_finite()));
                // Noiseless range is positive throughout the scenario.
                assert!(range_bearing(x).unwrap()[0] > 0.0);
            }
        }
    }

    #[test]
    fn process_noise_is_zero_mean() {
        // Average q_k = x_k - f(x_{k-1}) over noise-only steps; the mean must
        // sit within three standard errors of zero.
        let model = make_cv_model(0.5, 0.1, 1.0).unwrap();
        let process = NoiseSpec::gaussian(4, 0.1).unwrap();
        let zero2 = NoiseSpec::gaussian(2, 0.0).unwrap();
        let x0 = DVector::from_vec(vec![1.0, 1.0, 10.0, 20.0]);
        let steps = 10_000;
        let traj = simulate(&model, &process, &zero2, &x0, steps, 77).unwrap();
        let mut prev = x0.clone();
        let mut acc = DVector::zeros(4);
        for x in &traj.states {
            acc += x - model.propagate(&prev);
            prev = x.clone();
        }
        let mean = acc / steps as f64;
        let se = (0.1_f64 / steps as f64).sqrt();
        for i in 0..4 {
            assert!(mean[i].abs() < 3.0 * se, "component {i}: {}", mean[i]);
        }
    }

    #[test]
    fn csv_round_trips_at_full_precision() {
        let model = make_cv_model(0.5, 0.1, 1.0).unwrap();
        let process = NoiseSpec::gaussian(4, 0.1).unwrap();
        let measurement = NoiseSpec::gaussian(2, 1.0).unwrap();
        let x0 = DVector::from_vec(vec![1.0, 1.0, 10.0, 20.0]);
        let traj = simulate(&model, &process, &measurement, &x0, 5, 3).unwrap();
        let csv = traj.to_csv_string();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "k,x1,x2,x3,x4,y1,y2");
        for (k, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            assert_eq!(cells.len(), 7);
            assert_eq!(cells[0].parse::<usize>().unwrap(), k + 1);
            for (i, cell) in cells[1..5].iter().enumerate() {
                let parsed: f64 = cell.parse().unwrap();
                assert_eq!(parsed, traj.states[k][i], "17 significant digits round-trip");
            }
            for (i, cell) in cells[5..].iter().enumerate() {
                let parsed: f64 = cell.parse().unwrap();
                assert_eq!(parsed, traj.measurements[k][i]);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn range_bearing_invariants(p1 in -1e3f64..1e3, p2 in -1e3f64..1e3) {
            prop_assume!(p1 != 0.0 || p2 != 0.0);
            let y = range_bearing(&DVector::from_vec(vec![p1, p2])).unwrap();
            prop_assert!(y[0] >= 0.0);
            prop_assert!(y[1] > -PI && y[1] <= PI);
        }
    }
}
