//! Monte Carlo benchmark harness: runs the tracking scenario across filter
//! configurations, computes MSD curves and steady-state values, and sweeps
//! criterion parameters over a grid with common random numbers.
//!
//! Every run derives its RNG streams from `(master_seed, run_index)`, so a
//! campaign is a pure function of its configuration at any parallelism level,
//! and sweep cells see identical noise realizations.

mod config;
mod output;

pub use config::{
    Aggregate, Algorithm, ExperimentConfig, FilterConfig, ParamOverrides, ResolvedFilter,
    SweepSpec,
};
pub use output::{write_manifest, write_msd_curves, write_sweep};

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::ckf::{self, GaussianBelief};
use crate::error::{Error, Result};
use crate::filter::gmeefp_step;
use crate::numerics::SymMatrix;
use crate::state_space::{make_cv_model, simulate, StateSpaceModel, Trajectory};

/// Squared-error floor that keeps the dB conversion finite.
const MSD_FLOOR: f64 = 1e-300;

/// Fraction of misbehaving steps above which a run counts as divergent, and
/// fraction of divergent runs above which a sweep cell is marked failed.
const FAIL_FRACTION: f64 = 0.10;

/// Mean-square deviation in decibels: `10·log₁₀‖x − x̂‖²`, floored so a
/// perfect estimate reports a finite sentinel instead of `-inf`.
pub fn msd(x_true: &DVector<f64>, x_est: &DVector<f64>) -> f64 {
    let sq = (x_true - x_est).norm_squared();
    10.0 * sq.max(MSD_FLOOR).log10()
}

/// Per-step MSD curve of one filter, averaged over Monte Carlo runs.
#[derive(Clone, Debug, PartialEq)]
pub struct MsdCurve {
    pub filter: String,
    /// One value per step, in dB.
    pub msd_db: Vec<f64>,
    pub runs: usize,
    /// Steps that fell back to the plain cubature update.
    pub fallback_steps: usize,
    /// Steps whose fixed-point iteration hit the iteration cap.
    pub nonconverged_steps: usize,
    /// Runs flagged as divergent (hard failures or too many bad steps).
    pub diverged_runs: usize,
}

impl MsdCurve {
    pub fn fallback_rate(&self) -> f64 {
        self.fallback_steps as f64 / (self.runs * self.msd_db.len()) as f64
    }
}

/// Mean of the trailing `window` entries of a curve.
pub fn steady_msd(curve: &MsdCurve, window: usize) -> Result<f64> {
    if window == 0 || window > curve.msd_db.len() {
        return Err(Error::domain("window must lie in 1..=curve length"));
    }
    let tail = &curve.msd_db[curve.msd_db.len() - window..];
    // Mean around the first entry: exact on constant curves, and better
    // conditioned than a raw sum when the values share a large offset.
    let base = tail[0];
    Ok(base + tail.iter().map(|v| v - base).sum::<f64>() / window as f64)
}

/// One cell of a parameter sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    pub alpha2: f64,
    pub beta2: f64,
    pub lambda: f64,
    pub steady_msd_db: f64,
    pub failed: bool,
    pub fallback_rate: f64,
}

/// Sweep results: one steady MSD per grid cell plus the underlying curves.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepTable {
    pub cells: Vec<SweepCell>,
    pub curves: Vec<MsdCurve>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream seed for `(master, run, salt)`; stable across platforms.
pub(crate) fn derive_seed(master: u64, run: u64, salt: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(run)) ^ salt)
}

struct RunRecord {
    /// Squared estimation error per step, one row per filter.
    sq_err: Vec<Vec<f64>>,
    fallback_steps: Vec<usize>,
    nonconverged_steps: Vec<usize>,
    diverged: Vec<bool>,
}

fn build_model(cfg: &ExperimentConfig) -> Result<StateSpaceModel> {
    make_cv_model(cfg.dt, cfg.q_var, cfg.r_nominal)
}

/// Runs every configured filter over one simulated trajectory.
fn run_single(
    cfg: &ExperimentConfig,
    model: &StateSpaceModel,
    filters: &[ResolvedFilter],
    run_index: usize,
) -> Result<RunRecord> {
    let x0 = DVector::from_vec(cfg.x0.clone());
    let traj_seed = derive_seed(cfg.master_seed, run_index as u64, 0);
    let traj: Trajectory = simulate(
        model,
        &cfg.process_noise,
        &cfg.measurement_noise,
        &x0,
        cfg.steps,
        traj_seed,
    )?;

    // Shared initialization across filters: x̂₀ ~ N(x₀, I), P₀ = I.
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.master_seed, run_index as u64, 1));
    let init_mean = DVector::from_fn(4, |i, _| {
        let z: f64 = StandardNormal.sample(&mut init_rng);
        x0[i] + z
    });
    let init = GaussianBelief::new(init_mean, SymMatrix::identity(4))?;

    let mut record = RunRecord {
        sq_err: vec![Vec::with_capacity(cfg.steps); filters.len()],
        fallback_steps: vec![0; filters.len()],
        nonconverged_steps: vec![0; filters.len()],
        diverged: vec![false; filters.len()],
    };

    for (fi, filter) in filters.iter().enumerate() {
        let mut belief = init.clone();
        for (k, y) in traj.measurements.iter().enumerate() {
            let stepped = match filter {
                ResolvedFilter::PlainCkf => ckf::predict(&belief, model)
                    .and_then(|pred| {
                        let mm = ckf::measurement_moments(&pred, model)?;
                        ckf::ckf_update(&pred, &mm, y)
                    })
                    .map(|b| (b, false, true)),
                ResolvedFilter::Gmeefp(params) => gmeefp_step(&belief, model, y, params)
                    .map(|(b, fpi)| (b, fpi.fallback, fpi.converged || fpi.fallback)),
            };
            match stepped {
                Ok((next, fallback, converged)) => {
                    let finite = next.mean.iter().all(|v| v.is_finite())
                        && next.cov.as_matrix().iter().all(|v| v.is_finite());
                    if finite {
                        belief = next;
                        if fallback {
                            record.fallback_steps[fi] += 1;
                        }
                        if !converged {
                            record.nonconverged_steps[fi] += 1;
                        }
                    } else {
                        // Hold the last finite belief and flag the run.
                        record.fallback_steps[fi] += 1;
                        record.diverged[fi] = true;
                    }
                }
                Err(_) => {
                    record.fallback_steps[fi] += 1;
                    record.diverged[fi] = true;
                }
            }
            record.sq_err[fi].push((&traj.states[k] - &belief.mean).norm_squared());
        }
        let bad = record.fallback_steps[fi] + record.nonconverged_steps[fi];
        if bad as f64 > FAIL_FRACTION * cfg.steps as f64 {
            record.diverged[fi] = true;
        }
    }
    Ok(record)
}

/// Runs the configured Monte Carlo campaign and returns one MSD curve per
/// filter. Deterministic for a given configuration regardless of how many
/// worker threads execute the runs.
pub fn run_monte_carlo(cfg: &ExperimentConfig) -> Result<Vec<MsdCurve>> {
    cfg.validate()?;
    let model = build_model(cfg)?;
    let filters: Vec<ResolvedFilter> = cfg
        .filters
        .iter()
        .map(|f| f.resolve())
        .collect::<Result<_>>()?;

    let records: Vec<Result<RunRecord>> = (0..cfg.runs)
        .into_par_iter()
        .map(|run| run_single(cfg, &model, &filters, run))
        .collect();

    let mut runs = Vec::with_capacity(cfg.runs);
    for r in records {
        runs.push(r?);
    }

    let mut curves = Vec::with_capacity(filters.len());
    for (fi, fc) in cfg.filters.iter().enumerate() {
        let msd_db: Vec<f64> = (0..cfg.steps)
            .map(|k| match cfg.aggregate {
                Aggregate::SqThenDb => {
                    let mean_sq: f64 =
                        runs.iter().map(|r| r.sq_err[fi][k]).sum::<f64>() / cfg.runs as f64;
                    10.0 * mean_sq.max(MSD_FLOOR).log10()
                }
                Aggregate::DbThenMean => {
                    runs.iter()
                        .map(|r| 10.0 * r.sq_err[fi][k].max(MSD_FLOOR).log10())
                        .sum::<f64>()
                        / cfg.runs as f64
                }
            })
            .collect();
        curves.push(MsdCurve {
            filter: fc.name.clone(),
            msd_db,
            runs: cfg.runs,
            fallback_steps: runs.iter().map(|r| r.fallback_steps[fi]).sum(),
            nonconverged_steps: runs.iter().map(|r| r.nonconverged_steps[fi]).sum(),
            diverged_runs: runs.iter().filter(|r| r.diverged[fi]).count(),
        });
    }
    Ok(curves)
}

/// Sweeps the grid with common random numbers: every cell reruns the same
/// trajectories, differing only in criterion parameters. Cells whose runs
/// diverge too often are flagged failed rather than given invented numbers.
pub fn sweep(cfg: &ExperimentConfig, grid: &SweepSpec) -> Result<SweepTable> {
    cfg.validate()?;
    let cells_spec = grid.cells()?;
    if cells_spec.is_empty() {
        return Err(Error::config("sweep grid is empty"));
    }
    let mut cells = Vec::with_capacity(cells_spec.len());
    let mut curves = Vec::with_capacity(cells_spec.len());
    for (alpha2, beta2, lambda) in cells_spec {
        let name = format!("alpha2={alpha2},beta2={beta2},lambda={lambda}");
        let cell_cfg = ExperimentConfig {
            filters: vec![FilterConfig {
                name: name.clone(),
                algorithm: Algorithm::Gmeefp,
                preset: Some(grid.base.clone()),
                overrides: Some(ParamOverrides {
                    alpha2: Some(alpha2),
                    beta2: Some(beta2),
                    lambda: Some(lambda),
                    ..ParamOverrides::default()
                }),
            }],
            sweep: None,
            ..cfg.clone()
        };
        let mut cell_curves = run_monte_carlo(&cell_cfg)?;
        let curve = cell_curves.remove(0);
        let steady = steady_msd(&curve, cfg.steady_window)?;
        let failed = curve.diverged_runs as f64 > FAIL_FRACTION * cfg.runs as f64
            || !steady.is_finite();
        cells.push(SweepCell {
            alpha2,
            beta2,
            lambda,
            steady_msd_db: steady,
            failed,
            fallback_rate: curve.fallback_rate(),
        });
        curves.push(curve);
    }
    Ok(SweepTable { cells, curves })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn msd_of_unit_error_is_zero_db() {
        let a = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
        let b = DVector::zeros(4);
        assert_eq!(msd(&a, &b), 0.0);
    }

    #[test]
    fn msd_of_norm_ten_error_is_twenty_db() {
        let a = DVector::from_vec(vec![10.0, 0.0]);
        let b = DVector::zeros(2);
        assert!((msd(&a, &b) - 20.0).abs() < 1e-12);
    }

    #[test]
    fn msd_of_zero_error_is_floored() {
        let a = DVector::from_vec(vec![1.0, 2.0]);
        let v = msd(&a, &a.clone());
        assert!(v <= -2990.0);
        assert!(v.is_finite());
    }

    fn constant_curve(value: f64, len: usize) -> MsdCurve {
        MsdCurve {
            filter: "test".to_string(),
            msd_db: vec![value; len],
            runs: 1,
            fallback_steps: 0,
            nonconverged_steps: 0,
            diverged_runs: 0,
        }
    }

    #[test]
    fn steady_msd_of_constant_curve_is_exact() {
        let curve = constant_curve(22.42, 200);
        assert_eq!(steady_msd(&curve, 50).unwrap(), 22.42);
        assert_eq!(steady_msd(&curve, 200).unwrap(), 22.42);
    }

    #[test]
    fn steady_msd_full_window_is_overall_mean() {
        let mut curve = constant_curve(0.0, 4);
        curve.msd_db = vec![1.0, 2.0, 3.0, 4.0];
        assert!((steady_msd(&curve, 4).unwrap() - 2.5).abs() < 1e-15);
        assert!((steady_msd(&curve, 2).unwrap() - 3.5).abs() < 1e-15);
    }

    #[test]
    fn steady_msd_rejects_oversize_window() {
        let curve = constant_curve(1.0, 10);
        assert!(matches!(steady_msd(&curve, 11), Err(Error::Domain(_))));
        assert!(matches!(steady_msd(&curve, 0), Err(Error::Domain(_))));
    }

    fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            runs: 3,
            steps: 20,
            steady_window: 5,
            master_seed: 7,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn monte_carlo_is_deterministic_across_worker_counts() {
        let cfg = tiny_config();
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| run_monte_carlo(&cfg).unwrap());
        let eight = rayon::ThreadPoolBuilder::new()
            .num_threads(8)
            .build()
            .unwrap()
            .install(|| run_monte_carlo(&cfg).unwrap());
        assert_eq!(one, eight);
    }

    #[test]
    fn noise_free_tracking_drives_msd_down() {
        // Near-noiseless smoke scenario: the smoothed curve must trend down
        // from its early value.
        let cfg = ExperimentConfig {
            runs: 1,
            steps: 60,
            steady_window: 10,
            process_noise: crate::state_space::NoiseSpec::gaussian(4, 1e-12).unwrap(),
            measurement_noise: crate::state_space::NoiseSpec::gaussian(2, 1e-12).unwrap(),
            q_var: 1e-9,
            r_nominal: 1e-9,
            filters: vec![FilterConfig {
                name: "ckf".to_string(),
                algorithm: Algorithm::Ckf,
                preset: None,
                overrides: None,
            }],
            ..ExperimentConfig::default()
        };
        let curves = run_monte_carlo(&cfg).unwrap();
        let head: f64 = curves[0].msd_db[..10].iter().sum::<f64>() / 10.0;
        let tail: f64 = curves[0].msd_db[50..].iter().sum::<f64>() / 10.0;
        assert!(tail < head - 10.0, "head {head} dB, tail {tail} dB");
    }

    #[test]
    fn degenerate_sweep_matches_direct_run() {
        let cfg = tiny_config();
        let grid = SweepSpec {
            base: "gmeefp".to_string(),
            alpha2: vec![2.2],
            beta2: vec![6.0],
            lambda: vec![0.5],
        };
        let table = sweep(&cfg, &grid).unwrap();
        assert_eq!(table.cells.len(), 1);

        let direct_cfg = ExperimentConfig {
            filters: vec![FilterConfig {
                name: "gmeefp".to_string(),
                algorithm: Algorithm::Gmeefp,
                preset: Some("gmeefp".to_string()),
                overrides: None,
            }],
            ..cfg
        };
        let direct = run_monte_carlo(&direct_cfg).unwrap();
        let steady = steady_msd(&direct[0], direct_cfg.steady_window).unwrap();
        assert!((table.cells[0].steady_msd_db - steady).abs() < 1e-12);
        assert_eq!(table.curves[0].msd_db, direct[0].msd_db);
    }

    #[test]
    fn sweep_grid_shape_is_respected() {
        let cfg = tiny_config();
        let grid = SweepSpec {
            base: "gmeefp".to_string(),
            alpha2: vec![2.0, 2.2],
            beta2: vec![1.0],
            lambda: vec![],
        };
        let table = sweep(&cfg, &grid).unwrap();
        assert_eq!(table.cells.len(), 2);
        for cell in &table.cells {
            assert!(cell.steady_msd_db.is_finite() || cell.failed);
        }
    }

    #[test]
    fn derive_seed_separates_streams() {
        let a = derive_seed(1, 0, 0);
        let b = derive_seed(1, 1, 0);
        let c = derive_seed(1, 0, 1);
        let d = derive_seed(2, 0, 0);
        assert!(a != b && a != c && a != d && b != c);
        assert_eq!(a, derive_seed(1, 0, 0));
    }
}
