//! Data-driven identification of the linear in-hand model
//! `xdot = A x + B u`, with `x = [y_mm, theta, alpha]` and `u = phi`.
//!
//! Data comes from rollouts of a noisy proportional controller on `v_y`
//! with `v_x` held constant. States are sampled at the perception rate and
//! differentiated forward in time. The fit is ordinary least squares on a
//! chronological train/holdout split.

use std::path::Path;

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cable_sim::{CableSim, CableState, RobotCommand, SimEvent};
use crate::error::{invalid, Error, Result};
use crate::lqr::LqrWeights;
use crate::perception::{Perception, PerceptionConfig};
use crate::scalar::Real;
use crate::schedule::Ticker;
use crate::tactile_sim::SensorGeometry;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PGainConfig {
    /// (m/s) of lateral velocity per mm of offset.
    pub k_p_v: f64,
    pub noise_low: f64,
    pub noise_high: f64,
}

impl Default for PGainConfig {
    fn default() -> Self {
        Self {
            k_p_v: 0.002,
            noise_low: -0.01,
            noise_high: 0.01,
        }
    }
}

impl PGainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.k_p_v.is_finite() {
            return Err(invalid("sysid.p_gain.k_p_v", "must be finite"));
        }
        if !(self.noise_low <= self.noise_high) {
            return Err(invalid("sysid.p_gain.noise_low", "must not exceed noise_high"));
        }
        Ok(())
    }
}

/// `v_y = K_p^v * y + N`, `N ~ U[noise_low, noise_high]`.
pub fn p_controller<R: Rng>(y: f64, cfg: &PGainConfig, rng: &mut R) -> f64 {
    let noise = if cfg.noise_high > cfg.noise_low {
        rng.gen_range(cfg.noise_low..cfg.noise_high)
    } else {
        cfg.noise_low
    };
    cfg.k_p_v * y + noise
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateSource {
    GroundTruth,
    Perception,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollectConfig {
    pub p_gain: PGainConfig,
    /// Constant forward velocity, m/s.
    pub v_x: f64,
    pub base_rate_hz: f64,
    pub state_rate_hz: f64,
    /// Initial in-hand state is drawn uniformly from `±` these.
    pub init_y_mm: f64,
    pub init_theta_deg: f64,
    pub init_alpha_deg: f64,
    /// Raw samples a trajectory needs before it may fall and still count.
    pub min_samples: usize,
    /// Longest trajectory, in raw samples.
    pub max_samples: usize,
    pub max_attempts: usize,
    pub source: StateSource,
    pub marker_noise_px: f64,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            p_gain: PGainConfig::default(),
            v_x: 0.025,
            base_rate_hz: 125.0,
            state_rate_hz: 30.0,
            init_y_mm: 3.0,
            init_theta_deg: 10.0,
            init_alpha_deg: 5.0,
            min_samples: 30,
            max_samples: 400,
            max_attempts: 50,
            source: StateSource::GroundTruth,
            marker_noise_px: 0.05,
        }
    }
}

impl CollectConfig {
    pub fn validate(&self) -> Result<()> {
        self.p_gain.validate()?;
        if !(self.v_x > 0.0) {
            return Err(invalid("sysid.v_x", "must be positive"));
        }
        if !(self.base_rate_hz > 0.0 && self.state_rate_hz > 0.0 && self.state_rate_hz <= self.base_rate_hz) {
            return Err(invalid("sysid.state_rate_hz", "need 0 < state rate <= base rate"));
        }
        if self.min_samples < 2 || self.max_samples < self.min_samples {
            return Err(invalid("sysid.min_samples", "need 2 <= min_samples <= max_samples"));
        }
        if self.max_attempts == 0 {
            return Err(invalid("sysid.max_attempts", "must be positive"));
        }
        if !(self.marker_noise_px >= 0.0) {
            return Err(invalid("sysid.marker_noise_px", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub x: [f64; 3],
    pub u: f64,
    pub xdot: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub samples: Vec<Sample>,
    /// Nominal sampling period, s.
    pub dt: f64,
    pub cable_id: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub rollouts: Vec<Rollout>,
    /// Trajectories that fell before `min_samples` and were resampled.
    pub discarded: usize,
}

impl Dataset {
    pub fn samples(&self) -> Vec<Sample> {
        self.rollouts.iter().flat_map(|r| r.samples.iter().copied()).collect()
    }

    pub fn len(&self) -> usize {
        self.rollouts.iter().map(|r| r.samples.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Columns `t,y,theta,alpha,phi,ydot,thetadot,alphadot,cable_id`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "y", "theta", "alpha", "phi", "ydot", "thetadot", "alphadot", "cable_id"])?;
        for r in &self.rollouts {
            for s in &r.samples {
                let mut row: Vec<String> = vec![s.t.to_string()];
                row.extend(s.x.iter().map(f64::to_string));
                row.push(s.u.to_string());
                row.extend(s.xdot.iter().map(f64::to_string));
                row.push(r.cable_id.clone());
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn trajectory_seed(seed: u64, index: u64, attempt: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(attempt.wrapping_mul(0x94D0_49BB_1331_11EB))
}

struct Raw {
    t: Vec<f64>,
    x: Vec<[f64; 3]>,
    u: Vec<f64>,
}

fn run_trajectory(
    sim: &mut CableSim,
    cfg: &CollectConfig,
    perception: Option<&(Perception<f64>, SensorGeometry)>,
    rng: &mut ChaCha8Rng,
    target: usize,
) -> Result<(Raw, bool)> {
    let init = CableState {
        y: rng.gen_range(-cfg.init_y_mm..=cfg.init_y_mm),
        theta: rng.gen_range(-cfg.init_theta_deg..=cfg.init_theta_deg).to_radians(),
        alpha: rng.gen_range(-cfg.init_alpha_deg..=cfg.init_alpha_deg).to_radians(),
    };
    sim.regrasp(init)?;
    let heading = sim.fixture.heading;
    let opening = sim.state.opening_mm;
    let dt = 1.0 / cfg.base_rate_hz;
    let reference = perception.map(|(_, g)| g.marker_rest_positions::<f64>());
    let mut ticker = Ticker::new(cfg.state_rate_hz, cfg.base_rate_hz);
    let mut raw = Raw {
        t: Vec::new(),
        x: Vec::new(),
        u: Vec::new(),
    };
    let mut cmd = RobotCommand::STOP;
    let mut last_est = [init.y, init.theta];
    let mut tick = 0u64;
    loop {
        if ticker.fires(tick) {
            let truth = sim.state.cable_state;
            let x = match (perception, &reference) {
                (Some((p, geom)), Some(reference)) => {
                    let frame = sim.observe_tactile::<f64>(geom, cfg.marker_noise_px, rng.gen())?;
                    let obs = p.process(&frame, reference)?;
                    if obs.pose.valid {
                        last_est = [obs.pose.y_mm, obs.pose.theta_rad];
                    }
                    [last_est[0], last_est[1], truth.alpha]
                }
                _ => [truth.y, truth.theta, truth.alpha],
            };
            let v_y = p_controller(x[0], &cfg.p_gain, rng);
            cmd = RobotCommand::from_local(cfg.v_x, v_y, heading);
            raw.t.push(sim.state.t);
            raw.x.push(x);
            raw.u.push(cmd.phi(truth.alpha, heading));
            if raw.t.len() >= target {
                return Ok((raw, false));
            }
        }
        match sim.step(cmd, opening, dt)? {
            SimEvent::None => {}
            SimEvent::Fell | SimEvent::Stuck => return Ok((raw, true)),
            SimEvent::Completed => return Ok((raw, false)),
        }
        tick += 1;
    }
}

fn to_samples(raw: &Raw) -> Vec<Sample> {
    (0..raw.t.len().saturating_sub(1))
        .map(|n| {
            let h = raw.t[n + 1] - raw.t[n];
            let xdot = [0, 1, 2].map(|k| (raw.x[n + 1][k] - raw.x[n][k]) / h);
            Sample {
                t: raw.t[n],
                x: raw.x[n],
                u: raw.u[n],
                xdot,
            }
        })
        .collect()
}

/// Collects at least `n_points` samples over `n_trajectories` (or more)
/// rollouts. `factory` builds a fresh plant for a trajectory seed; the
/// initial in-hand state is then randomized. Rollouts that fall before
/// `min_samples` are discarded and rerun with a new seed. Deterministic per
/// `seed` regardless of thread count.
pub fn collect<F>(
    factory: F,
    cfg: &CollectConfig,
    geom: &SensorGeometry,
    perception: &PerceptionConfig,
    n_points: usize,
    n_trajectories: usize,
    seed: u64,
) -> Result<Dataset>
where
    F: Fn(u64) -> Result<CableSim> + Sync,
{
    cfg.validate()?;
    if n_points < 100 {
        return Err(invalid("n_points", "need at least 100"));
    }
    if n_trajectories == 0 {
        return Err(invalid("n_trajectories", "must be positive"));
    }
    let pipeline = match cfg.source {
        StateSource::Perception => Some((Perception::<f64>::new(geom.clone(), perception.clone())?, geom.clone())),
        StateSource::GroundTruth => None,
    };
    let per_traj = (n_points.div_ceil(n_trajectories) + 1).clamp(cfg.min_samples, cfg.max_samples);

    let one = |index: u64| -> Result<(Rollout, usize)> {
        for attempt in 0..cfg.max_attempts as u64 {
            let tseed = trajectory_seed(seed, index, attempt);
            let mut sim = factory(tseed)?;
            let mut rng = ChaCha8Rng::seed_from_u64(tseed);
            let (raw, fell) = run_trajectory(&mut sim, cfg, pipeline.as_ref(), &mut rng, per_traj)?;
            if fell && raw.t.len() < cfg.min_samples {
                continue;
            }
            let rollout = Rollout {
                samples: to_samples(&raw),
                dt: 1.0 / cfg.state_rate_hz,
                cable_id: sim.spec.name.clone(),
                seed: tseed,
            };
            return Ok((rollout, attempt as usize));
        }
        Err(invalid("sysid.max_attempts", "every attempt fell before min_samples"))
    };

    let mut rollouts = Vec::new();
    let mut discarded = 0;
    let mut next = 0u64;
    let mut total = 0usize;
    let mut batch = n_trajectories as u64;
    while total < n_points {
        let results: Vec<Result<(Rollout, usize)>> = (next..next + batch).into_par_iter().map(one).collect();
        for r in results {
            let (rollout, dropped) = r?;
            if total >= n_points && rollouts.len() >= n_trajectories {
                break;
            }
            total += rollout.samples.len();
            discarded += dropped;
            rollouts.push(rollout);
        }
        next += batch;
        batch = (batch / 4).max(1);
    }
    Ok(Dataset { rollouts, discarded })
}

/// Fitted model and its residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel<T: Real> {
    pub a: Matrix3<T>,
    pub b: Vector3<T>,
    pub fit_rmse: Vector3<T>,
    pub holdout_rmse: Vector3<T>,
    pub n_train: usize,
    pub n_holdout: usize,
}

impl<T: Real> LinearModel<T> {
    pub fn predict(&self, x: &Vector3<T>, u: T) -> Vector3<T> {
        self.a * x + self.b * u
    }
}

fn regressors<T: Real>(samples: &[Sample]) -> (DMatrix<T>, DMatrix<T>) {
    let n = samples.len();
    let phi = DMatrix::from_fn(n, 4, |i, j| {
        let s = &samples[i];
        T::lit(if j < 3 { s.x[j] } else { s.u })
    });
    let y = DMatrix::from_fn(n, 3, |i, j| T::lit(samples[i].xdot[j]));
    (phi, y)
}

fn rmse<T: Real>(theta: &DMatrix<T>, samples: &[Sample]) -> Vector3<T> {
    if samples.is_empty() {
        return Vector3::zeros();
    }
    let (phi, y) = regressors::<T>(samples);
    let r = phi * theta - y;
    let n = T::lit(samples.len() as f64);
    Vector3::from_fn(|k, _| (r.column(k).norm_squared() / n).sqrt())
}

/// Least squares on an explicit split. Rejects a rank-deficient regressor.
pub fn fit_split<T: Real>(train: &[Sample], holdout: &[Sample]) -> Result<LinearModel<T>> {
    if train.len() < 4 {
        return Err(invalid("dataset", "need at least 4 training samples"));
    }
    let (phi, y) = regressors::<T>(train);
    let svd = phi.svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * T::lit(train.len() as f64 * 4.0 * f64::EPSILON.sqrt());
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if !(smax > T::zero()) || rank < 4 {
        return Err(Error::RankDeficient {
            rank: if smax > T::zero() { rank } else { 0 },
            cols: 4,
        });
    }
    let theta = svd
        .solve(&y, T::zero())
        .map_err(|e| invalid("dataset", e.to_string()))?;
    let a = Matrix3::from_fn(|i, j| theta[(j, i)]);
    let b = Vector3::from_fn(|i, _| theta[(3, i)]);
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(invalid("dataset", "fit produced non-finite coefficients"));
    }
    Ok(LinearModel {
        a,
        b,
        fit_rmse: rmse(&theta, train),
        holdout_rmse: rmse(&theta, holdout),
        n_train: train.len(),
        n_holdout: holdout.len(),
    })
}

/// Fits on the first `train_fraction` of the samples (chronological) and
/// validates on the rest.
pub fn fit<T: Real>(samples: &[Sample], train_fraction: f64) -> Result<LinearModel<T>> {
    if samples.len() < 50 {
        return Err(invalid("dataset", format!("need at least 50 samples, got {}", samples.len())));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(invalid("train_fraction", "must lie in (0, 1)"));
    }
    let n_train = ((samples.len() as f64) * train_fraction).round() as usize;
    let n_train = n_train.clamp(1, samples.len() - 1);
    fit_split(&samples[..n_train], &samples[n_train..])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub cable_id: String,
    pub n_points: usize,
    pub n_trajectories: usize,
    pub discarded: usize,
    pub seed: u64,
    pub v_x: f64,
    pub state_rate_hz: f64,
    pub train_fraction: f64,
    pub source: StateSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainRecord {
    pub k: [f64; 3],
    /// Row-major.
    pub p: [f64; 9],
    pub residual: f64,
    pub spectral_radius: f64,
    pub dt: f64,
    pub weights: LqrWeights,
}

/// On-disk model: `a` is row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub a: [f64; 9],
    pub b: [f64; 3],
    pub fit_rmse: [f64; 3],
    pub holdout_rmse: [f64; 3],
    pub metadata: ModelMetadata,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain: Option<GainRecord>,
}

impl ModelFile {
    pub fn from_model<T: Real>(model: &LinearModel<T>, metadata: ModelMetadata) -> Self {
        let f = |v: T| v.to_f64_lossy();
        Self {
            a: std::array::from_fn(|k| f(model.a[(k / 3, k % 3)])),
            b: std::array::from_fn(|k| f(model.b[k])),
            fit_rmse: std::array::from_fn(|k| f(model.fit_rmse[k])),
            holdout_rmse: std::array::from_fn(|k| f(model.holdout_rmse[k])),
            metadata,
            gain: None,
        }
    }

    pub fn a_matrix<T: Real>(&self) -> Matrix3<T> {
        Matrix3::from_fn(|i, j| T::lit(self.a[3 * i + j]))
    }

    pub fn b_vector<T: Real>(&self) -> Vector3<T> {
        Vector3::from_fn(|i, _| T::lit(self.b[i]))
    }

    pub fn validate(&self) -> Result<()> {
        if self.a.iter().chain(&self.b).any(|v| !v.is_finite()) {
            return Err(invalid("model.a", "entries must be finite"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let m: ModelFile = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}
