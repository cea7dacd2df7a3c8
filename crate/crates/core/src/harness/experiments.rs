//! Experiment grids, result tables and run manifests.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_episode, write_trace, Config, ControllerKind, EpisodeConfig, EpisodeMetrics};
use crate::cable_sim::{make_cable, CableSim, Fixture};
use crate::error::Result;
use crate::lqr::{cable_gain, spectral_radius, CableGain, GainSchedule};
use crate::sysid::{collect, fit, Dataset, GainRecord, LinearModel, ModelFile, ModelMetadata};

/// One episode in a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub controller: String,
    pub cable: String,
    pub v_x: f64,
    pub seed: u64,
    pub ratio: f64,
    pub dist_per_regrasp: f64,
    pub vel_norm: f64,
    pub n_regrasps: usize,
    pub outcome: String,
}

impl ResultRow {
    fn new(controller: ControllerKind, cable: &str, v_x: f64, seed: u64, m: &EpisodeMetrics) -> Self {
        Self {
            controller: controller.as_str().into(),
            cable: cable.into(),
            v_x,
            seed,
            ratio: m.ratio_followed,
            dist_per_regrasp: m.dist_per_regrasp_norm,
            vel_norm: m.velocity_norm,
            n_regrasps: m.n_regrasps,
            outcome: m.outcome.as_str().into(),
        }
    }

    /// Regrasps per metre of followed cable.
    pub fn regrasps_per_m(&self, total_length_mm: f64) -> f64 {
        let followed_m = self.ratio * total_length_mm / 1000.0;
        if followed_m > 0.0 {
            self.n_regrasps as f64 / followed_m
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone)]
struct Job {
    controller: ControllerKind,
    cable: String,
    v_x: f64,
    seed: u64,
}

/// Runs the jobs in parallel on the current rayon pool. Results come back
/// in job order, so the table does not depend on scheduling.
fn run_grid(cfg: &Config, jobs: &[Job], gain: Option<&GainSchedule<f64>>, trace_dir: Option<&Path>) -> Result<(Vec<ResultRow>, Vec<PathBuf>)> {
    let out: Vec<Result<(ResultRow, Option<PathBuf>)>> = jobs
        .par_iter()
        .map(|job| {
            let mut ec = EpisodeConfig::from_config(cfg, job.controller, &job.cable, job.seed, gain)?;
            ec.v_x = job.v_x;
            let episode = run_episode(&ec, job.seed)?;
            let path = match trace_dir {
                Some(dir) => {
                    let p = dir.join(format!("{}_{}_{:.3}_{}.csv", job.controller, job.cable, job.v_x, job.seed));
                    write_trace(&episode.trace, &p)?;
                    Some(p)
                }
                None => None,
            };
            Ok((ResultRow::new(job.controller, &job.cable, job.v_x, job.seed, &episode.metrics), path))
        })
        .collect();
    let mut rows = Vec::with_capacity(out.len());
    let mut paths = Vec::new();
    for r in out {
        let (row, path) = r?;
        rows.push(row);
        paths.extend(path);
    }
    Ok((rows, paths))
}

/// All four controllers on the default cable, one episode per seed.
pub fn compare_controllers(
    cfg: &Config,
    seeds: &[u64],
    gain: Option<&GainSchedule<f64>>,
    trace_dir: Option<&Path>,
) -> Result<(Vec<ResultRow>, Vec<PathBuf>)> {
    let jobs: Vec<Job> = ControllerKind::ALL
        .iter()
        .flat_map(|&controller| {
            seeds.iter().map(move |&seed| Job {
                controller,
                cable: cfg.corpus.default_cable.clone(),
                v_x: cfg.episode.v_x,
                seed,
            })
        })
        .collect();
    run_grid(cfg, &jobs, gain, trace_dir)
}

/// LQR on the default cable at each speed.
pub fn sweep_velocity(
    cfg: &Config,
    velocities: &[f64],
    seeds: &[u64],
    gain: &GainSchedule<f64>,
    trace_dir: Option<&Path>,
) -> Result<(Vec<ResultRow>, Vec<PathBuf>)> {
    let jobs: Vec<Job> = velocities
        .iter()
        .flat_map(|&v_x| {
            seeds.iter().map(move |&seed| Job {
                controller: ControllerKind::LqrControl,
                cable: cfg.corpus.default_cable.clone(),
                v_x,
                seed,
            })
        })
        .collect();
    run_grid(cfg, &jobs, Some(gain), trace_dir)
}

/// LQR on every configured cable.
pub fn sweep_cables(cfg: &Config, seeds: &[u64], gain: &GainSchedule<f64>, trace_dir: Option<&Path>) -> Result<(Vec<ResultRow>, Vec<PathBuf>)> {
    let jobs: Vec<Job> = cfg
        .cables
        .iter()
        .flat_map(|c| {
            seeds.iter().map(move |&seed| Job {
                controller: ControllerKind::LqrControl,
                cable: c.name.clone(),
                v_x: cfg.episode.v_x,
                seed,
            })
        })
        .collect();
    run_grid(cfg, &jobs, Some(gain), trace_dir)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    pub label: String,
    pub n: usize,
    pub ratio_mean: f64,
    pub ratio_std: f64,
    pub dist_per_regrasp_mean: f64,
    pub dist_per_regrasp_std: f64,
    pub vel_norm_mean: f64,
    pub vel_norm_std: f64,
    pub regrasps_mean: f64,
    pub regrasps_per_m_mean: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Groups rows by `key` in first-appearance order. Standard deviations are
/// population (divide by n).
pub fn summarize<F>(rows: &[ResultRow], total_length_mm: f64, key: F) -> Vec<GroupSummary>
where
    F: Fn(&ResultRow) -> String,
{
    let mut labels: Vec<String> = Vec::new();
    for r in rows {
        let k = key(r);
        if !labels.contains(&k) {
            labels.push(k);
        }
    }
    labels
        .into_iter()
        .map(|label| {
            let g: Vec<&ResultRow> = rows.iter().filter(|r| key(r) == label).collect();
            let col = |f: &dyn Fn(&ResultRow) -> f64| g.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let (ratio_mean, ratio_std) = mean_std(&col(&|r| r.ratio));
            let (dist_per_regrasp_mean, dist_per_regrasp_std) = mean_std(&col(&|r| r.dist_per_regrasp));
            let (vel_norm_mean, vel_norm_std) = mean_std(&col(&|r| r.vel_norm));
            let (regrasps_mean, _) = mean_std(&col(&|r| r.n_regrasps as f64));
            let (regrasps_per_m_mean, _) = mean_std(&col(&|r| r.regrasps_per_m(total_length_mm)));
            GroupSummary {
                label,
                n: g.len(),
                ratio_mean,
                ratio_std,
                dist_per_regrasp_mean,
                dist_per_regrasp_std,
                vel_norm_mean,
                vel_norm_std,
                regrasps_mean,
                regrasps_per_m_mean,
            }
        })
        .collect()
}

pub fn write_results_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Normalised bar data: one row per group, the three metrics' mean and std.
pub fn write_summary_csv(groups: &[GroupSummary], key_name: &str, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        key_name,
        "ratio_mean",
        "ratio_std",
        "dist_per_regrasp_mean",
        "dist_per_regrasp_std",
        "vel_norm_mean",
        "vel_norm_std",
    ])?;
    for g in groups {
        w.write_record([
            g.label.clone(),
            g.ratio_mean.to_string(),
            g.ratio_std.to_string(),
            g.dist_per_regrasp_mean.to_string(),
            g.dist_per_regrasp_std.to_string(),
            g.vel_norm_mean.to_string(),
            g.vel_norm_std.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Output of the identification pipeline.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub dataset: Dataset,
    pub model: LinearModel<f64>,
    /// Gain at the identification speed.
    pub gain: CableGain<f64>,
    pub schedule: GainSchedule<f64>,
    pub a_d: Matrix3<f64>,
    pub b_d: Vector3<f64>,
    pub file: ModelFile,
}

/// Collects data on the configured sysid cable, fits the model and solves
/// the LQR gain at the pose rate.
pub fn fit_model(cfg: &Config) -> Result<FittedModel> {
    let s = &cfg.sysid;
    let spec = cfg.cable(&s.cable)?.clone();
    let sim_cfg = cfg.sim.clone();
    let opening = sim_cfg.opening_for_force(&spec, s.grip_force_n);
    let corpus = cfg.corpus.clone();
    let factory = |seed: u64| {
        let curve = make_cable(seed, corpus.length_mm, s.waviness_mm, corpus.n_waypoints, corpus.kappa_max)?;
        CableSim::new(curve, spec.clone(), sim_cfg.clone(), Fixture::default(), opening)
    };
    let dataset = collect(factory, &s.collect, &cfg.sensor, &cfg.perception, s.n_points, s.n_trajectories, s.seed)?;
    let model = fit::<f64>(&dataset.samples(), s.train_fraction)?;
    let dt = 1.0 / cfg.episode.pose_rate_hz;
    let (gain, a_d, b_d) = cable_gain(&model.a, &model.b, dt, &cfg.lqr)?;
    let schedule = GainSchedule::new(model.a, model.b, s.collect.v_x, dt, cfg.lqr.clone())?;
    let rho = spectral_radius(&(a_d - b_d * gain.k));
    let metadata = ModelMetadata {
        cable_id: spec.name.clone(),
        n_points: dataset.len(),
        n_trajectories: dataset.rollouts.len(),
        discarded: dataset.discarded,
        seed: s.seed,
        v_x: s.collect.v_x,
        state_rate_hz: s.collect.state_rate_hz,
        train_fraction: s.train_fraction,
        source: s.collect.source,
    };
    let mut file = ModelFile::from_model(&model, metadata);
    file.gain = Some(GainRecord {
        k: [gain.k[(0, 0)], gain.k[(0, 1)], gain.k[(0, 2)]],
        p: std::array::from_fn(|i| gain.p[(i / 3, i % 3)]),
        residual: gain.residual,
        spectral_radius: rho,
        dt,
        weights: cfg.lqr.weights.clone(),
    });
    Ok(FittedModel {
        dataset,
        model,
        gain,
        schedule,
        a_d,
        b_d,
        file,
    })
}

/// Gain schedule for a saved model, solved with the current LQR settings at
/// the pose rate.
pub fn schedule_from_file(file: &ModelFile, cfg: &Config) -> Result<GainSchedule<f64>> {
    file.validate()?;
    GainSchedule::new(
        file.a_matrix(),
        file.b_vector(),
        file.metadata.v_x,
        1.0 / cfg.episode.pose_rate_hz,
        cfg.lqr.clone(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Config,
    pub seeds: Vec<u64>,
    pub versions: Vec<(String, String)>,
    pub outputs: Vec<String>,
    pub wall_clock_s: f64,
}

impl RunManifest {
    pub fn new(command: &str, config: &Config, seeds: &[u64]) -> Self {
        Self {
            command: command.into(),
            config: config.clone(),
            seeds: seeds.to_vec(),
            versions: vec![("cable-follow".into(), env!("CARGO_PKG_VERSION").into())],
            outputs: Vec::new(),
            wall_clock_s: 0.0,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}
