use cable_follow::harness::{fit_model, schedule_from_file, Config};
use cable_follow::lqr::spectral_radius;
use cable_follow::sysid::{fit, ModelFile, Sample};
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn synthetic(a0: &Matrix3<f64>, b0: &Vector3<f64>, n: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let x = Vector3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
            let u = rng.gen_range(-1.0..1.0);
            let xdot = a0 * x + b0 * u;
            Sample {
                t: i as f64 / 30.0,
                x: x.into(),
                u,
                xdot: xdot.into(),
            }
        })
        .collect()
}

#[test]
fn noiseless_data_recovers_random_stable_systems() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for seed in 0..10 {
        let m: Matrix3<f64> = Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let a0 = m - Matrix3::identity() * (m.norm() + 0.5);
        let b0: Vector3<f64> = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let model = fit::<f64>(&synthetic(&a0, &b0, 2000, seed), 0.8).unwrap();
        assert!((model.a - a0).norm() / a0.norm() < 1e-6);
        assert!((model.b - b0).norm() / b0.norm() < 1e-6);
        assert!(model.fit_rmse.max() < 1e-9);
    }
}

#[test]
fn simulator_model_generalises_and_stabilises() {
    let cfg = Config::default();
    let fitted = fit_model(&cfg).unwrap();
    let m = &fitted.model;
    assert!(m.n_train + m.n_holdout >= cfg.sysid.n_points);
    for i in 0..3 {
        assert!(m.holdout_rmse[i] <= 1.25 * m.fit_rmse[i], "state {i}: {} vs {}", m.holdout_rmse[i], m.fit_rmse[i]);
    }
    let rho = spectral_radius(&(fitted.a_d - fitted.b_d * fitted.gain.k));
    assert!(rho < 1.0);
    assert!(fitted.gain.residual < 1e-8);

    // All four sign quadrants of (y, theta) are visited.
    let samples = fitted.dataset.samples();
    for (sy, st) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
        let hits = samples.iter().filter(|s| s.x[0] * sy > 0.0 && s.x[1] * st > 0.0).count();
        assert!(hits > samples.len() / 50, "quadrant ({sy}, {st}) has {hits} samples");
    }
}

#[test]
fn model_file_round_trips_into_the_same_schedule() {
    let cfg = Config::default();
    let fitted = fit_model(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    fitted.file.save(&path).unwrap();
    let loaded = ModelFile::load(&path).unwrap();
    assert_eq!(loaded, fitted.file);
    let schedule = schedule_from_file(&loaded, &cfg).unwrap();
    assert_eq!(schedule.a, fitted.schedule.a);
    assert_eq!(schedule.b, fitted.schedule.b);
    let g = schedule.gain_at(cfg.sysid.collect.v_x).unwrap();
    assert!((g.k - fitted.gain.k).norm() < 1e-12);
}

#[test]
fn fitting_is_deterministic() {
    let cfg = Config::default();
    let a = fit_model(&cfg).unwrap();
    let b = fit_model(&cfg).unwrap();
    assert_eq!(a.file, b.file);
    assert_eq!(a.dataset, b.dataset);
}
