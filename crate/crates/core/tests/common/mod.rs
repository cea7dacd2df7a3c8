//! Property checks shared by the invariant suite and the acceptance target.

#![allow(dead_code)]

use cable_follow::cable_sim::{make_cable, CableSim, CableSpec, CableState, Fixture, RobotCommand, SimConfig, SimEvent};
use cable_follow::grip_control::leaky_target;
use cable_follow::lqr::{solve_dare, spectral_radius};
use cable_follow::perception::{region_from_mask, PoissonSolver};
use nalgebra::{DMatrix, Matrix1, Matrix3, Vector2, Vector3};
use proptest::prelude::*;
use proptest::test_runner::{Config as RunnerConfig, TestError, TestRunner};

pub const CASES: u32 = 100;

/// Runs `test` over `CASES` inputs from `strategy` with a fixed RNG seed.
pub fn check<S, F>(strategy: S, test: F) -> Result<(), String>
where
    S: Strategy,
    S::Value: std::fmt::Debug,
    F: Fn(S::Value) -> Result<(), TestCaseError>,
{
    let mut runner = TestRunner::new_with_rng(
        RunnerConfig {
            cases: CASES,
            failure_persistence: None,
            ..RunnerConfig::default()
        },
        proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    );
    runner.run(&strategy, test).map_err(|e| match e {
        TestError::Abort(why) => format!("aborted: {why}"),
        TestError::Fail(why, input) => format!("{why} for input {input:?}"),
    })
}

// LQR: x'Px never increases along the closed loop.

pub fn lyapunov_strategy() -> impl Strategy<Value = ([f64; 12], [f64; 3])> {
    (prop::array::uniform12(-1.0f64..1.0), prop::array::uniform3(-5.0f64..5.0))
}

pub fn lyapunov_decrease((seed, x0): ([f64; 12], [f64; 3])) -> Result<(), TestCaseError> {
    let a = Matrix3::from_fn(|i, j| seed[i * 3 + j] * 0.6 + if i == j { 0.2 } else { 0.0 });
    let b = Vector3::new(seed[9], seed[10], seed[11] + 1.5);
    let q = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.1));
    let r = Matrix1::new(0.1);
    let Ok(g) = solve_dare(&a, &b, &q, &r, 1e-11, 20_000) else {
        return Ok(());
    };
    let acl = a - b * g.k;
    prop_assert!(spectral_radius(&acl) < 1.0);
    let mut x = Vector3::from(x0);
    for _ in 0..30 {
        let v0 = (x.transpose() * g.p * x)[(0, 0)];
        x = acl * x;
        let v1 = (x.transpose() * g.p * x)[(0, 0)];
        prop_assert!(v1 <= v0 * (1.0 + 1e-9) + 1e-12, "V rose from {v0} to {v1}");
    }
    Ok(())
}

// Leaky integrator: a contraction with factor lambda.

pub fn contraction_strategy() -> impl Strategy<Value = (f64, f64, bool, f64)> {
    (-3.0f64..3.0, -3.0f64..3.0, any::<bool>(), 0.01f64..0.99)
}

pub fn leaky_contraction((a, b, s, lambda): (f64, f64, bool, f64)) -> Result<(), TestCaseError> {
    let s = if s { 1.0 } else { 0.0 };
    let gap = (leaky_target(a, s, lambda) - leaky_target(b, s, lambda)).abs();
    prop_assert!(gap <= lambda * (a - b).abs() + 1e-12);
    let fixed = 1.0 - s;
    prop_assert!((leaky_target(fixed, s, lambda) - fixed).abs() < 1e-12);
    Ok(())
}

// PCA: moving a bar rigidly moves its centroid and turns its axis.

pub fn bar_mask(rows: usize, cols: usize, angle: f64, half_len: f64, half_w: f64, c: Vector2<f64>) -> DMatrix<bool> {
    let (s, co) = angle.sin_cos();
    DMatrix::from_fn(rows, cols, |i, j| {
        let d = Vector2::new(j as f64, i as f64) - c;
        (co * d.x + s * d.y).abs() <= half_len && (-s * d.x + co * d.y).abs() <= half_w
    })
}

fn axis_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(std::f64::consts::PI);
    d.min(std::f64::consts::PI - d)
}

pub fn pca_strategy() -> impl Strategy<Value = (f64, f64, [f64; 2], [f64; 2])> {
    (
        -1.5f64..1.5,
        -3.1f64..3.1,
        prop::array::uniform2(-20.0f64..20.0),
        prop::array::uniform2(-20.0f64..20.0),
    )
}

/// Bar of 100 × 14 px; the tolerance covers pixel sampling of the edges.
pub fn pca_equivariance((angle, turn, c0, shift): (f64, f64, [f64; 2], [f64; 2])) -> Result<(), TestCaseError> {
    let (rows, cols) = (193, 257);
    let mid = Vector2::new(128.0, 96.0);
    let c1 = mid + Vector2::from(c0);
    let c2 = c1 + Vector2::from(shift);
    let r1 = region_from_mask::<f64>(bar_mask(rows, cols, angle, 50.0, 7.0, c1));
    let r2 = region_from_mask::<f64>(bar_mask(rows, cols, angle + turn, 50.0, 7.0, c2));
    let axis = |m: &nalgebra::Matrix2<f64>| 0.5 * (2.0 * m[(0, 1)]).atan2(m[(0, 0)] - m[(1, 1)]);

    let expected = c2 + nalgebra::Rotation2::new(turn) * (r1.centroid_px - c1);
    prop_assert!((r2.centroid_px - expected).norm() < 0.5, "centroid {} vs {}", r2.centroid_px, expected);
    let gap = axis_gap(axis(&r2.second_moments), axis(&r1.second_moments) + turn);
    prop_assert!(gap < 1f64.to_radians(), "axis off by {} deg", gap.to_degrees());
    let ratio = r2.area_px as f64 / r1.area_px as f64;
    prop_assert!((ratio - 1.0).abs() < 0.03);
    Ok(())
}

pub fn translation_strategy() -> impl Strategy<Value = (f64, [i32; 2])> {
    (-1.5f64..1.5, prop::array::uniform2(-30i32..30))
}

/// Integer pixel shifts are exact.
pub fn pca_integer_translation((angle, shift): (f64, [i32; 2])) -> Result<(), TestCaseError> {
    let c = Vector2::new(128.3, 96.6);
    let d = Vector2::new(shift[0] as f64, shift[1] as f64);
    let r1 = region_from_mask::<f64>(bar_mask(193, 257, angle, 45.0, 6.0, c));
    let r2 = region_from_mask::<f64>(bar_mask(193, 257, angle, 45.0, 6.0, c + d));
    prop_assert_eq!(r1.area_px, r2.area_px);
    prop_assert!((r2.centroid_px - r1.centroid_px - d).norm() < 1e-9);
    prop_assert!((r2.second_moments - r1.second_moments).norm() < 1e-7);
    Ok(())
}

// Poisson: the reconstruction is linear in the gradient field.

pub fn poisson_strategy() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<f64>, f64, f64)> {
    (6usize..24, 6usize..24).prop_flat_map(|(r, c)| {
        (
            Just(r),
            Just(c),
            prop::collection::vec(-1.0f64..1.0, 2 * r * c),
            prop::collection::vec(-1.0f64..1.0, 2 * r * c),
            -3.0f64..3.0,
            -3.0f64..3.0,
        )
    })
}

/// Homogeneous for any field. Superposition holds when the fields are quiet
/// near the corners, since the border gauge is anchored at the quietest
/// corner.
pub fn poisson_linearity(
    (rows, cols, g1, g2, a, b): (usize, usize, Vec<f64>, Vec<f64>, f64, f64),
) -> Result<(), TestCaseError> {
    let n = rows * cols;
    let field = |v: &[f64]| {
        (
            DMatrix::from_column_slice(rows, cols, &v[..n]),
            DMatrix::from_column_slice(rows, cols, &v[n..]),
        )
    };
    let solver = PoissonSolver::<f64>::new(rows, cols);
    let close = |z: &DMatrix<f64>, expected: &DMatrix<f64>| {
        let err = (z - expected).abs().max();
        (err <= 1e-9 * (1.0 + expected.abs().max()), err)
    };

    let (x1, y1) = field(&g1);
    let z1 = solver.solve(&x1, &y1).unwrap();
    let (ok, err) = close(&solver.solve(&(&x1 * a), &(&y1 * a)).unwrap(), &(&z1 * a));
    prop_assert!(ok, "scaling by {a} deviates by {err}");

    let quiet = |m: DMatrix<f64>| {
        DMatrix::from_fn(rows, cols, |i, j| {
            let near = |k: usize, len: usize| k <= 3 || k + 4 >= len;
            if near(i, rows) && near(j, cols) {
                0.0
            } else {
                m[(i, j)]
            }
        })
    };
    let (x1, y1) = (quiet(x1), quiet(y1));
    let (x2, y2) = field(&g2);
    let (x2, y2) = (quiet(x2), quiet(y2));
    let z1 = solver.solve(&x1, &y1).unwrap();
    let z2 = solver.solve(&x2, &y2).unwrap();
    let z = solver.solve(&(&x1 * a + &x2 * b), &(&y1 * a + &y2 * b)).unwrap();
    let (ok, err) = close(&z, &(z1 * a + z2 * b));
    prop_assert!(ok, "superposition deviates by {err}");
    Ok(())
}

// Simulator: arclength bookkeeping and rigid-motion invariance.

pub fn arc_strategy() -> impl Strategy<Value = (u64, f64, f64, f64)> {
    (0u64..10_000, 0.0f64..30.0, 0.0f64..1.0, 0.0f64..1.0)
}

pub fn arc_consistency((seed, waviness, u, w): (u64, f64, f64, f64)) -> Result<(), TestCaseError> {
    let curve = make_cable(seed, 600.0, waviness, 10, 0.05).unwrap();
    prop_assert!((curve.total_length_mm - 600.0).abs() < 1e-6);
    let (s1, s2) = {
        let (a, b) = (u * 600.0, w * 600.0);
        (a.min(b), a.max(b))
    };
    let chord = (curve.point(s2) - curve.point(s1)).norm();
    prop_assert!(chord <= s2 - s1 + 1e-6, "chord {chord} exceeds arc {}", s2 - s1);

    let s = (u * 590.0).max(1.0);
    let h = 0.05;
    let fd = (curve.point(s + h) - curve.point(s - h)) / (2.0 * h);
    prop_assert!((fd.norm() - 1.0).abs() < 1e-3, "speed {}", fd.norm());
    prop_assert!((fd.normalize() - curve.tangent(s)).norm() < 1e-3);

    // Pulling along a straight cable advances s by exactly sigma times travel.
    let straight = make_cable(seed, 600.0, 0.0, 10, 0.05).unwrap();
    let spec = CableSpec::preset("thin_nylon_usb").unwrap();
    let cfg = SimConfig::default();
    let mut sim = CableSim::new(straight, spec.clone(), cfg.clone(), Fixture::default(), cfg.opening_for_force(&spec, 1.0 + 3.0 * w)).unwrap();
    let s0 = sim.state.s;
    let sigma = sim.state.sigma;
    for _ in 0..50 {
        prop_assert_eq!(sim.step(RobotCommand { v_x: 0.02, v_y: 0.0 }, sim.state.opening_mm, 0.008).unwrap(), SimEvent::None);
    }
    let travel = 50.0 * 0.02 * 1000.0 * 0.008;
    prop_assert!((sim.state.s - s0 - sigma * travel).abs() < 1e-9);
    Ok(())
}

pub fn frame_strategy() -> impl Strategy<Value = (u64, f64, [f64; 2], Vec<(f64, f64)>)> {
    (
        0u64..1000,
        -3.1f64..3.1,
        prop::array::uniform2(-500.0f64..500.0),
        prop::collection::vec((0.005f64..0.04, -0.01f64..0.01), 1..120),
    )
}

fn in_hand_trace(rotation: f64, shift: [f64; 2], seed: u64, cmds: &[(f64, f64)]) -> Vec<CableState> {
    let curve = make_cable(seed, 600.0, 20.0, 10, 0.05).unwrap().rotated(rotation);
    let fixture = Fixture {
        position: shift,
        heading: rotation,
    };
    let cfg = SimConfig::default();
    let spec = CableSpec::preset("thin_nylon_usb").unwrap();
    let mut sim = CableSim::new(curve, spec.clone(), cfg.clone(), fixture, cfg.opening_for_force(&spec, 1.5)).unwrap();
    let mut out = Vec::new();
    for &(vx, vy) in cmds {
        let cmd = RobotCommand::from_local(vx, vy, rotation);
        if sim.step(cmd, sim.state.opening_mm, 0.008).unwrap() != SimEvent::None {
            break;
        }
        out.push(sim.state.cable_state);
    }
    out
}

/// The plant works in the fixed gripper's frame and reads only intrinsic
/// curve geometry, so rotating the world and moving the fixture leaves the
/// in-hand states unchanged.
pub fn frame_invariance((seed, rotation, shift, cmds): (u64, f64, [f64; 2], Vec<(f64, f64)>)) -> Result<(), TestCaseError> {
    let base = in_hand_trace(0.0, [0.0, 0.0], seed, &cmds);
    let moved = in_hand_trace(rotation, shift, seed, &cmds);
    prop_assert_eq!(base.len(), moved.len());
    for (a, b) in base.iter().zip(&moved) {
        prop_assert!((a.y - b.y).abs() < 1e-9);
        prop_assert!((a.theta - b.theta).abs() < 1e-9);
        prop_assert!((a.alpha - b.alpha).abs() < 1e-9);
    }
    Ok(())
}
