//! Infinite-horizon discrete LQR for the fitted cable model and the pose
//! controller `phi = -K x`.

use nalgebra::{DMatrix, Matrix3, SMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Real;

/// State and input weights. `q` holds the diagonal of Q.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LqrWeights {
    pub q: [f64; 3],
    pub r: f64,
}

impl Default for LqrWeights {
    fn default() -> Self {
        Self {
            q: [1.0, 1.0, 0.1],
            r: 0.1,
        }
    }
}

impl LqrWeights {
    pub fn validate(&self) -> Result<()> {
        if self.q.iter().any(|&v| !(v >= 0.0)) {
            return Err(invalid("lqr.q", "diagonal entries must be non-negative"));
        }
        if !(self.r > 0.0) {
            return Err(invalid("lqr.r", "must be positive"));
        }
        Ok(())
    }

    pub fn q_matrix<T: Real>(&self) -> Matrix3<T> {
        Matrix3::from_diagonal(&Vector3::new(
            T::lit(self.q[0]),
            T::lit(self.q[1]),
            T::lit(self.q[2]),
        ))
    }

    pub fn r_matrix<T: Real>(&self) -> SMatrix<T, 1, 1> {
        SMatrix::<T, 1, 1>::new(T::lit(self.r))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LqrConfig {
    pub weights: LqrWeights,
    pub tol: f64,
    pub max_iter: usize,
    /// Pulling-direction saturation, degrees.
    pub phi_max_deg: f64,
    /// Rescale the identified model by `v / v_fit` before solving, since the
    /// quasistatic plant moves in proportion to the pulling speed.
    pub speed_scheduled: bool,
}

impl Default for LqrConfig {
    fn default() -> Self {
        Self {
            weights: LqrWeights::default(),
            tol: 1e-10,
            max_iter: 10_000,
            phi_max_deg: 60.0,
            speed_scheduled: true,
        }
    }
}

impl LqrConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if !(self.tol > 0.0) {
            return Err(invalid("lqr.tol", "must be positive"));
        }
        if self.max_iter == 0 {
            return Err(invalid("lqr.max_iter", "must be positive"));
        }
        if !(self.phi_max_deg > 0.0 && self.phi_max_deg <= 90.0) {
            return Err(invalid("lqr.phi_max_deg", "must lie in (0, 90]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LqrGain<T: Real, const N: usize, const M: usize> {
    pub k: SMatrix<T, M, N>,
    pub p: SMatrix<T, N, N>,
    /// Max-abs Riccati defect of `p`.
    pub residual: T,
    pub iterations: usize,
}

/// Gain for the three-state, one-input cable model.
pub type CableGain<T> = LqrGain<T, 3, 1>;

/// Exact zero-order-hold discretisation: exponential of the augmented
/// matrix `[[A, B], [0, 0]] * dt`.
pub fn discretize<T: Real, const N: usize, const M: usize>(
    a: &SMatrix<T, N, N>,
    b: &SMatrix<T, N, M>,
    dt: T,
) -> Result<(SMatrix<T, N, N>, SMatrix<T, N, M>)> {
    if !(dt > T::zero()) {
        return Err(invalid("dt", "must be positive"));
    }
    let mut aug = DMatrix::<T>::zeros(N + M, N + M);
    aug.view_mut((0, 0), (N, N)).copy_from(&(a * dt));
    aug.view_mut((0, N), (N, M)).copy_from(&(b * dt));
    let e = aug.exp();
    let a_d = SMatrix::<T, N, N>::from_fn(|i, j| e[(i, j)]);
    let b_d = SMatrix::<T, N, M>::from_fn(|i, j| e[(i, N + j)]);
    Ok((a_d, b_d))
}

fn riccati_step<T: Real, const N: usize, const M: usize>(
    a: &SMatrix<T, N, N>,
    b: &SMatrix<T, N, M>,
    q: &SMatrix<T, N, N>,
    r: &SMatrix<T, M, M>,
    p: &SMatrix<T, N, N>,
) -> Option<(SMatrix<T, N, N>, SMatrix<T, M, N>)> {
    let at = a.transpose();
    let bt = b.transpose();
    let pa = p * a;
    let s = r + bt * p * b;
    let k = s.try_inverse()? * (bt * pa);
    let next = at * pa - at * p * b * k + q;
    // Symmetrise against round-off drift.
    let next = (next + next.transpose()) * T::lit(0.5);
    Some((next, k))
}

/// Fixed-point iteration on the discrete algebraic Riccati equation,
/// starting from `P = Q`, until the max-abs step falls below `tol`.
pub fn solve_dare<T: Real, const N: usize, const M: usize>(
    a: &SMatrix<T, N, N>,
    b: &SMatrix<T, N, M>,
    q: &SMatrix<T, N, N>,
    r: &SMatrix<T, M, M>,
    tol: T,
    max_iter: usize,
) -> Result<LqrGain<T, N, M>> {
    let diverged = |iterations: usize, step: T| Error::RiccatiDiverged {
        iterations,
        last_step: step.to_f64_lossy(),
    };
    let mut p = *q;
    let mut step = T::zero();
    for it in 1..=max_iter {
        let (next, _) = riccati_step(a, b, q, r, &p).ok_or_else(|| diverged(it, step))?;
        step = (next - p).abs().max();
        if !step.is_finite() {
            return Err(diverged(it, step));
        }
        p = next;
        if step < tol {
            let (again, k) = riccati_step(a, b, q, r, &p).ok_or_else(|| diverged(it, step))?;
            let residual = (again - p).abs().max();
            return Ok(LqrGain {
                k,
                p,
                residual,
                iterations: it,
            });
        }
    }
    Err(diverged(max_iter, step))
}

/// Largest eigenvalue modulus.
pub fn spectral_radius<T: Real, const N: usize>(m: &SMatrix<T, N, N>) -> T {
    DMatrix::from_fn(N, N, |i, j| m[(i, j)])
        .complex_eigenvalues()
        .iter()
        .map(|c| (c.re * c.re + c.im * c.im).sqrt())
        .fold(T::zero(), |acc, v| if v > acc { v } else { acc })
}

/// Pulling direction relative to `alpha` for state `[y_mm, theta, alpha]`,
/// saturated to `|phi| <= phi_max`.
pub fn pose_control<T: Real>(x: &Vector3<T>, gain: &CableGain<T>, phi_max: T) -> T {
    let phi = -(gain.k * x)[(0, 0)];
    phi.clamp(-phi_max, phi_max)
}

/// Solves the cable-model LQR after discretising at `dt`.
pub fn cable_gain<T: Real>(
    a: &Matrix3<T>,
    b: &Vector3<T>,
    dt: T,
    config: &LqrConfig,
) -> Result<(CableGain<T>, Matrix3<T>, Vector3<T>)> {
    config.validate()?;
    let (a_d, b_d) = discretize(a, b, dt)?;
    let gain = solve_dare(
        &a_d,
        &b_d,
        &config.weights.q_matrix(),
        &config.weights.r_matrix(),
        T::lit(config.tol),
        config.max_iter,
    )?;
    Ok((gain, a_d, b_d))
}

/// Identified continuous model plus everything needed to solve a gain for a
/// given pulling speed.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSchedule<T: Real> {
    pub a: Matrix3<T>,
    pub b: Vector3<T>,
    /// Pulling speed the model was identified at, m/s.
    pub v_fit: T,
    pub dt: T,
    pub config: LqrConfig,
}

impl<T: Real> GainSchedule<T> {
    pub fn new(a: Matrix3<T>, b: Vector3<T>, v_fit: T, dt: T, config: LqrConfig) -> Result<Self> {
        config.validate()?;
        if !(v_fit > T::zero()) {
            return Err(invalid("v_fit", "must be positive"));
        }
        if !(dt > T::zero()) {
            return Err(invalid("dt", "must be positive"));
        }
        Ok(Self { a, b, v_fit, dt, config })
    }

    /// Model used at speed `v`: unchanged unless speed scheduling is on.
    pub fn model_at(&self, v: T) -> (Matrix3<T>, Vector3<T>) {
        if self.config.speed_scheduled {
            let f = v / self.v_fit;
            (self.a * f, self.b * f)
        } else {
            (self.a, self.b)
        }
    }

    pub fn gain_at(&self, v: T) -> Result<CableGain<T>> {
        if !(v > T::zero()) {
            return Err(invalid("v", "must be positive"));
        }
        let (a, b) = self.model_at(v);
        Ok(cable_gain(&a, &b, self.dt, &self.config)?.0)
    }
}
