//! Depth from gradient fields by a fast Poisson solve.
//!
//! The outermost pixel ring is the Dirichlet boundary. Its values come from
//! integrating the supplied gradients around the frame border, anchored to
//! zero at the corner with the least gradient activity; when the imprint
//! does not reach the frame edge this is exactly a zero-Dirichlet solve. The
//! interior is solved with the 5-point Laplacian diagonalised by a type-I
//! discrete sine transform in both directions.

use std::sync::Arc;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Reusable solver for one grid shape. Holds the FFT plans and Laplacian
/// eigenvalues so repeated frames skip the setup cost.
pub struct PoissonSolver<T: Real> {
    rows: usize,
    cols: usize,
    col_dst: Option<Dst1<T>>,
    row_dst: Option<Dst1<T>>,
    // Interior eigenvalues, column-major (m x n).
    eigen: Vec<T>,
}

struct Dst1<T: Real> {
    len: usize,
    fft: Arc<dyn Fft<T>>,
}

impl<T: Real> Dst1<T> {
    fn new(planner: &mut FftPlanner<T>, len: usize) -> Self {
        Self {
            len,
            fft: planner.plan_fft_forward(2 * (len + 1)),
        }
    }

    /// Unnormalised DST-I of every `len`-long lane in `lanes`.
    ///
    /// Lanes go through the FFT in pairs, one in the real and one in the
    /// imaginary part: the odd extension of a real lane has a purely
    /// imaginary spectrum, so the two results separate exactly.
    fn apply(&self, lanes: &mut [T], buf: &mut Vec<Complex<T>>, scratch: &mut Vec<Complex<T>>) {
        let n = self.len;
        let ext = 2 * (n + 1);
        let count = lanes.len() / n;
        let pairs = count.div_ceil(2);
        buf.clear();
        buf.resize(ext * pairs, Complex::new(T::zero(), T::zero()));
        for (idx, lane) in lanes.chunks(n).enumerate() {
            let chunk = &mut buf[(idx / 2) * ext..(idx / 2 + 1) * ext];
            let odd = idx % 2 == 1;
            for (m, &v) in lane.iter().enumerate() {
                if odd {
                    chunk[m + 1].im = v;
                    chunk[ext - 1 - m].im = -v;
                } else {
                    chunk[m + 1].re = v;
                    chunk[ext - 1 - m].re = -v;
                }
            }
        }
        scratch.resize(
            self.fft.get_inplace_scratch_len(),
            Complex::new(T::zero(), T::zero()),
        );
        self.fft.process_with_scratch(buf, scratch);
        let half = T::lit(0.5);
        for (idx, lane) in lanes.chunks_mut(n).enumerate() {
            let chunk = &buf[(idx / 2) * ext..(idx / 2 + 1) * ext];
            let odd = idx % 2 == 1;
            for (k, v) in lane.iter_mut().enumerate() {
                *v = if odd { chunk[k + 1].re * half } else { -chunk[k + 1].im * half };
            }
        }
    }
}

impl<T: Real> PoissonSolver<T> {
    pub fn new(rows: usize, cols: usize) -> Self {
        let m = rows.saturating_sub(2);
        let n = cols.saturating_sub(2);
        let mut planner = FftPlanner::new();
        let col_dst = (m > 0 && n > 0).then(|| Dst1::new(&mut planner, m));
        let row_dst = (m > 0 && n > 0).then(|| Dst1::new(&mut planner, n));
        let two = T::lit(2.0);
        let pi = T::pi();
        let mut eigen = Vec::with_capacity(m * n);
        for l in 1..=n {
            let ey = two * (pi * T::lit(l as f64) / T::lit((n + 1) as f64)).cos() - two;
            for k in 1..=m {
                let ex = two * (pi * T::lit(k as f64) / T::lit((m + 1) as f64)).cos() - two;
                eigen.push(ex + ey);
            }
        }
        Self {
            rows,
            cols,
            col_dst,
            row_dst,
            eigen,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn solve(&self, grad_x: &DMatrix<T>, grad_y: &DMatrix<T>) -> Result<DMatrix<T>> {
        let shape = (self.rows, self.cols);
        if grad_x.shape() != shape || grad_y.shape() != shape {
            return Err(Error::ShapeMismatch(format!(
                "solver is {:?}, grad_x is {:?}, grad_y is {:?}",
                shape,
                grad_x.shape(),
                grad_y.shape()
            )));
        }
        let (rows, cols) = shape;
        let mut z = DMatrix::zeros(rows, cols);
        if rows == 0 || cols == 0 {
            return Ok(z);
        }
        integrate_border(grad_x, grad_y, &mut z);

        let (Some(col_dst), Some(row_dst)) = (&self.col_dst, &self.row_dst) else {
            return Ok(z);
        };
        let (m, n) = (rows - 2, cols - 2);
        let half = T::lit(0.5);

        // Right-hand side, column-major over the interior.
        let mut f = vec![T::zero(); m * n];
        for jj in 0..n {
            let j = jj + 1;
            for ii in 0..m {
                let i = ii + 1;
                let mut div = (grad_x[(i, j + 1)] - grad_x[(i, j - 1)]) * half
                    + (grad_y[(i + 1, j)] - grad_y[(i - 1, j)]) * half;
                if i == 1 {
                    div -= z[(0, j)];
                }
                if i == rows - 2 {
                    div -= z[(rows - 1, j)];
                }
                if j == 1 {
                    div -= z[(i, 0)];
                }
                if j == cols - 2 {
                    div -= z[(i, cols - 1)];
                }
                f[jj * m + ii] = div;
            }
        }

        let mut buf = Vec::new();
        let mut scratch = Vec::new();
        let mut t = vec![T::zero(); m * n];

        // Forward transform: columns (contiguous), then rows.
        col_dst.apply(&mut f, &mut buf, &mut scratch);
        transpose_into(&f, m, n, &mut t);
        row_dst.apply(&mut t, &mut buf, &mut scratch);

        // Divide by eigenvalues; t is row-major (n-long lanes per k).
        for k in 0..m {
            for l in 0..n {
                t[k * n + l] /= self.eigen[l * m + k];
            }
        }

        // Inverse transform (DST-I is its own inverse up to scale).
        row_dst.apply(&mut t, &mut buf, &mut scratch);
        transpose_into(&t, n, m, &mut f);
        col_dst.apply(&mut f, &mut buf, &mut scratch);

        let scale = T::lit(4.0 / ((m + 1) as f64 * (n + 1) as f64));
        for jj in 0..n {
            for ii in 0..m {
                z[(ii + 1, jj + 1)] = f[jj * m + ii] * scale;
            }
        }
        Ok(z)
    }
}

/// Column-major `m x n` in `src` to column-major `n x m` in `dst`.
fn transpose_into<T: Copy>(src: &[T], m: usize, n: usize, dst: &mut [T]) {
    for j in 0..n {
        for i in 0..m {
            dst[i * n + j] = src[j * m + i];
        }
    }
}

/// Border ring positions in loop order: top row left to right, right column
/// downwards, bottom row right to left, left column upwards.
fn border_loop(rows: usize, cols: usize) -> Vec<(usize, usize)> {
    if rows == 1 {
        return (0..cols).map(|j| (0, j)).collect();
    }
    if cols == 1 {
        return (0..rows).map(|i| (i, 0)).collect();
    }
    let mut path = Vec::with_capacity(2 * (rows + cols) - 4);
    path.extend((0..cols).map(|j| (0, j)));
    path.extend((1..rows).map(|i| (i, cols - 1)));
    path.extend((0..cols - 1).rev().map(|j| (rows - 1, j)));
    path.extend((1..rows - 1).rev().map(|i| (i, 0)));
    path
}

fn integrate_border<T: Real>(gx: &DMatrix<T>, gy: &DMatrix<T>, z: &mut DMatrix<T>) {
    let (rows, cols) = gx.shape();
    let path = border_loop(rows, cols);
    let len = path.len();
    if len < 2 {
        return;
    }
    let closed = rows > 1 && cols > 1;
    let steps = if closed { len } else { len - 1 };
    let half = T::lit(0.5);

    let mut values = vec![T::zero(); len];
    let mut acc = T::zero();
    let mut increments = Vec::with_capacity(steps);
    for k in 0..steps {
        let a = path[k];
        let b = path[(k + 1) % len];
        let inc = if a.0 == b.0 {
            let sign = if b.1 > a.1 { T::one() } else { -T::one() };
            (gx[a] + gx[b]) * half * sign
        } else {
            let sign = if b.0 > a.0 { T::one() } else { -T::one() };
            (gy[a] + gy[b]) * half * sign
        };
        increments.push(inc);
    }
    for k in 1..len {
        acc += increments[k - 1];
        values[k] = acc;
    }
    if closed {
        // Spread the loop closure error evenly.
        let closure = acc + increments[len - 1];
        let n = T::lit(len as f64);
        for (k, v) in values.iter_mut().enumerate() {
            *v -= closure * T::lit(k as f64) / n;
        }
    }

    let corners: Vec<usize> = if closed {
        vec![0, cols - 1, cols - 1 + rows - 1, 2 * (cols - 1) + rows - 1]
    } else {
        vec![0, len - 1]
    };
    let anchor = corners
        .iter()
        .copied()
        .map(|k| (k, corner_activity(gx, gy, path[k])))
        .fold(None::<(usize, T)>, |best, (k, a)| match best {
            Some((_, b)) if b <= a => best,
            _ => Some((k, a)),
        })
        .map(|(k, _)| k)
        .unwrap_or(0);
    let offset = values[anchor];
    for (k, &(i, j)) in path.iter().enumerate() {
        z[(i, j)] = values[k] - offset;
    }
}

fn corner_activity<T: Real>(gx: &DMatrix<T>, gy: &DMatrix<T>, at: (usize, usize)) -> T {
    const REACH: usize = 3;
    let (rows, cols) = gx.shape();
    let i0 = at.0.saturating_sub(REACH);
    let i1 = (at.0 + REACH + 1).min(rows);
    let j0 = at.1.saturating_sub(REACH);
    let j1 = (at.1 + REACH + 1).min(cols);
    let mut sum = T::zero();
    for i in i0..i1 {
        for j in j0..j1 {
            sum += gx[(i, j)].abs() + gy[(i, j)].abs();
        }
    }
    sum
}

/// Reconstructs depth from per-pixel gradients.
pub fn poisson_reconstruct<T: Real>(grad_x: &DMatrix<T>, grad_y: &DMatrix<T>) -> Result<DMatrix<T>> {
    if grad_x.shape() != grad_y.shape() {
        return Err(Error::ShapeMismatch(format!(
            "grad_x is {:?}, grad_y is {:?}",
            grad_x.shape(),
            grad_y.shape()
        )));
    }
    let (rows, cols) = grad_x.shape();
    PoissonSolver::new(rows, cols).solve(grad_x, grad_y)
}

/// Max-norm of `lap(z) - div(g)` over interior pixels, with the same
/// discretisation the solver uses.
pub fn poisson_residual<T: Real>(z: &DMatrix<T>, grad_x: &DMatrix<T>, grad_y: &DMatrix<T>) -> T {
    let (rows, cols) = z.shape();
    let half = T::lit(0.5);
    let four = T::lit(4.0);
    let mut worst = T::zero();
    for i in 1..rows.saturating_sub(1) {
        for j in 1..cols.saturating_sub(1) {
            let lap = z[(i + 1, j)] + z[(i - 1, j)] + z[(i, j + 1)] + z[(i, j - 1)] - four * z[(i, j)];
            let div = (grad_x[(i, j + 1)] - grad_x[(i, j - 1)]) * half
                + (grad_y[(i + 1, j)] - grad_y[(i - 1, j)]) * half;
            let r = (lap - div).abs();
            if r > worst {
                worst = r;
            }
        }
    }
    worst
}
