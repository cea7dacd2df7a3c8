//! Marker association between frames and the mean-displacement friction
//! proxy `D`.
//!
//! Matching is nearest-neighbour initialised, followed by one refinement
//! pass that re-picks each marker's partner among its nearest candidates
//! using a cost of squared match distance plus `reg_weight` times the squared
//! deviation from the mean displacement of its neighbouring markers.

use nalgebra::Vector2;

use crate::error::{invalid, Result};
use crate::scalar::Real;

const CANDIDATES: usize = 4;
const NEIGHBOURS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct FrictionEstimate<T: Real> {
    /// One displacement per marker of the previous frame, in its order.
    pub displacement_field: Vec<Vector2<T>>,
    pub mean_px: Vector2<T>,
    /// Magnitude of `mean_px`.
    pub d: T,
    /// Set when the frames disagree on marker count beyond tolerance or the
    /// association is not one-to-one.
    pub degraded: bool,
}

fn k_nearest<T: Real>(points: &[Vector2<T>], from: Vector2<T>, k: usize, skip: Option<usize>) -> Vec<usize> {
    let mut idx: Vec<(usize, T)> = points
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != skip)
        .map(|(i, p)| (i, (p - from).norm_squared()))
        .collect();
    idx.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)));
    idx.truncate(k);
    idx.into_iter().map(|(i, _)| i).collect()
}

pub fn track_markers<T: Real>(
    prev: &[Vector2<T>],
    curr: &[Vector2<T>],
    reg_weight: T,
) -> Result<FrictionEstimate<T>> {
    if prev.is_empty() || curr.is_empty() {
        return Err(invalid("markers", "both marker lists must be non-empty"));
    }
    if reg_weight < T::zero() {
        return Err(invalid("reg_weight", "must be non-negative"));
    }

    let candidates: Vec<Vec<usize>> = prev
        .iter()
        .map(|&p| k_nearest(curr, p, CANDIDATES, None))
        .collect();
    let neighbours: Vec<Vec<usize>> = prev
        .iter()
        .enumerate()
        .map(|(i, &p)| k_nearest(prev, p, NEIGHBOURS, Some(i)))
        .collect();

    let initial: Vec<usize> = candidates.iter().map(|c| c[0]).collect();
    let initial_disp: Vec<Vector2<T>> = initial
        .iter()
        .zip(prev)
        .map(|(&c, p)| curr[c] - p)
        .collect();

    let mut assignment = initial.clone();
    for (i, p) in prev.iter().enumerate() {
        let nb = &neighbours[i];
        if nb.is_empty() {
            continue;
        }
        let smooth = nb.iter().fold(Vector2::zeros(), |acc, &k| acc + initial_disp[k])
            / T::lit(nb.len() as f64);
        let cost = |c: usize| {
            let disp = curr[c] - p;
            disp.norm_squared() + reg_weight * (disp - smooth).norm_squared()
        };
        let mut best = initial[i];
        let mut best_cost = cost(best);
        for &c in &candidates[i] {
            let v = cost(c);
            if v < best_cost {
                best = c;
                best_cost = v;
            }
        }
        assignment[i] = best;
    }

    let field: Vec<Vector2<T>> = assignment
        .iter()
        .zip(prev)
        .map(|(&c, p)| curr[c] - p)
        .collect();
    let mean = field.iter().fold(Vector2::zeros(), |acc, d| acc + d) / T::lit(field.len() as f64);

    let mut used = vec![false; curr.len()];
    let mut injective = true;
    for &c in &assignment {
        if used[c] {
            injective = false;
        }
        used[c] = true;
    }
    let size_tolerance = (prev.len().max(curr.len()) / 10).max(1);
    let size_ok = prev.len().abs_diff(curr.len()) <= size_tolerance;

    Ok(FrictionEstimate {
        d: mean.norm(),
        mean_px: mean,
        displacement_field: field,
        degraded: !(injective && size_ok),
    })
}
