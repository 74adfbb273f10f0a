//! Primal active-set solver for strictly convex box-constrained QPs
//!
//! ```text
//! minimize ½ zᵀ H z + gᵀ z   subject to   l ≤ z ≤ u
//! ```
//!
//! The free-variable block of `H` is kept as a Cholesky factor that is
//! updated by column insertion/removal as bounds enter and leave the
//! working set.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    MaxIterations,
    /// `H` restricted to the free set was not positive definite.
    NotConvex,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub iterations: usize,
    /// Infinity norm of the projected gradient `z - clamp(z - ∇, l, u)`.
    pub kkt_residual: f64,
    pub objective: f64,
    pub status: QpStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bound {
    Free,
    Lower,
    Upper,
}

pub fn objective(h: &DMatrix<f64>, g: &DVector<f64>, z: &DVector<f64>) -> f64 {
    0.5 * z.dot(&(h * z)) + g.dot(z)
}

pub fn projected_gradient_norm(
    z: &DVector<f64>,
    grad: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
) -> f64 {
    (0..z.len())
        .map(|i| (z[i] - (z[i] - grad[i]).clamp(lower[i], upper[i])).abs())
        .fold(0.0, f64::max)
}

fn free_factor(h: &DMatrix<f64>, free: &[usize]) -> Option<Cholesky<f64, Dyn>> {
    let sub = DMatrix::from_fn(free.len(), free.len(), |r, c| h[(free[r], free[c])]);
    Cholesky::new(sub)
}

/// Solves the box QP starting from the feasible point `clamp(0, l, u)`.
///
/// `tol` bounds both the multiplier sign test and the reported optimality;
/// at most `max_iter` working-set changes are made.
pub fn solve_box_qp(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> QpSolution {
    let n = g.len();
    assert_eq!(h.shape(), (n, n));
    assert!(lower.len() == n && upper.len() == n);

    let mut z = DVector::from_fn(n, |i, _| 0.0f64.clamp(lower[i], upper[i]));
    let mut state: Vec<Bound> = (0..n)
        .map(|i| {
            if z[i] <= lower[i] {
                Bound::Lower
            } else if z[i] >= upper[i] {
                Bound::Upper
            } else {
                Bound::Free
            }
        })
        .collect();
    let mut free: Vec<usize> = (0..n).filter(|&i| state[i] == Bound::Free).collect();
    let mut chol = free_factor(h, &free);

    let mut iterations = 0;
    let mut at_subspace_min = false;
    let mut status = QpStatus::MaxIterations;
    while iterations < max_iter {
        let Some(factor) = chol.as_ref() else {
            status = QpStatus::NotConvex;
            break;
        };
        let grad = h * &z + g;

        if !at_subspace_min && !free.is_empty() {
            let rhs = DVector::from_fn(free.len(), |r, _| -grad[free[r]]);
            let p = factor.solve(&rhs);
            let mut step = 1.0;
            let mut blocking = None;
            for (r, &i) in free.iter().enumerate() {
                let (t, side) = if p[r] < 0.0 {
                    ((lower[i] - z[i]) / p[r], Bound::Lower)
                } else if p[r] > 0.0 {
                    ((upper[i] - z[i]) / p[r], Bound::Upper)
                } else {
                    continue;
                };
                if t < step {
                    step = t.max(0.0);
                    blocking = Some((r, i, side));
                }
            }
            for (r, &i) in free.iter().enumerate() {
                z[i] += step * p[r];
            }
            iterations += 1;
            match blocking {
                Some((r, i, side)) => {
                    z[i] = if side == Bound::Lower { lower[i] } else { upper[i] };
                    state[i] = side;
                    free.remove(r);
                    chol = Some(factor.remove_column(r));
                }
                None => at_subspace_min = true,
            }
            continue;
        }

        // stationary on the current face: check bound multipliers
        let mut worst: Option<(usize, f64)> = None;
        for i in 0..n {
            let lambda = match state[i] {
                Bound::Free => continue,
                Bound::Lower => grad[i],
                Bound::Upper => -grad[i],
            };
            if lambda < -tol && worst.is_none_or(|(_, w)| lambda < w) {
                worst = Some((i, lambda));
            }
        }
        let Some((i, _)) = worst else {
            status = QpStatus::Optimal;
            break;
        };
        let pos = free.partition_point(|&j| j < i);
        free.insert(pos, i);
        state[i] = Bound::Free;
        let col = DVector::from_fn(free.len(), |r, _| h[(free[r], i)]);
        chol = Some(factor.insert_column(pos, col));
        if chol.as_ref().is_some_and(|c| c.l_dirty().iter().any(|v| !v.is_finite())) {
            chol = free_factor(h, &free);
        }
        at_subspace_min = false;
        iterations += 1;
    }

    let grad = h * &z + g;
    QpSolution {
        kkt_residual: projected_gradient_norm(&z, &grad, lower, upper),
        objective: objective(h, g, &z),
        z,
        iterations,
        status,
    }
}
