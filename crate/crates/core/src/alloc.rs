//! Wrench allocation through the virtual-input map.
//!
//! Per rotor the virtual input is `(h, v) = (f sin α, f cos α)`, in which the
//! rotor wrench is linear. The 6×2N map `A` is built by evaluating
//! [`rotor_wrench`] at the unit basis points and inverted once.

use nalgebra::{DMatrix, DVector, Vector3};
use thiserror::Error;

use crate::model::{rotor_wrench, RobotParams, Wrench};

/// Per-rotor thrust below which the tilt angle is undefined.
pub const DEGENERATE_THRUST: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AllocError {
    #[error("allocation matrix has rank {rank} < 6; rotor layout cannot produce arbitrary wrenches")]
    RankDeficient { rank: usize },
}

#[derive(Debug, Clone)]
pub struct AllocationMap {
    matrix: DMatrix<f64>,
    pinv: DMatrix<f64>,
    thrust_bounds: (f64, f64),
    servo_bounds: (f64, f64),
}

/// Result of [`allocate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub thrust: DVector<f64>,
    pub angle: DVector<f64>,
    /// Minimum-norm virtual input `z = A⁺ w`.
    pub virtual_input: DVector<f64>,
    /// Some output was clamped to the actuator limits.
    pub saturated: bool,
    /// Some rotor had (numerically) zero thrust, its angle was set to 0.
    pub degenerate: bool,
}

pub fn build_allocation(params: &RobotParams) -> Result<AllocationMap, AllocError> {
    let n = params.rotor_count();
    let mut matrix = DMatrix::zeros(6, 2 * n);
    for i in 0..n {
        for (col, angle) in [(2 * i, std::f64::consts::FRAC_PI_2), (2 * i + 1, 0.0)] {
            let mut angles = vec![0.0; n];
            let mut thrusts = vec![0.0; n];
            angles[i] = angle;
            thrusts[i] = 1.0;
            let w = rotor_wrench(&angles, &thrusts, params);
            matrix.fixed_view_mut::<3, 1>(0, col).copy_from(&w.force);
            matrix.fixed_view_mut::<3, 1>(3, col).copy_from(&w.torque);
        }
    }

    let svd = matrix.clone().svd(false, false);
    let s_max = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|&&s| s > 1e-9 * s_max).count();
    if rank < 6 {
        return Err(AllocError::RankDeficient { rank });
    }
    // full row rank: A⁺ = Aᵀ (A Aᵀ)⁻¹
    let gram = &matrix * matrix.transpose();
    let gram_inv = gram.cholesky().expect("A Aᵀ is positive definite at full row rank").inverse();
    let pinv = matrix.transpose() * gram_inv;
    Ok(AllocationMap {
        matrix,
        pinv,
        thrust_bounds: (params.thrust_min, params.thrust_max),
        servo_bounds: (params.servo_min, params.servo_max),
    })
}

impl AllocationMap {
    /// The 6×2N virtual-input map `A`.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// The precomputed Moore-Penrose inverse `A⁺`.
    pub fn pinv(&self) -> &DMatrix<f64> {
        &self.pinv
    }

    pub fn rotor_count(&self) -> usize {
        self.matrix.ncols() / 2
    }

    pub fn wrench_of(&self, z: &DVector<f64>) -> Wrench {
        let w = &self.matrix * z;
        Wrench::new(Vector3::new(w[0], w[1], w[2]), Vector3::new(w[3], w[4], w[5]))
    }
}

/// Minimum-norm per-rotor thrust and tilt producing `wrench`, clamped to
/// the actuator limits.
pub fn allocate(map: &AllocationMap, wrench: &Wrench) -> Allocation {
    let w = DVector::from_iterator(6, wrench.force.iter().chain(wrench.torque.iter()).copied());
    let z = &map.pinv * w;
    let n = map.rotor_count();
    let mut thrust = DVector::zeros(n);
    let mut angle = DVector::zeros(n);
    let mut saturated = false;
    let mut degenerate = false;
    let (f_lo, f_hi) = map.thrust_bounds;
    let (a_lo, a_hi) = map.servo_bounds;
    for i in 0..n {
        let (h, v) = (z[2 * i], z[2 * i + 1]);
        let f = h.hypot(v);
        let a = if f < DEGENERATE_THRUST {
            degenerate = true;
            0.0
        } else {
            h.atan2(v)
        };
        let fc = f.clamp(f_lo, f_hi);
        let ac = a.clamp(a_lo, a_hi);
        saturated |= fc != f || ac != a;
        thrust[i] = fc;
        angle[i] = ac;
    }
    Allocation { thrust, angle, virtual_input: z, saturated, degenerate }
}
