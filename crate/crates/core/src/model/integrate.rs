use nalgebra::DVector;

use super::quat::{quat_from_slice, quat_norm};
use super::ModelError;

/// One classic fourth-order Runge-Kutta step of length `h`.
///
/// `deriv(τ, x)` is evaluated at stage offsets `τ ∈ {0, h/2, h/2, h}`. If
/// `quat_offset` is given, the four entries starting there are renormalized
/// to a unit quaternion after the update.
pub fn rk4_step<F>(
    x: &DVector<f64>,
    h: f64,
    quat_offset: Option<usize>,
    mut deriv: F,
) -> Result<DVector<f64>, ModelError>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    assert!(h > 0.0, "step must be positive");
    let k1 = deriv(0.0, x);
    let k2 = deriv(0.5 * h, &(x + &k1 * (0.5 * h)));
    let k3 = deriv(0.5 * h, &(x + &k2 * (0.5 * h)));
    let k4 = deriv(h, &(x + &k3 * h));
    let mut next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    if let Some(o) = quat_offset {
        let n = quat_norm(&quat_from_slice(&next.as_slice()[o..o + 4]));
        for v in next.rows_mut(o, 4).iter_mut() {
            *v /= n;
        }
    }
    if next.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::IntegrationFailure);
    }
    Ok(next)
}
