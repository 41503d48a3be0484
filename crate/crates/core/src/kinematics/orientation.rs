use nalgebra::{UnitQuaternion, Vector3};

use super::{Frame, KinematicSeries};
use crate::error::{Error, Result};

/// Orientation of the head frame relative to the global frame (body to global).
pub type Quaternion = UnitQuaternion<f64>;

/// Integrates `dq/dt = ½ q ⊗ (0, ω_body)` from the identity.
///
/// Each step applies the exponential map of the trapezoidal mean of the two
/// bracketing angular velocity samples, `q[k+1] = q[k] ⊗ exp(½ ω̄ dt)`, which
/// is exact for constant ω. Every quaternion is renormalized after the update.
pub fn integrate_orientation(ang_vel: &[Vector3<f64>], dt: f64) -> Vec<Quaternion> {
    let mut out = Vec::with_capacity(ang_vel.len());
    if ang_vel.is_empty() {
        return out;
    }
    let mut q = Quaternion::identity();
    out.push(q);
    for w in ang_vel.windows(2) {
        let mean = 0.5 * (w[0] + w[1]);
        q *= Quaternion::from_scaled_axis(mean * dt);
        q.renormalize();
        out.push(q);
    }
    out
}

/// Rotates each sample by the matching orientation.
pub fn rotate_series(v: &[Vector3<f64>], q_seq: &[Quaternion]) -> Vec<Vector3<f64>> {
    v.iter().zip(q_seq).map(|(x, q)| q.transform_vector(x)).collect()
}

/// Re-expresses an anatomical-frame series in the global frame.
pub fn to_global(series: &KinematicSeries, q_seq: &[Quaternion]) -> Result<KinematicSeries> {
    if series.frame() == Frame::Global {
        return Err(Error::InvalidState("series is already in the global frame".into()));
    }
    if q_seq.len() != series.len() {
        return Err(Error::InvalidArgument(format!(
            "orientation sequence has {} entries for {} samples",
            q_seq.len(),
            series.len()
        )));
    }
    KinematicSeries::new(
        rotate_series(series.lin_acc(), q_seq),
        rotate_series(series.ang_vel(), q_seq),
        Frame::Global,
    )
}
