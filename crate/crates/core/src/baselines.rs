//! Kinematics-based impact location estimators used as comparators.
//!
//! All three locate the impact on the 135 mm helmet sphere from anatomical
//! frame kinematics at the CoG. Peak times are the earliest sample with the
//! largest vector magnitude.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{location_of_direction, ImpactLocation, HELMET_RADIUS_MM};
use crate::kinematics::{angular_acceleration, KinematicSeries};

const MIN_LINEAR: f64 = 1e-6;
const MIN_ANGULAR_ACC: f64 = 1e-6;
const MIN_FORCE_N: f64 = 1e-3;

/// Inertial properties of the head as a free rigid body.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidBodyParams {
    pub mass_kg: f64,
    /// Inertia tensor about the CoG in the head frame, kg·m².
    pub inertia: Matrix3<f64>,
    pub sphere_radius_mm: f64,
}

impl Default for RigidBodyParams {
    /// Hybrid III 50th percentile head.
    fn default() -> Self {
        Self {
            mass_kg: 4.54,
            inertia: Matrix3::from_diagonal(&Vector3::new(0.0200, 0.0230, 0.0170)),
            sphere_radius_mm: HELMET_RADIUS_MM,
        }
    }
}

impl RigidBodyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mass_kg > 0.0) {
            return Err(Error::InvalidArgument(format!("head mass must be positive, got {}", self.mass_kg)));
        }
        if (self.inertia - self.inertia.transpose()).amax() > 1e-12 * self.inertia.amax() {
            return Err(Error::InvalidArgument("inertia tensor must be symmetric".into()));
        }
        if self.inertia.cholesky().is_none() {
            return Err(Error::InvalidArgument("inertia tensor must be positive definite".into()));
        }
        if !(self.sphere_radius_mm > 0.0) {
            return Err(Error::InvalidArgument("sphere radius must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineFlag {
    /// Angular acceleration too small to define a correction axis.
    DegenerateCorrection,
    /// Required moment arm exceeds the sphere; closest point returned.
    OutOfReach,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineEstimate {
    pub location: ImpactLocation,
    /// Impact point on the sphere, head frame, mm.
    pub point_mm: Vector3<f64>,
    pub flag: Option<BaselineFlag>,
}

impl BaselineEstimate {
    fn on_sphere(direction: Vector3<f64>, flag: Option<BaselineFlag>) -> Self {
        let unit = direction.normalize();
        Self {
            location: location_of_direction(&unit),
            point_mm: unit * HELMET_RADIUS_MM,
            flag,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RevisedKind {
    Acceleration,
    Velocity,
    Position,
}

/// Index of the earliest sample with the largest magnitude.
pub fn peak_index(v: &[Vector3<f64>]) -> usize {
    let mut best = 0;
    let mut best_norm = f64::NEG_INFINITY;
    for (i, x) in v.iter().enumerate() {
        let n = x.norm();
        if n > best_norm {
            best = i;
            best_norm = n;
        }
    }
    best
}

/// Impact on the side of the head opposite the peak linear acceleration.
pub fn opposite_linear_acceleration(series: &KinematicSeries) -> Result<BaselineEstimate> {
    let acc = series.lin_acc();
    let peak = acc[peak_index(acc)];
    if peak.norm() < MIN_LINEAR {
        return Err(Error::DegenerateInput("peak linear acceleration is zero".into()));
    }
    Ok(BaselineEstimate::on_sphere(-peak, None))
}

fn cumulative_trapezoid(v: &[Vector3<f64>], dt: f64) -> Vec<Vector3<f64>> {
    let mut out = Vec::with_capacity(v.len());
    let mut acc = Vector3::zeros();
    out.push(acc);
    for w in v.windows(2) {
        acc += 0.5 * dt * (w[0] + w[1]);
        out.push(acc);
    }
    out
}

/// Opposite-direction estimate corrected by the angular motion.
///
/// The linear vector (acceleration, or its first or second time integral) at
/// its own peak gives `u = −v̂`. The correction removes the component of `u`
/// along the peak angular acceleration axis `n̂`:
/// `u_corr = normalize(u − (u·n̂) n̂)`.
pub fn revised_opposite(series: &KinematicSeries, kind: RevisedKind) -> Result<BaselineEstimate> {
    let dt = series.dt();
    let linear = match kind {
        RevisedKind::Acceleration => series.lin_acc().to_vec(),
        RevisedKind::Velocity => cumulative_trapezoid(series.lin_acc(), dt),
        RevisedKind::Position => cumulative_trapezoid(&cumulative_trapezoid(series.lin_acc(), dt), dt),
    };
    let v = linear[peak_index(&linear)];
    let min_norm = match kind {
        RevisedKind::Acceleration => MIN_LINEAR,
        RevisedKind::Velocity | RevisedKind::Position => 1e-12,
    };
    if v.norm() < min_norm {
        return Err(Error::DegenerateInput(format!("peak linear {kind:?} is zero")));
    }
    let u = -v.normalize();

    let ang_acc = angular_acceleration(series);
    let n = ang_acc[peak_index(&ang_acc)];
    if n.norm() < MIN_ANGULAR_ACC {
        return Ok(BaselineEstimate::on_sphere(u, Some(BaselineFlag::DegenerateCorrection)));
    }
    let n = n.normalize();
    let corrected = u - u.dot(&n) * n;
    if corrected.norm() < 1e-12 {
        return Err(Error::DegenerateInput(
            "linear direction is parallel to the angular acceleration axis".into(),
        ));
    }
    Ok(BaselineEstimate::on_sphere(corrected, None))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceTorqueEstimate {
    pub estimate: BaselineEstimate,
    pub force_peak_kn: f64,
    /// `‖r×F − T‖ / ‖T‖` of the returned point (0 when T = 0).
    pub residual: f64,
}

/// Contact point `r` on the sphere with `r × F = T` and `r·F ≤ 0`.
///
/// `F` in N, `T` in N·m, radius in mm. The general solution of `r × F = T`
/// is `r(λ) = (F×T)/‖F‖² + λ F̂`; the root of `‖r‖ = radius` with negative λ
/// is taken so the force points into the head.
pub fn solve_contact_point(force: &Vector3<f64>, torque: &Vector3<f64>, radius_mm: f64) -> Result<(Vector3<f64>, Option<BaselineFlag>)> {
    let f2 = force.norm_squared();
    if force.norm() < MIN_FORCE_N {
        return Err(Error::DegenerateInput("resultant force is zero".into()));
    }
    let radius = radius_mm / 1000.0;
    let perp = force.cross(torque) / f2;
    let reach = perp.norm();
    let (r, flag) = if reach > radius {
        (perp * (radius / reach), Some(BaselineFlag::OutOfReach))
    } else {
        let lambda = -(radius * radius - reach * reach).sqrt();
        (perp + lambda * force / f2.sqrt(), None)
    };
    let r_mm = r * 1000.0;
    Ok((r_mm * (radius_mm / r_mm.norm()), flag))
}

/// Free rigid-body force/torque matching at the peak linear acceleration.
pub fn matching_force_torque(series: &KinematicSeries, params: &RigidBodyParams) -> Result<ForceTorqueEstimate> {
    params.validate()?;
    let acc = series.lin_acc();
    let k = peak_index(acc);
    if acc[k].norm() < MIN_LINEAR {
        return Err(Error::DegenerateInput("peak linear acceleration is zero".into()));
    }
    let force = params.mass_kg * acc[k];
    let omega = series.ang_vel()[k];
    let alpha = angular_acceleration(series)[k];
    let torque = params.inertia * alpha + omega.cross(&(params.inertia * omega));
    let (point, flag) = solve_contact_point(&force, &torque, params.sphere_radius_mm)?;
    let residual = if torque.norm() > 0.0 {
        ((point / 1000.0).cross(&force) - torque).norm() / torque.norm()
    } else {
        0.0
    };
    let unit = point.normalize();
    Ok(ForceTorqueEstimate {
        estimate: BaselineEstimate {
            location: location_of_direction(&unit),
            point_mm: unit * HELMET_RADIUS_MM,
            flag,
        },
        force_peak_kn: force.norm() / 1000.0,
        residual,
    })
}
