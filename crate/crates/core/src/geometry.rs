//! Impact setup geometry.
//!
//! Convention, shared with the surrogate simulator:
//!
//! * The impactor travels along the global +x axis.
//! * The head orientation (head frame to global) is `R = R_z(α) · R_p(β)`,
//!   where `R_z(α)` is a right-handed yaw about z and `R_p(β)` is the pitch
//!   about the left-to-right y axis with positive β tilting the crown toward
//!   the impactor (chin toward chest), i.e. `R_p(β) = R_y(−β)` in right-handed
//!   terms.
//! * The head CoG sits at global `(0, Y, Z)`, so relative to the CoG the
//!   impactor line passes through `(t, −Y, −Z)`.
//!
//! In the head frame the line is `point = Rᵀ(0, −Y, −Z)`, `direction = Rᵀ(1, 0, 0)`.
//! With this convention α = 180°, β = 0 is a frontal blow and α = 90° hits
//! the right side.

use nalgebra::{Matrix3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Radius of the sphere circumscribing the helmet, centered at the head CoG.
pub const HELMET_RADIUS_MM: f64 = 135.0;

const TOP_ETA_DEG: f64 = -34.0;
const LOCATION_NORM_TOL_MM: f64 = 1e-6;

/// The five parameters defining one impact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpactSetup {
    /// Yaw, degrees.
    pub alpha_deg: f64,
    /// Pitch, degrees.
    pub beta_deg: f64,
    /// Lateral head offset, mm.
    pub y_mm: f64,
    /// Vertical head offset, mm.
    pub z_mm: f64,
    /// Impactor speed, m/s.
    pub speed_mps: f64,
}

impl ImpactSetup {
    pub fn new(alpha_deg: f64, beta_deg: f64, y_mm: f64, z_mm: f64, speed_mps: f64) -> Self {
        Self {
            alpha_deg,
            beta_deg,
            y_mm,
            z_mm,
            speed_mps,
        }
    }

    /// Sagittal-plane reflection: α and Y change sign.
    pub fn mirrored(&self) -> Self {
        Self {
            alpha_deg: -self.alpha_deg,
            y_mm: -self.y_mm,
            ..*self
        }
    }

    /// Head orientation, head frame to global frame.
    pub fn head_rotation(&self) -> Matrix3<f64> {
        let (sa, ca) = self.alpha_deg.to_radians().sin_cos();
        let (sb, cb) = self.beta_deg.to_radians().sin_cos();
        let yaw = Matrix3::new(ca, -sa, 0.0, sa, ca, 0.0, 0.0, 0.0, 1.0);
        let pitch = Matrix3::new(cb, 0.0, -sb, 0.0, 1.0, 0.0, sb, 0.0, cb);
        yaw * pitch
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.speed_mps, self.alpha_deg, self.beta_deg, self.y_mm, self.z_mm]
    }
}

/// Impactor trajectory in the head frame, mm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpactLine {
    pub point: Vector3<f64>,
    /// Travel direction of the impactor (toward the head).
    pub direction: Unit<Vector3<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpactLocation {
    /// Azimuth in (−180, 180], degrees; 0 is the face, 90 the right side.
    pub theta_deg: f64,
    /// Elevation in [−90, 90], degrees; negative toward the crown.
    pub eta_deg: f64,
}

impl ImpactLocation {
    pub fn radius_mm(&self) -> f64 {
        HELMET_RADIUS_MM
    }

    /// Point on the helmet sphere, mm.
    pub fn point(&self) -> Vector3<f64> {
        let (st, ct) = self.theta_deg.to_radians().sin_cos();
        let (se, ce) = self.eta_deg.to_radians().sin_cos();
        HELMET_RADIUS_MM * Vector3::new(ce * ct, ce * st, se)
    }

    pub fn region(&self) -> HelmetRegion {
        classify_region(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HelmetRegion {
    Facemask,
    Top,
    Back,
    Left,
    Right,
}

impl HelmetRegion {
    pub const ALL: [HelmetRegion; 5] = [
        HelmetRegion::Facemask,
        HelmetRegion::Top,
        HelmetRegion::Back,
        HelmetRegion::Left,
        HelmetRegion::Right,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            HelmetRegion::Facemask => "Facemask",
            HelmetRegion::Top => "Top",
            HelmetRegion::Back => "Back",
            HelmetRegion::Left => "Left",
            HelmetRegion::Right => "Right",
        }
    }

    /// Left and right swap under the sagittal mirror.
    pub fn mirrored(self) -> Self {
        match self {
            HelmetRegion::Left => HelmetRegion::Right,
            HelmetRegion::Right => HelmetRegion::Left,
            other => other,
        }
    }
}

impl std::fmt::Display for HelmetRegion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for HelmetRegion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        HelmetRegion::ALL
            .into_iter()
            .find(|r| r.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown helmet region {s:?}")))
    }
}

pub fn impact_line(setup: &ImpactSetup) -> ImpactLine {
    let rt = setup.head_rotation().transpose();
    ImpactLine {
        point: rt * Vector3::new(0.0, -setup.y_mm, -setup.z_mm),
        direction: Unit::new_normalize(rt * Vector3::x()),
    }
}

/// First crossing of the line with a sphere centered at the origin, if any.
pub fn sphere_intersection(line: &ImpactLine, radius_mm: f64) -> Option<Vector3<f64>> {
    let p = line.point;
    let d = line.direction.into_inner();
    let half_b = p.dot(&d);
    let c = p.norm_squared() - radius_mm * radius_mm;
    let disc = half_b * half_b - c;
    if disc < 0.0 {
        return None;
    }
    let t = -half_b - disc.sqrt();
    let hit = p + t * d;
    Some(hit * (radius_mm / hit.norm()))
}

/// Point on the sphere closest to the line, and whether the line misses.
///
/// For lines that cross the sphere this is the regular first crossing.
pub fn closest_sphere_point(line: &ImpactLine, radius_mm: f64) -> (Vector3<f64>, bool) {
    if let Some(hit) = sphere_intersection(line, radius_mm) {
        return (hit, false);
    }
    let d = line.direction.into_inner();
    let perp = line.point - line.point.dot(&d) * d;
    (perp * (radius_mm / perp.norm()), true)
}

pub fn to_location(point: &Vector3<f64>) -> Result<ImpactLocation> {
    let r = point.norm();
    if (r - HELMET_RADIUS_MM).abs() > LOCATION_NORM_TOL_MM {
        return Err(Error::InvalidArgument(format!(
            "impact point lies {r} mm from the center, expected {HELMET_RADIUS_MM} mm"
        )));
    }
    Ok(location_of_direction(point))
}

/// Azimuth/elevation of a nonzero direction, ignoring its length.
pub(crate) fn location_of_direction(v: &Vector3<f64>) -> ImpactLocation {
    let mut theta = v.y.atan2(v.x).to_degrees();
    if theta <= -180.0 {
        theta = 180.0;
    }
    let eta = (v.z / v.norm()).clamp(-1.0, 1.0).asin().to_degrees();
    ImpactLocation {
        theta_deg: theta,
        eta_deg: eta,
    }
}

/// Five-region partition; each interval is closed on its lower edge.
pub fn classify_region(loc: &ImpactLocation) -> HelmetRegion {
    let theta = loc.theta_deg;
    if loc.eta_deg < TOP_ETA_DEG {
        HelmetRegion::Top
    } else if (-45.0..45.0).contains(&theta) {
        HelmetRegion::Facemask
    } else if (45.0..135.0).contains(&theta) {
        HelmetRegion::Right
    } else if (-135.0..-45.0).contains(&theta) {
        HelmetRegion::Left
    } else {
        HelmetRegion::Back
    }
}

/// Hit point on the helmet sphere for a setup, mm, head frame.
pub fn hit_point(setup: &ImpactSetup) -> Result<Vector3<f64>> {
    sphere_intersection(&impact_line(setup), HELMET_RADIUS_MM).ok_or(Error::NoIntersection)
}

pub fn setup_location(setup: &ImpactSetup) -> Result<ImpactLocation> {
    to_location(&hit_point(setup)?)
}

pub fn setup_to_region(setup: &ImpactSetup) -> Result<HelmetRegion> {
    Ok(classify_region(&setup_location(setup)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: Vector3<f64>, b: Vector3<f64>, tol: f64) -> bool {
        (a - b).norm() < tol
    }

    #[test]
    fn neutral_setup_line() {
        let line = impact_line(&ImpactSetup::new(0.0, 0.0, 0.0, 0.0, 5.0));
        assert!(close(line.point, Vector3::zeros(), 1e-12));
        assert!(close(line.direction.into_inner(), Vector3::x(), 1e-12));
    }

    #[test]
    fn lateral_offset_is_pure_translation() {
        let line = impact_line(&ImpactSetup::new(0.0, 0.0, 50.0, 0.0, 5.0));
        assert!(close(line.point, Vector3::new(0.0, -50.0, 0.0), 1e-12));
        assert!(close(line.direction.into_inner(), Vector3::x(), 1e-12));
    }

    #[test]
    fn quarter_yaw_direction() {
        // R_z(90°)ᵀ (1,0,0) = (cos 90°, −sin 90°, 0)
        let line = impact_line(&ImpactSetup::new(90.0, 0.0, 0.0, 0.0, 5.0));
        assert!(close(line.direction.into_inner(), Vector3::new(0.0, -1.0, 0.0), 1e-12));
        assert_eq!(setup_to_region(&ImpactSetup::new(90.0, 0.0, 0.0, 0.0, 5.0)).unwrap(), HelmetRegion::Right);
    }

    #[test]
    fn positive_pitch_exposes_the_crown() {
        let loc = setup_location(&ImpactSetup::new(180.0, 70.0, 0.0, 0.0, 5.0)).unwrap();
        assert!((loc.eta_deg + 70.0).abs() < 1e-9);
        assert_eq!(classify_region(&loc), HelmetRegion::Top);
    }

    #[test]
    fn chord_through_center() {
        let line = ImpactLine { point: Vector3::zeros(), direction: Vector3::x_axis() };
        let hit = sphere_intersection(&line, HELMET_RADIUS_MM).unwrap();
        assert!(close(hit, Vector3::new(-135.0, 0.0, 0.0), 1e-12));
    }

    #[test]
    fn tangent_and_miss() {
        let tangent = ImpactLine { point: Vector3::new(0.0, 135.0, 0.0), direction: Vector3::x_axis() };
        let hit = sphere_intersection(&tangent, HELMET_RADIUS_MM).unwrap();
        assert!(close(hit, Vector3::new(0.0, 135.0, 0.0), 1e-9));
        let miss = ImpactLine { point: Vector3::new(0.0, 200.0, 0.0), direction: Vector3::x_axis() };
        assert!(sphere_intersection(&miss, HELMET_RADIUS_MM).is_none());
        let (p, missed) = closest_sphere_point(&miss, HELMET_RADIUS_MM);
        assert!(missed);
        assert!(close(p, Vector3::new(0.0, 135.0, 0.0), 1e-9));
    }

    #[test]
    fn location_examples() {
        let front = to_location(&Vector3::new(135.0, 0.0, 0.0)).unwrap();
        assert_eq!((front.theta_deg, front.eta_deg), (0.0, 0.0));
        let crown = to_location(&Vector3::new(0.0, 0.0, -135.0)).unwrap();
        assert_eq!(crown.eta_deg, -90.0);
        let right = to_location(&Vector3::new(0.0, 135.0, 0.0)).unwrap();
        assert_eq!((right.theta_deg, right.eta_deg), (90.0, 0.0));
        assert!(matches!(to_location(&Vector3::new(100.0, 0.0, 0.0)), Err(Error::InvalidArgument(_))));
        let back = to_location(&Vector3::new(-135.0, -0.0, 0.0)).unwrap();
        assert_eq!(back.theta_deg, 180.0);
    }

    #[test]
    fn region_examples() {
        let at = |eta, theta| classify_region(&ImpactLocation { theta_deg: theta, eta_deg: eta });
        assert_eq!(at(-40.0, 10.0), HelmetRegion::Top);
        assert_eq!(at(0.0, 0.0), HelmetRegion::Facemask);
        assert_eq!(at(0.0, 179.0), HelmetRegion::Back);
        assert_eq!(at(0.0, 90.0), HelmetRegion::Right);
        assert_eq!(at(0.0, -90.0), HelmetRegion::Left);
        // boundaries belong to the interval above them
        assert_eq!(at(-34.0, 0.0), HelmetRegion::Facemask);
        assert_eq!(at(0.0, 45.0), HelmetRegion::Right);
        assert_eq!(at(0.0, -45.0), HelmetRegion::Facemask);
        assert_eq!(at(0.0, 135.0), HelmetRegion::Back);
        assert_eq!(at(0.0, -135.0), HelmetRegion::Left);
        assert_eq!(at(0.0, 180.0), HelmetRegion::Back);
    }

    #[test]
    fn frontal_blow_is_facemask() {
        assert_eq!(setup_to_region(&ImpactSetup::new(180.0, 0.0, 0.0, 0.0, 5.0)).unwrap(), HelmetRegion::Facemask);
        assert_eq!(setup_to_region(&ImpactSetup::new(0.0, 0.0, 0.0, 0.0, 5.0)).unwrap(), HelmetRegion::Back);
        assert!(matches!(
            setup_to_region(&ImpactSetup::new(30.0, 10.0, 120.0, 120.0, 5.0)),
            Err(Error::NoIntersection)
        ));
    }

    #[test]
    fn region_name_roundtrip() {
        for r in HelmetRegion::ALL {
            assert_eq!(r.name().parse::<HelmetRegion>().unwrap(), r);
        }
        assert!("Chin".parse::<HelmetRegion>().is_err());
    }

    proptest! {
        #[test]
        fn hit_points_lie_on_the_sphere(
            alpha in -180.0f64..180.0, beta in -45.0f64..70.0,
            y in -120.0f64..120.0, z in -120.0f64..120.0,
        ) {
            if let Some(p) = sphere_intersection(&impact_line(&ImpactSetup::new(alpha, beta, y, z, 5.0)), HELMET_RADIUS_MM) {
                prop_assert!((p.norm() - HELMET_RADIUS_MM).abs() < 1e-9);
            }
        }

        #[test]
        fn region_partition_is_total(theta in -180.0f64..=180.0, eta in -90.0f64..=90.0) {
            let r = classify_region(&ImpactLocation { theta_deg: theta, eta_deg: eta });
            prop_assert!(HelmetRegion::ALL.contains(&r));
        }

        #[test]
        fn mirrored_setups_swap_sides(
            alpha in 10.0f64..180.0, beta in -45.0f64..70.0,
            y in -120.0f64..120.0, z in -120.0f64..120.0,
        ) {
            let s = ImpactSetup::new(alpha, beta, y, z, 5.0);
            if let Ok(region) = setup_to_region(&s) {
                prop_assert_eq!(setup_to_region(&s.mirrored()).unwrap(), region.mirrored());
            }
        }
    }
}
