use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use super::{ForceProfile, SimulatedImpact, SurrogateConfig};
use crate::error::{Error, Result};
use crate::geometry::{hit_point, setup_location, ImpactSetup};
use crate::kinematics::{zero_phase_lowpass, Frame, KinematicSeries, DEFAULT_SAMPLE_RATE_HZ, SERIES_LEN};

#[derive(Debug, Clone, Copy)]
struct State {
    /// Impactor position along the global x axis, m.
    s: f64,
    u: f64,
    /// Head CoG displacement from rest, global, m.
    p: Vector3<f64>,
    v: Vector3<f64>,
    /// Head orientation, body to global.
    q: Quaternion<f64>,
    /// Angular velocity, body frame.
    w: Vector3<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Rate {
    s: f64,
    u: f64,
    p: Vector3<f64>,
    v: Vector3<f64>,
    q: Quaternion<f64>,
    w: Vector3<f64>,
}

impl State {
    fn advance(&self, r: &Rate, h: f64) -> State {
        State {
            s: self.s + h * r.s,
            u: self.u + h * r.u,
            p: self.p + r.p * h,
            v: self.v + r.v * h,
            q: self.q + r.q * h,
            w: self.w + r.w * h,
        }
    }

    fn is_finite(&self) -> bool {
        self.s.is_finite()
            && self.u.is_finite()
            && self.p.iter().chain(self.v.iter()).chain(self.w.iter()).all(|x| x.is_finite())
            && self.q.coords.iter().all(|x| x.is_finite())
    }

    fn rotation(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::new_normalize(self.q)
    }
}

#[derive(Debug, Clone, Copy)]
struct Contact {
    delta: f64,
    delta_dot: f64,
    force: f64,
}

struct Model<'a> {
    cfg: &'a SurrogateConfig,
    /// Hit point in the head frame, m.
    hit: Vector3<f64>,
    rest_inv: UnitQuaternion<f64>,
    inertia: Matrix3<f64>,
    inertia_inv: Matrix3<f64>,
}

impl Model<'_> {
    fn contact(&self, st: &State, active: bool) -> Contact {
        let rot = st.rotation();
        let hit_pos = st.p + rot.transform_vector(&self.hit);
        let hit_vel = st.v + rot.transform_vector(&st.w.cross(&self.hit));
        let delta = st.s - hit_pos.x;
        let delta_dot = st.u - hit_vel.x;
        let force = if active {
            let pen = delta.max(0.0);
            (self.cfg.contact_stiffness * pen.powf(self.cfg.contact_exponent)
                + self.cfg.contact_damping * delta_dot)
                .max(0.0)
        } else {
            0.0
        };
        Contact {
            delta,
            delta_dot,
            force,
        }
    }

    fn rotation_deviation(&self, st: &State) -> Vector3<f64> {
        (self.rest_inv * st.rotation()).scaled_axis()
    }

    fn rate(&self, st: &State, active: bool) -> (Rate, Contact) {
        let cfg = self.cfg;
        let contact = self.contact(st, active);
        let rot = st.rotation();
        let contact_force = Vector3::new(contact.force, 0.0, 0.0);
        let neck_force = -cfg.neck_translational_stiffness * st.p - cfg.neck_translational_damping * st.v;
        let acc = (contact_force + neck_force) / cfg.head.mass_kg;

        let torque = self.hit.cross(&rot.inverse_transform_vector(&contact_force))
            - cfg.neck_rotational_stiffness * self.rotation_deviation(st)
            - cfg.neck_rotational_damping * st.w;
        let ang_acc = self.inertia_inv * (torque - st.w.cross(&(self.inertia * st.w)));
        let q_dot = st.q * Quaternion::from_imag(st.w) * 0.5;

        (
            Rate {
                s: st.u,
                u: -contact.force / cfg.impactor_mass_kg,
                p: st.v,
                v: acc,
                q: q_dot,
                w: ang_acc,
            },
            contact,
        )
    }

    fn rk4(&self, st: &State, h: f64, active: bool) -> State {
        let (k1, _) = self.rate(st, active);
        let (k2, _) = self.rate(&st.advance(&k1, h / 2.0), active);
        let (k3, _) = self.rate(&st.advance(&k2, h / 2.0), active);
        let (k4, _) = self.rate(&st.advance(&k3, h), active);
        let combined = Rate {
            s: (k1.s + 2.0 * k2.s + 2.0 * k3.s + k4.s) / 6.0,
            u: (k1.u + 2.0 * k2.u + 2.0 * k3.u + k4.u) / 6.0,
            p: (k1.p + 2.0 * k2.p + 2.0 * k3.p + k4.p) / 6.0,
            v: (k1.v + 2.0 * k2.v + 2.0 * k3.v + k4.v) / 6.0,
            q: (k1.q + k2.q * 2.0 + k3.q * 2.0 + k4.q) / 6.0,
            w: (k1.w + 2.0 * k2.w + 2.0 * k3.w + k4.w) / 6.0,
        };
        let mut next = st.advance(&combined, h);
        next.q = next.q.normalize();
        next
    }

    fn energy(&self, st: &State, contact: &Contact, active: bool) -> f64 {
        let cfg = self.cfg;
        let impactor = 0.5 * cfg.impactor_mass_kg * st.u * st.u;
        let head = 0.5 * cfg.head.mass_kg * st.v.norm_squared() + 0.5 * st.w.dot(&(self.inertia * st.w));
        let neck = 0.5 * cfg.neck_translational_stiffness * st.p.norm_squared()
            + 0.5 * cfg.neck_rotational_stiffness * self.rotation_deviation(st).norm_squared();
        let e = cfg.contact_exponent;
        let stored = if active && contact.delta > 0.0 {
            cfg.contact_stiffness * contact.delta.powf(e + 1.0) / (e + 1.0)
        } else {
            0.0
        };
        impactor + head + neck + stored
    }
}

/// Raw (unfiltered) samples of one simulation at the output rate.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub time_s: Vec<f64>,
    /// Linear acceleration of the CoG in the head frame, m/s².
    pub lin_acc: Vec<Vector3<f64>>,
    /// Angular velocity in the head frame, rad/s.
    pub ang_vel: Vec<Vector3<f64>>,
    /// Helmet contact force, N.
    pub force_n: Vec<f64>,
    pub penetration_m: Vec<f64>,
    /// Total mechanical energy, J.
    pub energy_j: Vec<f64>,
}

/// Integrates the surrogate over the configured duration.
///
/// Contact onset is a force discontinuity (the damping term switches on), so
/// an integration step that would cross it is split at the predicted crossing
/// and the contact state is held fixed within each RK4 step.
pub fn simulate_trace(setup: &ImpactSetup, config: &SurrogateConfig) -> Result<SimulationTrace> {
    config.validate()?;
    let hit = hit_point(setup)? / 1000.0;
    let rest = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), setup.alpha_deg.to_radians())
        * UnitQuaternion::from_axis_angle(&Vector3::y_axis(), -setup.beta_deg.to_radians());
    let inertia = config.head.inertia;
    let inertia_inv = inertia
        .try_inverse()
        .ok_or_else(|| Error::InvalidArgument("head inertia is singular".into()))?;
    let model = Model {
        cfg: config,
        hit,
        rest_inv: rest.inverse(),
        inertia,
        inertia_inv,
    };

    let hit_x = rest.transform_vector(&hit).x;
    let mut st = State {
        s: hit_x - setup.speed_mps * config.pre_contact,
        u: setup.speed_mps,
        p: Vector3::zeros(),
        v: Vector3::zeros(),
        q: *rest.quaternion(),
        w: Vector3::zeros(),
    };

    let h = config.integration_dt;
    let per_sample = (config.output_dt / h).round() as usize;
    let n_steps = (config.duration / h).round() as usize;
    let mut trace = SimulationTrace {
        time_s: Vec::new(),
        lin_acc: Vec::new(),
        ang_vel: Vec::new(),
        force_n: Vec::new(),
        penetration_m: Vec::new(),
        energy_j: Vec::new(),
    };
    let mut active = false;

    for step in 0..=n_steps {
        let probe = model.contact(&st, true);
        if active && probe.delta <= 0.0 && probe.delta_dot <= 0.0 {
            active = false;
        }
        if !active && probe.delta > 0.0 {
            active = true;
        }
        if step % per_sample == 0 {
            let (rate, contact) = model.rate(&st, active);
            let rot = st.rotation();
            trace.time_s.push(step as f64 * h);
            trace.lin_acc.push(rot.inverse_transform_vector(&rate.v));
            trace.ang_vel.push(st.w);
            trace.force_n.push(contact.force);
            trace.penetration_m.push(contact.delta.max(0.0));
            trace.energy_j.push(model.energy(&st, &contact, active));
        }
        if step == n_steps {
            break;
        }

        let crossing = (!active && probe.delta_dot > 0.0 && probe.delta + probe.delta_dot * h > 0.0)
            .then(|| (-probe.delta / probe.delta_dot).clamp(0.0, h));
        st = match crossing {
            Some(tau) => {
                let mid = if tau > 0.0 { model.rk4(&st, tau, false) } else { st };
                active = true;
                if h - tau > 0.0 {
                    model.rk4(&mid, h - tau, true)
                } else {
                    mid
                }
            }
            None => model.rk4(&st, h, active),
        };
        if !st.is_finite() {
            return Err(Error::SimulationDiverged {
                time_s: (step + 1) as f64 * h,
            });
        }
    }
    Ok(trace)
}

/// Simulates one impact and returns filtered kinematics with force labels.
pub fn simulate_impact(setup: &ImpactSetup, config: &SurrogateConfig) -> Result<SimulatedImpact> {
    let location = setup_location(setup)?;
    let trace = simulate_trace(setup, config)?;
    let filter_axis = |v: &[Vector3<f64>], axis: usize| -> Result<Vec<f64>> {
        let raw: Vec<f64> = v.iter().map(|x| x[axis]).collect();
        zero_phase_lowpass(&raw, config.filter_cutoff_hz, DEFAULT_SAMPLE_RATE_HZ)
    };
    let mut lin = Vec::with_capacity(3);
    let mut ang = Vec::with_capacity(3);
    for axis in 0..3 {
        lin.push(filter_axis(&trace.lin_acc, axis)?);
        ang.push(filter_axis(&trace.ang_vel, axis)?);
    }
    let lin_acc = (0..SERIES_LEN).map(|k| Vector3::new(lin[0][k], lin[1][k], lin[2][k])).collect();
    let ang_vel = (0..SERIES_LEN).map(|k| Vector3::new(ang[0][k], ang[1][k], ang[2][k])).collect();
    let series = KinematicSeries::new(lin_acc, ang_vel, Frame::Anatomical)?;

    let helmet: Vec<f64> = trace.force_n[..SERIES_LEN].iter().map(|f| f / 1000.0).collect();
    let head: Vec<f64> = helmet.iter().map(|f| f * config.head_force_transmission).collect();
    Ok(SimulatedImpact {
        id: String::new(),
        source_id: String::new(),
        mirrored: false,
        setup: *setup,
        series,
        force_helmet: ForceProfile::new(helmet)?,
        force_head: ForceProfile::new(head)?,
        region: location.region(),
        location,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::mirror_series;

    fn rms(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
        (a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).sum::<f64>() / a.len() as f64).sqrt()
    }

    #[test]
    fn zero_speed_gives_nothing() {
        let imp = simulate_impact(&ImpactSetup::new(120.0, 20.0, 30.0, -40.0, 0.0), &SurrogateConfig::default()).unwrap();
        assert!(imp.series.lin_acc().iter().all(|a| a.norm() == 0.0));
        assert!(imp.series.ang_vel().iter().all(|w| w.norm() == 0.0));
        assert_eq!(imp.force_helmet.peak(), 0.0);
    }

    #[test]
    fn frontal_blow_pushes_head_backward() {
        let imp = simulate_impact(&ImpactSetup::new(180.0, 0.0, 0.0, 0.0, 5.0), &SurrogateConfig::default()).unwrap();
        let acc = imp.series.lin_acc();
        let k = crate::baselines::peak_index(acc);
        assert!(acc[k].x < 0.0);
        assert!(acc[k].y.abs() < 1e-6 * acc[k].norm());
        let peak = imp.force_helmet.peak();
        assert!(peak > 1.0 && peak < 20.0, "peak {peak} kN");
    }

    #[test]
    fn mirrored_setup_mirrors_kinematics() {
        let cfg = SurrogateConfig::default();
        let setup = ImpactSetup::new(58.0, 25.0, 60.0, -30.0, 7.0);
        let a = simulate_impact(&setup, &cfg).unwrap();
        let b = simulate_impact(&setup.mirrored(), &cfg).unwrap();
        let m = mirror_series(&a.series);
        assert!(rms(m.lin_acc(), b.series.lin_acc()) < 1e-9);
        assert!(rms(m.ang_vel(), b.series.ang_vel()) < 1e-9);
        assert_eq!(a.force_helmet, b.force_helmet);
    }

    #[test]
    fn peak_force_grows_with_speed() {
        let cfg = SurrogateConfig::default();
        let peaks: Vec<f64> = [3.0, 5.0, 7.0, 10.0]
            .iter()
            .map(|&v| simulate_impact(&ImpactSetup::new(100.0, 10.0, -20.0, 30.0, v), &cfg).unwrap().force_helmet.peak())
            .collect();
        assert!(peaks.windows(2).all(|w| w[1] > w[0]), "{peaks:?}");
    }

    #[test]
    fn force_only_with_penetration_and_energy_never_grows() {
        let cfg = SurrogateConfig::default();
        for setup in [
            ImpactSetup::new(180.0, 0.0, 0.0, 0.0, 10.0),
            ImpactSetup::new(34.0, -45.0, 120.0, -60.0, 6.0),
            ImpactSetup::new(146.0, 70.0, -60.0, 120.0, 3.0),
        ] {
            let tr = simulate_trace(&setup, &cfg).unwrap();
            for (f, d) in tr.force_n.iter().zip(&tr.penetration_m) {
                assert!(*f >= 0.0);
                if *f > 0.0 {
                    assert!(*d > 0.0);
                }
            }
            let e0 = tr.energy_j[0];
            for w in tr.energy_j.windows(2) {
                assert!(w[1] <= w[0] + 0.01 * e0, "{} -> {}", w[0], w[1]);
            }
            assert!(tr.energy_j.iter().all(|e| *e <= 1.01 * e0));
        }
    }

    #[test]
    fn halving_the_step_barely_changes_kinematics() {
        let coarse = SurrogateConfig::default();
        let fine = SurrogateConfig { integration_dt: coarse.integration_dt / 2.0, ..coarse.clone() };
        for setup in [ImpactSetup::new(180.0, 0.0, 0.0, 0.0, 10.0), ImpactSetup::new(82.0, 35.0, 60.0, -60.0, 5.0)] {
            let a = simulate_impact(&setup, &coarse).unwrap();
            let b = simulate_impact(&setup, &fine).unwrap();
            let zero = vec![Vector3::zeros(); SERIES_LEN];
            // Central impacts produce no rotation; an absolute floor keeps rounding noise out.
            let rel = |x: &[Vector3<f64>], y: &[Vector3<f64>]| rms(x, y) / rms(x, &zero).max(1e-6);
            assert!(rel(a.series.lin_acc(), b.series.lin_acc()) < 0.005);
            assert!(rel(a.series.ang_vel(), b.series.ang_vel()) < 0.005);
        }
    }

    #[test]
    fn miss_is_an_error() {
        let err = simulate_impact(&ImpactSetup::new(30.0, 0.0, 120.0, 120.0, 5.0), &SurrogateConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NoIntersection));
    }

    #[test]
    fn force_is_zero_before_contact() {
        let imp = simulate_impact(&ImpactSetup::new(180.0, 0.0, 0.0, 0.0, 5.0), &SurrogateConfig::default()).unwrap();
        assert!(imp.force_helmet.values()[..5].iter().all(|f| *f == 0.0));
        assert!(imp.force_helmet.values()[5] > 0.0);
    }
}
