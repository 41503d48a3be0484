//! Lumped-parameter helmeted impact simulator and dataset files.
//!
//! A point-mass impactor travels along the impact line and meets a 6-DOF
//! rigid head held by translational and rotational spring-dampers. Contact
//! acts at the geometric hit point along the line of travel.

mod dataset;
mod sim;

use serde::{Deserialize, Serialize};

pub use dataset::{generate_dataset, linspace, load_dataset, simulate_grid, GridSpec, Manifest, ManifestRow, MANIFEST_FILE};
pub use sim::{simulate_impact, simulate_trace, SimulationTrace};

use crate::baselines::RigidBodyParams;
use crate::error::{Error, Result};
use crate::geometry::{HelmetRegion, ImpactLocation, ImpactSetup};
use crate::kinematics::{KinematicSeries, SAMPLE_DT, SERIES_LEN};

/// Force magnitude trace, kN, one value per kinematics sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceProfile {
    values: Vec<f64>,
}

impl ForceProfile {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != SERIES_LEN {
            return Err(Error::InvalidArgument(format!(
                "force profile needs {SERIES_LEN} samples, got {}",
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "force profile value {} at sample {k} is not a finite nonnegative number",
                values[k]
            )));
        }
        Ok(Self { values })
    }

    pub fn zeros() -> Self {
        Self {
            values: vec![0.0; SERIES_LEN],
        }
    }

    /// Clamps negative entries to zero (network outputs).
    pub fn from_raw(values: Vec<f64>) -> Result<Self> {
        Self::new(values.into_iter().map(|v| v.max(0.0)).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn peak(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateConfig {
    pub impactor_mass_kg: f64,
    /// N/m^exponent.
    pub contact_stiffness: f64,
    /// N·s/m.
    pub contact_damping: f64,
    pub contact_exponent: f64,
    pub neck_translational_stiffness: f64,
    pub neck_translational_damping: f64,
    /// N·m/rad.
    pub neck_rotational_stiffness: f64,
    /// N·m·s/rad.
    pub neck_rotational_damping: f64,
    pub head: RigidBodyParams,
    /// Ratio of head/face force to helmet force.
    pub head_force_transmission: f64,
    pub integration_dt: f64,
    pub output_dt: f64,
    pub duration: f64,
    /// Time from the start of the window to first contact.
    pub pre_contact: f64,
    pub filter_cutoff_hz: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            impactor_mass_kg: 14.0,
            contact_stiffness: 3.0e5,
            contact_damping: 400.0,
            contact_exponent: 1.5,
            neck_translational_stiffness: 2.0e4,
            neck_translational_damping: 300.0,
            neck_rotational_stiffness: 100.0,
            neck_rotational_damping: 2.0,
            head: RigidBodyParams::default(),
            head_force_transmission: 0.8,
            integration_dt: 1e-4,
            output_dt: SAMPLE_DT,
            duration: 0.150,
            pre_contact: 0.0045,
            filter_cutoff_hz: crate::kinematics::DEFAULT_CUTOFF_HZ,
        }
    }
}

impl SurrogateConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("impactor_mass_kg", self.impactor_mass_kg),
            ("contact_stiffness", self.contact_stiffness),
            ("contact_damping", self.contact_damping),
            ("contact_exponent", self.contact_exponent),
            ("neck_translational_stiffness", self.neck_translational_stiffness),
            ("neck_translational_damping", self.neck_translational_damping),
            ("neck_rotational_stiffness", self.neck_rotational_stiffness),
            ("neck_rotational_damping", self.neck_rotational_damping),
            ("head_force_transmission", self.head_force_transmission),
            ("integration_dt", self.integration_dt),
            ("filter_cutoff_hz", self.filter_cutoff_hz),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        self.head.validate()?;
        if (self.output_dt - SAMPLE_DT).abs() > 1e-15 {
            return Err(Error::InvalidArgument(format!("output_dt must be {SAMPLE_DT} s")));
        }
        if self.integration_dt > self.output_dt / 2.0 {
            return Err(Error::InvalidArgument("integration_dt must be at most output_dt / 2".into()));
        }
        let ratio = self.output_dt / self.integration_dt;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(Error::InvalidArgument("output_dt must be a whole multiple of integration_dt".into()));
        }
        if self.duration + 1e-12 < (SERIES_LEN - 1) as f64 * self.output_dt {
            return Err(Error::InvalidArgument(format!(
                "duration must cover {SERIES_LEN} samples"
            )));
        }
        if !(self.pre_contact >= 0.0) || self.pre_contact >= self.duration {
            return Err(Error::InvalidArgument("pre_contact must lie within the simulated window".into()));
        }
        Ok(())
    }
}

/// One labeled impact.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedImpact {
    pub id: String,
    /// Identifier of the unmirrored original (itself for originals).
    pub source_id: String,
    pub mirrored: bool,
    pub setup: ImpactSetup,
    /// Filtered anatomical-frame kinematics.
    pub series: KinematicSeries,
    pub force_helmet: ForceProfile,
    pub force_head: ForceProfile,
    pub location: ImpactLocation,
    pub region: HelmetRegion,
}

impl SimulatedImpact {
    /// Sagittal mirror image of this impact.
    pub fn mirrored_copy(&self, id: String) -> Result<Self> {
        let (series, setup, (force_helmet, force_head)) = crate::kinematics::mirror(
            &self.series,
            &self.setup,
            &(self.force_helmet.clone(), self.force_head.clone()),
        );
        let location = crate::geometry::setup_location(&setup)?;
        Ok(Self {
            id,
            source_id: self.source_id.clone(),
            mirrored: !self.mirrored,
            setup,
            series,
            force_helmet,
            force_head,
            region: location.region(),
            location,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn force_profile_validation() {
        assert!(ForceProfile::new(vec![0.0; 144]).is_err());
        let mut v = vec![0.0; SERIES_LEN];
        v[3] = -0.1;
        assert!(ForceProfile::new(v.clone()).is_err());
        let clamped = ForceProfile::from_raw(v).unwrap();
        assert_eq!(clamped.values()[3], 0.0);
        let mut v = vec![0.0; SERIES_LEN];
        v[10] = 2.5;
        v[11] = 2.5;
        assert_eq!(ForceProfile::new(v).unwrap().peak(), 2.5);
    }

    #[test]
    fn config_validation() {
        assert!(SurrogateConfig::default().validate().is_ok());
        let bad = SurrogateConfig { integration_dt: 6e-4, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SurrogateConfig { contact_damping: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SurrogateConfig { output_dt: 2e-3, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn partial_config_json_uses_defaults() {
        let cfg: SurrogateConfig = serde_json::from_str(r#"{"impactor_mass_kg": 10.0}"#).unwrap();
        assert_eq!(cfg.impactor_mass_kg, 10.0);
        assert_eq!(cfg.contact_stiffness, 3.0e5);
    }
}
