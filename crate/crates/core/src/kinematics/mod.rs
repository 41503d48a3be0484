//! Head kinematics: series container, filtering, orientation tracking and
//! the 48-channel feature tensor.
//!
//! Axes follow the anatomical convention: x posterior to anterior, y left to
//! right, z top to bottom.

mod features;
mod filter;
mod orientation;

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

pub use features::{
    build_features, to_spherical_channels, ChannelDescriptor, ChannelStats, Component,
    FeatureFrame, FeatureTensor, Quantity, CHANNEL_LAYOUT, N_CHANNELS,
};
pub use filter::{
    squared_magnitude_response, zero_phase_lowpass, Biquad, DEFAULT_CUTOFF_HZ,
    DEFAULT_SAMPLE_RATE_HZ, FILTER_ORDER, MIN_FILTER_LEN,
};
pub use orientation::{integrate_orientation, rotate_series, to_global, Quaternion};

use crate::error::{Error, Result};
use crate::geometry::ImpactSetup;
use crate::surrogate::ForceProfile;

/// Samples per impact window.
pub const SERIES_LEN: usize = 145;
/// Sampling interval in seconds.
pub const SAMPLE_DT: f64 = 0.001;

pub const KINEMATICS_CSV_HEADER: [&str; 7] = ["t_ms", "ax", "ay", "az", "wx", "wy", "wz"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frame {
    Anatomical,
    Global,
}

/// Tri-axial linear acceleration (m/s²) and angular velocity (rad/s).
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicSeries {
    lin_acc: Vec<Vector3<f64>>,
    ang_vel: Vec<Vector3<f64>>,
    frame: Frame,
}

impl KinematicSeries {
    pub fn new(lin_acc: Vec<Vector3<f64>>, ang_vel: Vec<Vector3<f64>>, frame: Frame) -> Result<Self> {
        if lin_acc.len() != SERIES_LEN || ang_vel.len() != SERIES_LEN {
            return Err(Error::InvalidArgument(format!(
                "kinematic series must have {SERIES_LEN} samples, got {} linear and {} angular",
                lin_acc.len(),
                ang_vel.len()
            )));
        }
        let finite = |v: &Vector3<f64>| v.iter().all(|c| c.is_finite());
        if let Some(k) = lin_acc
            .iter()
            .zip(&ang_vel)
            .position(|(a, w)| !finite(a) || !finite(w))
        {
            return Err(Error::InvalidArgument(format!("non-finite kinematics at sample {k}")));
        }
        Ok(Self {
            lin_acc,
            ang_vel,
            frame,
        })
    }

    pub fn zeros(frame: Frame) -> Self {
        Self {
            lin_acc: vec![Vector3::zeros(); SERIES_LEN],
            ang_vel: vec![Vector3::zeros(); SERIES_LEN],
            frame,
        }
    }

    pub fn len(&self) -> usize {
        self.lin_acc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lin_acc.is_empty()
    }

    pub fn dt(&self) -> f64 {
        SAMPLE_DT
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn lin_acc(&self) -> &[Vector3<f64>] {
        &self.lin_acc
    }

    pub fn ang_vel(&self) -> &[Vector3<f64>] {
        &self.ang_vel
    }

    /// Applies the zero-phase low-pass filter to each of the six channels.
    pub fn filtered(&self, cutoff_hz: f64) -> Result<Self> {
        let lin_acc = filter_vectors(&self.lin_acc, cutoff_hz)?;
        let ang_vel = filter_vectors(&self.ang_vel, cutoff_hz)?;
        Self::new(lin_acc, ang_vel, self.frame)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv_from(file, path)
    }

    /// Parses the kinematics CSV format; `origin` is only used in error messages.
    pub fn read_csv_from<R: Read>(reader: R, origin: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| Error::parse(origin, None, e.to_string()))?
            .clone();
        if header.iter().map(str::trim).ne(KINEMATICS_CSV_HEADER.iter().copied()) {
            return Err(Error::parse(
                origin,
                Some(0),
                format!("expected header {}", KINEMATICS_CSV_HEADER.join(",")),
            ));
        }
        let mut lin_acc = Vec::with_capacity(SERIES_LEN);
        let mut ang_vel = Vec::with_capacity(SERIES_LEN);
        for (i, record) in rdr.records().enumerate() {
            let row = i + 1;
            let record = record.map_err(|e| Error::parse(origin, Some(row), e.to_string()))?;
            let values = parse_row(&record, 7, origin, row)?;
            let expected_t = i as f64 * SAMPLE_DT * 1000.0;
            if (values[0] - expected_t).abs() > 1e-6 {
                return Err(Error::parse(
                    origin,
                    Some(row),
                    format!("t_ms = {} but 1 kHz sampling requires {expected_t}", values[0]),
                ));
            }
            lin_acc.push(Vector3::new(values[1], values[2], values[3]));
            ang_vel.push(Vector3::new(values[4], values[5], values[6]));
        }
        if lin_acc.len() != SERIES_LEN {
            return Err(Error::parse(
                origin,
                None,
                format!("expected {SERIES_LEN} data rows, found {}", lin_acc.len()),
            ));
        }
        Self::new(lin_acc, ang_vel, Frame::Anatomical)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv_to(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn write_csv_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", KINEMATICS_CSV_HEADER.join(","))?;
        for (k, (a, om)) in self.lin_acc.iter().zip(&self.ang_vel).enumerate() {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                k,
                a.x,
                a.y,
                a.z,
                om.x,
                om.y,
                om.z
            )?;
        }
        w.flush()
    }
}

pub(crate) fn parse_row(
    record: &csv::StringRecord,
    expected: usize,
    origin: &Path,
    row: usize,
) -> Result<Vec<f64>> {
    if record.len() != expected {
        return Err(Error::parse(
            origin,
            Some(row),
            format!("expected {expected} columns, found {}", record.len()),
        ));
    }
    record
        .iter()
        .map(|field| {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::parse(origin, Some(row), format!("not a number: {field:?}")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::parse(origin, Some(row), format!("non-finite value {field:?}")))
            }
        })
        .collect()
}

fn filter_vectors(v: &[Vector3<f64>], cutoff_hz: f64) -> Result<Vec<Vector3<f64>>> {
    let mut out = vec![Vector3::zeros(); v.len()];
    for axis in 0..3 {
        let channel: Vec<f64> = v.iter().map(|s| s[axis]).collect();
        let filtered = zero_phase_lowpass(&channel, cutoff_hz, DEFAULT_SAMPLE_RATE_HZ)?;
        for (o, f) in out.iter_mut().zip(filtered) {
            o[axis] = f;
        }
    }
    Ok(out)
}

/// Time derivative by central differences, second-order one-sided at both ends.
pub fn differentiate(v: &[Vector3<f64>], dt: f64) -> Vec<Vector3<f64>> {
    let n = v.len();
    match n {
        0 => Vec::new(),
        1 => vec![Vector3::zeros()],
        2 => {
            let d = (v[1] - v[0]) / dt;
            vec![d, d]
        }
        _ => {
            let mut out = Vec::with_capacity(n);
            out.push((-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * dt));
            out.extend(v.windows(3).map(|w| (w[2] - w[0]) / (2.0 * dt)));
            out.push((3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * dt));
            out
        }
    }
}

/// Angular acceleration (rad/s²) of the series' angular velocity.
pub fn angular_acceleration(series: &KinematicSeries) -> Vec<Vector3<f64>> {
    differentiate(&series.ang_vel, series.dt())
}

/// Reflects an impact through the sagittal plane.
///
/// Negates linear acceleration along y and angular velocity about x and z,
/// and negates the setup's yaw and lateral offset. Scalar force magnitudes
/// are unchanged.
pub fn mirror(
    series: &KinematicSeries,
    setup: &ImpactSetup,
    forces: &(ForceProfile, ForceProfile),
) -> (KinematicSeries, ImpactSetup, (ForceProfile, ForceProfile)) {
    (mirror_series(series), setup.mirrored(), forces.clone())
}

pub fn mirror_series(series: &KinematicSeries) -> KinematicSeries {
    KinematicSeries {
        lin_acc: series.lin_acc.iter().map(|a| Vector3::new(a.x, -a.y, a.z)).collect(),
        ang_vel: series.ang_vel.iter().map(|w| Vector3::new(-w.x, w.y, -w.z)).collect(),
        frame: series.frame,
    }
}
