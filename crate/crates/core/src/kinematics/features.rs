//! 48-channel feature tensor.
//!
//! Channel order (145 rows, one per sample):
//!
//! | block | frame            | channels                                           |
//! |-------|------------------|----------------------------------------------------|
//! | 0     | local            | ω x,y,z,\|ω\|  · α x,y,z,\|α\|  · a x,y,z,\|a\|     |
//! | 1     | local spherical  | ω ρ,az,el,\|ω\| · α ρ,az,el,\|α\| · a ρ,az,el,\|a\| |
//! | 2     | global           | as block 0, rotated into the global frame          |
//! | 3     | global spherical | as block 1, from the global vectors                |
//!
//! ω is angular velocity, α angular acceleration, a linear acceleration.
//! Azimuth and elevation are in radians. The global frame is the head frame at
//! the first sample, tracked forward by integrating ω.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{angular_acceleration, integrate_orientation, parse_row, rotate_series, Frame, KinematicSeries, SERIES_LEN};
use crate::error::{Error, Result};

pub const N_CHANNELS: usize = 48;

const SPHERICAL_EPS: f64 = 1e-12;
const CONSTANT_CHANNEL_STD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureFrame {
    Local,
    LocalSpherical,
    Global,
    GlobalSpherical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quantity {
    AngVel,
    AngAcc,
    LinAcc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Component {
    X,
    Y,
    Z,
    Rho,
    Azimuth,
    Elevation,
    Magnitude,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelDescriptor {
    pub frame: FeatureFrame,
    pub quantity: Quantity,
    pub component: Component,
}

impl ChannelDescriptor {
    pub fn name(&self) -> String {
        let frame = match self.frame {
            FeatureFrame::Local => "local",
            FeatureFrame::LocalSpherical => "local_sph",
            FeatureFrame::Global => "global",
            FeatureFrame::GlobalSpherical => "global_sph",
        };
        let quantity = match self.quantity {
            Quantity::AngVel => "ang_vel",
            Quantity::AngAcc => "ang_acc",
            Quantity::LinAcc => "lin_acc",
        };
        let component = match self.component {
            Component::X => "x",
            Component::Y => "y",
            Component::Z => "z",
            Component::Rho => "rho",
            Component::Azimuth => "az",
            Component::Elevation => "el",
            Component::Magnitude => "mag",
        };
        format!("{frame}.{quantity}.{component}")
    }
}

const FRAMES: [FeatureFrame; 4] = [
    FeatureFrame::Local,
    FeatureFrame::LocalSpherical,
    FeatureFrame::Global,
    FeatureFrame::GlobalSpherical,
];
const QUANTITIES: [Quantity; 3] = [Quantity::AngVel, Quantity::AngAcc, Quantity::LinAcc];
const CARTESIAN: [Component; 4] = [Component::X, Component::Y, Component::Z, Component::Magnitude];
const SPHERICAL: [Component; 4] = [Component::Rho, Component::Azimuth, Component::Elevation, Component::Magnitude];

pub const CHANNEL_LAYOUT: [ChannelDescriptor; N_CHANNELS] = {
    let mut out = [ChannelDescriptor {
        frame: FeatureFrame::Local,
        quantity: Quantity::AngVel,
        component: Component::X,
    }; N_CHANNELS];
    let mut f = 0;
    while f < 4 {
        let components = match FRAMES[f] {
            FeatureFrame::Local | FeatureFrame::Global => CARTESIAN,
            _ => SPHERICAL,
        };
        let mut q = 0;
        while q < 3 {
            let mut c = 0;
            while c < 4 {
                out[f * 12 + q * 4 + c] = ChannelDescriptor {
                    frame: FRAMES[f],
                    quantity: QUANTITIES[q],
                    component: components[c],
                };
                c += 1;
            }
            q += 1;
        }
        f += 1;
    }
    out
};

/// Model input of shape 145 × 48, stored row-major (time-major).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    data: Vec<f64>,
}

impl FeatureTensor {
    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        if data.len() != SERIES_LEN * N_CHANNELS {
            return Err(Error::InvalidArgument(format!(
                "feature tensor needs {} values, got {}",
                SERIES_LEN * N_CHANNELS,
                data.len()
            )));
        }
        Ok(Self { data })
    }

    pub fn zeros() -> Self {
        Self {
            data: vec![0.0; SERIES_LEN * N_CHANNELS],
        }
    }

    pub fn n_samples(&self) -> usize {
        SERIES_LEN
    }

    pub fn n_channels(&self) -> usize {
        N_CHANNELS
    }

    pub fn get(&self, t: usize, channel: usize) -> f64 {
        self.data[t * N_CHANNELS + channel]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * N_CHANNELS..(t + 1) * N_CHANNELS]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, channel: usize) -> Vec<f64> {
        (0..SERIES_LEN).map(|t| self.get(t, channel)).collect()
    }

    pub fn normalize(&self, stats: &ChannelStats) -> Result<Self> {
        stats.apply(self)
    }

    pub fn write_csv_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header: Vec<String> = CHANNEL_LAYOUT.iter().map(ChannelDescriptor::name).collect();
        writeln!(w, "{}", header.join(","))?;
        for t in 0..SERIES_LEN {
            let row: Vec<String> = self.row(t).iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv_to(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn read_csv_from<R: Read>(reader: R, origin: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| Error::parse(origin, None, e.to_string()))?
            .clone();
        let expected: Vec<String> = CHANNEL_LAYOUT.iter().map(ChannelDescriptor::name).collect();
        if header.iter().map(str::trim).ne(expected.iter().map(String::as_str)) {
            return Err(Error::parse(origin, Some(0), "feature header does not match the channel layout"));
        }
        let mut data = Vec::with_capacity(SERIES_LEN * N_CHANNELS);
        let mut rows = 0;
        for (i, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| Error::parse(origin, Some(i + 1), e.to_string()))?;
            data.extend(parse_row(&record, N_CHANNELS, origin, i + 1)?);
            rows += 1;
        }
        if rows != SERIES_LEN {
            return Err(Error::parse(origin, None, format!("expected {SERIES_LEN} data rows, found {rows}")));
        }
        Self::from_vec(data)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv_from(file, path)
    }
}

/// Re-expresses each vector as (ρ, azimuth, elevation).
///
/// Azimuth is `atan2(y, x)` in (−π, π], elevation `asin(z / ρ)`. Both are
/// zero when ρ < 1e-12.
pub fn to_spherical_channels(v: &[Vector3<f64>]) -> Vec<[f64; 3]> {
    v.iter()
        .map(|v| {
            let rho = v.norm();
            if rho < SPHERICAL_EPS {
                return [rho, 0.0, 0.0];
            }
            let mut az = v.y.atan2(v.x);
            if az == -std::f64::consts::PI {
                az = std::f64::consts::PI;
            }
            let el = (v.z / rho).clamp(-1.0, 1.0).asin();
            [rho, az, el]
        })
        .collect()
}

/// Builds the feature tensor from a filtered anatomical-frame series.
pub fn build_features(series: &KinematicSeries) -> Result<FeatureTensor> {
    if series.frame() != Frame::Anatomical {
        return Err(Error::InvalidState("features are built from anatomical-frame kinematics".into()));
    }
    let local = [
        series.ang_vel().to_vec(),
        angular_acceleration(series),
        series.lin_acc().to_vec(),
    ];
    let q_seq = integrate_orientation(series.ang_vel(), series.dt());
    let global: Vec<Vec<Vector3<f64>>> = local.iter().map(|v| rotate_series(v, &q_seq)).collect();
    // rotation is an isometry, so one magnitude serves both frames
    let magnitudes: Vec<Vec<f64>> = local
        .iter()
        .map(|v| v.iter().map(|x| x.norm()).collect())
        .collect();

    let mut data = vec![0.0; SERIES_LEN * N_CHANNELS];
    for (block, vectors) in [(0usize, &local[..]), (2, &global[..])] {
        for (q, v) in vectors.iter().enumerate() {
            let spherical = to_spherical_channels(v);
            for t in 0..SERIES_LEN {
                let row = &mut data[t * N_CHANNELS..(t + 1) * N_CHANNELS];
                let cart = block * 12 + q * 4;
                let sph = (block + 1) * 12 + q * 4;
                let mag = magnitudes[q][t];
                row[cart] = v[t].x;
                row[cart + 1] = v[t].y;
                row[cart + 2] = v[t].z;
                row[cart + 3] = mag;
                row[sph] = mag;
                row[sph + 1] = spherical[t][1];
                row[sph + 2] = spherical[t][2];
                row[sph + 3] = mag;
            }
        }
    }
    FeatureTensor::from_vec(data)
}

/// Per-channel mean and population standard deviation over a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn fit(tensors: &[&FeatureTensor]) -> Result<Self> {
        if tensors.is_empty() {
            return Err(Error::InvalidArgument("cannot fit channel statistics on an empty set".into()));
        }
        let count = (tensors.len() * SERIES_LEN) as f64;
        let mut mean = vec![0.0; N_CHANNELS];
        for t in tensors {
            for row in t.data.chunks_exact(N_CHANNELS) {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; N_CHANNELS];
        for t in tensors {
            for row in t.data.chunks_exact(N_CHANNELS) {
                for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
        }
        let std = var.into_iter().map(|s| (s / count).sqrt()).collect();
        Ok(Self { mean, std })
    }

    /// Z-scores each channel; near-constant channels are only centered.
    pub fn apply(&self, tensor: &FeatureTensor) -> Result<FeatureTensor> {
        if self.mean.len() != N_CHANNELS || self.std.len() != N_CHANNELS {
            return Err(Error::InvalidArgument(format!(
                "channel statistics cover {} channels, tensor has {N_CHANNELS}",
                self.mean.len()
            )));
        }
        let mut data = tensor.data.clone();
        for row in data.chunks_exact_mut(N_CHANNELS) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v -= m;
                if *s >= CONSTANT_CHANNEL_STD {
                    *v /= s;
                }
            }
        }
        Ok(FeatureTensor { data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::SAMPLE_DT;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn random_series(vals: &[f64]) -> KinematicSeries {
        let a = vals.chunks(6).map(|c| Vector3::new(c[0], c[1], c[2])).collect();
        let w = vals.chunks(6).map(|c| Vector3::new(c[3], c[4], c[5])).collect();
        KinematicSeries::new(a, w, Frame::Anatomical).unwrap()
    }

    #[test]
    fn layout_names_are_unique_and_ordered() {
        let names: Vec<String> = CHANNEL_LAYOUT.iter().map(ChannelDescriptor::name).collect();
        assert_eq!(names[0], "local.ang_vel.x");
        assert_eq!(names[11], "local.lin_acc.mag");
        assert_eq!(names[12], "local_sph.ang_vel.rho");
        assert_eq!(names[24], "global.ang_vel.x");
        assert_eq!(names[47], "global_sph.lin_acc.mag");
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), N_CHANNELS);
    }

    #[test]
    fn spherical_examples() {
        let s = to_spherical_channels(&[Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 0.0, 1.0), Vector3::zeros()]);
        assert_eq!(s[0], [1.0, 0.0, 0.0]);
        assert_eq!(s[1][0], 1.0);
        assert!((s[1][2] - PI / 2.0).abs() < 1e-15);
        assert_eq!(s[2], [0.0, 0.0, 0.0]);
        let back = to_spherical_channels(&[Vector3::new(-1.0, -0.0, 0.0)]);
        assert_eq!(back[0][1], PI);
    }

    #[test]
    fn zero_series_gives_zero_tensor() {
        let f = build_features(&KinematicSeries::zeros(Frame::Anatomical)).unwrap();
        assert!(f.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn no_rotation_means_identical_local_and_global_blocks() {
        let a = (0..SERIES_LEN).map(|k| Vector3::new(k as f64, -2.0 * k as f64, 7.0)).collect();
        let s = KinematicSeries::new(a, vec![Vector3::zeros(); SERIES_LEN], Frame::Anatomical).unwrap();
        let f = build_features(&s).unwrap();
        for t in 0..SERIES_LEN {
            assert_eq!(&f.row(t)[0..12], &f.row(t)[24..36]);
        }
    }

    #[test]
    fn global_series_is_rejected() {
        let s = KinematicSeries::zeros(Frame::Global);
        assert!(matches!(build_features(&s), Err(Error::InvalidState(_))));
    }

    #[test]
    fn normalize_examples() {
        let mut data = vec![0.0; SERIES_LEN * N_CHANNELS];
        for (i, v) in data.iter_mut().enumerate() {
            *v = (i % N_CHANNELS) as f64 * 0.5 + ((i * 7919) % 13) as f64;
        }
        // channel 5 constant
        for t in 0..SERIES_LEN {
            data[t * N_CHANNELS + 5] = 4.0;
        }
        let a = FeatureTensor::from_vec(data).unwrap();
        let stats = ChannelStats::fit(&[&a]).unwrap();
        let n = a.normalize(&stats).unwrap();
        for c in 0..N_CHANNELS {
            let ch = n.channel(c);
            let m = ch.iter().sum::<f64>() / SERIES_LEN as f64;
            let s = (ch.iter().map(|v| (v - m).powi(2)).sum::<f64>() / SERIES_LEN as f64).sqrt();
            assert!(m.abs() < 1e-9);
            if c == 5 {
                assert!(ch.iter().all(|v| *v == 0.0));
            } else {
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
        let at_mean = FeatureTensor::from_vec(
            (0..SERIES_LEN * N_CHANNELS).map(|i| stats.mean[i % N_CHANNELS]).collect(),
        )
        .unwrap();
        assert!(at_mean.normalize(&stats).unwrap().as_slice().iter().all(|v| *v == 0.0));

        let short = ChannelStats { mean: vec![0.0; 12], std: vec![1.0; 12] };
        assert!(matches!(a.normalize(&short), Err(Error::InvalidArgument(_))));
    }

    proptest! {
        #[test]
        fn spherical_roundtrip(x in -1e3f64..1e3, y in -1e3f64..1e3, z in -1e3f64..1e3) {
            let v = Vector3::new(x, y, z);
            prop_assume!(v.norm() > 1e-6);
            let [rho, az, el] = to_spherical_channels(&[v])[0];
            let back = Vector3::new(rho * el.cos() * az.cos(), rho * el.cos() * az.sin(), rho * el.sin());
            prop_assert!((back - v).norm() < 1e-10);
            prop_assert!(az > -PI && az <= PI);
        }

        #[test]
        fn magnitudes_agree_across_frames(vals in proptest::collection::vec(-50.0f64..50.0, 6 * SERIES_LEN)) {
            let s = random_series(&vals);
            let f = build_features(&s).unwrap();
            let f2 = build_features(&s).unwrap();
            prop_assert_eq!(&f, &f2);
            for t in 0..SERIES_LEN {
                let row = f.row(t);
                prop_assert_eq!(row[11], row[35]);
                prop_assert_eq!(row[11], row[23]);
                prop_assert!(row.iter().enumerate().all(|(c, v)| CHANNEL_LAYOUT[c].component != Component::Magnitude || *v >= 0.0));
            }
        }

        #[test]
        fn feature_csv_roundtrip(vals in proptest::collection::vec(-50.0f64..50.0, 6 * SERIES_LEN)) {
            let f = build_features(&random_series(&vals)).unwrap();
            let mut buf = Vec::new();
            f.write_csv_to(&mut buf).unwrap();
            let back = FeatureTensor::read_csv_from(buf.as_slice(), Path::new("mem")).unwrap();
            prop_assert_eq!(back, f);
        }
    }

    #[test]
    fn global_block_matches_manual_rotation() {
        let w: Vec<_> = (0..SERIES_LEN).map(|k| Vector3::new(0.0, 0.0, 10.0 + k as f64 * 0.1)).collect();
        let a: Vec<_> = (0..SERIES_LEN).map(|_| Vector3::new(1.0, 0.0, 0.0)).collect();
        let s = KinematicSeries::new(a, w.clone(), Frame::Anatomical).unwrap();
        let f = build_features(&s).unwrap();
        let q = integrate_orientation(&w, SAMPLE_DT);
        let last = q[SERIES_LEN - 1].transform_vector(&Vector3::new(1.0, 0.0, 0.0));
        let row = f.row(SERIES_LEN - 1);
        assert!((row[32] - last.x).abs() < 1e-12 && (row[33] - last.y).abs() < 1e-12);
    }
}
