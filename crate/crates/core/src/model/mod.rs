//! LSTM models mapping 48-channel kinematic features to impact parameters
//! and force profiles, one model per target.

pub mod lstm;
mod train;

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use lstm::{Block, Params};
pub use train::{
    batch_loss, fit, loss, loss_and_gradient, mean_abs_error, select_best, train, tune, EpochRecord, LabeledSet,
    LossKind, SearchGrid, TrainingLog, Trial, TuneReport,
};

use crate::error::{Error, Result};
use crate::geometry::{
    closest_sphere_point, impact_line, location_of_direction, HelmetRegion, ImpactLocation, ImpactSetup, HELMET_RADIUS_MM,
};
use crate::kinematics::{ChannelStats, FeatureTensor, N_CHANNELS, SERIES_LEN};
use crate::surrogate::{ForceProfile, SimulatedImpact};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparameters {
    pub hidden_units: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub dropout_rate: f64,
    pub l2_kernel: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            hidden_units: 16,
            learning_rate: 0.005,
            epochs: 20,
            dropout_rate: 0.1,
            l2_kernel: 1e-5,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_units == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "hidden_units, epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidArgument(format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate)));
        }
        if !(self.l2_kernel >= 0.0) || !self.l2_kernel.is_finite() {
            return Err(Error::InvalidArgument(format!("l2_kernel must be nonnegative, got {}", self.l2_kernel)));
        }
        Ok(())
    }
}

/// Whether the second LSTM layer feeds the dense head only at the last step
/// or at every step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    Scalar,
    Sequence,
}

impl Mode {
    pub fn output_len(self) -> usize {
        match self {
            Mode::Scalar => 1,
            Mode::Sequence => SERIES_LEN,
        }
    }
}

/// The seven predicted quantities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Speed,
    Alpha,
    Beta,
    Y,
    Z,
    ForceHelmet,
    ForceHead,
}

impl Target {
    pub const ALL: [Target; 7] = [
        Target::Speed,
        Target::Alpha,
        Target::Beta,
        Target::Y,
        Target::Z,
        Target::ForceHelmet,
        Target::ForceHead,
    ];
    pub const SCALARS: [Target; 5] = [Target::Speed, Target::Alpha, Target::Beta, Target::Y, Target::Z];

    pub fn name(self) -> &'static str {
        match self {
            Target::Speed => "speed",
            Target::Alpha => "alpha",
            Target::Beta => "beta",
            Target::Y => "y",
            Target::Z => "z",
            Target::ForceHelmet => "force_helmet",
            Target::ForceHead => "force_head",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Target::Speed => "m/s",
            Target::Alpha | Target::Beta => "deg",
            Target::Y | Target::Z => "mm",
            Target::ForceHelmet | Target::ForceHead => "kN",
        }
    }

    pub fn mode(self) -> Mode {
        match self {
            Target::ForceHelmet | Target::ForceHead => Mode::Sequence,
            _ => Mode::Scalar,
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.json", self.name())
    }

    /// Ground-truth values of this target for one impact.
    pub fn values(self, impact: &SimulatedImpact) -> Vec<f64> {
        let s = &impact.setup;
        match self {
            Target::Speed => vec![s.speed_mps],
            Target::Alpha => vec![s.alpha_deg],
            Target::Beta => vec![s.beta_deg],
            Target::Y => vec![s.y_mm],
            Target::Z => vec![s.z_mm],
            Target::ForceHelmet => impact.force_helmet.values().to_vec(),
            Target::ForceHead => impact.force_head.values().to_vec(),
        }
    }
}

impl std::str::FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Target::ALL
            .into_iter()
            .find(|t| t.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown target {s:?}")))
    }
}

/// Affine map between target units and network units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetStats {
    pub mean: f64,
    pub std: f64,
}

impl TargetStats {
    /// Population mean and std over all values; a flat target gets unit std.
    pub fn fit<'a>(targets: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
        for t in targets {
            for v in t {
                n += 1;
                sum += v;
                sq += v * v;
            }
        }
        if n == 0 {
            return Self { mean: 0.0, std: 1.0 };
        }
        let mean = sum / n as f64;
        let var = (sq / n as f64 - mean * mean).max(0.0);
        let std = if var.sqrt() < 1e-12 { 1.0 } else { var.sqrt() };
        Self { mean, std }
    }

    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

/// A trained network together with the statistics needed to apply it.
#[derive(Debug, Clone, PartialEq)]
pub struct LSTMModel {
    pub mode: Mode,
    pub hyper: Hyperparameters,
    pub params: Params,
    pub feature_stats: ChannelStats,
    pub target_stats: TargetStats,
}

impl LSTMModel {
    pub fn new<R: Rng>(mode: Mode, hyper: Hyperparameters, feature_stats: ChannelStats, target_stats: TargetStats, rng: &mut R) -> Self {
        let params = Params::glorot(N_CHANNELS, hyper.hidden_units, rng);
        Self {
            mode,
            hyper,
            params,
            feature_stats,
            target_stats,
        }
    }

    /// Network output in normalized target units for already-normalized features.
    pub fn forward<R: Rng>(&self, features: &FeatureTensor, training: bool, rng: &mut R) -> Result<Vec<f64>> {
        if features.n_channels() != self.params.n_in() || features.n_samples() != SERIES_LEN {
            return Err(Error::InvalidArgument(format!(
                "features are {}×{}, model expects {SERIES_LEN}×{}",
                features.n_samples(),
                features.n_channels(),
                self.params.n_in()
            )));
        }
        let x = Array2::from_shape_vec((SERIES_LEN, features.n_channels()), features.as_slice().to_vec())
            .expect("feature tensor shape");
        let dropout = training.then_some((self.hyper.dropout_rate, rng));
        let out = lstm::forward(&self.params, self.mode, x.view(), SERIES_LEN, 1, dropout).output;
        debug_assert_eq!(out.len(), self.mode.output_len());
        Ok(out)
    }

    /// Prediction in target units from raw (unnormalized) features.
    pub fn predict(&self, features: &FeatureTensor) -> Result<Vec<f64>> {
        let normalized = self.feature_stats.apply(features)?;
        let out = self.forward::<rand_chacha::ChaCha8Rng>(&normalized, false, &mut rand::SeedableRng::seed_from_u64(0))?;
        Ok(out.into_iter().map(|v| self.target_stats.denormalize(v)).collect())
    }

    /// Batched [`predict`](Self::predict); results are identical up to rounding.
    pub fn predict_many(&self, features: &[&FeatureTensor]) -> Result<Vec<Vec<f64>>> {
        const CHUNK: usize = 256;
        let n_in = self.params.n_in();
        let mut out = Vec::with_capacity(features.len());
        for chunk in features.chunks(CHUNK) {
            let b = chunk.len();
            let mut x = Array2::<f64>::zeros((SERIES_LEN * b, n_in));
            for (j, f) in chunk.iter().enumerate() {
                if f.n_channels() != n_in || f.n_samples() != SERIES_LEN {
                    return Err(Error::InvalidArgument(format!(
                        "features are {}×{}, model expects {SERIES_LEN}×{n_in}",
                        f.n_samples(),
                        f.n_channels()
                    )));
                }
                let normalized = self.feature_stats.apply(f)?;
                for t in 0..SERIES_LEN {
                    for c in 0..n_in {
                        x[[t * b + j, c]] = normalized.get(t, c);
                    }
                }
            }
            let y = lstm::forward::<rand_chacha::ChaCha8Rng>(&self.params, self.mode, x.view(), SERIES_LEN, b, None).output;
            for j in 0..b {
                let v: Vec<f64> = match self.mode {
                    Mode::Scalar => vec![y[j]],
                    Mode::Sequence => (0..SERIES_LEN).map(|t| y[t * b + j]).collect(),
                };
                out.push(v.into_iter().map(|v| self.target_stats.denormalize(v)).collect());
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            mode: self.mode,
            hyperparameters: self.hyper.clone(),
            n_inputs: self.params.n_in(),
            hidden_units: self.params.hidden(),
            weights: Block::ALL
                .iter()
                .map(|b| {
                    let (rows, cols) = self.params.shape(*b);
                    WeightMatrix {
                        name: b.name().to_string(),
                        rows,
                        cols,
                        data: self.params.block(*b).to_vec(),
                    }
                })
                .collect(),
            feature_stats: self.feature_stats.clone(),
            target_stats: self.target_stats,
        };
        let text = serde_json::to_string(&file)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let probe: VersionProbe = serde_json::from_str(&text).map_err(|e| Error::parse(path, None, e.to_string()))?;
        if probe.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::ModelVersion {
                found: probe.format_version,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        let file: ModelFile = serde_json::from_str(&text).map_err(|e| Error::parse(path, None, e.to_string()))?;
        let mut params = Params::zeros(file.n_inputs, file.hidden_units);
        if file.weights.len() != Block::ALL.len() {
            return Err(Error::parse(path, None, "wrong number of weight blocks"));
        }
        for (block, w) in Block::ALL.iter().zip(&file.weights) {
            if w.name != block.name() || (w.rows, w.cols) != params.shape(*block) || w.data.len() != w.rows * w.cols {
                return Err(Error::parse(path, None, format!("weight block {} has the wrong name or shape", w.name)));
            }
            if w.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::parse(path, None, format!("weight block {} has non-finite values", w.name)));
            }
            params.block_mut(*block).copy_from_slice(&w.data);
        }
        if file.feature_stats.mean.len() != file.n_inputs {
            return Err(Error::parse(path, None, "feature statistics do not match the input width"));
        }
        file.hyperparameters.validate()?;
        Ok(Self {
            mode: file.mode,
            hyper: file.hyperparameters,
            params,
            feature_stats: file.feature_stats,
            target_stats: file.target_stats,
        })
    }
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    mode: Mode,
    hyperparameters: Hyperparameters,
    n_inputs: usize,
    hidden_units: usize,
    /// Row-major blocks in the order of [`Block::ALL`].
    weights: Vec<WeightMatrix>,
    feature_stats: ChannelStats,
    target_stats: TargetStats,
}

#[derive(Serialize, Deserialize)]
struct WeightMatrix {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Up to one model per target.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelSet {
    models: std::collections::BTreeMap<Target, LSTMModel>,
}

impl ModelSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, target: Target, model: LSTMModel) -> Result<()> {
        if model.mode != target.mode() {
            return Err(Error::InvalidArgument(format!(
                "{} needs a {:?}-mode model",
                target.name(),
                target.mode()
            )));
        }
        self.models.insert(target, model);
        Ok(())
    }

    pub fn get(&self, target: Target) -> Result<&LSTMModel> {
        self.models
            .get(&target)
            .ok_or_else(|| Error::MissingModel(target.name().to_string()))
    }

    pub fn targets(&self) -> impl Iterator<Item = Target> + '_ {
        self.models.keys().copied()
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (t, m) in &self.models {
            m.save(&dir.join(t.file_name()))?;
        }
        Ok(())
    }

    /// Loads whichever target files exist in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, "model directory not found")));
        }
        let mut set = Self::new();
        for t in Target::ALL {
            let path = dir.join(t.file_name());
            if path.is_file() {
                set.insert(t, LSTMModel::load(&path)?)?;
            }
        }
        Ok(set)
    }
}

/// Predicted impact parameters in physical units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpactInfo {
    pub speed_mps: f64,
    pub alpha_deg: f64,
    pub beta_deg: f64,
    pub y_mm: f64,
    pub z_mm: f64,
}

impl ImpactInfo {
    pub fn setup(&self) -> ImpactSetup {
        ImpactSetup::new(self.alpha_deg, self.beta_deg, self.y_mm, self.z_mm, self.speed_mps)
    }
}

pub fn predict_impact_info(models: &ModelSet, features: &FeatureTensor) -> Result<ImpactInfo> {
    let mut v = [0.0; 5];
    for (slot, t) in v.iter_mut().zip(Target::SCALARS) {
        *slot = models.get(t)?.predict(features)?[0];
    }
    Ok(ImpactInfo {
        speed_mps: v[0],
        alpha_deg: v[1],
        beta_deg: v[2],
        y_mm: v[3],
        z_mm: v[4],
    })
}

/// Helmet and head/face force profiles, negative outputs clamped to zero.
pub fn predict_force(models: &ModelSet, features: &FeatureTensor) -> Result<(ForceProfile, ForceProfile)> {
    let helmet = models.get(Target::ForceHelmet)?.predict(features)?;
    let head = models.get(Target::ForceHead)?.predict(features)?;
    Ok((ForceProfile::from_raw(helmet)?, ForceProfile::from_raw(head)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocationPrediction {
    pub location: ImpactLocation,
    pub region: HelmetRegion,
    /// The predicted line misses the helmet sphere and was projected onto it.
    pub missed: bool,
}

/// Impact location implied by a predicted setup.
pub fn location_from_setup(setup: &ImpactSetup) -> LocationPrediction {
    let (point, missed) = closest_sphere_point(&impact_line(setup), HELMET_RADIUS_MM);
    let location = location_of_direction(&point);
    LocationPrediction {
        location,
        region: location.region(),
        missed,
    }
}

pub fn predict_location(models: &ModelSet, features: &FeatureTensor) -> Result<LocationPrediction> {
    Ok(location_from_setup(&predict_impact_info(models, features)?.setup()))
}
