use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lstm::{self, Block, Params};
use super::{Hyperparameters, LSTMModel, Mode, TargetStats};
use crate::error::{Error, Result};
use crate::kinematics::{ChannelStats, FeatureTensor, N_CHANNELS, SERIES_LEN};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPSILON: f64 = 1e-8;
const EVAL_BATCH: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    /// Mean absolute error; the subgradient at zero is taken as zero.
    Mae,
    /// Mean squared error, used for gradient checks.
    Squared,
}

/// Features paired with per-sample targets (1 value in scalar mode, 145 in
/// sequence mode).
#[derive(Debug, Clone, Default)]
pub struct LabeledSet<'a> {
    pub features: Vec<&'a FeatureTensor>,
    pub targets: Vec<&'a [f64]>,
}

impl<'a> LabeledSet<'a> {
    pub fn new(features: Vec<&'a FeatureTensor>, targets: Vec<&'a [f64]>) -> Result<Self> {
        if features.len() != targets.len() {
            return Err(Error::InvalidArgument(format!(
                "{} feature tensors but {} targets",
                features.len(),
                targets.len()
            )));
        }
        Ok(Self { features, targets })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    fn check(&self, mode: Mode) -> Result<()> {
        for (i, t) in self.targets.iter().enumerate() {
            if t.len() != mode.output_len() {
                return Err(Error::InvalidArgument(format!(
                    "target {i} has {} values, {mode:?} mode needs {}",
                    t.len(),
                    mode.output_len()
                )));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("target {i} is not finite")));
            }
        }
        Ok(())
    }
}

/// Normalized features and targets laid out for fast batch assembly.
struct Prepared {
    x: Vec<f64>,
    y: Vec<f64>,
    out_len: usize,
}

impl Prepared {
    fn new(set: &LabeledSet, features: &ChannelStats, targets: &TargetStats) -> Result<Self> {
        let mut x = Vec::with_capacity(set.len() * SERIES_LEN * N_CHANNELS);
        for f in &set.features {
            x.extend_from_slice(features.apply(f)?.as_slice());
        }
        let y = set.targets.iter().flat_map(|t| t.iter().map(|v| targets.normalize(*v))).collect();
        let out_len = set.targets.first().map_or(1, |t| t.len());
        Ok(Self { x, y, out_len })
    }

    fn len(&self) -> usize {
        self.x.len() / (SERIES_LEN * N_CHANNELS)
    }

    /// Time-major input matrix and matching targets (time-major for sequences).
    fn gather(&self, idx: &[usize]) -> (Array2<f64>, Vec<f64>) {
        let b = idx.len();
        let mut x = Array2::zeros((SERIES_LEN * b, N_CHANNELS));
        {
            let dst = x.as_slice_mut().expect("contiguous");
            for (col, &i) in idx.iter().enumerate() {
                let src = &self.x[i * SERIES_LEN * N_CHANNELS..(i + 1) * SERIES_LEN * N_CHANNELS];
                for t in 0..SERIES_LEN {
                    let row = t * b + col;
                    dst[row * N_CHANNELS..(row + 1) * N_CHANNELS]
                        .copy_from_slice(&src[t * N_CHANNELS..(t + 1) * N_CHANNELS]);
                }
            }
        }
        let mut y = vec![0.0; self.out_len * b];
        for (col, &i) in idx.iter().enumerate() {
            for t in 0..self.out_len {
                y[t * b + col] = self.y[i * self.out_len + t];
            }
        }
        (x, y)
    }
}

fn data_loss(output: &[f64], target: &[f64], kind: LossKind) -> (f64, Vec<f64>) {
    let n = output.len() as f64;
    let mut total = 0.0;
    let grad = output
        .iter()
        .zip(target)
        .map(|(o, t)| {
            let e = o - t;
            match kind {
                LossKind::Mae => {
                    total += e.abs();
                    if e > 0.0 {
                        1.0 / n
                    } else if e < 0.0 {
                        -1.0 / n
                    } else {
                        0.0
                    }
                }
                LossKind::Squared => {
                    total += e * e;
                    2.0 * e / n
                }
            }
        })
        .collect();
    (total / n, grad)
}

fn add_kernel_penalty_grad(params: &Params, grad: &mut Params, l2: f64) {
    if l2 == 0.0 {
        return;
    }
    for block in [Block::Kernel1, Block::Kernel2] {
        let w = params.block(block).to_vec();
        for (g, w) in grad.block_mut(block).iter_mut().zip(w) {
            *g += 2.0 * l2 * w;
        }
    }
}

/// Mean absolute error over all elements plus `l2_kernel` × Σ kernel².
pub fn loss(predictions: &[f64], targets: &[f64], params: &Params, l2_kernel: f64) -> Result<f64> {
    if predictions.len() != targets.len() || predictions.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    Ok(data_loss(predictions, targets, LossKind::Mae).0 + l2_kernel * params.kernel_sq_norm())
}

pub fn mean_abs_error(predictions: &[f64], targets: &[f64]) -> f64 {
    predictions.iter().zip(targets).map(|(p, t)| (p - t).abs()).sum::<f64>() / predictions.len() as f64
}

fn batch_input(features: &[&FeatureTensor]) -> Array2<f64> {
    let b = features.len();
    Array2::from_shape_fn((SERIES_LEN * b, N_CHANNELS), |(r, c)| features[r % b].get(r / b, c))
}

fn batch_targets(targets: &[&[f64]]) -> Vec<f64> {
    let b = targets.len();
    let len = targets.first().map_or(0, |t| t.len());
    (0..len * b).map(|i| targets[i % b][i / b]).collect()
}

/// Loss and exact gradient for a batch of normalized features, without dropout.
pub fn loss_and_gradient(
    params: &Params,
    mode: Mode,
    features: &[&FeatureTensor],
    targets: &[&[f64]],
    kind: LossKind,
    l2_kernel: f64,
) -> Result<(f64, Params)> {
    let set = LabeledSet::new(features.to_vec(), targets.to_vec())?;
    set.check(mode)?;
    let x = batch_input(features);
    let y = batch_targets(targets);
    let pass = lstm::forward::<ChaCha8Rng>(params, mode, x.view(), SERIES_LEN, features.len(), None);
    let (data, dy) = data_loss(&pass.output, &y, kind);
    let mut grad = lstm::backward(params, mode, x.view(), SERIES_LEN, features.len(), &pass.cache, &dy);
    add_kernel_penalty_grad(params, &mut grad, l2_kernel);
    Ok((data + l2_kernel * params.kernel_sq_norm(), grad))
}

/// Loss only, for finite-difference checks.
pub fn batch_loss(
    params: &Params,
    mode: Mode,
    features: &[&FeatureTensor],
    targets: &[&[f64]],
    kind: LossKind,
    l2_kernel: f64,
) -> f64 {
    let x = batch_input(features);
    let y = batch_targets(targets);
    let out = lstm::forward::<ChaCha8Rng>(params, mode, x.view(), SERIES_LEN, features.len(), None).output;
    data_loss(&out, &y, kind).0 + l2_kernel * params.kernel_sq_norm()
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    fn new(len: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut Params, grad: &Params) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        for (((p, g), m), v) in params
            .as_mut_slice()
            .iter_mut()
            .zip(grad.as_slice())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPSILON);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch's batches, normalized units.
    pub train_loss: f64,
    /// Validation MAE in target units.
    pub val_mae: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (1-based).
    pub best_epoch: usize,
    pub best_val_mae: Option<f64>,
}

fn predict_prepared(params: &Params, mode: Mode, data: &Prepared) -> Vec<f64> {
    let n = data.len();
    let mut out = vec![0.0; n * mode.output_len()];
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let (x, _) = data.gather(chunk);
        let y = lstm::forward::<ChaCha8Rng>(params, mode, x.view(), SERIES_LEN, chunk.len(), None).output;
        let b = chunk.len();
        for (col, &i) in chunk.iter().enumerate() {
            for t in 0..mode.output_len() {
                out[i * mode.output_len() + t] = y[t * b + col];
            }
        }
    }
    out
}

/// Trains on `train`, keeping the epoch with the lowest MAE on `val`
/// (the last epoch when `val` is empty).
pub fn fit(train: &LabeledSet, val: &LabeledSet, mode: Mode, hyper: &Hyperparameters) -> Result<(LSTMModel, TrainingLog)> {
    hyper.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    train.check(mode)?;
    val.check(mode)?;
    let feature_stats = ChannelStats::fit(&train.features)?;
    let target_stats = TargetStats::fit(train.targets.iter().copied());
    let train_data = Prepared::new(train, &feature_stats, &target_stats)?;
    let val_data = Prepared::new(val, &feature_stats, &target_stats)?;

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut params = Params::glorot(N_CHANNELS, hyper.hidden_units, &mut rng);
    let mut adam = Adam::new(params.as_slice().len(), hyper.learning_rate);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = TrainingLog {
        epochs: Vec::with_capacity(hyper.epochs),
        best_epoch: 0,
        best_val_mae: None,
    };
    let mut best = params.clone();

    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(hyper.batch_size) {
            let (x, y) = train_data.gather(chunk);
            let pass = lstm::forward(
                &params,
                mode,
                x.view(),
                SERIES_LEN,
                chunk.len(),
                Some((hyper.dropout_rate, &mut rng)),
            );
            let (data, dy) = data_loss(&pass.output, &y, LossKind::Mae);
            let batch_loss = data + hyper.l2_kernel * params.kernel_sq_norm();
            let mut grad = lstm::backward(&params, mode, x.view(), SERIES_LEN, chunk.len(), &pass.cache, &dy);
            add_kernel_penalty_grad(&params, &mut grad, hyper.l2_kernel);
            if !batch_loss.is_finite() || grad.as_slice().iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged { epoch });
            }
            adam.step(&mut params, &grad);
            total += batch_loss * chunk.len() as f64;
        }
        if params.as_slice().iter().any(|p| !p.is_finite()) {
            return Err(Error::TrainingDiverged { epoch });
        }
        let val_mae = (!val.is_empty()).then(|| {
            let pred = predict_prepared(&params, mode, &val_data);
            mean_abs_error(&pred, &val_data.y) * target_stats.std
        });
        log.epochs.push(EpochRecord {
            epoch,
            train_loss: total / train.len() as f64,
            val_mae,
        });
        log::debug!("epoch {epoch}: train loss {:.5}, val MAE {val_mae:?}", total / train.len() as f64);
        let improved = match (val_mae, log.best_val_mae) {
            (None, _) => true,
            (Some(v), None) => v.is_finite(),
            (Some(v), Some(b)) => v < b,
        };
        if improved {
            log.best_epoch = epoch;
            log.best_val_mae = val_mae;
            best.clone_from(&params);
        }
    }
    if log.best_epoch == 0 {
        return Err(Error::TrainingDiverged { epoch: hyper.epochs });
    }
    Ok((
        LSTMModel {
            mode,
            hyper: hyper.clone(),
            params: best,
            feature_stats,
            target_stats,
        },
        log,
    ))
}

/// Shuffles with the hyperparameter seed, holds out `val_split` of the
/// samples for epoch selection and trains on the rest.
pub fn train(set: &LabeledSet, mode: Mode, hyper: &Hyperparameters, val_split: f64) -> Result<(LSTMModel, TrainingLog)> {
    if !(0.0..1.0).contains(&val_split) {
        return Err(Error::InvalidArgument(format!("val_split must lie in [0, 1), got {val_split}")));
    }
    let mut idx: Vec<usize> = (0..set.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(hyper.seed.wrapping_add(0x5EED)));
    let n_val = (set.len() as f64 * val_split).round() as usize;
    let pick = |ids: &[usize]| LabeledSet {
        features: ids.iter().map(|&i| set.features[i]).collect(),
        targets: ids.iter().map(|&i| set.targets[i]).collect(),
    };
    fit(&pick(&idx[n_val..]), &pick(&idx[..n_val]), mode, hyper)
}

/// Lists of candidate values; the search covers their Cartesian product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchGrid {
    pub hidden_units: Vec<usize>,
    pub learning_rate: Vec<f64>,
    pub epochs: Vec<usize>,
    pub dropout_rate: Vec<f64>,
    pub l2_kernel: Vec<f64>,
    pub batch_size: Vec<usize>,
    pub seed: u64,
}

impl Default for SearchGrid {
    /// Unit count and learning rate varied around the default hyperparameters.
    fn default() -> Self {
        Self {
            hidden_units: vec![8, 16, 32],
            learning_rate: vec![0.001, 0.005, 0.01],
            ..Self::single(&Hyperparameters::default())
        }
    }
}

impl SearchGrid {
    pub fn single(h: &Hyperparameters) -> Self {
        Self {
            hidden_units: vec![h.hidden_units],
            learning_rate: vec![h.learning_rate],
            epochs: vec![h.epochs],
            dropout_rate: vec![h.dropout_rate],
            l2_kernel: vec![h.l2_kernel],
            batch_size: vec![h.batch_size],
            seed: h.seed,
        }
    }

    pub fn configs(&self) -> Vec<Hyperparameters> {
        let mut out = Vec::new();
        for &hidden_units in &self.hidden_units {
            for &learning_rate in &self.learning_rate {
                for &epochs in &self.epochs {
                    for &dropout_rate in &self.dropout_rate {
                        for &l2_kernel in &self.l2_kernel {
                            for &batch_size in &self.batch_size {
                                out.push(Hyperparameters {
                                    hidden_units,
                                    learning_rate,
                                    epochs,
                                    dropout_rate,
                                    l2_kernel,
                                    batch_size,
                                    seed: self.seed,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub hyper: Hyperparameters,
    /// Best validation MAE, infinite when training diverged.
    pub val_mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub best: Hyperparameters,
    pub trials: Vec<Trial>,
}

/// Lowest validation MAE; ties go to fewer hidden units, then the smaller learning rate.
pub fn select_best(trials: &[Trial]) -> Option<&Trial> {
    trials.iter().min_by(|a, b| {
        let key = |t: &Trial| if t.val_mae.is_nan() { f64::INFINITY } else { t.val_mae };
        key(a)
            .total_cmp(&key(b))
            .then(a.hyper.hidden_units.cmp(&b.hyper.hidden_units))
            .then(a.hyper.learning_rate.total_cmp(&b.hyper.learning_rate))
    })
}

/// Exhaustive search over `grid`, scored by best validation MAE.
pub fn tune(train: &LabeledSet, val: &LabeledSet, mode: Mode, grid: &SearchGrid) -> Result<TuneReport> {
    let configs = grid.configs();
    if configs.is_empty() {
        return Err(Error::InvalidArgument("search grid is empty".into()));
    }
    if val.is_empty() {
        return Err(Error::InvalidArgument("tuning needs a validation set".into()));
    }
    let mut trials = Vec::with_capacity(configs.len());
    for hyper in configs {
        let val_mae = match fit(train, val, mode, &hyper) {
            Ok((_, log)) => log.best_val_mae.unwrap_or(f64::INFINITY),
            Err(Error::TrainingDiverged { epoch }) => {
                log::warn!("configuration {hyper:?} diverged at epoch {epoch}");
                f64::INFINITY
            }
            Err(e) => return Err(e),
        };
        log::info!("tune: {hyper:?} -> val MAE {val_mae}");
        trials.push(Trial { hyper, val_mae });
    }
    let best = select_best(&trials).expect("nonempty").hyper.clone();
    Ok(TuneReport { best, trials })
}
