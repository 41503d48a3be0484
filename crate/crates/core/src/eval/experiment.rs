use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{peak_metrics, pointwise_metrics, scalar_metrics, ConfusionMatrix5, PointwiseMetrics, ScalarMetrics};
use crate::baselines::{
    matching_force_torque, opposite_linear_acceleration, revised_opposite, BaselineEstimate, RevisedKind,
    RigidBodyParams,
};
use crate::error::{Error, Result};
use crate::geometry::HelmetRegion;
use crate::kinematics::{build_features, FeatureTensor};
use crate::model::{fit, location_from_setup, Hyperparameters, ImpactInfo, LabeledSet, ModelSet, Target, TrainingLog};
use crate::surrogate::SimulatedImpact;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::InvalidArgument("split fractions must lie in [0, 1]".into()));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("split fractions sum to {sum}, expected 1")));
        }
        if self.train <= 0.0 {
            return Err(Error::InvalidArgument("training fraction must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Used for the five impact-parameter models.
    pub scalar_hyper: Hyperparameters,
    /// Used for the two force-profile models.
    pub sequence_hyper: Hyperparameters,
    pub seeds: Vec<u64>,
    pub split: SplitFractions,
    /// Keep an impact and its mirror image in the same partition.
    pub keep_mirror_pairs: bool,
    pub targets: Vec<Target>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scalar_hyper: Hyperparameters::default(),
            sequence_hyper: Hyperparameters::default(),
            seeds: (0..20).collect(),
            split: SplitFractions::default(),
            keep_mirror_pairs: true,
            targets: Target::ALL.to_vec(),
        }
    }
}

/// Shuffles with `seed` and cuts into train/validation/test index lists.
///
/// With `keep_pairs` the unit of shuffling is the group of impacts sharing a
/// `source_id`, so mirror images never straddle partitions.
pub fn split_indices(
    dataset: &[SimulatedImpact],
    seed: u64,
    split: &SplitFractions,
    keep_pairs: bool,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    split.validate()?;
    let mut groups: Vec<Vec<usize>> = if keep_pairs {
        let mut by_source: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, imp) in dataset.iter().enumerate() {
            by_source.entry(imp.source_id.as_str()).or_default().push(i);
        }
        let mut g: Vec<Vec<usize>> = by_source.into_values().collect();
        g.sort_by_key(|v| v[0]);
        g
    } else {
        (0..dataset.len()).map(|i| vec![i]).collect()
    };
    groups.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = groups.len();
    let n_train = ((split.train * n as f64).round() as usize).clamp(1, n);
    let n_val = ((split.val * n as f64).round() as usize).min(n - n_train);
    let flatten = |g: &[Vec<usize>]| {
        let mut v: Vec<usize> = g.iter().flatten().copied().collect();
        v.sort_unstable();
        v
    };
    Ok((
        flatten(&groups[..n_train]),
        flatten(&groups[n_train..n_train + n_val]),
        flatten(&groups[n_train + n_val..]),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetMetrics {
    /// Scalar targets: per-impact metrics. Force targets: pooled over all samples.
    pub overall: ScalarMetrics,
    pub pointwise: Option<PointwiseMetrics>,
    pub peak: Option<ScalarMetrics>,
}

impl TargetMetrics {
    fn compute(target: Target, pred: &[Vec<f64>], reference: &[Vec<f64>]) -> Result<Self> {
        let flat = |v: &[Vec<f64>]| v.iter().flatten().copied().collect::<Vec<f64>>();
        let overall = scalar_metrics(&flat(pred), &flat(reference))?;
        if target.mode().output_len() == 1 {
            return Ok(Self {
                overall,
                pointwise: None,
                peak: None,
            });
        }
        let p: Vec<&[f64]> = pred.iter().map(Vec::as_slice).collect();
        let r: Vec<&[f64]> = reference.iter().map(Vec::as_slice).collect();
        Ok(Self {
            overall,
            pointwise: Some(pointwise_metrics(&p, &r)?),
            peak: Some(peak_metrics(&p, &r)?),
        })
    }

    /// Flat `(name, value)` pairs used for summaries and tables.
    pub fn named(&self) -> Vec<(&'static str, f64)> {
        let mut v = vec![("mae", self.overall.mae), ("rmse", self.overall.rmse)];
        if let Some(r2) = self.overall.r2 {
            v.push(("r2", r2));
        }
        if let Some(p) = &self.pointwise {
            v.push(("pointwise_mae", p.mae));
            v.push(("pointwise_rmse", p.rmse));
        }
        if let Some(p) = &self.peak {
            v.push(("peak_mae", p.mae));
            v.push(("peak_rmse", p.rmse));
            if let Some(r2) = p.r2 {
                v.push(("peak_r2", r2));
            }
        }
        v
    }
}

/// Everything measured for one seed (serializable part).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// Set when a model failed to train; metrics are then incomplete.
    pub diverged: Option<String>,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub best_epochs: BTreeMap<Target, usize>,
    pub val: BTreeMap<Target, TargetMetrics>,
    pub test: BTreeMap<Target, TargetMetrics>,
}

/// One seed's result plus the trained models and the partition used.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub result: SeedResult,
    pub models: ModelSet,
    pub logs: BTreeMap<Target, TrainingLog>,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; zero for a single seed.
    pub std: f64,
    pub n: usize,
}

impl Summary {
    fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std, n }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub config: ExperimentConfig,
    pub n_impacts: usize,
    pub seeds: Vec<SeedResult>,
    /// Test-set metrics aggregated over seeds: target → metric → summary.
    pub summary: BTreeMap<Target, BTreeMap<String, Summary>>,
}

impl MetricReport {
    pub fn test_summary(&self, target: Target, metric: &str) -> Option<Summary> {
        self.summary.get(&target)?.get(metric).copied()
    }
}

pub struct ExperimentOutcome {
    pub report: MetricReport,
    pub runs: Vec<SeedRun>,
}

fn seed_for(seed: u64, target: Target) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(Target::ALL.iter().position(|t| *t == target).unwrap_or(0) as u64)
}

/// Repeated train/validation/test experiment over `config.seeds`.
pub fn run_experiment(dataset: &[SimulatedImpact], config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    if dataset.len() < 10 {
        return Err(Error::InvalidArgument(format!("experiment needs at least 10 impacts, got {}", dataset.len())));
    }
    config.split.validate()?;
    config.scalar_hyper.validate()?;
    config.sequence_hyper.validate()?;
    if config.seeds.is_empty() {
        return Err(Error::InvalidArgument("experiment needs at least one seed".into()));
    }
    let features: Vec<FeatureTensor> = dataset.iter().map(|i| build_features(&i.series)).collect::<Result<_>>()?;
    let targets: BTreeSet<Target> = config.targets.iter().copied().collect();
    let labels: BTreeMap<Target, Vec<Vec<f64>>> = targets
        .iter()
        .map(|t| (*t, dataset.iter().map(|i| t.values(i)).collect()))
        .collect();

    let mut runs = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let (tr, va, te) = split_indices(dataset, seed, &config.split, config.keep_mirror_pairs)?;
        log::info!("seed {seed}: {} train, {} val, {} test", tr.len(), va.len(), te.len());
        let mut result = SeedResult {
            seed,
            diverged: None,
            n_train: tr.len(),
            n_val: va.len(),
            n_test: te.len(),
            best_epochs: BTreeMap::new(),
            val: BTreeMap::new(),
            test: BTreeMap::new(),
        };
        let mut models = ModelSet::new();
        let mut logs = BTreeMap::new();
        for &target in &targets {
            let y = &labels[&target];
            let subset = |idx: &[usize]| LabeledSet {
                features: idx.iter().map(|&i| &features[i]).collect(),
                targets: idx.iter().map(|&i| y[i].as_slice()).collect(),
            };
            let base = match target.mode() {
                crate::model::Mode::Scalar => &config.scalar_hyper,
                crate::model::Mode::Sequence => &config.sequence_hyper,
            };
            let hyper = Hyperparameters {
                seed: seed_for(seed, target),
                ..base.clone()
            };
            let (model, log) = match fit(&subset(&tr), &subset(&va), target.mode(), &hyper) {
                Ok(v) => v,
                Err(Error::TrainingDiverged { epoch }) => {
                    log::warn!("seed {seed}: {} diverged at epoch {epoch}", target.name());
                    result.diverged = Some(format!("{} diverged at epoch {epoch}", target.name()));
                    break;
                }
                Err(e) => return Err(e),
            };
            for (idx, slot) in [(&va, &mut result.val), (&te, &mut result.test)] {
                if idx.is_empty() {
                    continue;
                }
                let feats: Vec<&FeatureTensor> = idx.iter().map(|&i| &features[i]).collect();
                let pred = model.predict_many(&feats)?;
                let reference: Vec<Vec<f64>> = idx.iter().map(|&i| y[i].clone()).collect();
                slot.insert(target, TargetMetrics::compute(target, &pred, &reference)?);
            }
            result.best_epochs.insert(target, log.best_epoch);
            log::info!(
                "seed {seed}: {} best epoch {} val MAE {:?}",
                target.name(),
                log.best_epoch,
                log.best_val_mae
            );
            logs.insert(target, log);
            models.insert(target, model)?;
        }
        runs.push(SeedRun {
            result,
            models,
            logs,
            train_indices: tr,
            val_indices: va,
            test_indices: te,
        });
    }

    let mut summary: BTreeMap<Target, BTreeMap<String, Summary>> = BTreeMap::new();
    for &target in &targets {
        let mut per_metric: BTreeMap<&'static str, Vec<f64>> = BTreeMap::new();
        for run in runs.iter().filter(|r| r.result.diverged.is_none()) {
            if let Some(m) = run.result.test.get(&target) {
                for (name, v) in m.named() {
                    per_metric.entry(name).or_default().push(v);
                }
            }
        }
        summary.insert(
            target,
            per_metric.into_iter().map(|(k, v)| (k.to_string(), Summary::of(&v))).collect(),
        );
    }
    Ok(ExperimentOutcome {
        report: MetricReport {
            config: config.clone(),
            n_impacts: dataset.len(),
            seeds: runs.iter().map(|r| r.result.clone()).collect(),
            summary,
        },
        runs,
    })
}

pub const METHOD_NAMES: [&str; 6] = [
    "lstm",
    "opposite_linear_acceleration",
    "revised_acceleration",
    "revised_velocity",
    "revised_position",
    "matching_force_torque",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub matrix: ConfusionMatrix5,
    /// Impacts for which the method produced no estimate.
    pub failed: usize,
    /// Impacts classified with a caveat (line missed the sphere, degenerate
    /// correction, out-of-reach moment arm).
    pub flagged: usize,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub n_impacts: usize,
    pub methods: Vec<MethodResult>,
    /// Method names by decreasing accuracy.
    pub ranking: Vec<String>,
}

impl ComparisonReport {
    pub fn method(&self, name: &str) -> Option<&MethodResult> {
        self.methods.iter().find(|m| m.method == name)
    }
}

enum Outcome {
    Region(HelmetRegion, bool),
    Failed,
}

fn from_baseline(r: Result<BaselineEstimate>) -> Outcome {
    match r {
        Ok(e) => Outcome::Region(e.location.region(), e.flag.is_some()),
        Err(_) => Outcome::Failed,
    }
}

/// Region accuracy of the LSTM location model and the five rigid-body
/// estimators on the impacts selected by `indices`.
pub fn compare_methods(
    dataset: &[SimulatedImpact],
    indices: &[usize],
    models: &ModelSet,
    params: &RigidBodyParams,
) -> Result<ComparisonReport> {
    params.validate()?;
    if let Some(&bad) = indices.iter().find(|&&i| i >= dataset.len()) {
        return Err(Error::InvalidArgument(format!("impact index {bad} out of range")));
    }
    let impacts: Vec<&SimulatedImpact> = indices.iter().map(|&i| &dataset[i]).collect();
    let features: Vec<FeatureTensor> = impacts.iter().map(|i| build_features(&i.series)).collect::<Result<_>>()?;
    let feature_refs: Vec<&FeatureTensor> = features.iter().collect();
    let mut scalar = Vec::new();
    for t in Target::SCALARS {
        scalar.push(models.get(t)?.predict_many(&feature_refs)?);
    }

    let mut methods: Vec<MethodResult> = METHOD_NAMES
        .iter()
        .map(|m| MethodResult {
            method: m.to_string(),
            matrix: ConfusionMatrix5::default(),
            failed: 0,
            flagged: 0,
            accuracy: None,
        })
        .collect();
    for (k, imp) in impacts.iter().enumerate() {
        let info = ImpactInfo {
            speed_mps: scalar[0][k][0],
            alpha_deg: scalar[1][k][0],
            beta_deg: scalar[2][k][0],
            y_mm: scalar[3][k][0],
            z_mm: scalar[4][k][0],
        };
        let lstm = location_from_setup(&info.setup());
        let outcomes = [
            Outcome::Region(lstm.region, lstm.missed),
            from_baseline(opposite_linear_acceleration(&imp.series)),
            from_baseline(revised_opposite(&imp.series, RevisedKind::Acceleration)),
            from_baseline(revised_opposite(&imp.series, RevisedKind::Velocity)),
            from_baseline(revised_opposite(&imp.series, RevisedKind::Position)),
            from_baseline(matching_force_torque(&imp.series, params).map(|e| e.estimate)),
        ];
        for (m, o) in methods.iter_mut().zip(outcomes) {
            match o {
                Outcome::Region(r, flagged) => {
                    m.matrix.add(imp.region, r);
                    m.flagged += usize::from(flagged);
                }
                Outcome::Failed => m.failed += 1,
            }
        }
    }
    for m in &mut methods {
        m.accuracy = m.matrix.accuracy().ok();
    }
    let mut ranking: Vec<&MethodResult> = methods.iter().collect();
    ranking.sort_by(|a, b| b.accuracy.unwrap_or(-1.0).total_cmp(&a.accuracy.unwrap_or(-1.0)));
    let ranking = ranking.into_iter().map(|m| m.method.clone()).collect();
    Ok(ComparisonReport {
        n_impacts: impacts.len(),
        methods,
        ranking,
    })
}
