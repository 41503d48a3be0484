//! Regression metrics, confusion matrices, the repeated-split experiment and
//! the comparison against rigid-body baselines.

mod experiment;
pub mod report;

use serde::{Deserialize, Serialize};

pub use experiment::{
    compare_methods, run_experiment, split_indices, ComparisonReport, ExperimentConfig, ExperimentOutcome,
    MethodResult, MetricReport, SeedResult, SeedRun, SplitFractions, Summary, TargetMetrics, METHOD_NAMES,
};

use crate::error::{Error, Result};
use crate::geometry::HelmetRegion;

fn check_pair(pred: &[f64], reference: &[f64]) -> Result<()> {
    if pred.len() != reference.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} reference values",
            pred.len(),
            reference.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("metrics need at least one value".into()));
    }
    Ok(())
}

pub fn mae(pred: &[f64], reference: &[f64]) -> Result<f64> {
    check_pair(pred, reference)?;
    Ok(pred.iter().zip(reference).map(|(p, r)| (p - r).abs()).sum::<f64>() / pred.len() as f64)
}

pub fn rmse(pred: &[f64], reference: &[f64]) -> Result<f64> {
    check_pair(pred, reference)?;
    Ok((pred.iter().zip(reference).map(|(p, r)| (p - r) * (p - r)).sum::<f64>() / pred.len() as f64).sqrt())
}

/// `1 − SS_res/SS_tot`, undefined for a constant reference.
pub fn r2(pred: &[f64], reference: &[f64]) -> Result<f64> {
    check_pair(pred, reference)?;
    if reference.iter().all(|r| *r == reference[0]) {
        return Err(Error::UndefinedMetric("R² of a constant reference".into()));
    }
    let mean = reference.iter().sum::<f64>() / reference.len() as f64;
    let ss_res: f64 = pred.iter().zip(reference).map(|(p, r)| (p - r) * (p - r)).sum();
    let ss_tot: f64 = reference.iter().map(|r| (r - mean) * (r - mean)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarMetrics {
    pub mae: f64,
    pub rmse: f64,
    /// Absent when the reference is constant.
    pub r2: Option<f64>,
}

pub fn scalar_metrics(pred: &[f64], reference: &[f64]) -> Result<ScalarMetrics> {
    let m = ScalarMetrics {
        mae: mae(pred, reference)?,
        rmse: rmse(pred, reference)?,
        r2: match r2(pred, reference) {
            Ok(v) => Some(v),
            Err(Error::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        },
    };
    debug_assert!(m.rmse + 1e-12 * m.rmse.abs().max(1.0) >= m.mae);
    Ok(m)
}

fn check_profiles(pred: &[&[f64]], reference: &[&[f64]]) -> Result<()> {
    if pred.len() != reference.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predicted profiles for {} reference profiles",
            pred.len(),
            reference.len()
        )));
    }
    for (i, (p, r)) in pred.iter().zip(reference).enumerate() {
        if p.len() != r.len() || p.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "profile {i}: {} predicted samples for {} reference samples",
                p.len(),
                r.len()
            )));
        }
    }
    Ok(())
}

/// Largest value of a profile.
pub fn peak_value(profile: &[f64]) -> f64 {
    profile.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Scalar metrics between per-profile maxima; timing is ignored.
pub fn peak_metrics(pred: &[&[f64]], reference: &[&[f64]]) -> Result<ScalarMetrics> {
    check_profiles(pred, reference)?;
    let p: Vec<f64> = pred.iter().map(|x| peak_value(x)).collect();
    let r: Vec<f64> = reference.iter().map(|x| peak_value(x)).collect();
    scalar_metrics(&p, &r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointwiseMetrics {
    pub mae: f64,
    pub rmse: f64,
}

/// MAE and RMSE pooled over every sample of every profile.
pub fn pointwise_metrics(pred: &[&[f64]], reference: &[&[f64]]) -> Result<PointwiseMetrics> {
    check_profiles(pred, reference)?;
    let p: Vec<f64> = pred.iter().flat_map(|x| x.iter().copied()).collect();
    let r: Vec<f64> = reference.iter().flat_map(|x| x.iter().copied()).collect();
    Ok(PointwiseMetrics {
        mae: mae(&p, &r)?,
        rmse: rmse(&p, &r)?,
    })
}

/// Region counts; rows are the reference, columns the prediction, both in
/// the order of [`HelmetRegion::ALL`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix5 {
    pub counts: [[u64; 5]; 5],
}

impl ConfusionMatrix5 {
    pub fn add(&mut self, reference: HelmetRegion, predicted: HelmetRegion) {
        self.counts[reference.index()][predicted.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..5).map(|i| self.counts[i][i]).sum()
    }

    /// Trace over total; undefined for an empty matrix.
    pub fn accuracy(&self) -> Result<f64> {
        match self.total() {
            0 => Err(Error::UndefinedMetric("accuracy of an empty confusion matrix".into())),
            n => Ok(self.correct() as f64 / n as f64),
        }
    }
}

pub fn confusion(pred: &[HelmetRegion], reference: &[HelmetRegion]) -> Result<ConfusionMatrix5> {
    if pred.len() != reference.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predicted regions for {} reference regions",
            pred.len(),
            reference.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::UndefinedMetric("confusion matrix of no impacts".into()));
    }
    let mut m = ConfusionMatrix5::default();
    for (p, r) in pred.iter().zip(reference) {
        m.add(*r, *p);
    }
    Ok(m)
}

/// Same as [`confusion`] for region names; unknown names are rejected.
pub fn confusion_from_names(pred: &[&str], reference: &[&str]) -> Result<ConfusionMatrix5> {
    let parse = |v: &[&str]| v.iter().map(|s| s.parse()).collect::<Result<Vec<HelmetRegion>>>();
    confusion(&parse(pred)?, &parse(reference)?)
}
