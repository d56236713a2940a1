//! Exact Shapley attribution of bridge features and accessible-feature
//! selection.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gm::GroundMotion;
use crate::oracle::{ResponseHistory, N_PARAMS, PARAM_NAMES};
use crate::sprnet::{median_history, predict, Model, Prediction, SprError};

/// Largest feature count handled by exact enumeration.
pub const MAX_EXACT_FEATURES: usize = 15;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{n} features exceed the exact enumeration limit of {MAX_EXACT_FEATURES}")]
    Capacity { n: usize },
    #[error("cannot select {k} features: only {available} are accessible")]
    Selection { k: usize, available: usize },
    #[error(transparent)]
    Model(#[from] SprError),
}

/// Scalar reductions of a response history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummaryStatistic {
    PeakDrift,
    PeakColumnForce,
    PeakBearingDisp,
    PeakBearingForce,
    ColumnEnergy,
    BearingEnergy,
}

fn peak_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

impl SummaryStatistic {
    pub fn reduce(&self, r: &ResponseHistory) -> f64 {
        let last = |v: &[f64]| v.last().copied().unwrap_or(0.0);
        match self {
            SummaryStatistic::PeakDrift => peak_abs(&r.drift_ratio),
            SummaryStatistic::PeakColumnForce => peak_abs(&r.column_force),
            SummaryStatistic::PeakBearingDisp => peak_abs(&r.bearing_disp),
            SummaryStatistic::PeakBearingForce => peak_abs(&r.bearing_force),
            SummaryStatistic::ColumnEnergy => last(&r.column_energy),
            SummaryStatistic::BearingEnergy => last(&r.bearing_energy),
        }
    }
}

/// A scalar-valued model of a feature vector.
pub trait FeatureModel: Sync {
    fn n_features(&self) -> usize;
    fn evaluate_batch(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>, ExplainError>;
    fn statistic(&self) -> Option<SummaryStatistic> {
        None
    }
}

/// SPR-Net under a fixed ground motion, reduced to one statistic. A
/// probabilistic model is reduced through its median trajectory.
pub struct SprFeatureModel<'a> {
    pub model: &'a Model,
    pub gm: &'a GroundMotion,
    pub statistic: SummaryStatistic,
}

impl FeatureModel for SprFeatureModel<'_> {
    fn n_features(&self) -> usize {
        self.model.config.feature_dim()
    }

    fn evaluate_batch(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>, ExplainError> {
        rows.par_iter()
            .map(|row| {
                let history = match predict(self.model, self.gm, row)? {
                    Prediction::Deterministic(h) => h,
                    Prediction::Probabilistic(p) => median_history(self.model, &p, row),
                };
                Ok(self.statistic.reduce(&history))
            })
            .collect()
    }

    fn statistic(&self) -> Option<SummaryStatistic> {
        Some(self.statistic)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyReport {
    pub statistic: Option<SummaryStatistic>,
    pub base_value: f64,
    pub attributions: Vec<f64>,
    pub prediction: f64,
}

impl ShapleyReport {
    /// `|base + sum(attributions) - prediction|`
    pub fn efficiency_gap(&self) -> f64 {
        (self.base_value + self.attributions.iter().sum::<f64>() - self.prediction).abs()
    }
}

fn check_inputs(model: &dyn FeatureModel, instance: &[f64], background: &[Vec<f64>]) -> Result<usize, ExplainError> {
    let n = model.n_features();
    if background.is_empty() {
        return Err(ExplainError::Config("background set is empty".into()));
    }
    if instance.len() != n || background.iter().any(|b| b.len() != n) {
        return Err(ExplainError::Config(format!("instance and background rows must have {n} features")));
    }
    Ok(n)
}

fn masked_rows(instance: &[f64], background: &[Vec<f64>], mask: u32) -> Vec<Vec<f64>> {
    background
        .iter()
        .map(|b| {
            b.iter()
                .zip(instance)
                .enumerate()
                .map(|(j, (bj, xj))| if mask >> j & 1 == 1 { *xj } else { *bj })
                .collect()
        })
        .collect()
}

/// Interventional value of a coalition given as a bit mask over features:
/// features in the mask come from the instance, the others from each
/// background row in turn, and the outputs are averaged.
pub fn coalition_value(
    model: &dyn FeatureModel,
    instance: &[f64],
    mask: u32,
    background: &[Vec<f64>],
) -> Result<f64, ExplainError> {
    let n = check_inputs(model, instance, background)?;
    if n < 32 && mask >> n != 0 {
        return Err(ExplainError::Config(format!("coalition mask {mask:#b} names features beyond {n}")));
    }
    let out = model.evaluate_batch(&masked_rows(instance, background, mask))?;
    Ok(out.iter().sum::<f64>() / out.len() as f64)
}

/// `k! (n-k-1)! / n!` for `k = 0..n`.
pub fn shapley_weights(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| {
            // product form avoids overflowing factorials
            let mut w = 1.0 / n as f64;
            for i in 1..=k {
                w *= i as f64 / (n - i) as f64;
            }
            w
        })
        .collect()
}

/// Exact Shapley values from all `2^n` memoized coalition values.
pub fn shapley_attributions(
    model: &dyn FeatureModel,
    instance: &[f64],
    background: &[Vec<f64>],
) -> Result<ShapleyReport, ExplainError> {
    let n = check_inputs(model, instance, background)?;
    if n > MAX_EXACT_FEATURES {
        return Err(ExplainError::Capacity { n });
    }
    let n_masks = 1usize << n;
    // batch several coalitions per call so batched models stay busy
    let per_call = (1024 / background.len()).max(1);
    let chunks: Vec<Vec<f64>> = (0..n_masks)
        .collect::<Vec<_>>()
        .chunks(per_call)
        .map(|masks| {
            let rows: Vec<Vec<f64>> =
                masks.iter().flat_map(|&m| masked_rows(instance, background, m as u32)).collect();
            let out = model.evaluate_batch(&rows)?;
            Ok(out
                .chunks(background.len())
                .map(|c| c.iter().sum::<f64>() / background.len() as f64)
                .collect())
        })
        .collect::<Result<_, ExplainError>>()?;
    let v: Vec<f64> = chunks.into_iter().flatten().collect();

    let w = shapley_weights(n);
    let attributions = (0..n)
        .map(|j| {
            let bit = 1usize << j;
            (0..n_masks)
                .filter(|s| s & bit == 0)
                .map(|s| w[s.count_ones() as usize] * (v[s | bit] - v[s]))
                .sum()
        })
        .collect();
    Ok(ShapleyReport {
        statistic: model.statistic(),
        base_value: v[0],
        attributions,
        prediction: v[n_masks - 1],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureAccessibility {
    pub accessible: Vec<bool>,
}

impl FeatureAccessibility {
    /// Geometric bridge parameters are taken as available from inventory
    /// data; material, stiffness, damping and mass parameters are not.
    pub fn bridge_inventory() -> Self {
        let geometric = ["L", "W_d", "H_c", "lambda", "H_b", "delta"];
        FeatureAccessibility { accessible: PARAM_NAMES.iter().map(|n| geometric.contains(n)).collect() }
    }

    pub fn all(n: usize) -> Self {
        FeatureAccessibility { accessible: vec![true; n] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRow {
    pub index: usize,
    pub name: String,
    pub mean_abs_attribution: f64,
    pub accessible: bool,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSelection {
    /// Selected feature indices, ascending.
    pub selected: Vec<usize>,
    /// All features by decreasing mean |attribution|; ties keep index order.
    pub ranking: Vec<RankingRow>,
}

impl FeatureSelection {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("feature,mean_abs_attribution,accessible,selected\n");
        for r in &self.ranking {
            let _ = writeln!(s, "{},{:.10e},{},{}", r.name, r.mean_abs_attribution, r.accessible, r.selected);
        }
        s
    }
}

/// Ranks features by mean |attribution| and keeps the top `k` accessible
/// ones. `names` defaults to the bridge parameter names when it has 15
/// entries.
pub fn select_features(
    reports: &[ShapleyReport],
    accessibility: &FeatureAccessibility,
    k: usize,
    names: Option<&[String]>,
) -> Result<FeatureSelection, ExplainError> {
    if k == 0 {
        return Err(ExplainError::Config("k must be at least 1".into()));
    }
    let n = accessibility.accessible.len();
    if reports.is_empty() || reports.iter().any(|r| r.attributions.len() != n) {
        return Err(ExplainError::Config(format!("need at least one report with {n} attributions")));
    }
    let available = accessibility.accessible.iter().filter(|a| **a).count();
    if available < k {
        return Err(ExplainError::Selection { k, available });
    }
    let mean_abs: Vec<f64> = (0..n)
        .map(|j| reports.iter().map(|r| r.attributions[j].abs()).sum::<f64>() / reports.len() as f64)
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| mean_abs[b].total_cmp(&mean_abs[a]).then(a.cmp(&b)));
    let picked: Vec<usize> = order.iter().copied().filter(|&j| accessibility.accessible[j]).take(k).collect();
    let name = |j: usize| match names {
        Some(ns) => ns[j].clone(),
        None if n == N_PARAMS => PARAM_NAMES[j].to_string(),
        None => format!("x{j}"),
    };
    let ranking = order
        .iter()
        .map(|&j| RankingRow {
            index: j,
            name: name(j),
            mean_abs_attribution: mean_abs[j],
            accessible: accessibility.accessible[j],
            selected: picked.contains(&j),
        })
        .collect();
    let mut selected = picked;
    selected.sort_unstable();
    Ok(FeatureSelection { selected, ranking })
}
