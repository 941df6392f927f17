//! Tier-2 merging: metric-weighted averaging and DARE (drop-and-rescale
//! of parameter deltas against a shared base).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fed::{aggregate_with, ensure_compatible, normalize_scores, weighted_sum, AggregationMetric, ZeroScoreFallback};
use crate::model::ToyModel;
use crate::rng::{to_unit, CounterRng};

pub const DEFAULT_DROP_RATE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum MergeMethod {
    WeightedAverage,
    Dare { drop_rate: f64 },
}

#[derive(Debug, Clone)]
pub struct MergeConfig {
    pub method: MergeMethod,
    /// Reference model for deltas. Required by DARE; when merging inside a
    /// hierarchy run it defaults to that run's initialization model.
    pub base: Option<ToyModel>,
    pub metric: AggregationMetric,
    pub seed: u64,
    pub zero_score_fallback: ZeroScoreFallback,
}

/// Per-input row of a merge report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeReportRow {
    pub model_id: String,
    pub raw_score: f64,
    pub weight: f64,
    /// `None` when no base model is available.
    pub delta_l2_norm: Option<f64>,
    pub post_drop_l2_norm: Option<f64>,
}

/// Same contract as [`crate::fed::aggregate`], applied across groups.
pub fn merge_weighted(models: &[ToyModel], scores: &[f64]) -> Result<ToyModel> {
    aggregate_with(models, scores, ZeroScoreFallback::Error)
}

fn validate_drop_rate(drop_rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&drop_rate) {
        return Err(Error::Config(format!("drop_rate must lie in [0, 1), got {drop_rate}")));
    }
    Ok(())
}

/// One model's parameters after dropping delta elements with probability
/// `drop_rate` and rescaling survivors by `1 / (1 - drop_rate)`. Element
/// `j` of model `index` uses RNG stream `(seed, index)` at position `j`.
/// Kept elements of an unscaled delta reproduce the input value exactly.
pub fn dare_process(model: &[f64], base: &[f64], drop_rate: f64, seed: u64, index: usize) -> Vec<f64> {
    let rng = CounterRng::stream(seed, &[index as u64]);
    let scale = 1.0 / (1.0 - drop_rate);
    model
        .iter()
        .zip(base)
        .enumerate()
        .map(|(j, (&p, &b))| {
            if to_unit(rng.at(j as u64)) < drop_rate {
                b
            } else if scale == 1.0 {
                p
            } else {
                b + (p - b) * scale
            }
        })
        .collect()
}

fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// DARE merge: `base + sum_i w_i * dare(delta_i)` with normalized scores.
pub fn merge_dare(models: &[ToyModel], scores: &[f64], cfg: &MergeConfig) -> Result<ToyModel> {
    merge_dare_report(models, scores, cfg).map(|(m, _)| m)
}

/// Per-model weight, delta norm and post-drop delta norm.
type Norms<T> = Vec<(f64, T, T)>;

fn merge_dare_report(models: &[ToyModel], scores: &[f64], cfg: &MergeConfig) -> Result<(ToyModel, Norms<f64>)> {
    let MergeMethod::Dare { drop_rate } = cfg.method else {
        return Err(Error::Config("merge_dare needs method = dare".into()));
    };
    validate_drop_rate(drop_rate)?;
    let base = cfg.base.as_ref().ok_or_else(|| Error::Config("DARE needs a base model".into()))?;
    if models.len() != scores.len() {
        return Err(Error::Structural(format!("{} models but {} scores", models.len(), scores.len())));
    }
    ensure_compatible(models)?;
    models[0].ensure_compatible(base)?;
    let weights = normalize_scores(scores, cfg.zero_score_fallback)?;
    let base_values = base.params().values();
    let processed: Vec<Vec<f64>> = models
        .par_iter()
        .enumerate()
        .map(|(i, m)| dare_process(m.params().values(), base_values, drop_rate, cfg.seed, i))
        .collect();
    let norms = models
        .iter()
        .zip(&processed)
        .zip(&weights)
        .map(|((m, p), &w)| (w, l2_distance(m.params().values(), base_values), l2_distance(p, base_values)))
        .collect();
    let refs: Vec<&[f64]> = processed.iter().map(Vec::as_slice).collect();
    Ok((base.with_values(weighted_sum(&refs, &weights))?, norms))
}

/// Dispatches on `cfg.method` and reports per-model weights and delta norms.
pub fn merge_models(models: &[ToyModel], ids: &[String], scores: &[f64], cfg: &MergeConfig) -> Result<(ToyModel, Vec<MergeReportRow>)> {
    if ids.len() != models.len() {
        return Err(Error::Structural(format!("{} models but {} ids", models.len(), ids.len())));
    }
    let (merged, norms): (ToyModel, Norms<Option<f64>>) = match cfg.method {
        MergeMethod::WeightedAverage => {
            let merged = aggregate_with(models, scores, cfg.zero_score_fallback)?;
            let weights = normalize_scores(scores, cfg.zero_score_fallback)?;
            let norms = models
                .iter()
                .zip(weights)
                .map(|(m, w)| {
                    let d = cfg.base.as_ref().map(|b| l2_distance(m.params().values(), b.params().values()));
                    (w, d, d)
                })
                .collect();
            (merged, norms)
        }
        MergeMethod::Dare { .. } => {
            let (merged, norms) = merge_dare_report(models, scores, cfg)?;
            (merged, norms.into_iter().map(|(w, d, p)| (w, Some(d), Some(p))).collect())
        }
    };
    let rows = ids
        .iter()
        .zip(scores)
        .zip(norms)
        .map(|((id, &raw_score), (weight, delta_l2_norm, post_drop_l2_norm))| MergeReportRow {
            model_id: id.clone(),
            raw_score,
            weight,
            delta_l2_norm,
            post_drop_l2_norm,
        })
        .collect();
    Ok((merged, rows))
}
