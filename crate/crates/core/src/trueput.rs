//! Pass@k estimation, latency models and the trueput trade-off between
//! sampling more candidates and waiting longer for them.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ClientDataset;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalConfig};
use crate::grammar::GrammarSpec;
use crate::model::{SamplingStrategy, ToyModel};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatencyKind {
    Constant,
    Linear,
    Batched,
}

/// Time to produce a batch of `k` samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyModel {
    pub kind: LatencyKind,
    pub t0: f64,
    #[serde(default)]
    pub per_sample: f64,
    #[serde(default = "one")]
    pub batch_capacity: usize,
}

fn one() -> usize {
    1
}

impl LatencyModel {
    pub fn constant(t0: f64) -> Self {
        Self { kind: LatencyKind::Constant, t0, per_sample: 0.0, batch_capacity: 1 }
    }

    pub fn linear(t0: f64, per_sample: f64) -> Self {
        Self { kind: LatencyKind::Linear, t0, per_sample, batch_capacity: 1 }
    }

    pub fn batched(t0: f64, per_sample: f64, batch_capacity: usize) -> Self {
        Self { kind: LatencyKind::Batched, t0, per_sample, batch_capacity }
    }

    /// A linear model may have `t0 = 0` as long as samples cost time, so
    /// `T(k) = k` is expressible. Every other form needs `t0 > 0`.
    pub fn validate(&self) -> Result<()> {
        if !self.t0.is_finite() || self.t0 < 0.0 {
            return Err(Error::Domain(format!("t0 must be finite and >= 0, got {}", self.t0)));
        }
        if !self.per_sample.is_finite() || self.per_sample < 0.0 {
            return Err(Error::Domain(format!("per_sample must be finite and >= 0, got {}", self.per_sample)));
        }
        if self.batch_capacity == 0 {
            return Err(Error::Domain("batch_capacity must be >= 1".into()));
        }
        let positive = match self.kind {
            LatencyKind::Linear => self.t0 + self.per_sample > 0.0,
            _ => self.t0 > 0.0,
        };
        if !positive {
            return Err(Error::Domain(format!("{:?} latency must be positive for every k >= 1", self.kind)));
        }
        Ok(())
    }

    pub fn latency(&self, k: usize) -> f64 {
        let k_f = k as f64;
        match self.kind {
            LatencyKind::Constant => self.t0,
            LatencyKind::Linear => self.t0 + self.per_sample * k_f,
            LatencyKind::Batched => self.t0 * k.div_ceil(self.batch_capacity) as f64 + self.per_sample * k_f,
        }
    }
}

/// How latency enters the trueput ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatencyNormalization {
    /// `T(k)` is the time for the whole batch of `k` samples.
    #[default]
    Batch,
    /// `T(k) / k` is the time per output design.
    PerDesign,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrueputProfile {
    pub p: f64,
    pub latency: LatencyModel,
    pub k_max: usize,
    #[serde(default)]
    pub normalization: LatencyNormalization,
}

impl TrueputProfile {
    pub fn new(p: f64, latency: LatencyModel, k_max: usize) -> Result<Self> {
        let profile = Self { p, latency, k_max, normalization: LatencyNormalization::Batch };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<()> {
        check_probability(self.p)?;
        if self.k_max == 0 {
            return Err(Error::Domain("k_max must be >= 1".into()));
        }
        self.latency.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassStats {
    pub n: usize,
    pub c: usize,
}

impl PassStats {
    pub fn new(n: usize, c: usize) -> Result<Self> {
        if c > n {
            return Err(Error::Domain(format!("passing count {c} exceeds sample count {n}")));
        }
        Ok(Self { n, c })
    }
}

fn check_probability(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("probability must lie in [0, 1], got {p}")));
    }
    Ok(())
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Domain("k must be >= 1".into()));
    }
    Ok(())
}

/// `1 - (1 - p)^k`, evaluated as `-expm1(k * ln(1 - p))`.
pub fn pass_at_k_analytic(p: f64, k: usize) -> Result<f64> {
    check_probability(p)?;
    check_k(k)?;
    if p == 0.0 {
        return Ok(0.0);
    }
    if p == 1.0 {
        return Ok(1.0);
    }
    Ok(-(k as f64 * (-p).ln_1p()).exp_m1())
}

/// Unbiased estimate `1 - C(n-c, k) / C(n, k)` as a running product.
pub fn pass_at_k_unbiased(stats: PassStats, k: usize) -> Result<f64> {
    check_k(k)?;
    let PassStats { n, c } = stats;
    if c > n {
        return Err(Error::Domain(format!("passing count {c} exceeds sample count {n}")));
    }
    if k > n {
        return Err(Error::Domain(format!("k = {k} exceeds sample count {n}")));
    }
    if c == 0 {
        return Ok(0.0);
    }
    if n - c < k {
        return Ok(1.0);
    }
    let miss: f64 = (n - c + 1..=n).map(|i| 1.0 - k as f64 / i as f64).product();
    Ok(1.0 - miss)
}

/// Expected correct designs per unit time at `k` samples.
pub fn trueput(profile: &TrueputProfile, k: usize) -> Result<f64> {
    profile.latency.validate()?;
    let pass = pass_at_k_analytic(profile.p, k)?;
    let t = profile.latency.latency(k);
    Ok(match profile.normalization {
        LatencyNormalization::Batch => pass / t,
        LatencyNormalization::PerDesign => pass * k as f64 / t,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub k: usize,
    pub pass_at_k: f64,
    pub latency: f64,
    pub trueput: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalK {
    pub k: usize,
    pub trueput: f64,
    pub curve: Vec<CurvePoint>,
}

/// Scans `k = 1..=k_max` and returns the smallest maximiser.
pub fn optimal_k(profile: &TrueputProfile) -> Result<OptimalK> {
    profile.validate()?;
    let curve = (1..=profile.k_max)
        .map(|k| {
            Ok(CurvePoint {
                k,
                pass_at_k: pass_at_k_analytic(profile.p, k)?,
                latency: profile.latency.latency(k),
                trueput: trueput(profile, k)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = curve.iter().fold(&curve[0], |best, pt| if pt.trueput > best.trueput { pt } else { best });
    Ok(OptimalK { k: best.k, trueput: best.trueput, curve })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridEntry {
    /// Position in the submitted grid.
    pub index: usize,
    pub strategy: SamplingStrategy,
    pub syntax_accuracy: f64,
    pub semantic_accuracy: f64,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRejection {
    pub index: usize,
    pub strategy: SamplingStrategy,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GridResult {
    /// Best syntax accuracy first; ties keep grid order.
    pub ranked: Vec<GridEntry>,
    pub rejected: Vec<GridRejection>,
}

/// Evaluates every valid strategy with `budget_samples` generations per
/// prompt. Strategy `i` uses the seed `derive_seed(seed, [i])`.
pub fn strategy_grid_search(
    model: &ToyModel,
    eval_set: &ClientDataset,
    grammar: &GrammarSpec,
    grid: &[SamplingStrategy],
    budget_samples: usize,
    max_len: usize,
    seed: u64,
) -> Result<GridResult> {
    if grid.is_empty() {
        return Err(Error::Config("strategy grid is empty".into()));
    }
    if budget_samples == 0 {
        return Err(Error::Config("budget_samples must be >= 1".into()));
    }
    let outcomes: Vec<std::result::Result<GridEntry, GridRejection>> = grid
        .par_iter()
        .enumerate()
        .map(|(index, strategy)| {
            let reject = |e: Error| GridRejection { index, strategy: strategy.clone(), reason: e.to_string() };
            strategy.validate().map_err(reject)?;
            let cfg = EvalConfig {
                n_samples: budget_samples,
                strategy: strategy.clone(),
                max_len,
                seed: derive_seed(seed, &[index as u64]),
            };
            let start = Instant::now();
            let report = evaluate(model, eval_set, grammar, &cfg).map_err(reject)?;
            Ok(GridEntry {
                index,
                strategy: strategy.clone(),
                syntax_accuracy: report.syntax_accuracy,
                semantic_accuracy: report.semantic_accuracy,
                wall_time: start.elapsed(),
            })
        })
        .collect();
    let mut result = GridResult::default();
    for o in outcomes {
        match o {
            Ok(e) => result.ranked.push(e),
            Err(r) => result.rejected.push(r),
        }
    }
    result.ranked.sort_by(|a, b| b.syntax_accuracy.total_cmp(&a.syntax_accuracy));
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_edges() {
        assert_eq!(pass_at_k_analytic(0.0, 7).unwrap(), 0.0);
        assert_eq!(pass_at_k_analytic(1.0, 3).unwrap(), 1.0);
        assert!((pass_at_k_analytic(0.5, 2).unwrap() - 0.75).abs() < 1e-15);
        assert!(pass_at_k_analytic(1.5, 1).is_err());
        assert!(pass_at_k_analytic(-0.1, 1).is_err());
        assert!(pass_at_k_analytic(0.5, 0).is_err());
    }

    #[test]
    fn tiny_p_keeps_precision() {
        let got = pass_at_k_analytic(1e-18, 1000).unwrap();
        assert!((got - 1e-15).abs() < 1e-27);
    }

    #[test]
    fn unbiased_examples() {
        assert_eq!(pass_at_k_unbiased(PassStats { n: 10, c: 10 }, 3).unwrap(), 1.0);
        assert_eq!(pass_at_k_unbiased(PassStats { n: 10, c: 0 }, 5).unwrap(), 0.0);
        assert!((pass_at_k_unbiased(PassStats { n: 5, c: 2 }, 2).unwrap() - 0.7).abs() < 1e-12);
        assert!(pass_at_k_unbiased(PassStats { n: 3, c: 1 }, 4).is_err());
        assert!(PassStats::new(2, 3).is_err());
    }

    #[test]
    fn trueput_examples() {
        let p = TrueputProfile::new(1.0, LatencyModel::constant(2.0), 4).unwrap();
        assert_eq!(trueput(&p, 1).unwrap(), 0.5);
        let p = TrueputProfile::new(0.5, LatencyModel::constant(1.0), 4).unwrap();
        assert!((trueput(&p, 2).unwrap() - 0.75).abs() < 1e-15);
        let p = TrueputProfile::new(0.3, LatencyModel::batched(1.0, 0.0, 4), 16).unwrap();
        assert!((trueput(&p, 4).unwrap() - 0.7599).abs() < 1e-12);
        assert!((trueput(&p, 8).unwrap() - (1.0 - 0.7f64.powi(8)) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn optimal_k_examples() {
        let p = TrueputProfile::new(0.4, LatencyModel::constant(1.0), 12).unwrap();
        assert_eq!(optimal_k(&p).unwrap().k, 12);
        let p = TrueputProfile::new(0.5, LatencyModel::linear(0.0, 1.0), 10).unwrap();
        assert_eq!(optimal_k(&p).unwrap().k, 1);
        let p = TrueputProfile::new(0.3, LatencyModel::batched(1.0, 0.0, 4), 32).unwrap();
        let best = optimal_k(&p).unwrap();
        assert_eq!(best.k, 4);
        assert_eq!(best.curve.len(), 32);
    }

    #[test]
    fn ties_pick_smallest_k() {
        let p = TrueputProfile::new(1.0, LatencyModel::constant(1.0), 5).unwrap();
        assert_eq!(optimal_k(&p).unwrap().k, 1);
    }

    #[test]
    fn per_design_normalization_scales_by_k() {
        let mut p = TrueputProfile::new(0.3, LatencyModel::linear(1.0, 0.5), 8).unwrap();
        let batch = trueput(&p, 3).unwrap();
        p.normalization = LatencyNormalization::PerDesign;
        assert!((trueput(&p, 3).unwrap() - 3.0 * batch).abs() < 1e-15);
    }

    #[test]
    fn latency_validation() {
        assert!(LatencyModel::constant(0.0).validate().is_err());
        assert!(LatencyModel::linear(0.0, 0.0).validate().is_err());
        assert!(LatencyModel::linear(0.0, 1.0).validate().is_ok());
        assert!(LatencyModel::batched(1.0, 0.0, 0).validate().is_err());
        assert!(LatencyModel::linear(1.0, -1.0).validate().is_err());
        assert!(TrueputProfile::new(0.5, LatencyModel::constant(1.0), 0).is_err());
    }
}
