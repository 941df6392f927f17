//! Federated learning within one group: seeded client sampling, local
//! training, and metric-weighted aggregation `M_f = sum_i w_i * M_i` with
//! `w_i = g(M_i) / sum_j g(M_j)`.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ClientDataset;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalConfig, EvalReport};
use crate::grammar::GrammarSpec;
use crate::ledger::{CommLedger, TransferScope};
use crate::model::{train_local, ToyModel, TrainConfig};
use crate::rng::CounterRng;

/// Server-side evaluation setup used by accuracy metrics and snapshots.
#[derive(Debug, Clone)]
pub struct MetricEval {
    pub validation: Arc<ClientDataset>,
    pub grammar: GrammarSpec,
    pub eval: EvalConfig,
}

impl MetricEval {
    pub fn report(&self, model: &ToyModel) -> Result<EvalReport> {
        evaluate(model, &self.validation, &self.grammar, &self.eval)
    }
}

pub type CustomScore = Arc<dyn Fn(&ToyModel, usize) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum MetricKind {
    /// The client's sample count; normalization turns it into FedAvg.
    SampleRatio,
    SyntaxAccuracy,
    SemanticAccuracy,
    /// Any user function of (model, client sample count).
    Custom { name: String, score: CustomScore },
}

impl fmt::Debug for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl MetricKind {
    pub fn name(&self) -> &str {
        match self {
            MetricKind::SampleRatio => "sample_ratio",
            MetricKind::SyntaxAccuracy => "syntax_accuracy",
            MetricKind::SemanticAccuracy => "semantic_accuracy",
            MetricKind::Custom { name, .. } => name,
        }
    }
}

/// The aggregation weight function g(.).
#[derive(Debug, Clone)]
pub struct AggregationMetric {
    pub kind: MetricKind,
    pub eval: Option<MetricEval>,
}

impl AggregationMetric {
    pub fn sample_ratio() -> Self {
        Self { kind: MetricKind::SampleRatio, eval: None }
    }

    pub fn syntax_accuracy(eval: MetricEval) -> Self {
        Self { kind: MetricKind::SyntaxAccuracy, eval: Some(eval) }
    }

    pub fn semantic_accuracy(eval: MetricEval) -> Self {
        Self { kind: MetricKind::SemanticAccuracy, eval: Some(eval) }
    }

    pub fn custom(name: impl Into<String>, score: impl Fn(&ToyModel, usize) -> f64 + Send + Sync + 'static) -> Self {
        Self { kind: MetricKind::Custom { name: name.into(), score: Arc::new(score) }, eval: None }
    }
}

/// g(model). Accuracy metrics are deterministic given the metric's seed.
pub fn score(metric: &AggregationMetric, model: &ToyModel, data_size: usize) -> Result<f64> {
    let accuracy = |pick: fn(&EvalReport) -> f64| -> Result<f64> {
        let eval = metric
            .eval
            .as_ref()
            .ok_or_else(|| Error::Config(format!("metric `{}` needs an evaluation config", metric.kind.name())))?;
        Ok(pick(&eval.report(model)?))
    };
    let value = match &metric.kind {
        MetricKind::SampleRatio => data_size as f64,
        MetricKind::SyntaxAccuracy => accuracy(|r| r.syntax_accuracy)?,
        MetricKind::SemanticAccuracy => accuracy(|r| r.semantic_accuracy)?,
        MetricKind::Custom { score, .. } => score(model, data_size),
    };
    if !(value >= 0.0 && value.is_finite()) {
        return Err(Error::Numeric {
            context: format!("metric `{}`", metric.kind.name()),
            detail: format!("score must be finite and >= 0, got {value}"),
        });
    }
    Ok(value)
}

/// What to do when every score in a round is zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroScoreFallback {
    #[default]
    Error,
    Uniform,
}

/// Scores divided by their sum.
pub fn normalize_scores(scores: &[f64], fallback: ZeroScoreFallback) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("no scores to normalize".into()));
    }
    if let Some(s) = scores.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
        return Err(Error::Domain(format!("scores must be finite and >= 0, got {s}")));
    }
    let total: f64 = scores.iter().sum();
    if total == 0.0 {
        return match fallback {
            ZeroScoreFallback::Error => Err(Error::DegenerateWeights),
            ZeroScoreFallback::Uniform => Ok(vec![1.0 / scores.len() as f64; scores.len()]),
        };
    }
    Ok(scores.iter().map(|s| s / total).collect())
}

/// Elementwise `sum_i weights[i] * models[i]`, accumulated in list order.
pub(crate) fn weighted_sum(models: &[&[f64]], weights: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; models[0].len()];
    for (values, &w) in models.iter().zip(weights) {
        for (o, v) in out.iter_mut().zip(values.iter()) {
            *o += w * v;
        }
    }
    out
}

pub(crate) fn ensure_compatible(models: &[ToyModel]) -> Result<()> {
    let first = models.first().ok_or_else(|| Error::EmptyInput("no models to aggregate".into()))?;
    models.iter().skip(1).try_for_each(|m| first.ensure_compatible(m))
}

/// Metric-weighted average with weights normalized to sum to one.
pub fn aggregate(models: &[ToyModel], scores: &[f64]) -> Result<ToyModel> {
    aggregate_with(models, scores, ZeroScoreFallback::Error)
}

pub fn aggregate_with(models: &[ToyModel], scores: &[f64], fallback: ZeroScoreFallback) -> Result<ToyModel> {
    if models.len() != scores.len() {
        return Err(Error::Structural(format!("{} models but {} scores", models.len(), scores.len())));
    }
    ensure_compatible(models)?;
    let weights = normalize_scores(scores, fallback)?;
    let values: Vec<&[f64]> = models.iter().map(|m| m.params().values()).collect();
    models[0].with_values(weighted_sum(&values, &weights))
}

#[derive(Debug, Clone)]
pub struct FLConfig {
    pub rounds: usize,
    /// Fraction of the group sampled each round, in (0, 1].
    pub participation: f64,
    pub epochs_per_round: usize,
    pub lr: f64,
    pub metric: AggregationMetric,
    pub seed: u64,
    pub zero_score_fallback: ZeroScoreFallback,
    /// Optional evaluation of the aggregated model after every round.
    pub snapshot: Option<MetricEval>,
}

impl FLConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(Error::Config(format!("participation must lie in (0, 1], got {}", self.participation)));
        }
        if self.epochs_per_round == 0 {
            return Err(Error::Config("epochs_per_round must be >= 1".into()));
        }
        TrainConfig { epochs: self.epochs_per_round, lr: self.lr }.validate()
    }

    /// `ceil(participation * group_size)`, at least one.
    pub fn participants_per_round(&self, group_size: usize) -> usize {
        let exact = self.participation * group_size as f64;
        ((exact - 1e-9).ceil() as usize).clamp(1, group_size.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Positions of the participants within the group.
    pub participants: Vec<usize>,
    pub client_ids: Vec<String>,
    /// g(M_i) of each participant's locally trained model.
    pub raw_scores: Vec<f64>,
    pub weights: Vec<f64>,
    pub snapshot: Option<EvalReport>,
}

#[derive(Debug, Clone)]
pub struct FlOutcome {
    pub model: ToyModel,
    pub rounds: Vec<RoundRecord>,
}

pub(crate) fn run_rounds(
    group: &[ClientDataset],
    init: &ToyModel,
    cfg: &FLConfig,
    ledger: &CommLedger,
    scope: TransferScope,
) -> Result<FlOutcome> {
    if group.is_empty() {
        return Err(Error::Config("federated group has no clients".into()));
    }
    cfg.validate()?;
    let per_round = cfg.participants_per_round(group.len());
    let train = TrainConfig { epochs: cfg.epochs_per_round, lr: cfg.lr };
    let mut current = init.clone();
    let mut history = Vec::with_capacity(cfg.rounds);
    for round in 0..cfg.rounds {
        let mut participants = CounterRng::stream(cfg.seed, &[round as u64]).sample_without_replacement(group.len(), per_round);
        participants.sort_unstable();
        let trained: Vec<(ToyModel, f64)> = participants
            .par_iter()
            .map(|&i| {
                let local = train_local(&current, &group[i], &train)?;
                let s = score(&cfg.metric, &local, group[i].len())?;
                Ok((local, s))
            })
            .collect::<Result<_>>()?;
        ledger.record_many(scope, trained.len() as u64);
        let (models, raw_scores): (Vec<ToyModel>, Vec<f64>) = trained.into_iter().unzip();
        let weights = normalize_scores(&raw_scores, cfg.zero_score_fallback)?;
        ensure_compatible(&models)?;
        let values: Vec<&[f64]> = models.iter().map(|m| m.params().values()).collect();
        current = current.with_values(weighted_sum(&values, &weights))?;
        let snapshot = cfg.snapshot.as_ref().map(|s| s.report(&current)).transpose()?;
        history.push(RoundRecord {
            round,
            client_ids: participants.iter().map(|&i| group[i].tag().to_string()).collect(),
            participants,
            raw_scores,
            weights,
            snapshot,
        });
    }
    Ok(FlOutcome { model: current, rounds: history })
}

/// Federated learning over one group. Every participant upload is charged
/// to `ledger` as a group-level transfer.
pub fn run_fl(group: &[ClientDataset], init: &ToyModel, cfg: &FLConfig, ledger: &CommLedger) -> Result<FlOutcome> {
    run_rounds(group, init, cfg, ledger, TransferScope::Group)
}
