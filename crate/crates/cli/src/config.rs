//! Experiment file schema. Every section is optional and falls back to the
//! reference setup; unknown keys anywhere are rejected.

use std::path::{Path, PathBuf};

use hierbench_core::fed::ZeroScoreFallback;
use hierbench_core::model::SamplingStrategy;
use hierbench_core::pardecode::KlDirection;
use hierbench_core::trueput::{LatencyKind, LatencyNormalization};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataSection,
    pub model: ModelSection,
    pub partition: PartitionSection,
    pub fl: FlSection,
    pub merge: MergeSection,
    pub eval: EvalSection,
    pub trueput: TrueputSection,
    pub decode: DecodeSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            data: DataSection::default(),
            model: ModelSection::default(),
            partition: PartitionSection::default(),
            fl: FlSection::default(),
            merge: MergeSection::default(),
            eval: EvalSection::default(),
            trueput: TrueputSection::default(),
            decode: DecodeSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// One symbol per line. Defaults to `( ) [ ] <eos>`.
    pub vocab: Option<PathBuf>,
    /// Training pool. When absent a synthetic corpus is generated.
    pub train: Option<PathBuf>,
    /// Held-out evaluation set. When absent a synthetic one is generated.
    pub eval: Option<PathBuf>,
    /// Nesting limit of the grammar used to score syntax.
    pub max_depth: usize,
    pub synth: SynthSection,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { vocab: None, train: None, eval: None, max_depth: 3, synth: SynthSection::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub samples_per_repo: usize,
    pub eval_samples_per_repo: usize,
    pub min_pairs: usize,
    pub max_pairs: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self { samples_per_repo: 100, eval_samples_per_repo: 25, min_pairs: 1, max_pairs: 4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Uniform,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub context_len: usize,
    pub init: InitKind,
    pub sigma: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { context_len: 3, init: InitKind::Uniform, sigma: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionSection {
    pub alpha: f64,
    pub n_clients: usize,
    pub groups: usize,
    pub isolated: usize,
}

impl Default for PartitionSection {
    fn default() -> Self {
        Self { alpha: 0.5, n_clients: 40, groups: 4, isolated: 4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    SampleRatio,
    SyntaxAccuracy,
    SemanticAccuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlSection {
    pub rounds: usize,
    pub participation: f64,
    pub epochs: usize,
    pub lr: f64,
    pub metric: MetricName,
    pub zero_score_fallback: ZeroScoreFallback,
    /// Repetitions of the two-tier pipeline.
    pub outer_rounds: usize,
    /// Training epochs of isolated and local-only clients; defaults to
    /// `rounds * epochs`.
    pub local_epochs: Option<usize>,
}

impl Default for FlSection {
    fn default() -> Self {
        Self {
            rounds: 10,
            participation: 1.0,
            epochs: 5,
            lr: 2.0,
            metric: MetricName::SampleRatio,
            zero_score_fallback: ZeroScoreFallback::Uniform,
            outer_rounds: 1,
            local_epochs: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeMethodName {
    WeightedAverage,
    Dare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MergeSection {
    pub method: MergeMethodName,
    pub drop_rate: f64,
    /// Defaults to the FL metric.
    pub metric: Option<MetricName>,
}

impl Default for MergeSection {
    fn default() -> Self {
        Self { method: MergeMethodName::WeightedAverage, drop_rate: 0.5, metric: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub n_samples: usize,
    pub max_len: usize,
    pub strategy: SamplingStrategy,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { n_samples: 2, max_len: 12, strategy: SamplingStrategy::Temperature { temperature: 1.0, candidates: 1 } }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrueputSection {
    /// Single-sample success probability.
    pub p: f64,
    pub k_max: usize,
    pub latency: LatencyKind,
    pub t0: f64,
    pub per_sample: f64,
    /// One profile per capacity (only the batched form uses it).
    pub capacities: Vec<usize>,
    pub normalization: LatencyNormalization,
    /// Strategies for the grid search; empty skips it.
    pub grid: Vec<SamplingStrategy>,
    pub budget_samples: usize,
    /// Epochs of pooled training before the grid search; 0 searches the
    /// initial model.
    pub train_epochs: usize,
}

impl Default for TrueputSection {
    fn default() -> Self {
        Self {
            p: 0.3,
            k_max: 16,
            latency: LatencyKind::Batched,
            t0: 1.0,
            per_sample: 0.0,
            capacities: vec![1, 2, 4, 8],
            normalization: LatencyNormalization::Batch,
            grid: Vec::new(),
            budget_samples: 4,
            train_epochs: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeSection {
    pub target_context_len: usize,
    /// Logit scale of the random target model.
    pub target_sigma: f64,
    pub head_context_len: usize,
    pub depth: usize,
    pub tree_sizes: Vec<usize>,
    pub ceiling: usize,
    pub n_prompts: usize,
    pub prompt_len: usize,
    pub max_len: usize,
    pub learn_steps: usize,
    pub lr: f64,
    pub kl_direction: KlDirection,
}

impl Default for DecodeSection {
    fn default() -> Self {
        Self {
            target_context_len: 3,
            target_sigma: 1.5,
            head_context_len: 1,
            depth: 6,
            tree_sizes: (1..=128).collect(),
            ceiling: 32,
            n_prompts: 100,
            prompt_len: 3,
            max_len: 40,
            learn_steps: 500,
            lr: 0.1,
            kl_direction: KlDirection::DraftFirst,
        }
    }
}

fn positive(name: &str, value: usize) -> Result<(), CliError> {
    if value == 0 {
        return Err(CliError::Config(format!("{name} must be >= 1")));
    }
    Ok(())
}

fn finite_positive(name: &str, value: f64) -> Result<(), CliError> {
    if !(value.is_finite() && value > 0.0) {
        return Err(CliError::Config(format!("{name} must be finite and > 0, got {value}")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Data paths in the file are relative to the file itself.
    fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.data.vocab, &mut self.data.train, &mut self.data.eval].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// Checks that do not need any data.
    pub fn validate(&self) -> Result<(), CliError> {
        let p = &self.partition;
        if !(p.alpha.is_finite() && p.alpha > 0.0) {
            return Err(CliError::Config(format!("partition.alpha must be finite and > 0, got {}", p.alpha)));
        }
        positive("partition.n_clients", p.n_clients)?;
        if p.groups + p.isolated == 0 || p.groups + p.isolated > p.n_clients {
            return Err(CliError::Config(format!(
                "partition needs 1 <= groups + isolated <= n_clients, got {} + {} of {}",
                p.groups, p.isolated, p.n_clients
            )));
        }
        positive("data.max_depth", self.data.max_depth)?;
        positive("data.synth.samples_per_repo", self.data.synth.samples_per_repo)?;
        positive("data.synth.eval_samples_per_repo", self.data.synth.eval_samples_per_repo)?;
        if !(self.model.sigma.is_finite() && self.model.sigma >= 0.0) {
            return Err(CliError::Config(format!("model.sigma must be finite and >= 0, got {}", self.model.sigma)));
        }
        let fl = &self.fl;
        if !(fl.participation > 0.0 && fl.participation <= 1.0) {
            return Err(CliError::Config(format!("fl.participation must lie in (0, 1], got {}", fl.participation)));
        }
        positive("fl.epochs", fl.epochs)?;
        positive("fl.outer_rounds", fl.outer_rounds)?;
        if !(fl.lr.is_finite() && fl.lr >= 0.0) {
            return Err(CliError::Config(format!("fl.lr must be finite and >= 0, got {}", fl.lr)));
        }
        if self.merge.method == MergeMethodName::Dare && !(0.0..1.0).contains(&self.merge.drop_rate) {
            return Err(CliError::Config(format!("merge.drop_rate must lie in [0, 1), got {}", self.merge.drop_rate)));
        }
        positive("eval.n_samples", self.eval.n_samples)?;
        positive("eval.max_len", self.eval.max_len)?;
        self.eval.strategy.validate().map_err(|e| CliError::Config(format!("eval.strategy: {e}")))?;
        let t = &self.trueput;
        if !(0.0..=1.0).contains(&t.p) {
            return Err(CliError::Config(format!("trueput.p must lie in [0, 1], got {}", t.p)));
        }
        positive("trueput.k_max", t.k_max)?;
        if t.capacities.is_empty() || t.capacities.contains(&0) {
            return Err(CliError::Config("trueput.capacities must be a non-empty list of positive integers".into()));
        }
        positive("trueput.budget_samples", t.budget_samples)?;
        let d = &self.decode;
        positive("decode.depth", d.depth)?;
        positive("decode.ceiling", d.ceiling)?;
        positive("decode.n_prompts", d.n_prompts)?;
        positive("decode.max_len", d.max_len)?;
        positive("decode.prompt_len", d.prompt_len.max(d.target_context_len))?;
        if d.tree_sizes.is_empty() || d.tree_sizes.contains(&0) {
            return Err(CliError::Config("decode.tree_sizes must be a non-empty list of positive integers".into()));
        }
        finite_positive("decode.lr", d.lr)?;
        if !(d.target_sigma.is_finite() && d.target_sigma >= 0.0) {
            return Err(CliError::Config(format!("decode.target_sigma must be finite and >= 0, got {}", d.target_sigma)));
        }
        Ok(())
    }
}
