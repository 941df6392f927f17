//! Everything a command needs before it computes: vocabulary, grammar,
//! training pool, evaluation set and the seeds derived from the top-level
//! seed.

use std::sync::Arc;

use hierbench_core::data::{read_datasets, ClientDataset};
use hierbench_core::eval::EvalConfig;
use hierbench_core::fed::{AggregationMetric, FLConfig, MetricEval};
use hierbench_core::grammar::GrammarSpec;
use hierbench_core::merge::{MergeConfig, MergeMethod};
use hierbench_core::model::{ToyModel, Vocab};
use hierbench_core::partition::{partition_dirichlet, partition_groups, GroupAssignment, Partition};
use hierbench_core::rng::derive_labeled;
use hierbench_core::synth::{generate_corpus, reference_vocab, SynthConfig};

use crate::config::{ExperimentConfig, InitKind, MergeMethodName, MetricName};
use crate::CliError;

pub struct Workspace {
    pub cfg: ExperimentConfig,
    pub vocab: Arc<Vocab>,
    pub grammar: GrammarSpec,
    pub pool: Vec<ClientDataset>,
    pub eval_set: Arc<ClientDataset>,
}

/// Seeds of the independent parts of a run.
pub fn seed_for(cfg: &ExperimentConfig, label: &str) -> u64 {
    derive_labeled(cfg.seed, label)
}

pub fn load_vocab(cfg: &ExperimentConfig) -> Result<Arc<Vocab>, CliError> {
    let vocab = match &cfg.data.vocab {
        Some(path) => Vocab::from_file(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?,
        None => reference_vocab(),
    };
    Ok(Arc::new(vocab))
}

fn read(path: &std::path::Path, vocab: &Vocab) -> Result<Vec<ClientDataset>, CliError> {
    let sets = read_datasets(path, vocab).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    if sets.is_empty() {
        return Err(CliError::Io(format!("{}: no samples", path.display())));
    }
    Ok(sets)
}

impl Workspace {
    /// Reads or synthesizes all data. Fails before anything is written.
    pub fn load(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        let vocab = load_vocab(cfg)?;
        let grammar =
            GrammarSpec::from_bracket_vocab(&vocab, cfg.data.max_depth).map_err(|e| CliError::Config(format!("grammar: {e}")))?;
        let synth = |samples_per_repo: usize, label: &str| {
            let s = &cfg.data.synth;
            let sc = SynthConfig {
                samples_per_repo,
                min_pairs: s.min_pairs,
                max_pairs: s.max_pairs,
                max_depth: cfg.data.max_depth,
                ..SynthConfig::default()
            };
            generate_corpus(&vocab, &sc, seed_for(cfg, label)).map_err(|e| CliError::Config(format!("data.synth: {e}")))
        };
        let pool = match &cfg.data.train {
            Some(path) => read(path, &vocab)?,
            None => synth(cfg.data.synth.samples_per_repo, "train")?,
        };
        let eval_parts = match &cfg.data.eval {
            Some(path) => read(path, &vocab)?,
            None => synth(cfg.data.synth.eval_samples_per_repo, "eval")?,
        };
        let eval_set = Arc::new(ClientDataset::pooled("eval", &eval_parts)?);
        Ok(Self { cfg: cfg.clone(), vocab, grammar, pool, eval_set })
    }

    pub fn partition(&self) -> Result<(Partition, GroupAssignment), CliError> {
        let p = &self.cfg.partition;
        let partition = partition_dirichlet(&self.pool, p.alpha, p.n_clients, seed_for(&self.cfg, "partition"))?;
        let groups = partition_groups(p.n_clients, p.groups, p.isolated, seed_for(&self.cfg, "groups"))?;
        Ok((partition, groups))
    }

    pub fn init_model(&self) -> ToyModel {
        let m = &self.cfg.model;
        match m.init {
            InitKind::Uniform => ToyModel::uniform(self.vocab.clone(), m.context_len),
            InitKind::Gaussian => ToyModel::gaussian(self.vocab.clone(), m.context_len, m.sigma, seed_for(&self.cfg, "init")),
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        let e = &self.cfg.eval;
        EvalConfig { n_samples: e.n_samples, strategy: e.strategy.clone(), max_len: e.max_len, seed: seed_for(&self.cfg, "eval") }
    }

    pub fn metric_eval(&self) -> MetricEval {
        MetricEval { validation: self.eval_set.clone(), grammar: self.grammar.clone(), eval: self.eval_config() }
    }

    fn metric(&self, name: MetricName) -> AggregationMetric {
        match name {
            MetricName::SampleRatio => AggregationMetric::sample_ratio(),
            MetricName::SyntaxAccuracy => AggregationMetric::syntax_accuracy(self.metric_eval()),
            MetricName::SemanticAccuracy => AggregationMetric::semantic_accuracy(self.metric_eval()),
        }
    }

    /// With `snapshot` the aggregate is evaluated after every round.
    pub fn fl_config(&self, snapshot: bool) -> FLConfig {
        let f = &self.cfg.fl;
        FLConfig {
            rounds: f.rounds,
            participation: f.participation,
            epochs_per_round: f.epochs,
            lr: f.lr,
            metric: self.metric(f.metric),
            seed: seed_for(&self.cfg, "fl"),
            zero_score_fallback: f.zero_score_fallback,
            snapshot: snapshot.then(|| self.metric_eval()),
        }
    }

    pub fn merge_config(&self) -> MergeConfig {
        let m = &self.cfg.merge;
        MergeConfig {
            method: match m.method {
                MergeMethodName::WeightedAverage => MergeMethod::WeightedAverage,
                MergeMethodName::Dare => MergeMethod::Dare { drop_rate: m.drop_rate },
            },
            base: None,
            metric: self.metric(m.metric.unwrap_or(self.cfg.fl.metric)),
            seed: seed_for(&self.cfg, "merge"),
            zero_score_fallback: self.cfg.fl.zero_score_fallback,
        }
    }

    pub fn local_epochs(&self) -> usize {
        self.cfg.fl.local_epochs.unwrap_or(self.cfg.fl.rounds * self.cfg.fl.epochs)
    }
}
