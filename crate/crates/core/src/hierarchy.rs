//! Two-tier hierarchical training. Tier 1 runs federated learning inside
//! each communication group and plain local training on isolated clients;
//! Tier 2 merges the resulting `G + N_L` models centrally.

use rayon::prelude::*;

use crate::data::ClientDataset;
use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::fed::{run_rounds, score, FLConfig, MetricEval, RoundRecord};
use crate::ledger::{CommLedger, LedgerTotals, TransferScope};
use crate::merge::{merge_models, MergeConfig, MergeReportRow};
use crate::model::{train_local, ToyModel, TrainConfig};
use crate::rng::derive_seed;

#[derive(Debug, Clone)]
pub struct HierarchyConfig {
    pub groups: Vec<Vec<usize>>,
    pub isolated: Vec<usize>,
    pub fl: FLConfig,
    /// Epochs for isolated clients; defaults to `rounds * epochs_per_round`.
    pub local_epochs: Option<usize>,
    pub merge: MergeConfig,
    pub init: ToyModel,
    /// Number of Tier-1 + Tier-2 passes; each pass restarts from the
    /// previous global model.
    pub outer_rounds: usize,
    /// Evaluation attached to every audit snapshot.
    pub audit_eval: Option<MetricEval>,
}

impl HierarchyConfig {
    pub fn local_epochs(&self) -> usize {
        self.local_epochs.unwrap_or(self.fl.rounds * self.fl.epochs_per_round)
    }

    fn validate(&self, n_clients: usize) -> Result<()> {
        if n_clients == 0 {
            return Err(Error::Config("no clients".into()));
        }
        if self.groups.is_empty() && self.isolated.is_empty() {
            return Err(Error::Config("need at least one group or isolated client".into()));
        }
        if self.outer_rounds == 0 {
            return Err(Error::Config("outer_rounds must be >= 1".into()));
        }
        let mut seen = vec![false; n_clients];
        for &c in self.groups.iter().flatten().chain(&self.isolated) {
            if c >= n_clients {
                return Err(Error::Config(format!("client index {c} out of range for {n_clients} clients")));
            }
            if std::mem::replace(&mut seen[c], true) {
                return Err(Error::Config(format!("client {c} appears in more than one group")));
            }
        }
        if let Some(g) = self.groups.iter().position(Vec::is_empty) {
            return Err(Error::Config(format!("group {g} is empty")));
        }
        self.fl.validate()
    }
}

/// A model produced by one pipeline stage.
#[derive(Debug, Clone)]
pub struct StageSnapshot {
    pub outer_round: usize,
    /// `group-<g>`, the isolated client's id, or `global`.
    pub stage: String,
    pub model: ToyModel,
    pub report: Option<EvalReport>,
}

#[derive(Debug, Clone)]
pub struct HierarchyOutcome {
    pub model: ToyModel,
    pub ledger: LedgerTotals,
    pub audit: Vec<StageSnapshot>,
    /// FL round history per (outer round, group).
    pub fl_rounds: Vec<(usize, usize, Vec<RoundRecord>)>,
    pub merge_reports: Vec<(usize, Vec<MergeReportRow>)>,
}

fn snapshot(outer_round: usize, stage: String, model: &ToyModel, eval: Option<&MetricEval>) -> Result<StageSnapshot> {
    Ok(StageSnapshot {
        outer_round,
        stage,
        model: model.clone(),
        report: eval.map(|e| e.report(model)).transpose()?,
    })
}

/// Runs both tiers. Central transfers grow by exactly `G + N_L` per outer
/// round; group transfers by the number of FL participant uploads.
pub fn run_hierarchy(clients: &[ClientDataset], cfg: &HierarchyConfig) -> Result<HierarchyOutcome> {
    cfg.validate(clients.len())?;
    let ledger = CommLedger::new(cfg.init.params().byte_size());
    let local_train = TrainConfig { epochs: cfg.local_epochs(), lr: cfg.fl.lr };
    let audit_eval = cfg.audit_eval.as_ref();
    let mut current = cfg.init.clone();
    let mut audit = Vec::new();
    let mut fl_rounds = Vec::new();
    let mut merge_reports = Vec::new();

    for outer in 0..cfg.outer_rounds {
        // Tier 1: federated groups, each with its own derived seed.
        let group_runs = cfg
            .groups
            .par_iter()
            .enumerate()
            .map(|(g, members)| {
                let group: Vec<ClientDataset> = members.iter().map(|&c| clients[c].clone()).collect();
                let fl = FLConfig { seed: derive_seed(cfg.fl.seed, &[outer as u64, g as u64]), ..cfg.fl.clone() };
                let out = run_rounds(&group, &current, &fl, &ledger, TransferScope::Group)?;
                let size: usize = group.iter().map(ClientDataset::len).sum();
                Ok((out, size))
            })
            .collect::<Result<Vec<_>>>()?;
        // Tier 1: isolated local training.
        let local_models = cfg
            .isolated
            .par_iter()
            .map(|&c| train_local(&current, &clients[c], &local_train))
            .collect::<Result<Vec<_>>>()?;

        let mut models = Vec::with_capacity(group_runs.len() + local_models.len());
        let mut ids = Vec::with_capacity(models.capacity());
        let mut sizes = Vec::with_capacity(models.capacity());
        for (g, (out, size)) in group_runs.into_iter().enumerate() {
            audit.push(snapshot(outer, format!("group-{g}"), &out.model, audit_eval)?);
            fl_rounds.push((outer, g, out.rounds));
            models.push(out.model);
            ids.push(format!("group-{g}"));
            sizes.push(size);
        }
        for (&c, m) in cfg.isolated.iter().zip(local_models) {
            audit.push(snapshot(outer, clients[c].tag().to_string(), &m, audit_eval)?);
            models.push(m);
            ids.push(clients[c].tag().to_string());
            sizes.push(clients[c].len());
        }

        // Tier 2: one central upload per merged model.
        ledger.record_many(TransferScope::Central, models.len() as u64);
        let scores = models
            .par_iter()
            .zip(&sizes)
            .map(|(m, &n)| score(&cfg.merge.metric, m, n))
            .collect::<Result<Vec<_>>>()?;
        let merge_cfg = MergeConfig {
            base: Some(cfg.merge.base.clone().unwrap_or_else(|| current.clone())),
            seed: derive_seed(cfg.merge.seed, &[outer as u64]),
            ..cfg.merge.clone()
        };
        let (merged, report) = merge_models(&models, &ids, &scores, &merge_cfg)?;
        merge_reports.push((outer, report));
        audit.push(snapshot(outer, "global".into(), &merged, audit_eval)?);
        current = merged;
    }

    Ok(HierarchyOutcome { model: current, ledger: ledger.totals(), audit, fl_rounds, merge_reports })
}

#[derive(Debug, Clone)]
pub struct FlatOutcome {
    pub model: ToyModel,
    pub ledger: LedgerTotals,
    pub rounds: Vec<RoundRecord>,
}

/// Baseline: one FL group over every client where each upload goes to the
/// central server.
pub fn run_flat_fl(clients: &[ClientDataset], init: &ToyModel, cfg: &FLConfig) -> Result<FlatOutcome> {
    if clients.is_empty() {
        return Err(Error::Config("no clients".into()));
    }
    let ledger = CommLedger::new(init.params().byte_size());
    let out = run_rounds(clients, init, cfg, &ledger, TransferScope::Central)?;
    Ok(FlatOutcome { model: out.model, ledger: ledger.totals(), rounds: out.rounds })
}
