use std::path::Path;

use hierbench_core::data::ClientDataset;
use hierbench_core::model::{train_local, TrainConfig};
use hierbench_core::trueput::{optimal_k, strategy_grid_search, LatencyKind, LatencyModel, TrueputProfile};
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::output::{num, RunDir};
use crate::workspace::{seed_for, Workspace};
use crate::CliError;

fn profiles(cfg: &ExperimentConfig) -> Result<Vec<(usize, TrueputProfile)>, CliError> {
    let t = &cfg.trueput;
    t.capacities
        .iter()
        .map(|&b| {
            let latency = match t.latency {
                LatencyKind::Constant => LatencyModel::constant(t.t0),
                LatencyKind::Linear => LatencyModel::linear(t.t0, t.per_sample),
                LatencyKind::Batched => LatencyModel::batched(t.t0, t.per_sample, b),
            };
            let profile = TrueputProfile { p: t.p, latency, k_max: t.k_max, normalization: t.normalization };
            profile.validate().map_err(|e| CliError::Config(format!("trueput: {e}")))?;
            Ok((b, profile))
        })
        .collect()
}

pub fn trueput(cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let profiles = profiles(cfg)?;
    let ws = if cfg.trueput.grid.is_empty() { None } else { Some(Workspace::load(cfg)?) };
    let mut dir = RunDir::with_echo(out, cfg)?;

    let mut optimal = Vec::new();
    for (b, profile) in &profiles {
        let best = optimal_k(profile)?;
        let rows = best.curve.iter().map(|c| vec![c.k.to_string(), num(c.pass_at_k), num(c.latency), num(c.trueput)]);
        dir.write_csv(&format!("sweep-b{b}.csv"), &["k", "pass_at_k", "latency", "trueput"], rows)?;
        optimal.push((*b, best.k, best.trueput, best.curve[best.k - 1].pass_at_k));
    }
    dir.write_csv(
        "optimal.csv",
        &["capacity", "k_star", "trueput", "pass_at_k"],
        optimal.iter().map(|(b, k, t, p)| vec![b.to_string(), k.to_string(), num(*t), num(*p)]),
    )?;

    let mut summary = json!({
        "command": "trueput",
        "p": cfg.trueput.p,
        "k_max": cfg.trueput.k_max,
        "k_star": optimal.iter().map(|o| (o.0.to_string(), json!(o.1))).collect::<serde_json::Map<_, _>>(),
    });

    if let Some(ws) = ws {
        let model = if cfg.trueput.train_epochs == 0 {
            ws.init_model()
        } else {
            let pooled = ClientDataset::pooled("pool", &ws.pool)?;
            let train = TrainConfig { epochs: cfg.trueput.train_epochs, lr: cfg.fl.lr };
            dir.time("train", || train_local(&ws.init_model(), &pooled, &train))?
        };
        let t = &cfg.trueput;
        let grid = dir.time("grid", || {
            strategy_grid_search(&model, &ws.eval_set, &ws.grammar, &t.grid, t.budget_samples, cfg.eval.max_len, seed_for(cfg, "grid"))
        })?;
        let ranked = grid.ranked.iter().enumerate().map(|(rank, e)| {
            vec![
                (rank + 1).to_string(),
                e.index.to_string(),
                e.strategy.name().to_string(),
                e.strategy.hyperparams(),
                num(e.syntax_accuracy),
                num(e.semantic_accuracy),
            ]
        });
        dir.write_csv("grid.csv", &["rank", "index", "strategy", "hyperparams", "syntax_accuracy", "semantic_accuracy"], ranked)?;
        let rejected = grid.rejected.iter().map(|r| vec![r.index.to_string(), r.strategy.name().to_string(), r.reason.clone()]);
        dir.write_csv("grid_rejected.csv", &["index", "strategy", "reason"], rejected)?;
        for e in &grid.ranked {
            dir.record(&format!("grid.strategy-{}", e.index), e.wall_time);
        }
        if let (Some(s), Some(best)) = (summary.as_object_mut(), grid.ranked.first()) {
            s.insert("grid_best_index".into(), json!(best.index));
            s.insert("grid_best_strategy".into(), json!(best.strategy.name()));
            s.insert("grid_best_syntax_accuracy".into(), json!(best.syntax_accuracy));
            s.insert("grid_rejected".into(), json!(grid.rejected.len()));
        }
    }
    dir.write_json("summary.json", &summary)?;
    dir.write_meta()
}
