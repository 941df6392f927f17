use std::path::Path;

use hierbench_core::data::ClientDataset;
use hierbench_core::eval::EvalReport;
use hierbench_core::fed::RoundRecord;
use hierbench_core::hierarchy::{run_flat_fl, run_hierarchy, HierarchyConfig, HierarchyOutcome};
use hierbench_core::merge::MergeReportRow;
use hierbench_core::model::{train_local, ToyModel, TrainConfig};
use hierbench_core::partition::{format_manifest, GroupAssignment};
use rayon::prelude::*;
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::output::{num, opt_num, RunDir};
use crate::workspace::Workspace;
use crate::{CliError, Mode};

const ROUND_HEADER: [&str; 6] = ["round", "client_id", "raw_score", "weight", "post_agg_syntax_acc", "post_agg_semantic_acc"];

struct ModeResult {
    mode: &'static str,
    report: EvalReport,
    central_transfers: u64,
    group_transfers: u64,
}

fn round_rows(records: &[RoundRecord], offset: usize) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for r in records {
        let acc = |f: fn(&EvalReport) -> f64| opt_num(r.snapshot.as_ref().map(f));
        for ((id, s), w) in r.client_ids.iter().zip(&r.raw_scores).zip(&r.weights) {
            rows.push(vec![
                (offset + r.round).to_string(),
                id.clone(),
                num(*s),
                num(*w),
                acc(|e| e.syntax_accuracy),
                acc(|e| e.semantic_accuracy),
            ]);
        }
    }
    rows
}

fn merge_rows(reports: &[(usize, Vec<MergeReportRow>)]) -> Vec<Vec<String>> {
    reports
        .iter()
        .flat_map(|(outer, rows)| {
            rows.iter().map(move |r| {
                vec![
                    outer.to_string(),
                    r.model_id.clone(),
                    num(r.raw_score),
                    num(r.weight),
                    opt_num(r.delta_l2_norm),
                    opt_num(r.post_drop_l2_norm),
                ]
            })
        })
        .collect()
}

fn write_hierarchy(dir: &RunDir, out: &HierarchyOutcome, rounds_per_outer: usize) -> Result<(), CliError> {
    let mut groups: Vec<usize> = out.fl_rounds.iter().map(|(_, g, _)| *g).collect();
    groups.sort_unstable();
    groups.dedup();
    for g in groups {
        let rows = out
            .fl_rounds
            .iter()
            .filter(|(_, gg, _)| *gg == g)
            .flat_map(|(outer, _, records)| round_rows(records, outer * rounds_per_outer))
            .collect::<Vec<_>>();
        dir.write_csv(&format!("rounds-group-{g}.csv"), &ROUND_HEADER, rows)?;
    }
    dir.write_csv(
        "merge.csv",
        &["outer_round", "model_id", "raw_score", "weight", "delta_l2_norm", "post_drop_l2_norm"],
        merge_rows(&out.merge_reports),
    )?;
    let stages = out.audit.iter().map(|s| {
        vec![
            s.outer_round.to_string(),
            s.stage.clone(),
            opt_num(s.report.map(|r| r.syntax_accuracy)),
            opt_num(s.report.map(|r| r.semantic_accuracy)),
        ]
    });
    dir.write_csv("stages.csv", &["outer_round", "stage", "syntax_accuracy", "semantic_accuracy"], stages)
}

fn hierarchy_config(ws: &Workspace, init: &ToyModel, groups: Vec<Vec<usize>>, isolated: Vec<usize>) -> HierarchyConfig {
    HierarchyConfig {
        groups,
        isolated,
        fl: ws.fl_config(true),
        local_epochs: Some(ws.local_epochs()),
        merge: ws.merge_config(),
        init: init.clone(),
        outer_rounds: ws.cfg.fl.outer_rounds,
        audit_eval: Some(ws.metric_eval()),
    }
}

fn write_summary(dir: &RunDir, r: &ModeResult, init: &EvalReport, extra: serde_json::Value) -> Result<(), CliError> {
    let mut summary = json!({
        "command": "run",
        "mode": r.mode,
        "syntax_accuracy": r.report.syntax_accuracy,
        "semantic_accuracy": r.report.semantic_accuracy,
        "init_syntax_accuracy": init.syntax_accuracy,
        "init_semantic_accuracy": init.semantic_accuracy,
        "central_transfers": r.central_transfers,
        "group_transfers": r.group_transfers,
    });
    if let (Some(s), serde_json::Value::Object(e)) = (summary.as_object_mut(), extra) {
        s.extend(e);
    }
    dir.write_json("summary.json", &summary)
}

struct Ctx<'a> {
    ws: &'a Workspace,
    clients: &'a [ClientDataset],
    groups: &'a GroupAssignment,
    init: ToyModel,
    init_report: EvalReport,
}

impl Ctx<'_> {
    fn run_mode(&self, mode: Mode, dir: &mut RunDir) -> Result<ModeResult, CliError> {
        match mode {
            Mode::Hierarchy => self.hierarchy(dir),
            Mode::FlatFl => self.flat_fl(dir),
            Mode::MergeOnly => self.merge_only(dir),
            Mode::LocalOnly | Mode::All => self.local_only(dir),
        }
    }

    fn non_empty(&self) -> Vec<usize> {
        (0..self.clients.len()).filter(|&c| !self.clients[c].is_empty()).collect()
    }

    fn hierarchy(&self, dir: &mut RunDir) -> Result<ModeResult, CliError> {
        let cfg = hierarchy_config(self.ws, &self.init, self.groups.groups.clone(), self.groups.isolated.clone());
        let out = dir.time("hierarchy", || run_hierarchy(self.clients, &cfg))?;
        write_hierarchy(dir, &out, self.ws.cfg.fl.rounds)?;
        let report = self.ws.metric_eval().report(&out.model)?;
        let n_models = (self.groups.groups.len() + self.groups.isolated.len()) as u64;
        let result = ModeResult {
            mode: "hierarchy",
            report,
            central_transfers: out.ledger.central_transfers,
            group_transfers: out.ledger.group_transfers,
        };
        let extra = json!({
            "groups": self.groups.groups.len(),
            "isolated": self.groups.isolated.len(),
            "outer_rounds": self.ws.cfg.fl.outer_rounds,
            "expected_central_transfers": n_models * self.ws.cfg.fl.outer_rounds as u64,
            "bytes_per_transfer": out.ledger.bytes_per_transfer,
        });
        write_summary(dir, &result, &self.init_report, extra)?;
        Ok(result)
    }

    fn merge_only(&self, dir: &mut RunDir) -> Result<ModeResult, CliError> {
        let cfg = hierarchy_config(self.ws, &self.init, Vec::new(), self.non_empty());
        let out = dir.time("merge_only", || run_hierarchy(self.clients, &cfg))?;
        write_hierarchy(dir, &out, self.ws.cfg.fl.rounds)?;
        let report = self.ws.metric_eval().report(&out.model)?;
        let result = ModeResult {
            mode: "merge_only",
            report,
            central_transfers: out.ledger.central_transfers,
            group_transfers: out.ledger.group_transfers,
        };
        write_summary(dir, &result, &self.init_report, json!({ "merged_models": cfg.isolated.len() }))?;
        Ok(result)
    }

    fn flat_fl(&self, dir: &mut RunDir) -> Result<ModeResult, CliError> {
        let fl = self.ws.fl_config(true);
        let out = dir.time("flat_fl", || run_flat_fl(self.clients, &self.init, &fl))?;
        dir.write_csv("rounds.csv", &ROUND_HEADER, round_rows(&out.rounds, 0))?;
        let report = self.ws.metric_eval().report(&out.model)?;
        let result = ModeResult {
            mode: "flat_fl",
            report,
            central_transfers: out.ledger.central_transfers,
            group_transfers: out.ledger.group_transfers,
        };
        let extra = json!({ "rounds": self.ws.cfg.fl.rounds, "bytes_per_transfer": out.ledger.bytes_per_transfer });
        write_summary(dir, &result, &self.init_report, extra)?;
        Ok(result)
    }

    /// Every non-empty client trains alone; the reported accuracy is the
    /// mean over clients.
    fn local_only(&self, dir: &mut RunDir) -> Result<ModeResult, CliError> {
        let train = TrainConfig { epochs: self.ws.local_epochs(), lr: self.ws.cfg.fl.lr };
        let eval = self.ws.metric_eval();
        let clients = self.non_empty();
        if clients.is_empty() {
            return Err(CliError::Engine(hierbench_core::Error::EmptyInput("every client is empty".into())));
        }
        let reports = dir.time("local_only", || {
            clients
                .par_iter()
                .map(|&c| eval.report(&train_local(&self.init, &self.clients[c], &train)?))
                .collect::<hierbench_core::Result<Vec<_>>>()
        })?;
        let rows = clients.iter().zip(&reports).map(|(&c, r)| {
            vec![
                self.clients[c].tag().to_string(),
                self.clients[c].len().to_string(),
                num(r.syntax_accuracy),
                num(r.semantic_accuracy),
            ]
        });
        dir.write_csv("local.csv", &["client_id", "sample_count", "syntax_accuracy", "semantic_accuracy"], rows)?;
        let mean = |f: fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / reports.len() as f64;
        let report = EvalReport {
            syntax_accuracy: mean(|r| r.syntax_accuracy),
            semantic_accuracy: mean(|r| r.semantic_accuracy),
            n_generated: reports.iter().map(|r| r.n_generated).sum(),
            seed: eval.eval.seed,
        };
        let result = ModeResult { mode: "local_only", report, central_transfers: 0, group_transfers: 0 };
        write_summary(dir, &result, &self.init_report, json!({ "clients": clients.len() }))?;
        Ok(result)
    }
}

pub fn run(cfg: &ExperimentConfig, mode: Mode, out: &Path) -> Result<(), CliError> {
    let ws = Workspace::load(cfg)?;
    let mut dir = RunDir::with_echo(out, cfg)?;
    let (part, groups) = dir.time("partition", || ws.partition())?;
    dir.write_text("manifest.tsv", &format_manifest(&part, &groups))?;
    let init = ws.init_model();
    let init_report = ws.metric_eval().report(&init)?;
    let ctx = Ctx { ws: &ws, clients: &part.clients, groups: &groups, init, init_report };

    let modes = match mode {
        Mode::All => vec![Mode::Hierarchy, Mode::FlatFl, Mode::MergeOnly, Mode::LocalOnly],
        single => vec![single],
    };
    let mut results = Vec::new();
    for m in modes {
        let r = if mode == Mode::All {
            let mut sub = dir.sub(mode_name(m))?;
            let r = ctx.run_mode(m, &mut sub)?;
            sub.write_meta()?;
            r
        } else {
            ctx.run_mode(m, &mut dir)?
        };
        results.push(r);
    }
    if mode == Mode::All {
        let rows = results.iter().map(|r| {
            vec![
                r.mode.to_string(),
                num(r.report.syntax_accuracy),
                num(r.report.semantic_accuracy),
                r.central_transfers.to_string(),
                r.group_transfers.to_string(),
            ]
        });
        dir.write_csv(
            "comparison.csv",
            &["mode", "syntax_accuracy", "semantic_accuracy", "central_transfers", "group_transfers"],
            rows,
        )?;
        let modes: serde_json::Map<String, serde_json::Value> = results
            .iter()
            .map(|r| {
                let v = json!({
                    "syntax_accuracy": r.report.syntax_accuracy,
                    "semantic_accuracy": r.report.semantic_accuracy,
                    "central_transfers": r.central_transfers,
                    "group_transfers": r.group_transfers,
                });
                (r.mode.to_string(), v)
            })
            .collect();
        dir.write_json(
            "summary.json",
            &json!({
                "command": "run",
                "mode": "all",
                "init_syntax_accuracy": ctx.init_report.syntax_accuracy,
                "init_semantic_accuracy": ctx.init_report.semantic_accuracy,
                "modes": modes,
            }),
        )?;
    }
    dir.write_meta()
}

fn mode_name(m: Mode) -> &'static str {
    match m {
        Mode::Hierarchy => "hierarchy",
        Mode::FlatFl => "flat_fl",
        Mode::MergeOnly => "merge_only",
        Mode::LocalOnly => "local_only",
        Mode::All => "all",
    }
}
