mod decode;
mod run;
mod trueput;

use std::path::{Path, PathBuf};

use hierbench_core::data::format_datasets;
use hierbench_core::partition::{format_manifest, mean_tag_entropy};
use serde_json::{json, Value};

pub use decode::decode;
pub use run::run;
pub use trueput::trueput;

use crate::config::ExperimentConfig;
use crate::output::{num, RunDir};
use crate::workspace::Workspace;
use crate::CliError;

pub fn synth(cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let ws = Workspace::load(cfg)?;
    let dir = RunDir::with_echo(out, cfg)?;
    dir.write_text("vocab.txt", &ws.vocab.to_file_string())?;
    dir.write_text("train.tsv", &format_datasets(&ws.pool, &ws.vocab))?;
    dir.write_text("eval.tsv", &format_datasets(std::slice::from_ref(ws.eval_set.as_ref()), &ws.vocab))?;
    dir.write_json(
        "summary.json",
        &json!({
            "command": "synth",
            "train_samples": ws.pool.iter().map(|d| d.len()).sum::<usize>(),
            "eval_samples": ws.eval_set.len(),
            "tags": ws.pool.iter().map(|d| d.tag()).collect::<Vec<_>>(),
        }),
    )
}

pub fn partition(cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let ws = Workspace::load(cfg)?;
    let mut dir = RunDir::with_echo(out, cfg)?;
    let (part, groups) = dir.time("partition", || ws.partition())?;
    dir.write_text("manifest.tsv", &format_manifest(&part, &groups))?;
    dir.write_json(
        "summary.json",
        &json!({
            "command": "partition",
            "n_clients": part.clients.len(),
            "empty_clients": part.empty_clients.len(),
            "mean_tag_entropy": mean_tag_entropy(&part.plan),
            "groups": groups.groups,
            "isolated": groups.isolated,
        }),
    )?;
    dir.write_meta()
}

fn summaries(run: &Path) -> Result<Vec<(PathBuf, Value)>, CliError> {
    let mut found = Vec::new();
    let mut read = |path: PathBuf| -> Result<(), CliError> {
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let value = serde_json::from_str(&text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        found.push((path, value));
        Ok(())
    };
    let top = run.join("summary.json");
    if top.is_file() {
        read(top)?;
    }
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(run)
        .map_err(|e| CliError::Io(format!("{}: {e}", run.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("summary.json").is_file())
        .collect();
    subdirs.sort();
    for d in subdirs {
        read(d.join("summary.json"))?;
    }
    Ok(found)
}

fn flatten(prefix: &str, value: &Value, rows: &mut Vec<(String, String)>) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, rows);
            }
        }
        Value::Number(n) => rows.push((prefix.to_string(), n.as_f64().map(num).unwrap_or_else(|| n.to_string()))),
        Value::String(s) => rows.push((prefix.to_string(), s.clone())),
        Value::Bool(b) => rows.push((prefix.to_string(), b.to_string())),
        Value::Null | Value::Array(_) => {}
    }
}

/// Long-format join of every summary: one row per (run, metric).
pub fn report(runs: &[PathBuf], out: &Path) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for run in runs {
        let found = summaries(run)?;
        if found.is_empty() {
            return Err(CliError::Io(format!("{}: no summary.json found", run.display())));
        }
        for (path, value) in found {
            let source = path.parent().unwrap_or(run).display().to_string();
            let mut metrics = Vec::new();
            flatten("", &value, &mut metrics);
            rows.extend(metrics.into_iter().map(|(k, v)| vec![source.clone(), k, v]));
        }
    }
    let dir = RunDir::create(out)?;
    dir.write_csv("report.csv", &["run", "metric", "value"], rows)
}
