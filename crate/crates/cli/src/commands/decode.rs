use std::path::Path;

use hierbench_core::model::ToyModel;
use hierbench_core::pardecode::{online_kl_update_batch, serve_greedy, simulate_decode, DraftHeads};
use hierbench_core::rng::CounterRng;
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::output::{num, RunDir};
use crate::workspace::{load_vocab, seed_for};
use crate::CliError;

/// Learns draft heads on served traffic of a random target, then sweeps
/// the tree size with the learned heads.
pub fn decode(cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let d = &cfg.decode;
    let vocab = load_vocab(cfg)?;
    let mut dir = RunDir::with_echo(out, cfg)?;

    let target = ToyModel::gaussian(vocab.clone(), d.target_context_len, d.target_sigma, seed_for(cfg, "target"));
    let mut rng = CounterRng::new(seed_for(cfg, "prompts"));
    let body = vocab.len() as u64 - 1;
    let prompt_len = d.prompt_len.max(d.target_context_len).max(1);
    let prompts: Vec<Vec<usize>> =
        (0..d.n_prompts).map(|_| (0..prompt_len).map(|_| rng.next_below(body) as usize).collect()).collect();
    let served = dir.time("serve", || serve_greedy(&target, &prompts, d.max_len))?;

    let mut heads = DraftHeads::uniform(vocab.clone(), d.head_context_len, d.depth)?;
    let mut trace = Vec::with_capacity(d.learn_steps);
    dir.time("learn", || -> Result<(), CliError> {
        for _ in 0..d.learn_steps {
            let (next, kl) = online_kl_update_batch(&heads, &target, &served, d.lr, d.kl_direction)?;
            trace.push(kl.total);
            heads = next;
        }
        Ok(())
    })?;
    dir.write_csv("learn.csv", &["update_idx", "kl"], trace.iter().enumerate().map(|(i, kl)| vec![i.to_string(), num(*kl)]))?;

    let mut sweep = Vec::with_capacity(d.tree_sizes.len());
    dir.time("sweep", || -> Result<(), CliError> {
        for &size in &d.tree_sizes {
            sweep.push((size, simulate_decode(&target, &heads, &prompts, size, d.ceiling, d.max_len)?.stats));
        }
        Ok(())
    })?;
    let rows = sweep.iter().map(|(size, s)| {
        vec![size.to_string(), num(s.acceptance_ratio), num(s.mean_accepted_per_step), num(s.relative_cost), num(s.speedup)]
    });
    dir.write_csv("sweep.csv", &["tree_size", "acceptance_ratio", "tokens_per_step", "relative_cost", "speedup"], rows)?;

    let peak = sweep.iter().fold(&sweep[0], |best, cur| if cur.1.speedup > best.1.speedup { cur } else { best });
    dir.write_json(
        "summary.json",
        &json!({
            "command": "decode",
            "peak_tree_size": peak.0,
            "peak_speedup": peak.1.speedup,
            "peak_tokens_per_step": peak.1.mean_accepted_per_step,
            "initial_kl": trace.first(),
            "final_kl": trace.last(),
            "learn_steps": d.learn_steps,
        }),
    )?;
    dir.write_meta()
}
