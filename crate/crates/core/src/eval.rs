//! Syntax and semantic accuracy of a model's generations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ClientDataset;
use crate::error::{Error, Result};
use crate::grammar::{check_syntax, GrammarSpec};
use crate::model::{generate_candidates, SamplingStrategy, ToyModel, TokenId};
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Generations per evaluation prompt.
    pub n_samples: usize,
    pub strategy: SamplingStrategy,
    pub max_len: usize,
    pub seed: u64,
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be >= 1".into()));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be >= 1".into()));
        }
        self.strategy.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub syntax_accuracy: f64,
    pub semantic_accuracy: f64,
    pub n_generated: usize,
    pub seed: u64,
}

/// Picks the generation that represents one request: with several
/// candidates, the first that passes the grammar (best-of-n with a
/// validity oracle), else the first candidate.
fn select(prompt: &[TokenId], candidates: Vec<Vec<TokenId>>, grammar: &GrammarSpec) -> Vec<TokenId> {
    let mut full = prompt.to_vec();
    let n = candidates.len();
    let mut candidates = candidates.into_iter();
    let first = candidates.next().unwrap_or_default();
    if n == 1 {
        return first;
    }
    std::iter::once(first.clone())
        .chain(candidates)
        .find(|c| {
            full.truncate(prompt.len());
            full.extend_from_slice(c);
            check_syntax(&full, grammar)
        })
        .unwrap_or(first)
}

/// Generates `n_samples` completions per evaluation sample. A generation is
/// syntactically valid when `prompt ++ completion` passes the grammar and
/// semantically correct when the completion equals the sample's canonical
/// completion. Generation `j` of sample `i` uses the seed stream
/// `(seed, i, j)`, so results do not depend on thread count.
pub fn evaluate(model: &ToyModel, eval_set: &ClientDataset, grammar: &GrammarSpec, cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    if eval_set.is_empty() {
        return Err(Error::EmptyInput(format!("evaluation set `{}` has no samples", eval_set.tag())));
    }
    let per_sample: Vec<(usize, usize)> = eval_set
        .samples()
        .par_iter()
        .enumerate()
        .map(|(i, sample)| {
            let mut syntax = 0;
            let mut semantic = 0;
            let mut full = Vec::new();
            for j in 0..cfg.n_samples {
                let seed = derive_seed(cfg.seed, &[i as u64, j as u64]);
                let cands = generate_candidates(model, &sample.prompt, &cfg.strategy, cfg.max_len, seed)?;
                let chosen = select(&sample.prompt, cands, grammar);
                full.clear();
                full.extend_from_slice(&sample.prompt);
                full.extend_from_slice(&chosen);
                syntax += check_syntax(&full, grammar) as usize;
                semantic += (chosen == sample.completion) as usize;
            }
            Ok((syntax, semantic))
        })
        .collect::<Result<_>>()?;
    let n_generated = eval_set.len() * cfg.n_samples;
    let (syntax, semantic) = per_sample.iter().fold((0, 0), |(a, b), &(s, m)| (a + s, b + m));
    Ok(EvalReport {
        syntax_accuracy: syntax as f64 / n_generated as f64,
        semantic_accuracy: semantic as f64 / n_generated as f64,
        n_generated,
        seed: cfg.seed,
    })
}
