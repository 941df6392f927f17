//! Synthetic heterogeneous bracket corpus. Each source repository writes
//! balanced sequences in its own style, so partitions over repositories
//! are non-IID by construction.

use serde::{Deserialize, Serialize};

use crate::data::{ClientDataset, Sample};
use crate::error::{Error, Result};
use crate::grammar::GrammarSpec;
use crate::model::{TokenId, Vocab};
use crate::rng::{derive_labeled, CounterRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepoStyle {
    /// Sibling pairs at depth one: `( ) [ ] ( )`.
    Flat,
    /// One fully nested chain: `( [ ( ) ] )`.
    Nested,
    /// Random balanced sequences within the depth limit.
    Mixed,
    /// Only the first bracket pair, random shape.
    Round,
}

impl RepoStyle {
    pub const ALL: [RepoStyle; 4] = [RepoStyle::Flat, RepoStyle::Nested, RepoStyle::Mixed, RepoStyle::Round];

    pub fn tag(self) -> &'static str {
        match self {
            RepoStyle::Flat => "flat",
            RepoStyle::Nested => "nested",
            RepoStyle::Mixed => "mixed",
            RepoStyle::Round => "round",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub samples_per_repo: usize,
    pub min_pairs: usize,
    pub max_pairs: usize,
    pub max_depth: usize,
    pub styles: Vec<RepoStyle>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { samples_per_repo: 200, min_pairs: 1, max_pairs: 4, max_depth: 3, styles: RepoStyle::ALL.to_vec() }
    }
}

/// The reference alphabet `( ) [ ] <eos>`.
pub fn reference_vocab() -> Vocab {
    Vocab::brackets(&[("(", ")"), ("[", "]")]).expect("static vocabulary")
}

pub fn reference_grammar(vocab: &Vocab, max_depth: usize) -> Result<GrammarSpec> {
    GrammarSpec::from_bracket_vocab(vocab, max_depth)
}

fn balanced(style: RepoStyle, n_pairs: usize, max_depth: usize, kinds: usize, rng: &mut CounterRng) -> Vec<usize> {
    let kind = |rng: &mut CounterRng| if style == RepoStyle::Round { 0 } else { rng.next_below(kinds as u64) as usize };
    let mut out = Vec::with_capacity(2 * n_pairs);
    match style {
        RepoStyle::Flat => {
            for _ in 0..n_pairs {
                let k = kind(rng);
                out.extend([2 * k, 2 * k + 1]);
            }
        }
        RepoStyle::Nested => {
            let depth = n_pairs.min(max_depth);
            let chain: Vec<usize> = (0..depth).map(|_| kind(rng)).collect();
            out.extend(chain.iter().map(|k| 2 * k));
            out.extend(chain.iter().rev().map(|k| 2 * k + 1));
        }
        RepoStyle::Mixed | RepoStyle::Round => {
            let mut stack = Vec::new();
            let mut opened = 0;
            while opened < n_pairs || !stack.is_empty() {
                let can_open = opened < n_pairs && stack.len() < max_depth;
                let open = can_open && (stack.is_empty() || rng.next_below(2) == 0);
                if open {
                    let k = kind(rng);
                    stack.push(k);
                    out.push(2 * k);
                    opened += 1;
                } else if let Some(k) = stack.pop() {
                    out.push(2 * k + 1);
                }
            }
        }
    }
    out
}

/// One dataset per style. Each sample is a balanced sequence split at a
/// random point: the prompt is a non-empty proper prefix and the completion
/// is the rest followed by `<eos>`.
pub fn generate_corpus(vocab: &Vocab, cfg: &SynthConfig, seed: u64) -> Result<Vec<ClientDataset>> {
    let grammar = reference_grammar(vocab, cfg.max_depth)?;
    if cfg.min_pairs == 0 || cfg.min_pairs > cfg.max_pairs {
        return Err(Error::Config("need 1 <= min_pairs <= max_pairs".into()));
    }
    if cfg.styles.is_empty() {
        return Err(Error::Config("at least one repository style is required".into()));
    }
    let kinds = grammar.pairs().len();
    let ids: Vec<TokenId> = grammar.pairs().iter().flat_map(|&(o, c)| [o, c]).collect();
    cfg.styles
        .iter()
        .map(|&style| {
            let mut rng = CounterRng::new(derive_labeled(seed, style.tag()));
            let samples = (0..cfg.samples_per_repo)
                .map(|_| {
                    let span = (cfg.max_pairs - cfg.min_pairs + 1) as u64;
                    let n_pairs = cfg.min_pairs + rng.next_below(span) as usize;
                    let seq: Vec<TokenId> =
                        balanced(style, n_pairs, cfg.max_depth, kinds, &mut rng).into_iter().map(|i| ids[i]).collect();
                    let cut = 1 + rng.next_below(seq.len() as u64 - 1) as usize;
                    let mut completion = seq[cut..].to_vec();
                    completion.push(vocab.eos());
                    Sample::new(seq[..cut].to_vec(), completion)
                })
                .collect();
            ClientDataset::new(style.tag(), samples)
        })
        .collect()
}
