use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::heads::DraftHeads;
use crate::error::{Error, Result};
use crate::model::{generate, SamplingStrategy, ToyModel, TokenId};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeNode {
    pub token: TokenId,
    /// `None` for children of the root.
    pub parent: Option<usize>,
    /// 1 for children of the root.
    pub depth: usize,
    /// Product of draft probabilities along the path from the root.
    pub path_prob: f64,
}

/// Drafted continuations of a committed sequence. The root stands for the
/// last committed token and is not counted in `size`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenTree {
    context: Vec<TokenId>,
    nodes: Vec<TreeNode>,
    children: Vec<Vec<usize>>,
    root_children: Vec<usize>,
}

impl TokenTree {
    pub fn context(&self) -> &[TokenId] {
        &self.context
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn size(&self) -> usize {
        self.nodes.len()
    }

    /// Children of `node`, or of the root when `None`, in insertion order.
    pub fn children(&self, node: Option<usize>) -> &[usize] {
        match node {
            None => &self.root_children,
            Some(i) => &self.children[i],
        }
    }

    pub fn max_depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    fn child_with(&self, node: Option<usize>, token: TokenId) -> Option<usize> {
        self.children(node).iter().copied().find(|&c| self.nodes[c].token == token)
    }
}

/// Frontier entry; the heap pops the highest path probability first, then
/// the earliest parent (root first), then the lowest token.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    prob: f64,
    parent: Option<usize>,
    token: TokenId,
    depth: usize,
}

impl Candidate {
    fn key(&self) -> (usize, TokenId) {
        (self.parent.map_or(0, |p| p + 1), self.token)
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.prob.total_cmp(&other.prob).then_with(|| other.key().cmp(&self.key()))
    }
}

/// Grows a tree of at most `size` nodes by repeatedly attaching the
/// unexpanded child with the highest path probability. Depth is bounded by
/// the number of heads; zero-probability children are never attached.
pub fn build_tree(heads: &DraftHeads, context: &[TokenId], size: usize) -> Result<TokenTree> {
    if size == 0 {
        return Err(Error::Config("tree size must be >= 1".into()));
    }
    heads.vocab().check(context)?;
    let h = heads.context_of(context);
    let dists: Vec<Vec<f64>> = (0..heads.depth()).map(|d| heads.probs(d, h)).collect();
    let mut tree = TokenTree {
        context: context.to_vec(),
        nodes: Vec::with_capacity(size),
        children: Vec::with_capacity(size),
        root_children: Vec::new(),
    };
    let mut frontier = BinaryHeap::new();
    let push_children = |frontier: &mut BinaryHeap<Candidate>, parent: Option<usize>, prob: f64, depth: usize| {
        if depth > dists.len() {
            return;
        }
        for (token, &p) in dists[depth - 1].iter().enumerate() {
            let prob = prob * p;
            if prob > 0.0 {
                frontier.push(Candidate { prob, parent, token, depth });
            }
        }
    };
    push_children(&mut frontier, None, 1.0, 1);
    while tree.nodes.len() < size {
        let Some(c) = frontier.pop() else { break };
        let id = tree.nodes.len();
        tree.nodes.push(TreeNode { token: c.token, parent: c.parent, depth: c.depth, path_prob: c.prob });
        tree.children.push(Vec::new());
        match c.parent {
            None => tree.root_children.push(id),
            Some(p) => tree.children[p].push(id),
        }
        push_children(&mut frontier, Some(id), c.prob, c.depth + 1);
    }
    Ok(tree)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifyMode {
    #[default]
    Greedy,
}

/// Tokens committed by one verification pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verified {
    pub tokens: Vec<TokenId>,
    /// How many of `tokens` were drafted; the rest is the target's own
    /// correction token.
    pub accepted: usize,
}

/// Walks the tree along the target's greedy choices. Every matched child is
/// accepted; the first greedy token without a matching child is committed
/// as the correction and ends the pass, as does an end-of-sequence token.
pub fn verify(target: &ToyModel, tree: &TokenTree, mode: VerifyMode) -> Verified {
    let VerifyMode::Greedy = mode;
    let eos = target.vocab().eos();
    let mut ctx = target.context_of(tree.context());
    let mut node = None;
    let mut out = Verified { tokens: Vec::new(), accepted: 0 };
    loop {
        let g = target.greedy(ctx);
        out.tokens.push(g);
        let next = tree.child_with(node, g);
        if next.is_some() {
            out.accepted += 1;
        }
        if next.is_none() || g == eos {
            return out;
        }
        node = next;
        ctx = target.contexts().extend(ctx, g);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeStats {
    pub steps: usize,
    /// Tokens committed over all prompts.
    pub accepted_total: usize,
    pub drafted_total: usize,
    /// Committed tokens that came from the draft tree.
    pub accepted_drafts: usize,
    pub acceptance_ratio: f64,
    pub mean_accepted_per_step: f64,
    pub relative_cost: f64,
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeRun {
    pub stats: DecodeStats,
    /// Completion generated for each prompt.
    pub outputs: Vec<Vec<TokenId>>,
}

/// Per-step cost relative to a single-token step: parallel positions are
/// free up to the ceiling and linear beyond it.
pub fn relative_cost(tree_size: usize, ceiling: usize) -> f64 {
    (tree_size as f64 / ceiling as f64).max(1.0)
}

struct PromptRun {
    output: Vec<TokenId>,
    steps: usize,
    drafted: usize,
    accepted: usize,
}

fn decode_one(target: &ToyModel, heads: &DraftHeads, prompt: &[TokenId], tree_size: usize, max_len: usize) -> Result<PromptRun> {
    let eos = target.vocab().eos();
    let mut seq = prompt.to_vec();
    let mut run = PromptRun { output: Vec::new(), steps: 0, drafted: 0, accepted: 0 };
    while run.output.len() < max_len && run.output.last() != Some(&eos) {
        let tree = build_tree(heads, &seq, tree_size)?;
        let v = verify(target, &tree, VerifyMode::Greedy);
        let room = max_len - run.output.len();
        let take = v.tokens.len().min(room);
        run.steps += 1;
        run.drafted += tree.size();
        run.accepted += v.accepted.min(take);
        seq.extend_from_slice(&v.tokens[..take]);
        run.output.extend_from_slice(&v.tokens[..take]);
    }
    Ok(run)
}

/// Decodes every prompt to end-of-sequence or `max_len` tokens with draft
/// trees of `tree_size` nodes. Speedup is committed tokens per step divided
/// by the relative per-step cost.
pub fn simulate_decode(
    target: &ToyModel,
    heads: &DraftHeads,
    prompts: &[Vec<TokenId>],
    tree_size: usize,
    ceiling: usize,
    max_len: usize,
) -> Result<DecodeRun> {
    if ceiling == 0 {
        return Err(Error::Config("compute ceiling must be >= 1".into()));
    }
    if tree_size == 0 {
        return Err(Error::Config("tree size must be >= 1".into()));
    }
    if max_len == 0 {
        return Err(Error::Config("max_len must be >= 1".into()));
    }
    heads.ensure_target(target)?;
    let runs = prompts
        .par_iter()
        .map(|p| decode_one(target, heads, p, tree_size, max_len))
        .collect::<Result<Vec<_>>>()?;
    let steps: usize = runs.iter().map(|r| r.steps).sum();
    let committed: usize = runs.iter().map(|r| r.output.len()).sum();
    let drafted: usize = runs.iter().map(|r| r.drafted).sum();
    let accepted: usize = runs.iter().map(|r| r.accepted).sum();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let cost = relative_cost(tree_size, ceiling);
    let per_step = ratio(committed, steps);
    Ok(DecodeRun {
        stats: DecodeStats {
            steps,
            accepted_total: committed,
            drafted_total: drafted,
            accepted_drafts: accepted,
            acceptance_ratio: ratio(accepted, drafted),
            mean_accepted_per_step: per_step,
            relative_cost: cost,
            speedup: per_step / cost,
        },
        outputs: runs.into_iter().map(|r| r.output).collect(),
    })
}

/// Plain one-token-per-step greedy decoding, the reference output.
pub fn greedy_decode(target: &ToyModel, prompt: &[TokenId], max_len: usize) -> Result<Vec<TokenId>> {
    generate(target, prompt, &SamplingStrategy::Greedy, max_len, 0)
}

/// Full served sequences (prompt followed by the greedy completion): the
/// deployment traffic that online head learning consumes.
pub fn serve_greedy(target: &ToyModel, prompts: &[Vec<TokenId>], max_len: usize) -> Result<Vec<Vec<TokenId>>> {
    prompts
        .par_iter()
        .map(|p| {
            let mut seq = p.clone();
            seq.extend(greedy_decode(target, p, max_len)?);
            Ok(seq)
        })
        .collect()
}
