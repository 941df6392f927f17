use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{clamped_ln, softmax, ContextSpace, Layout, ParamVector, ToyModel, TokenId, Vocab};
use crate::rng::CounterRng;

/// Which argument of the KL divergence the draft distribution occupies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// `KL(P_a || P_o)`, draft first.
    #[default]
    DraftFirst,
    /// `KL(P_o || P_a)`, target first.
    TargetFirst,
}

/// `K` draft heads. Head `d` predicts the token `d` positions ahead of the
/// committed sequence from the last `context_len` committed tokens only.
#[derive(Debug, Clone, PartialEq)]
pub struct DraftHeads {
    vocab: Arc<Vocab>,
    contexts: ContextSpace,
    heads: Vec<ParamVector>,
}

impl DraftHeads {
    pub fn uniform(vocab: Arc<Vocab>, context_len: usize, depth: usize) -> Result<Self> {
        if depth == 0 {
            return Err(Error::Config("draft depth must be >= 1".into()));
        }
        let contexts = ContextSpace::new(vocab.len(), context_len);
        let layout = Layout { n_contexts: contexts.len(), n_tokens: vocab.len() };
        Ok(Self { vocab, contexts, heads: vec![ParamVector::zeros(layout); depth] })
    }

    /// Logits drawn i.i.d. from N(0, sigma^2).
    pub fn gaussian(vocab: Arc<Vocab>, context_len: usize, depth: usize, sigma: f64, seed: u64) -> Result<Self> {
        let mut heads = Self::uniform(vocab, context_len, depth)?;
        for (d, head) in heads.heads.iter_mut().enumerate() {
            let mut rng = CounterRng::stream(seed, &[0x4ead, d as u64]);
            head.values_mut().iter_mut().for_each(|v| *v = sigma * rng.next_normal());
        }
        Ok(heads)
    }

    /// Heads whose every conditional equals the target's conditional along
    /// the target's own greedy continuation.
    pub fn from_target(target: &ToyModel, depth: usize) -> Result<Self> {
        let mut heads = Self::uniform(target.vocab().clone(), target.context_len(), depth)?;
        let space = *target.contexts();
        for ctx in 0..space.len() {
            let mut c = ctx;
            for head in heads.heads.iter_mut() {
                let row = head.layout().row(ctx);
                head.values_mut()[row].copy_from_slice(target.logits(c));
                c = space.extend(c, target.greedy(c));
            }
        }
        Ok(heads)
    }

    /// Replaces all parameters; `values[d]` is head `d + 1`.
    pub fn with_values(&self, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() != self.heads.len() {
            return Err(Error::Structural(format!("expected {} heads, got {}", self.heads.len(), values.len())));
        }
        let heads = self
            .heads
            .iter()
            .zip(values)
            .map(|(h, v)| ParamVector::from_values(h.layout(), v))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { heads, ..self.clone() })
    }

    pub fn vocab(&self) -> &Arc<Vocab> {
        &self.vocab
    }

    pub fn depth(&self) -> usize {
        self.heads.len()
    }

    pub fn context_len(&self) -> usize {
        self.contexts.width()
    }

    pub fn contexts(&self) -> &ContextSpace {
        &self.contexts
    }

    pub fn values(&self) -> Vec<Vec<f64>> {
        self.heads.iter().map(|h| h.values().to_vec()).collect()
    }

    pub fn context_of(&self, history: &[TokenId]) -> usize {
        self.contexts.index(history)
    }

    /// Distribution of head `d` (0-based) at a heads context.
    pub fn probs(&self, d: usize, context: usize) -> Vec<f64> {
        softmax(self.heads[d].row(context))
    }

    pub(crate) fn ensure_target(&self, target: &ToyModel) -> Result<()> {
        if self.vocab != *target.vocab() {
            return Err(Error::Structural("draft heads and target use different vocabularies".into()));
        }
        Ok(())
    }
}

/// Divergence between draft `a` and target `o` for one row, and its
/// gradient with respect to the draft logits.
fn row_kl(a: &[f64], o: &[f64], direction: KlDirection, grad: &mut [f64], weight: f64) -> f64 {
    match direction {
        KlDirection::DraftFirst => {
            let ell: Vec<f64> = a.iter().zip(o).map(|(&a, &o)| clamped_ln(a) - clamped_ln(o)).collect();
            let kl: f64 = a.iter().zip(&ell).map(|(a, l)| a * l).sum();
            for ((g, a), l) in grad.iter_mut().zip(a).zip(&ell) {
                *g += weight * a * (l - kl);
            }
            kl
        }
        KlDirection::TargetFirst => {
            let kl: f64 = a
                .iter()
                .zip(o)
                .filter(|(_, &o)| o > 0.0)
                .map(|(&a, &o)| o * (clamped_ln(o) - clamped_ln(a)))
                .sum();
            for ((g, a), o) in grad.iter_mut().zip(a).zip(o) {
                *g += weight * (a - o);
            }
            kl
        }
    }
}

/// Mean over served positions of the per-depth KL terms.
#[derive(Debug, Clone, PartialEq)]
pub struct KlValue {
    /// Sum over depths: the objective that is minimised.
    pub total: f64,
    pub per_depth: Vec<f64>,
}

/// Positions of `served` whose prefix is a valid drafting point: at least
/// `min_len` tokens long and not already terminated.
fn drafting_points(served: &[TokenId], min_len: usize, eos: TokenId) -> impl Iterator<Item = usize> + '_ {
    (min_len.max(1)..=served.len()).filter(move |&t| served[t - 1] != eos)
}

/// KL objective and gradient over a batch of served sequences. Every prefix
/// of a served sequence that is at least the target's context length is
/// one drafting point; the objective is the mean over drafting points of
/// `sum_d KL_d`, where depth `d` compares head `d` with the target's
/// conditional after its own greedy continuation of `d - 1` tokens.
pub fn kl_gradient(
    heads: &DraftHeads,
    target: &ToyModel,
    served: &[Vec<TokenId>],
    direction: KlDirection,
) -> Result<(KlValue, Vec<Vec<f64>>)> {
    heads.ensure_target(target)?;
    let eos = target.vocab().eos();
    let mut points = Vec::new();
    for (s, seq) in served.iter().enumerate() {
        target.vocab().check(seq)?;
        points.extend(drafting_points(seq, target.context_len(), eos).map(|t| (s, t)));
    }
    if points.is_empty() {
        return Err(Error::Domain(format!(
            "served context has no drafting point of length >= {}",
            target.context_len().max(1)
        )));
    }
    let weight = 1.0 / points.len() as f64;
    let space = *target.contexts();
    let mut grads: Vec<Vec<f64>> = heads.heads.iter().map(|h| vec![0.0; h.len()]).collect();
    let mut per_depth = vec![0.0; heads.depth()];
    for (s, t) in points {
        let prefix = &served[s][..t];
        let h = heads.context_of(prefix);
        let mut c = target.context_of(prefix);
        for d in 0..heads.depth() {
            let a = heads.probs(d, h);
            let o = target.probs(c);
            let row = heads.heads[d].layout().row(h);
            let kl = row_kl(&a, &o, direction, &mut grads[d][row], weight);
            if !kl.is_finite() {
                return Err(Error::Numeric {
                    context: format!("[{}]", target.vocab().decode(prefix)),
                    detail: format!("non-finite KL at depth {}", d + 1),
                });
            }
            per_depth[d] += weight * kl;
            c = space.extend(c, target.greedy(c));
        }
    }
    let total = per_depth.iter().sum();
    Ok((KlValue { total, per_depth }, grads))
}

/// One gradient step on a batch of served sequences. Returns the updated
/// heads and the KL before the step.
pub fn online_kl_update_batch(
    heads: &DraftHeads,
    target: &ToyModel,
    served: &[Vec<TokenId>],
    lr: f64,
    direction: KlDirection,
) -> Result<(DraftHeads, KlValue)> {
    if !lr.is_finite() || lr <= 0.0 {
        return Err(Error::Config(format!("learning rate must be finite and > 0, got {lr}")));
    }
    let (kl, grads) = kl_gradient(heads, target, served, direction)?;
    let mut next = heads.clone();
    for (head, grad) in next.heads.iter_mut().zip(&grads) {
        for (v, g) in head.values_mut().iter_mut().zip(grad) {
            *v -= lr * g;
        }
    }
    if let Some(d) = next.heads.iter().position(|h| h.values().iter().any(|v| !v.is_finite())) {
        return Err(Error::Numeric { context: format!("head {}", d + 1), detail: "update diverged".into() });
    }
    Ok((next, kl))
}

/// One gradient step on a single served context with the draft-first KL.
pub fn online_kl_update(
    heads: &DraftHeads,
    target: &ToyModel,
    served_context: &[TokenId],
    lr: f64,
) -> Result<(DraftHeads, f64)> {
    let (heads, kl) = online_kl_update_batch(heads, target, &[served_context.to_vec()], lr, KlDirection::DraftFirst)?;
    Ok((heads, kl.total))
}
