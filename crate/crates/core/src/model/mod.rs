//! Toy next-token model: a softmax logit table indexed by the last
//! `context_len` tokens.

mod context;
mod params;
mod sampling;
mod train;
mod vocab;

use std::sync::Arc;

pub use context::ContextSpace;
pub use params::{Layout, ParamVector};
pub use sampling::{generate, generate_candidates, sequence_log_prob, SamplingStrategy};
pub use train::{cross_entropy, gradient, train_local, train_local_traced, TrainConfig};
pub use vocab::{TokenId, Vocab, EOS_SYMBOL};

use crate::error::{Error, Result};
use crate::rng::CounterRng;

/// Floor applied to probabilities before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    vocab: Arc<Vocab>,
    contexts: ContextSpace,
    params: ParamVector,
}

impl ToyModel {
    /// All logits zero: every conditional is uniform.
    pub fn uniform(vocab: Arc<Vocab>, context_len: usize) -> Self {
        let contexts = ContextSpace::new(vocab.len(), context_len);
        let layout = Layout { n_contexts: contexts.len(), n_tokens: vocab.len() };
        Self { vocab, contexts, params: ParamVector::zeros(layout) }
    }

    /// Logits drawn i.i.d. from N(0, sigma^2).
    pub fn gaussian(vocab: Arc<Vocab>, context_len: usize, sigma: f64, seed: u64) -> Self {
        let mut model = Self::uniform(vocab, context_len);
        let mut rng = CounterRng::stream(seed, &[0x1217]);
        model.params.values_mut().iter_mut().for_each(|v| *v = sigma * rng.next_normal());
        model
    }

    pub fn from_params(vocab: Arc<Vocab>, context_len: usize, params: ParamVector) -> Result<Self> {
        let expected = Self::uniform(vocab.clone(), context_len);
        expected.params.ensure_same_layout(&params)?;
        Ok(Self { params, ..expected })
    }

    /// Same vocabulary and layout, new parameters.
    pub fn with_params(&self, params: ParamVector) -> Result<Self> {
        self.params.ensure_same_layout(&params)?;
        Ok(Self { vocab: self.vocab.clone(), contexts: self.contexts, params })
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        self.with_params(ParamVector::from_values(self.params.layout(), values)?)
    }

    pub fn vocab(&self) -> &Arc<Vocab> {
        &self.vocab
    }

    pub fn context_len(&self) -> usize {
        self.contexts.width()
    }

    pub fn contexts(&self) -> &ContextSpace {
        &self.contexts
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn context_of(&self, history: &[TokenId]) -> usize {
        self.contexts.index(history)
    }

    pub fn logits(&self, context: usize) -> &[f64] {
        self.params.row(context)
    }

    /// Conditional next-token distribution for a context.
    pub fn probs(&self, context: usize) -> Vec<f64> {
        softmax(self.logits(context))
    }

    /// Argmax next token; ties go to the lowest index.
    pub fn greedy(&self, context: usize) -> TokenId {
        argmax(self.logits(context))
    }

    /// Checks that two models can be averaged together.
    pub fn ensure_compatible(&self, other: &ToyModel) -> Result<()> {
        if self.vocab != other.vocab || self.contexts != other.contexts {
            return Err(Error::Structural("models differ in vocabulary or context length".into()));
        }
        self.params.ensure_same_layout(&other.params)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    out
}

/// First index of the maximum value.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[inline]
pub fn clamped_ln(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}
