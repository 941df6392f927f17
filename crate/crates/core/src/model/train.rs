//! Full-batch gradient descent on completion cross-entropy.

use serde::{Deserialize, Serialize};

use crate::data::ClientDataset;
use crate::error::{Error, Result};
use crate::model::{clamped_ln, softmax, ToyModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be finite and >= 0, got {}", self.lr)));
        }
        Ok(())
    }
}

/// Sufficient statistics of a dataset: how often each token follows each
/// context, counting completion tokens only.
struct TokenCounts {
    counts: Vec<f64>,
    per_context: Vec<f64>,
    total: f64,
}

impl TokenCounts {
    fn collect(model: &ToyModel, data: &ClientDataset) -> Result<Self> {
        let layout = model.params().layout();
        let mut counts = vec![0.0; layout.len()];
        let mut per_context = vec![0.0; layout.n_contexts];
        let mut total = 0.0;
        for sample in data.samples() {
            model.vocab().check(&sample.prompt)?;
            model.vocab().check(&sample.completion)?;
            let mut ctx = model.context_of(&sample.prompt);
            for &t in &sample.completion {
                counts[layout.offset(ctx, t)] += 1.0;
                per_context[ctx] += 1.0;
                total += 1.0;
                ctx = model.contexts().extend(ctx, t);
            }
        }
        Ok(Self { counts, per_context, total })
    }

    fn loss(&self, model: &ToyModel) -> f64 {
        if self.total == 0.0 {
            return 0.0;
        }
        let layout = model.params().layout();
        let mut sum = 0.0;
        for ctx in 0..layout.n_contexts {
            if self.per_context[ctx] == 0.0 {
                continue;
            }
            let probs = model.probs(ctx);
            for (t, p) in probs.iter().enumerate() {
                let c = self.counts[layout.offset(ctx, t)];
                if c > 0.0 {
                    sum -= c * clamped_ln(*p);
                }
            }
        }
        sum / self.total
    }

    fn gradient(&self, model: &ToyModel) -> Result<Vec<f64>> {
        let layout = model.params().layout();
        let mut grad = vec![0.0; layout.len()];
        if self.total == 0.0 {
            return Ok(grad);
        }
        for ctx in 0..layout.n_contexts {
            let n = self.per_context[ctx];
            if n == 0.0 {
                continue;
            }
            let probs = softmax(model.logits(ctx));
            for (t, p) in probs.into_iter().enumerate() {
                let off = layout.offset(ctx, t);
                let g = (n * p - self.counts[off]) / self.total;
                if !g.is_finite() {
                    return Err(Error::Numeric {
                        context: describe_context(model, ctx),
                        detail: format!("non-finite gradient for token {t}"),
                    });
                }
                grad[off] = g;
            }
        }
        Ok(grad)
    }
}

fn describe_context(model: &ToyModel, ctx: usize) -> String {
    let parts: Vec<&str> = model
        .contexts()
        .tokens(ctx)
        .into_iter()
        .map(|d| d.and_then(|t| model.vocab().symbol(t)).unwrap_or("<pad>"))
        .collect();
    format!("[{}]", parts.join(" "))
}

/// Mean cross-entropy (natural log) of completion tokens given their
/// prompts and preceding completion tokens.
pub fn cross_entropy(model: &ToyModel, data: &ClientDataset) -> Result<f64> {
    Ok(TokenCounts::collect(model, data)?.loss(model))
}

/// Gradient of [`cross_entropy`] with respect to the flat logit table.
pub fn gradient(model: &ToyModel, data: &ClientDataset) -> Result<Vec<f64>> {
    TokenCounts::collect(model, data)?.gradient(model)
}

/// Trains a copy of `model` and also returns the loss before every epoch
/// plus the final loss (`epochs + 1` values).
pub fn train_local_traced(model: &ToyModel, data: &ClientDataset, cfg: &TrainConfig) -> Result<(ToyModel, Vec<f64>)> {
    cfg.validate()?;
    let stats = TokenCounts::collect(model, data)?;
    let mut current = model.clone();
    let mut losses = Vec::with_capacity(cfg.epochs + 1);
    for _ in 0..cfg.epochs {
        losses.push(stats.loss(&current));
        let grad = stats.gradient(&current)?;
        current
            .params_mut()
            .values_mut()
            .iter_mut()
            .zip(&grad)
            .for_each(|(w, g)| *w -= cfg.lr * g);
    }
    losses.push(stats.loss(&current));
    if let Some(i) = current.params().values().iter().position(|v| !v.is_finite()) {
        let ctx = i / current.params().layout().n_tokens;
        return Err(Error::Numeric {
            context: describe_context(&current, ctx),
            detail: "parameter diverged".into(),
        });
    }
    Ok((current, losses))
}

/// Local training: `cfg.epochs` full-batch gradient steps. The input model
/// is left untouched.
pub fn train_local(model: &ToyModel, data: &ClientDataset, cfg: &TrainConfig) -> Result<ToyModel> {
    train_local_traced(model, data, cfg).map(|(m, _)| m)
}
