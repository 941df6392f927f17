//! Decoding strategies: greedy, temperature (with best-of-n candidates),
//! top-k, nucleus and beam search.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{clamped_ln, softmax, ToyModel, TokenId};
use crate::rng::CounterRng;

fn one() -> usize {
    1
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplingStrategy {
    /// Argmax at every step (the temperature -> 0 limit).
    Greedy,
    /// Sample from `softmax(logits / temperature)`; `candidates > 1` draws
    /// that many independent sequences for best-of-n selection.
    Temperature {
        temperature: f64,
        #[serde(default = "one")]
        candidates: usize,
    },
    /// Sample among the `k` most probable tokens.
    TopK {
        k: usize,
        #[serde(default = "unit")]
        temperature: f64,
    },
    /// Sample from the smallest prefix of the sorted distribution whose
    /// cumulative probability reaches `p`.
    Nucleus {
        p: f64,
        #[serde(default = "unit")]
        temperature: f64,
    },
    /// Deterministic beam search over summed log-probabilities.
    Beam { width: usize },
}

impl SamplingStrategy {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("{}: {msg}", self.name())));
        let temp_ok = |t: f64| t > 0.0 && t.is_finite();
        match *self {
            SamplingStrategy::Greedy => Ok(()),
            SamplingStrategy::Temperature { temperature, candidates } => {
                if !temp_ok(temperature) {
                    bad(format!("temperature must be > 0, got {temperature}"))
                } else if candidates == 0 {
                    bad("candidates must be >= 1".into())
                } else {
                    Ok(())
                }
            }
            SamplingStrategy::TopK { k, temperature } => {
                if k == 0 {
                    bad("k must be >= 1".into())
                } else if !temp_ok(temperature) {
                    bad(format!("temperature must be > 0, got {temperature}"))
                } else {
                    Ok(())
                }
            }
            SamplingStrategy::Nucleus { p, temperature } => {
                if !(p > 0.0 && p <= 1.0) {
                    bad(format!("p must lie in (0, 1], got {p}"))
                } else if !temp_ok(temperature) {
                    bad(format!("temperature must be > 0, got {temperature}"))
                } else {
                    Ok(())
                }
            }
            SamplingStrategy::Beam { width } => {
                if width == 0 {
                    bad("beam width must be >= 1".into())
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SamplingStrategy::Greedy => "greedy",
            SamplingStrategy::Temperature { .. } => "temperature",
            SamplingStrategy::TopK { .. } => "top_k",
            SamplingStrategy::Nucleus { .. } => "nucleus",
            SamplingStrategy::Beam { .. } => "beam",
        }
    }

    /// `key=value` pairs separated by `;`, for tables.
    pub fn hyperparams(&self) -> String {
        match *self {
            SamplingStrategy::Greedy => String::new(),
            SamplingStrategy::Temperature { temperature, candidates } => {
                format!("temperature={temperature};candidates={candidates}")
            }
            SamplingStrategy::TopK { k, temperature } => format!("k={k};temperature={temperature}"),
            SamplingStrategy::Nucleus { p, temperature } => format!("p={p};temperature={temperature}"),
            SamplingStrategy::Beam { width } => format!("width={width}"),
        }
    }

    /// Number of sequences drawn per request.
    pub fn candidates(&self) -> usize {
        match *self {
            SamplingStrategy::Temperature { candidates, .. } => candidates,
            _ => 1,
        }
    }

    /// Distribution actually sampled from at one step.
    fn step_distribution(&self, logits: &[f64]) -> Vec<f64> {
        match *self {
            SamplingStrategy::Greedy | SamplingStrategy::Beam { .. } => softmax(logits),
            SamplingStrategy::Temperature { temperature, .. } => tempered(logits, temperature),
            SamplingStrategy::TopK { k, temperature } => {
                let probs = tempered(logits, temperature);
                let keep: Vec<usize> = sorted_desc(&probs).into_iter().take(k).collect();
                restrict(&probs, &keep)
            }
            SamplingStrategy::Nucleus { p, temperature } => {
                let probs = tempered(logits, temperature);
                let mut keep = Vec::new();
                let mut mass = 0.0;
                for i in sorted_desc(&probs) {
                    keep.push(i);
                    mass += probs[i];
                    if mass >= p {
                        break;
                    }
                }
                restrict(&probs, &keep)
            }
        }
    }
}

impl fmt::Display for SamplingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let hp = self.hyperparams();
        if hp.is_empty() {
            f.write_str(self.name())
        } else {
            write!(f, "{}({})", self.name(), hp.replace(';', ","))
        }
    }
}

fn tempered(logits: &[f64], temperature: f64) -> Vec<f64> {
    if temperature == 1.0 {
        return softmax(logits);
    }
    let scaled: Vec<f64> = logits.iter().map(|z| z / temperature).collect();
    softmax(&scaled)
}

/// Indices by descending probability, ties to the lower index.
fn sorted_desc(probs: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
    idx
}

fn restrict(probs: &[f64], keep: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; probs.len()];
    let mass: f64 = keep.iter().map(|&i| probs[i]).sum();
    for &i in keep {
        out[i] = probs[i] / mass;
    }
    out
}

/// Inverse-CDF draw scanning tokens in index order.
fn draw(probs: &[f64], u: f64) -> TokenId {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

fn sample_sequence(
    model: &ToyModel,
    prompt: &[TokenId],
    strategy: &SamplingStrategy,
    max_len: usize,
    rng: &mut CounterRng,
) -> Vec<TokenId> {
    let eos = model.vocab().eos();
    let mut ctx = model.context_of(prompt);
    let mut out = Vec::new();
    while out.len() < max_len {
        let logits = model.logits(ctx);
        let token = match strategy {
            SamplingStrategy::Greedy => crate::model::argmax(logits),
            _ => draw(&strategy.step_distribution(logits), rng.next_f64()),
        };
        out.push(token);
        if token == eos {
            break;
        }
        ctx = model.contexts().extend(ctx, token);
    }
    out
}

fn beam_search(model: &ToyModel, prompt: &[TokenId], width: usize, max_len: usize) -> Vec<TokenId> {
    struct Hyp {
        tokens: Vec<TokenId>,
        ctx: usize,
        score: f64,
        done: bool,
    }
    let eos = model.vocab().eos();
    let mut beams = vec![Hyp { tokens: Vec::new(), ctx: model.context_of(prompt), score: 0.0, done: false }];
    for _ in 0..max_len {
        if beams.iter().all(|h| h.done) {
            break;
        }
        let mut next = Vec::with_capacity(beams.len() * model.vocab().len());
        for h in beams {
            if h.done {
                next.push(h);
                continue;
            }
            for (t, p) in model.probs(h.ctx).into_iter().enumerate() {
                let mut tokens = h.tokens.clone();
                tokens.push(t);
                next.push(Hyp {
                    tokens,
                    ctx: model.contexts().extend(h.ctx, t),
                    score: h.score + clamped_ln(p),
                    done: t == eos,
                });
            }
        }
        // Stable sort keeps earlier beams and lower tokens first on ties.
        next.sort_by(|a, b| b.score.total_cmp(&a.score));
        next.truncate(width);
        beams = next;
    }
    beams.swap_remove(0).tokens
}

/// All candidate sequences for one request. Candidate `i` draws from the
/// RNG stream `(seed, i)`.
pub fn generate_candidates(
    model: &ToyModel,
    prompt: &[TokenId],
    strategy: &SamplingStrategy,
    max_len: usize,
    seed: u64,
) -> Result<Vec<Vec<TokenId>>> {
    strategy.validate()?;
    model.vocab().check(prompt)?;
    if max_len == 0 {
        return Err(Error::Config("max_len must be >= 1".into()));
    }
    Ok(match *strategy {
        SamplingStrategy::Beam { width } => vec![beam_search(model, prompt, width, max_len)],
        _ => (0..strategy.candidates() as u64)
            .map(|i| {
                let mut rng = CounterRng::stream(seed, &[i]);
                sample_sequence(model, prompt, strategy, max_len, &mut rng)
            })
            .collect(),
    })
}

/// Generates a completion of at most `max_len` tokens, stopping after the
/// end-of-sequence token. With several candidates the most likely one
/// under the model is returned.
pub fn generate(
    model: &ToyModel,
    prompt: &[TokenId],
    strategy: &SamplingStrategy,
    max_len: usize,
    seed: u64,
) -> Result<Vec<TokenId>> {
    let mut candidates = generate_candidates(model, prompt, strategy, max_len, seed)?;
    if candidates.len() == 1 {
        return Ok(candidates.pop().unwrap_or_default());
    }
    let scores: Vec<f64> = candidates.iter().map(|c| sequence_log_prob(model, prompt, c)).collect();
    let best = crate::model::argmax(&scores);
    Ok(candidates.swap_remove(best))
}

/// Sum of clamped log-probabilities of `completion` given `prompt`.
pub fn sequence_log_prob(model: &ToyModel, prompt: &[TokenId], completion: &[TokenId]) -> f64 {
    let mut ctx = model.context_of(prompt);
    let mut total = 0.0;
    for &t in completion {
        total += clamped_ln(model.probs(ctx)[t]);
        ctx = model.contexts().extend(ctx, t);
    }
    total
}
