use serde::{Deserialize, Serialize};

use crate::model::TokenId;

/// Enumerates fixed-width token histories.
///
/// A context is the last `width` tokens, left-padded with a pad digit
/// (`vocab_size`) when the history is shorter, and encoded base
/// `vocab_size + 1` with the most recent token as the least significant
/// digit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextSpace {
    vocab_size: usize,
    width: usize,
}

impl ContextSpace {
    pub fn new(vocab_size: usize, width: usize) -> Self {
        Self { vocab_size, width }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn len(&self) -> usize {
        (self.vocab_size + 1).pow(self.width as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn base(&self) -> usize {
        self.vocab_size + 1
    }

    /// The all-padding context (empty history).
    pub fn start(&self) -> usize {
        (0..self.width).fold(0, |acc, _| acc * self.base() + self.vocab_size)
    }

    pub fn index(&self, history: &[TokenId]) -> usize {
        let take = history.len().min(self.width);
        let mut idx = self.start();
        for &t in &history[history.len() - take..] {
            idx = self.extend(idx, t);
        }
        idx
    }

    /// Context after appending `token`.
    #[inline]
    pub fn extend(&self, context: usize, token: TokenId) -> usize {
        if self.width == 0 {
            return 0;
        }
        let modulus = self.len() / self.base();
        (context % modulus) * self.base() + token
    }

    /// Digits oldest-first; `None` is padding.
    pub fn tokens(&self, context: usize) -> Vec<Option<TokenId>> {
        let mut digits = vec![None; self.width];
        let mut rest = context;
        for slot in digits.iter_mut().rev() {
            let d = rest % self.base();
            rest /= self.base();
            *slot = (d < self.vocab_size).then_some(d);
        }
        digits
    }

    /// Re-encodes a context of this space into a (possibly narrower) space
    /// over the same vocabulary, keeping the most recent tokens.
    pub fn project(&self, context: usize, narrower: &ContextSpace) -> usize {
        debug_assert_eq!(self.vocab_size, narrower.vocab_size);
        let mut idx = narrower.start();
        for d in self.tokens(context) {
            idx = match d {
                Some(t) => narrower.extend(idx, t),
                None => idx,
            };
        }
        idx
    }
}
