//! Balanced-bracket grammar used as the checkable syntax criterion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{TokenId, Vocab};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrammarSpec {
    pairs: Vec<(TokenId, TokenId)>,
    eos: TokenId,
    max_depth: usize,
}

impl GrammarSpec {
    pub fn new(vocab: &Vocab, pairs: &[(&str, &str)], max_depth: usize) -> Result<Self> {
        if max_depth == 0 {
            return Err(Error::Config("max nesting depth must be >= 1".into()));
        }
        if pairs.is_empty() {
            return Err(Error::Config("grammar needs at least one bracket pair".into()));
        }
        let pairs = pairs
            .iter()
            .map(|(o, c)| Ok((vocab.id(o)?, vocab.id(c)?)))
            .collect::<Result<Vec<_>>>()?;
        let mut seen: Vec<TokenId> = pairs.iter().flat_map(|&(o, c)| [o, c]).collect();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) || seen.contains(&vocab.eos()) {
            return Err(Error::Config("bracket symbols must be distinct and differ from <eos>".into()));
        }
        Ok(Self { pairs, eos: vocab.eos(), max_depth })
    }

    /// Pairs consecutive non-eos symbols of a vocabulary built with
    /// [`Vocab::brackets`].
    pub fn from_bracket_vocab(vocab: &Vocab, max_depth: usize) -> Result<Self> {
        let symbols: Vec<&str> = vocab.symbols().iter().map(String::as_str).filter(|s| *s != crate::model::EOS_SYMBOL).collect();
        if !symbols.len().is_multiple_of(2) {
            return Err(Error::Config("bracket vocabulary needs an even number of symbols".into()));
        }
        let pairs: Vec<(&str, &str)> = symbols.chunks(2).map(|c| (c[0], c[1])).collect();
        Self::new(vocab, &pairs, max_depth)
    }

    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn pairs(&self) -> &[(TokenId, TokenId)] {
        &self.pairs
    }

    fn opener(&self, t: TokenId) -> Option<usize> {
        self.pairs.iter().position(|&(o, _)| o == t)
    }

    fn closer(&self, t: TokenId) -> Option<usize> {
        self.pairs.iter().position(|&(_, c)| c == t)
    }
}

/// True iff brackets balance and match, nesting never exceeds the maximum
/// depth, and the sequence ends with a single end-of-sequence token.
pub fn check_syntax(seq: &[TokenId], grammar: &GrammarSpec) -> bool {
    let Some((&last, body)) = seq.split_last() else {
        return false;
    };
    if last != grammar.eos {
        return false;
    }
    let mut stack: Vec<usize> = Vec::with_capacity(grammar.max_depth);
    for &t in body {
        if let Some(kind) = grammar.opener(t) {
            if stack.len() == grammar.max_depth {
                return false;
            }
            stack.push(kind);
        } else if let Some(kind) = grammar.closer(t) {
            if stack.pop() != Some(kind) {
                return false;
            }
        } else {
            return false;
        }
    }
    stack.is_empty()
}
