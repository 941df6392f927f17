use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a symbol in a [`Vocab`].
pub type TokenId = usize;

pub const EOS_SYMBOL: &str = "<eos>";

/// Ordered, duplicate-free token alphabet with exactly one end-of-sequence
/// symbol.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    symbols: Vec<String>,
    eos: TokenId,
    #[serde(skip)]
    index: HashMap<String, TokenId>,
}

impl Vocab {
    pub fn new<S: Into<String>>(symbols: impl IntoIterator<Item = S>) -> Result<Self> {
        let symbols: Vec<String> = symbols.into_iter().map(Into::into).collect();
        if symbols.len() < 2 {
            return Err(Error::Config(format!("vocabulary needs at least 2 symbols, got {}", symbols.len())));
        }
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, s) in symbols.iter().enumerate() {
            if s.is_empty() || s.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!("invalid vocabulary symbol {s:?}")));
            }
            if index.insert(s.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary symbol `{s}`")));
            }
        }
        let eos = *index
            .get(EOS_SYMBOL)
            .ok_or_else(|| Error::Config(format!("vocabulary lacks `{EOS_SYMBOL}`")))?;
        Ok(Self { symbols, eos, index })
    }

    /// Bracket alphabet `open_1 close_1 ... open_n close_n <eos>`.
    pub fn brackets(pairs: &[(&str, &str)]) -> Result<Self> {
        let mut symbols: Vec<String> = pairs.iter().flat_map(|(o, c)| [o.to_string(), c.to_string()]).collect();
        symbols.push(EOS_SYMBOL.to_string());
        Self::new(symbols)
    }

    /// One symbol per line; blank lines ignored.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::new(text.lines().map(str::trim).filter(|l| !l.is_empty()))
    }

    pub fn to_file_string(&self) -> String {
        self.symbols.iter().map(|s| format!("{s}\n")).collect()
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn symbol(&self, token: TokenId) -> Option<&str> {
        self.symbols.get(token).map(String::as_str)
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn id(&self, symbol: &str) -> Result<TokenId> {
        self.index.get(symbol).copied().ok_or_else(|| Error::UnknownSymbol(symbol.to_string()))
    }

    /// Whitespace-separated symbols to token ids.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        text.split_whitespace().map(|s| self.id(s)).collect()
    }

    pub fn decode(&self, tokens: &[TokenId]) -> String {
        tokens
            .iter()
            .map(|&t| self.symbol(t).unwrap_or("<?>"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn check(&self, tokens: &[TokenId]) -> Result<()> {
        match tokens.iter().find(|&&t| t >= self.len()) {
            Some(&token) => Err(Error::VocabularyMismatch { token, vocab_size: self.len() }),
            None => Ok(()),
        }
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = Error;
    fn try_from(symbols: Vec<String>) -> Result<Self> {
        Vocab::new(symbols)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.symbols
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bracket_vocab_layout() {
        let v = Vocab::brackets(&[("(", ")"), ("[", "]")]).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.eos(), 4);
        assert_eq!(v.encode("( [ ] ) <eos>").unwrap(), vec![0, 2, 3, 1, 4]);
        assert_eq!(v.decode(&[0, 1, 4]), "( ) <eos>");
    }

    #[test]
    fn rejects_bad_vocabularies() {
        assert!(Vocab::new(["<eos>"]).is_err());
        assert!(Vocab::new(["a", "b"]).is_err());
        assert!(Vocab::new(["a", "a", "<eos>"]).is_err());
        assert!(Vocab::new(["a", "<eos>", "<eos>"]).is_err());
    }

    #[test]
    fn unknown_symbol() {
        let v = Vocab::brackets(&[("(", ")")]).unwrap();
        assert_eq!(v.encode("( x"), Err(Error::UnknownSymbol("x".into())));
        assert!(matches!(v.check(&[0, 7]), Err(Error::VocabularyMismatch { token: 7, .. })));
    }
}
