//! Client datasets and the line-delimited dataset file format:
//! `<group_tag> TAB <prompt tokens> TAB <completion tokens>`.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{TokenId, Vocab};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Sample {
    pub prompt: Vec<TokenId>,
    pub completion: Vec<TokenId>,
}

impl Sample {
    pub fn new(prompt: Vec<TokenId>, completion: Vec<TokenId>) -> Self {
        Self { prompt, completion }
    }
}

/// Samples owned by one client (or one source repository).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientDataset {
    tag: String,
    samples: Vec<Sample>,
}

impl ClientDataset {
    /// Checks only structure. End-of-sequence placement is checked against
    /// a vocabulary in [`ClientDataset::validate`].
    pub fn new(tag: impl Into<String>, samples: Vec<Sample>) -> Result<Self> {
        let tag = tag.into();
        if tag.is_empty() || tag.chars().any(char::is_whitespace) {
            return Err(Error::Config(format!("invalid group tag {tag:?}")));
        }
        if let Some(i) = samples.iter().position(|s| s.completion.is_empty()) {
            return Err(Error::Config(format!("sample {i} of `{tag}` has an empty completion")));
        }
        Ok(Self { tag, samples })
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Every token is in `vocab` and every completion ends with (and only
    /// with) the end-of-sequence token.
    pub fn validate(&self, vocab: &Vocab) -> Result<()> {
        for (i, s) in self.samples.iter().enumerate() {
            vocab.check(&s.prompt)?;
            vocab.check(&s.completion)?;
            let eos_at = s.completion.iter().position(|&t| t == vocab.eos());
            if eos_at != Some(s.completion.len() - 1) || s.prompt.contains(&vocab.eos()) {
                return Err(Error::Config(format!(
                    "sample {i} of `{}` must end with {} exactly once",
                    self.tag,
                    crate::model::EOS_SYMBOL
                )));
            }
        }
        Ok(())
    }

    /// Concatenates datasets under a new tag.
    pub fn pooled<'a>(tag: &str, parts: impl IntoIterator<Item = &'a ClientDataset>) -> Result<Self> {
        let samples = parts.into_iter().flat_map(|d| d.samples.iter().cloned()).collect();
        Self::new(tag, samples)
    }
}

/// Parses dataset text into one dataset per group tag, in order of first
/// appearance.
pub fn parse_datasets(text: &str, vocab: &Vocab) -> Result<Vec<ClientDataset>> {
    let mut groups: Vec<(String, Vec<Sample>)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse { line: line_no, message: format!("expected 3 tab-separated fields, got {}", fields.len()) });
        }
        let parse = |f: &str| vocab.encode(f).map_err(|e| Error::Parse { line: line_no, message: e.to_string() });
        let sample = Sample::new(parse(fields[1])?, parse(fields[2])?);
        let tag = fields[0].trim();
        match groups.iter_mut().find(|(t, _)| t == tag) {
            Some((_, s)) => s.push(sample),
            None => groups.push((tag.to_string(), vec![sample])),
        }
    }
    let datasets = groups
        .into_iter()
        .map(|(tag, samples)| ClientDataset::new(tag, samples))
        .collect::<Result<Vec<_>>>()?;
    for d in &datasets {
        d.validate(vocab)?;
    }
    Ok(datasets)
}

pub fn read_datasets(path: impl AsRef<Path>, vocab: &Vocab) -> Result<Vec<ClientDataset>> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
    parse_datasets(&text, vocab)
}

pub fn format_datasets(datasets: &[ClientDataset], vocab: &Vocab) -> String {
    let mut out = String::new();
    for d in datasets {
        for s in &d.samples {
            let _ = writeln!(out, "{}\t{}\t{}", d.tag, vocab.decode(&s.prompt), vocab.decode(&s.completion));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocab {
        Vocab::brackets(&[("(", ")"), ("[", "]")]).unwrap()
    }

    #[test]
    fn parses_groups_in_first_appearance_order() {
        let text = "repoB\t(\t) <eos>\nrepoA\t\t[ ] <eos>\nrepoB\t( [\t] ) <eos>\n";
        let ds = parse_datasets(text, &vocab()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds[0].tag(), "repoB");
        assert_eq!(ds[0].len(), 2);
        assert!(ds[1].samples()[0].prompt.is_empty());
        assert_eq!(format_datasets(&ds, &vocab()), "repoB\t(\t) <eos>\nrepoB\t( [\t] ) <eos>\nrepoA\t\t[ ] <eos>\n");
    }

    #[test]
    fn rejects_malformed_lines() {
        let v = vocab();
        assert!(matches!(parse_datasets("a\t(\n", &v), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_datasets("a\t(\t) x <eos>\n", &v), Err(Error::Parse { line: 1, .. })));
        assert!(parse_datasets("a\t(\t)\n", &v).is_err(), "missing eos");
        assert!(parse_datasets("a\t(\t\n", &v).is_err(), "empty completion");
        assert!(parse_datasets("a\t(\t<eos> )\n", &v).is_err(), "eos not last");
    }
}
