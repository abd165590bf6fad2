use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use crate::corpus::Dialog;
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;

const PAD_TOKEN: &str = "<pad>";
const UNK_TOKEN: &str = "<unk>";

/// Token inventory. Index 0 is padding and index 1 the shared unknown token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn encode(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn decode(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.get(token).is_some_and(|&i| i > UNK)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_lines(path, &self.tokens)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let tokens = read_lines(path)?;
        if tokens.len() < 2 || tokens[PAD] != PAD_TOKEN || tokens[UNK] != UNK_TOKEN {
            return Err(Error::Config(format!(
                "{} is not a vocabulary file",
                path.display()
            )));
        }
        Self::from_tokens(tokens)
    }
}

/// Tokens seen at least `min_freq` times, by descending frequency with
/// lexicographic tie-break, indexed from 2.
pub fn build_vocab(dialogs: &[Dialog], min_freq: usize) -> Vocab {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in dialogs
        .iter()
        .flat_map(|d| &d.utterances)
        .flat_map(|u| &u.tokens)
    {
        *counts.entry(t.as_str()).or_default() += 1;
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(t, c)| c >= min_freq && t != PAD_TOKEN && t != UNK_TOKEN)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let tokens = [PAD_TOKEN, UNK_TOKEN]
        .into_iter()
        .chain(kept.into_iter().map(|(t, _)| t))
        .map(String::from)
        .collect();
    Vocab::from_tokens(tokens).expect("distinct tokens")
}

/// Bijection between the observed labels of one task and `0..len`, in sorted order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelSet {
    pub fn new<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let sorted: BTreeSet<String> = labels.into_iter().map(Into::into).collect();
        let labels: Vec<String> = sorted.into_iter().collect();
        let index = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i))
            .collect();
        Self { labels, index }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.labels.get(index).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_lines(path, &self.labels)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let labels = read_lines(path)?;
        let set = Self::new(labels.iter().cloned());
        if set.labels != labels {
            return Err(Error::Config(format!(
                "{} is not a sorted label file",
                path.display()
            )));
        }
        Ok(set)
    }
}

/// Dialog-act and sentiment label sets observed in `dialogs`.
pub fn build_label_sets(dialogs: &[Dialog]) -> (LabelSet, LabelSet) {
    let utts = || dialogs.iter().flat_map(|d| &d.utterances);
    (
        LabelSet::new(utts().map(|u| u.act.as_str())),
        LabelSet::new(utts().map(|u| u.sentiment.as_str())),
    )
}

fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut s = lines.join("\n");
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    Ok(fs::read_to_string(path)?
        .lines()
        .map(String::from)
        .collect())
}
