//! Dialog corpora: JSON-lines parsing, vocabularies, label inventories and
//! index encoding.
//!
//! One dialog per line:
//!
//! ```text
//! {"id": "d1", "utterances": [{"text": "hi there", "speaker": "A", "act": "greet", "sentiment": "pos"}]}
//! ```
//!
//! `text` is pre-tokenized; tokens are split on whitespace and lowercased.

mod encode;
mod vocab;

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use encode::{encode_dialog, EncodedDialog, UnknownLabels};
pub use vocab::{build_label_sets, build_vocab, LabelSet, Vocab, PAD, UNK};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub tokens: Vec<String>,
    pub speaker: String,
    pub act: String,
    pub sentiment: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dialog {
    pub id: String,
    pub utterances: Vec<Utterance>,
}

impl Dialog {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn speakers(&self) -> Vec<&str> {
        self.utterances.iter().map(|u| u.speaker.as_str()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" | "valid" | "validation" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawUtterance {
    text: String,
    speaker: String,
    act: String,
    sentiment: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDialog {
    id: String,
    utterances: Vec<RawUtterance>,
}

/// Resolves `path` for `split`: a directory yields `<dir>/<split>.jsonl`, a file
/// is used as is.
pub fn split_path(path: &Path, split: Split) -> PathBuf {
    if path.is_dir() {
        path.join(format!("{split}.jsonl"))
    } else {
        path.to_path_buf()
    }
}

pub fn load_corpus(path: &Path, split: Split) -> Result<Vec<Dialog>> {
    let file = split_path(path, split);
    let reader = BufReader::new(File::open(&file)?);
    let mut dialogs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        dialogs.push(parse_dialog_line(&line).map_err(|message| Error::Parse {
            path: file.clone(),
            line: i + 1,
            message,
        })?);
    }
    Ok(dialogs)
}

/// Parses one JSON-lines record; errors are plain messages so the caller can
/// attach file and line.
pub fn parse_dialog_line(line: &str) -> std::result::Result<Dialog, String> {
    let raw: RawDialog = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if raw.utterances.is_empty() {
        return Err(format!("dialog {:?} has no utterances", raw.id));
    }
    let utterances = raw
        .utterances
        .into_iter()
        .enumerate()
        .map(|(k, u)| {
            let tokens: Vec<String> = u.text.split_whitespace().map(str::to_lowercase).collect();
            if tokens.is_empty() {
                return Err(format!(
                    "utterance {k} of dialog {:?} has no tokens",
                    raw.id
                ));
            }
            Ok(Utterance {
                tokens,
                speaker: u.speaker,
                act: u.act,
                sentiment: u.sentiment,
            })
        })
        .collect::<std::result::Result<_, _>>()?;
    Ok(Dialog {
        id: raw.id,
        utterances,
    })
}

pub fn dialog_to_json_line(d: &Dialog) -> String {
    let raw = RawDialog {
        id: d.id.clone(),
        utterances: d
            .utterances
            .iter()
            .map(|u| RawUtterance {
                text: u.tokens.join(" "),
                speaker: u.speaker.clone(),
                act: u.act.clone(),
                sentiment: u.sentiment.clone(),
            })
            .collect(),
    };
    serde_json::to_string(&raw).expect("dialog serializes")
}

pub fn save_corpus(path: &Path, dialogs: &[Dialog]) -> Result<()> {
    let mut out = std::io::BufWriter::new(File::create(path)?);
    for d in dialogs {
        writeln!(out, "{}", dialog_to_json_line(d))?;
    }
    out.flush()?;
    Ok(())
}
