use crate::corpus::{Dialog, LabelSet, Vocab};
use crate::error::{Error, Result};

/// What to do with a gold label that is missing from the label set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnknownLabels {
    /// Fail; used for training data.
    Reject,
    /// Keep the utterance with no gold index; evaluation counts it as an error.
    Keep,
}

/// Index form of a dialog. Utterances keep their own lengths; nothing is padded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedDialog {
    pub id: String,
    pub tokens: Vec<Vec<usize>>,
    /// Speaker ids numbered by first appearance within the dialog.
    pub speakers: Vec<usize>,
    pub acts: Vec<Option<usize>>,
    pub sentiments: Vec<Option<usize>>,
}

impl EncodedDialog {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Gold indices for both tasks, or `None` if any label is unknown.
    pub fn gold(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        let acts = self.acts.iter().copied().collect::<Option<Vec<_>>>()?;
        let sents = self
            .sentiments
            .iter()
            .copied()
            .collect::<Option<Vec<_>>>()?;
        Some((acts, sents))
    }
}

pub fn encode_dialog(
    dialog: &Dialog,
    vocab: &Vocab,
    acts: &LabelSet,
    sentiments: &LabelSet,
    unknown: UnknownLabels,
) -> Result<EncodedDialog> {
    let lookup = |set: &LabelSet, label: &str, task: &str| -> Result<Option<usize>> {
        match (set.get(label), unknown) {
            (Some(i), _) => Ok(Some(i)),
            (None, UnknownLabels::Keep) => Ok(None),
            (None, UnknownLabels::Reject) => Err(Error::Label(format!(
                "unseen {task} label {label:?} in dialog {:?}",
                dialog.id
            ))),
        }
    };
    let mut names: Vec<&str> = Vec::new();
    let mut out = EncodedDialog {
        id: dialog.id.clone(),
        tokens: Vec::with_capacity(dialog.len()),
        speakers: Vec::with_capacity(dialog.len()),
        acts: Vec::with_capacity(dialog.len()),
        sentiments: Vec::with_capacity(dialog.len()),
    };
    for u in &dialog.utterances {
        out.tokens
            .push(u.tokens.iter().map(|t| vocab.encode(t)).collect());
        let speaker = match names.iter().position(|&s| s == u.speaker) {
            Some(i) => i,
            None => {
                names.push(&u.speaker);
                names.len() - 1
            }
        };
        out.speakers.push(speaker);
        out.acts.push(lookup(acts, &u.act, "dialog act")?);
        out.sentiments
            .push(lookup(sentiments, &u.sentiment, "sentiment")?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_label_sets, build_vocab, Utterance, UNK};

    fn utt(text: &str, speaker: &str, act: &str, sent: &str) -> Utterance {
        Utterance {
            tokens: text.split_whitespace().map(String::from).collect(),
            speaker: speaker.into(),
            act: act.into(),
            sentiment: sent.into(),
        }
    }

    fn fixture() -> Dialog {
        Dialog {
            id: "d".into(),
            utterances: vec![
                utt("good good morning", "A", "greet", "pos"),
                utt("bad morning", "B", "stmt", "neg"),
                utt("good", "A", "stmt", "pos"),
            ],
        }
    }

    #[test]
    fn in_vocab_tokens_never_unknown() {
        let d = fixture();
        let v = build_vocab(&[d.clone()], 1);
        let (a, s) = build_label_sets(&[d.clone()]);
        let e = encode_dialog(&d, &v, &a, &s, UnknownLabels::Reject).unwrap();
        assert!(e.tokens.iter().flatten().all(|&i| i != UNK));
        assert_eq!(e.speakers, [0, 1, 0]);
    }

    #[test]
    fn oov_tokens_map_to_unknown() {
        let d = fixture();
        let other = Dialog {
            id: "o".into(),
            utterances: vec![utt("zzz", "A", "greet", "pos")],
        };
        let v = build_vocab(&[other], 1);
        let (a, s) = build_label_sets(&[d.clone()]);
        let e = encode_dialog(&d, &v, &a, &s, UnknownLabels::Reject).unwrap();
        assert!(e.tokens.iter().flatten().all(|&i| i == UNK));
    }

    #[test]
    fn mixed_fixture_matches_hand_table() {
        // counts: good 3, morning 2, bad 1 -> good=2, morning=3, bad=4; min_freq 2 drops bad.
        let d = fixture();
        let v = build_vocab(&[d.clone()], 2);
        let (a, s) = build_label_sets(&[d.clone()]);
        let e = encode_dialog(&d, &v, &a, &s, UnknownLabels::Reject).unwrap();
        assert_eq!(e.tokens, vec![vec![2, 2, 3], vec![UNK, 3], vec![2]]);
        // acts sorted: greet=0, stmt=1; sentiments: neg=0, pos=1
        assert_eq!(e.acts, [Some(0), Some(1), Some(1)]);
        assert_eq!(e.sentiments, [Some(1), Some(0), Some(1)]);
    }

    #[test]
    fn unseen_label_policies() {
        let d = fixture();
        let v = build_vocab(&[d.clone()], 1);
        let a = LabelSet::new(["greet"]);
        let s = LabelSet::new(["neg", "pos"]);
        let err = encode_dialog(&d, &v, &a, &s, UnknownLabels::Reject).unwrap_err();
        assert!(err.to_string().contains("stmt"), "{err}");
        let e = encode_dialog(&d, &v, &a, &s, UnknownLabels::Keep).unwrap();
        assert_eq!(e.acts, [Some(0), None, None]);
        assert!(e.gold().is_none());
    }
}
