//! Generated corpora whose labels are fixed by cue tokens, for smoke tests
//! and desk-scale experiments.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Dialog, Utterance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub dialogs: usize,
    pub utterances: usize,
    /// Distinct word types, cue words included.
    pub vocab: usize,
    pub acts: usize,
    pub sentiments: usize,
    /// Cue words per label.
    pub cues: usize,
    /// Inclusive range of filler words per utterance.
    pub fillers: (usize, usize),
    pub speakers: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            dialogs: 20,
            utterances: 4,
            vocab: 50,
            acts: 3,
            sentiments: 3,
            cues: 2,
            fillers: (2, 4),
            speakers: 2,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    fn filler_types(&self) -> usize {
        self.vocab
            .saturating_sub(self.cues * (self.acts + self.sentiments))
    }

    /// Every word type the generator can emit.
    pub fn word_types(&self) -> Vec<String> {
        let mut out = Vec::new();
        for a in 0..self.acts {
            out.extend((0..self.cues).map(|c| format!("acue{a}x{c}")));
        }
        for s in 0..self.sentiments {
            out.extend((0..self.cues).map(|c| format!("scue{s}x{c}")));
        }
        out.extend((0..self.filler_types()).map(|f| format!("w{f}")));
        out
    }
}

pub fn act_label(i: usize) -> String {
    format!("act{i}")
}

pub fn sentiment_label(i: usize) -> String {
    format!("sent{i}")
}

/// Each utterance carries one act cue, one sentiment cue and a few
/// filler words in random order; its labels are those the cues name.
pub fn generate(spec: &SyntheticSpec) -> Result<Vec<Dialog>> {
    if spec.dialogs == 0
        || spec.utterances == 0
        || spec.acts == 0
        || spec.sentiments == 0
        || spec.cues == 0
    {
        return Err(Error::Config(
            "synthetic corpus sizes must be positive".into(),
        ));
    }
    if spec.fillers.0 > spec.fillers.1 {
        return Err(Error::Config("filler range is empty".into()));
    }
    if spec.filler_types() == 0 || spec.speakers == 0 {
        return Err(Error::Config(
            "vocabulary too small for the requested cue words".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let speakers: Vec<String> = (0..spec.speakers)
        .map(|i| ((b'A' + (i % 26) as u8) as char).to_string())
        .collect();
    let mut dialogs = Vec::with_capacity(spec.dialogs);
    for d in 0..spec.dialogs {
        let mut utterances = Vec::with_capacity(spec.utterances);
        for _ in 0..spec.utterances {
            let act = rng.gen_range(0..spec.acts);
            let sent = rng.gen_range(0..spec.sentiments);
            let mut tokens = vec![
                format!("acue{act}x{}", rng.gen_range(0..spec.cues)),
                format!("scue{sent}x{}", rng.gen_range(0..spec.cues)),
            ];
            for _ in 0..rng.gen_range(spec.fillers.0..=spec.fillers.1) {
                tokens.push(format!("w{}", rng.gen_range(0..spec.filler_types())));
            }
            tokens.shuffle(&mut rng);
            utterances.push(Utterance {
                tokens,
                speaker: speakers[rng.gen_range(0..speakers.len())].clone(),
                act: act_label(act),
                sentiment: sentiment_label(sent),
            });
        }
        dialogs.push(Dialog {
            id: format!("synth{d:03}"),
            utterances,
        });
    }
    Ok(dialogs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_determinism() {
        let spec = SyntheticSpec::default();
        let a = generate(&spec).unwrap();
        assert_eq!(a.len(), 20);
        assert!(a.iter().all(|d| d.len() == 4));
        assert_eq!(a, generate(&spec).unwrap());
        assert_eq!(spec.word_types().len(), 50);
    }

    #[test]
    fn labels_follow_cues() {
        for d in generate(&SyntheticSpec::default()).unwrap() {
            for u in &d.utterances {
                let a = u.tokens.iter().find(|t| t.starts_with("acue")).unwrap();
                let s = u.tokens.iter().find(|t| t.starts_with("scue")).unwrap();
                assert_eq!(u.act, format!("act{}", &a[4..a.find('x').unwrap()]));
                assert_eq!(u.sentiment, format!("sent{}", &s[4..s.find('x').unwrap()]));
            }
        }
    }

    #[test]
    fn rejects_oversized_cue_sets() {
        let spec = SyntheticSpec {
            vocab: 12,
            ..SyntheticSpec::default()
        };
        assert!(generate(&spec).is_err());
    }
}
