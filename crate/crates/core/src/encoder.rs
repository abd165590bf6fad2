//! Hierarchical speaker-aware encoder: word embeddings, an utterance BiLSTM,
//! a stacked GAT over same-speaker edges, and two task-specific BiLSTMs that
//! produce the initial act and sentiment states.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::corpus::PAD;
use crate::error::{Error, Result};
use crate::graph::{speaker_adjacency, EdgeType};
use crate::nn::{Activation, BiLstm, GatLayer};
use crate::params::{uniform, ModelParams, ParamId};

#[derive(Debug, Clone)]
pub struct Encoder {
    pub embedding: ParamId,
    pub utterance: BiLstm,
    pub speaker_layers: Vec<GatLayer>,
    pub act: BiLstm,
    pub sentiment: BiLstm,
}

/// All tensors are `N×d`.
#[derive(Debug, Clone)]
pub struct DialogEncoding {
    /// Utterance vectors from the BiLSTM.
    pub e: Var,
    /// Speaker-aware utterance vectors.
    pub e_m: Var,
    pub d0: Var,
    pub s0: Var,
    /// Per speaker layer, one attention matrix per head.
    pub attention: Vec<Vec<Var>>,
}

impl Encoder {
    pub fn init(
        params: &mut ModelParams,
        vocab: usize,
        embedding_dim: usize,
        hidden: usize,
        heads: usize,
        speaker_layers: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut table = uniform(rng, &[vocab, embedding_dim], 0.1);
        table.values_mut()[PAD * embedding_dim..(PAD + 1) * embedding_dim].fill(0.0);
        let embedding = params.insert_with_frozen_row("encoder.embedding", table, Some(PAD));
        let utterance = BiLstm::init(params, "encoder.utterance", embedding_dim, hidden, rng);
        let speaker_layers = (0..speaker_layers)
            .map(|l| {
                GatLayer::init(
                    params,
                    &format!("encoder.speaker{l}"),
                    hidden,
                    hidden / heads,
                    heads,
                    false,
                    rng,
                )
            })
            .collect();
        let act = BiLstm::init(params, "encoder.act", hidden, hidden, rng);
        let sentiment = BiLstm::init(params, "encoder.sentiment", hidden, hidden, rng);
        Self {
            embedding,
            utterance,
            speaker_layers,
            act,
            sentiment,
        }
    }

    /// `n×d_emb` rows for a token-index sequence; the pad row is fixed at zero.
    pub fn embed(&self, tape: &mut Tape, bound: &[Var], tokens: &[usize]) -> Result<Var> {
        tape.embedding(bound[self.embedding.index()], tokens, Some(PAD))
    }

    /// Per-position states `H` (`n×d`) and the utterance vector `e_t = H[n−1]`.
    pub fn encode_utterance(&self, tape: &mut Tape, bound: &[Var], emb: Var) -> Result<(Var, Var)> {
        let h = self.utterance.run(tape, bound, emb)?;
        let n = tape.shape(h)[0];
        let last = tape.row(h, n - 1)?;
        Ok((h, last))
    }

    /// Stacked same-speaker GAT with a residual connection around every layer.
    pub fn speaker_encode(
        &self,
        tape: &mut Tape,
        bound: &[Var],
        e: Var,
        speakers: &[usize],
        activation: Activation,
    ) -> Result<(Var, Vec<Vec<Var>>)> {
        if self.speaker_layers.is_empty() {
            return Err(Error::Config(
                "speaker encoder needs at least one layer".into(),
            ));
        }
        let adj = speaker_adjacency(speakers);
        let mask = adj.mask(EdgeType::SameSpeaker).expect("speaker mask");
        let mut h = e;
        let mut attention = Vec::with_capacity(self.speaker_layers.len());
        for layer in &self.speaker_layers {
            let out = layer.forward(tape, bound, h, mask, None, false, activation)?;
            h = tape.add(h, out.output)?;
            attention.push(out.attention);
        }
        Ok((h, attention))
    }

    /// Separate act and sentiment BiLSTMs over the utterance sequence.
    pub fn task_init(&self, tape: &mut Tape, bound: &[Var], e_m: Var) -> Result<(Var, Var)> {
        let d0 = self.act.run(tape, bound, e_m)?;
        let s0 = self.sentiment.run(tape, bound, e_m)?;
        Ok((d0, s0))
    }

    /// Runs the whole encoder. With `use_speaker = false` the speaker GAT is
    /// skipped and `E_m = E`.
    pub fn encode(
        &self,
        tape: &mut Tape,
        bound: &[Var],
        tokens: &[Vec<usize>],
        speakers: &[usize],
        use_speaker: bool,
        activation: Activation,
    ) -> Result<DialogEncoding> {
        if tokens.is_empty() || tokens.len() != speakers.len() {
            return Err(Error::Config(format!(
                "dialog with {} utterances and {} speakers",
                tokens.len(),
                speakers.len()
            )));
        }
        let mut rows = Vec::with_capacity(tokens.len());
        for utt in tokens {
            let emb = self.embed(tape, bound, utt)?;
            rows.push(self.encode_utterance(tape, bound, emb)?.1);
        }
        let e = tape.concat(&rows, 0)?;
        let (e_m, attention) = if use_speaker {
            self.speaker_encode(tape, bound, e, speakers, activation)?
        } else {
            (e, Vec::new())
        };
        let (d0, s0) = self.task_init(tape, bound, e_m)?;
        Ok(DialogEncoding {
            e,
            e_m,
            d0,
            s0,
            attention,
        })
    }
}
