//! The full network: encoder, co-interactive stack and decoders, with the
//! ablation variants wired in.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::cointeractive::{init_stack, joint_loss, single_task_stack, stack, Decoder};
use crate::corpus::EncodedDialog;
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::graph::{ablate, cointeractive_adjacency, EdgeType};
use crate::nn::{Activation, GatLayer};
use crate::params::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    #[default]
    Full,
    NoCrossTask,
    NoCrossUtterance,
    #[serde(alias = "separate_modeling")]
    Separate,
    NoSpeaker,
}

impl AblationMode {
    pub const ALL: [AblationMode; 5] = [
        AblationMode::Full,
        AblationMode::NoCrossTask,
        AblationMode::NoCrossUtterance,
        AblationMode::Separate,
        AblationMode::NoSpeaker,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::NoCrossTask => "no_cross_task",
            AblationMode::NoCrossUtterance => "no_cross_utterance",
            AblationMode::Separate => "separate",
            AblationMode::NoSpeaker => "no_speaker",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            AblationMode::Full => "full model",
            AblationMode::NoCrossTask => "without cross-tasks connection",
            AblationMode::NoCrossUtterance => "without cross-utterances connection",
            AblationMode::Separate => "separate modeling",
            AblationMode::NoSpeaker => "without speaker information",
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.replace('-', "_");
        if s == "separate_modeling" {
            return Ok(AblationMode::Separate);
        }
        AblationMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation mode {s:?}")))
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: usize,
    pub embedding: usize,
    pub heads: usize,
    pub speaker_layers: usize,
    pub interaction_layers: usize,
    pub activation: Activation,
    pub per_type_projection: bool,
    pub ablation: AblationMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            embedding: 128,
            heads: 4,
            speaker_layers: 2,
            interaction_layers: 2,
            activation: Activation::Elu,
            per_type_projection: false,
            ablation: AblationMode::Full,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.hidden == 0 || self.embedding == 0 || self.heads == 0 {
            return fail("hidden, embedding and heads must be positive".into());
        }
        if self.hidden % 2 != 0 {
            return fail(format!("hidden size {} must be even", self.hidden));
        }
        if self.hidden % self.heads != 0 {
            return fail(format!(
                "hidden size {} not divisible by {} heads",
                self.hidden, self.heads
            ));
        }
        if self.speaker_layers == 0 || self.interaction_layers == 0 {
            return fail("layer counts must be at least 1".into());
        }
        Ok(())
    }
}

/// Sizes that come from the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub vocab: usize,
    pub acts: usize,
    pub sentiments: usize,
}

#[derive(Debug, Clone)]
pub struct CoGat {
    config: ModelConfig,
    dims: ModelDims,
    params: ModelParams,
    encoder: Encoder,
    interaction: Vec<GatLayer>,
    /// Sentiment-side stack for separate modeling.
    separate: Option<Vec<GatLayer>>,
    decoder: Decoder,
}

/// Tape handles for one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub e: Var,
    pub e_m: Var,
    pub d0: Var,
    pub s0: Var,
    /// Pre-decoder act and sentiment node states.
    pub d_l: Var,
    pub s_l: Var,
    pub act_logits: Var,
    pub sent_logits: Var,
    pub act_probs: Var,
    pub sent_probs: Var,
    /// Every attention matrix, labeled by where it came from.
    pub attention: Vec<(String, Var)>,
}

/// Tape handles from the stack onwards, given initial task states.
#[derive(Debug, Clone)]
pub struct Interaction {
    pub d_l: Var,
    pub s_l: Var,
    pub act_logits: Var,
    pub sent_logits: Var,
    pub act_probs: Var,
    pub sent_probs: Var,
    pub attention: Vec<(String, Var)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub acts: Vec<usize>,
    pub sentiments: Vec<usize>,
    pub act_probs: Tensor,
    pub sent_probs: Tensor,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl CoGat {
    pub fn new(config: ModelConfig, dims: ModelDims, seed: u64) -> Result<Self> {
        config.validate()?;
        if dims.vocab < 2 || dims.acts == 0 || dims.sentiments == 0 {
            return Err(Error::Config(format!("invalid data dimensions {dims:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::new();
        let c = &config;
        let encoder = Encoder::init(
            &mut params,
            dims.vocab,
            c.embedding,
            c.hidden,
            c.heads,
            c.speaker_layers,
            &mut rng,
        );
        let interaction = init_stack(
            &mut params,
            "interaction",
            c.hidden,
            c.heads,
            c.interaction_layers,
            c.per_type_projection,
            &mut rng,
        );
        let separate = (c.ablation == AblationMode::Separate).then(|| {
            init_stack(
                &mut params,
                "separate",
                c.hidden,
                c.heads,
                c.interaction_layers,
                false,
                &mut rng,
            )
        });
        let decoder = Decoder::init(&mut params, c.hidden, dims.acts, dims.sentiments, &mut rng);
        Ok(Self {
            config,
            dims,
            params,
            encoder,
            interaction,
            separate,
            decoder,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn interaction_layers(&self) -> &[GatLayer] {
        &self.interaction
    }

    pub fn separate_layers(&self) -> Option<&[GatLayer]> {
        self.separate.as_deref()
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    /// Replaces parameter values (e.g. from a checkpoint). Names and shapes must match.
    pub fn load_params(&mut self, params: ModelParams) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        for (mine, theirs) in self.params.iter().zip(params.iter()) {
            if mine.name != theirs.name || mine.tensor.shape() != theirs.tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter mismatch: {} {:?} vs {} {:?}",
                    mine.name,
                    mine.tensor.shape(),
                    theirs.name,
                    theirs.tensor.shape()
                )));
            }
        }
        for (mine, theirs) in self.params.iter_mut().zip(params.iter()) {
            mine.tensor
                .values_mut()
                .copy_from_slice(theirs.tensor.values());
        }
        Ok(())
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &[Var],
        dialog: &EncodedDialog,
    ) -> Result<Forward> {
        let use_speaker = self.config.ablation != AblationMode::NoSpeaker;
        let enc = self.encoder.encode(
            tape,
            bound,
            &dialog.tokens,
            &dialog.speakers,
            use_speaker,
            self.config.activation,
        )?;
        let inter = self.interact(tape, bound, enc.d0, enc.s0)?;
        let mut attention: Vec<(String, Var)> = enc
            .attention
            .iter()
            .enumerate()
            .flat_map(|(l, heads)| {
                heads
                    .iter()
                    .enumerate()
                    .map(move |(k, &v)| (format!("speaker{l}.head{k}"), v))
            })
            .collect();
        attention.extend(inter.attention);
        Ok(Forward {
            e: enc.e,
            e_m: enc.e_m,
            d0: enc.d0,
            s0: enc.s0,
            d_l: inter.d_l,
            s_l: inter.s_l,
            act_logits: inter.act_logits,
            sent_logits: inter.sent_logits,
            act_probs: inter.act_probs,
            sent_probs: inter.sent_probs,
            attention,
        })
    }

    /// Interaction stack and decoders on given `N×d` initial act and sentiment states.
    pub fn interact(
        &self,
        tape: &mut Tape,
        bound: &[Var],
        d0: Var,
        s0: Var,
    ) -> Result<Interaction> {
        let n = tape.shape(d0)[0];
        let act = self.config.activation;
        let label = |prefix: &'static str| {
            move |(l, heads): (usize, Vec<Var>)| {
                heads
                    .into_iter()
                    .enumerate()
                    .map(move |(k, v)| (format!("{prefix}{l}.head{k}"), v))
            }
        };
        let (d_l, s_l, dec_d, dec_s, attention) = match self.config.ablation {
            AblationMode::Separate => {
                let sep = self.separate.as_ref().expect("separate stack initialized");
                let (d_l, att_d) = single_task_stack(tape, bound, d0, &self.interaction, act)?;
                let (s_l, att_s) = single_task_stack(tape, bound, s0, sep, act)?;
                let sum = tape.add(d_l, s_l)?;
                let attention = att_d
                    .into_iter()
                    .enumerate()
                    .flat_map(label("act_stack"))
                    .chain(
                        att_s
                            .into_iter()
                            .enumerate()
                            .flat_map(label("sentiment_stack")),
                    )
                    .collect();
                (d_l, s_l, sum, sum, attention)
            }
            mode => {
                let full = cointeractive_adjacency(n)?;
                let adj = match mode {
                    AblationMode::NoCrossTask => ablate(&full, &[EdgeType::CrossTask])?,
                    AblationMode::NoCrossUtterance => ablate(&full, &[EdgeType::SameTask])?,
                    _ => full,
                };
                let out = stack(tape, bound, d0, s0, &adj, &self.interaction, act)?;
                let attention = out
                    .attention
                    .into_iter()
                    .enumerate()
                    .flat_map(label("interaction"))
                    .collect();
                (
                    out.acts,
                    out.sentiments,
                    out.acts,
                    out.sentiments,
                    attention,
                )
            }
        };
        let dec = self.decoder.decode(tape, bound, dec_d, dec_s)?;
        Ok(Interaction {
            d_l,
            s_l,
            act_logits: dec.act_logits,
            sent_logits: dec.sent_logits,
            act_probs: dec.act_probs,
            sent_probs: dec.sent_probs,
            attention,
        })
    }

    /// Joint loss of a forward pass against gold indices.
    pub fn loss(
        &self,
        tape: &mut Tape,
        fwd: &Forward,
        gold_acts: &[usize],
        gold_sents: &[usize],
    ) -> Result<Var> {
        joint_loss(tape, fwd.act_probs, fwd.sent_probs, gold_acts, gold_sents)
    }

    /// Joint loss of a dialog, recorded on a fresh tape with every parameter bound.
    pub fn dialog_loss(
        &self,
        tape: &mut Tape,
        bound: &[Var],
        dialog: &EncodedDialog,
    ) -> Result<Var> {
        let (acts, sents) = dialog.gold().ok_or_else(|| {
            Error::Label(format!(
                "dialog {:?} has labels outside the label sets",
                dialog.id
            ))
        })?;
        let fwd = self.forward(tape, bound, dialog)?;
        self.loss(tape, &fwd, &acts, &sents)
    }

    pub fn predict(&self, dialog: &EncodedDialog) -> Result<Prediction> {
        let mut tape = Tape::new();
        let bound: Vec<Var> = self
            .params
            .iter()
            .map(|p| tape.constant(&p.tensor))
            .collect();
        let fwd = self.forward(&mut tape, &bound, dialog)?;
        let act_probs = tape.tensor(fwd.act_probs);
        let sent_probs = tape.tensor(fwd.sent_probs);
        let n = dialog.len();
        Ok(Prediction {
            acts: (0..n).map(|i| argmax(act_probs.row(i))).collect(),
            sentiments: (0..n).map(|i| argmax(sent_probs.row(i))).collect(),
            act_probs,
            sent_probs,
        })
    }
}
