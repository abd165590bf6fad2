//! Fixed small models for gradient verification.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{finite_difference_check, GradCheckReport};
use crate::corpus::EncodedDialog;
use crate::error::{Error, Result};
use crate::model::{AblationMode, CoGat, ModelConfig, ModelDims};
use crate::nn::Activation;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradcheckDims {
    /// 2 utterances, 2 speakers, vocab 8, d=4, d_emb=6, K=2, m=1, L=2, 2+2 labels.
    Tiny,
    /// 3 utterances, 2 speakers, vocab 12, d=8, d_emb=8, K=2, m=2, L=2, 3+3 labels.
    Small,
}

impl FromStr for GradcheckDims {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(GradcheckDims::Tiny),
            "small" => Ok(GradcheckDims::Small),
            _ => Err(Error::Config(format!("unknown gradcheck dims {s:?}"))),
        }
    }
}

impl fmt::Display for GradcheckDims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GradcheckDims::Tiny => "tiny",
            GradcheckDims::Small => "small",
        })
    }
}

/// A model and a labeled dialog of the requested size.
pub fn gradcheck_fixture(
    dims: GradcheckDims,
    ablation: AblationMode,
    seed: u64,
) -> Result<(CoGat, EncodedDialog)> {
    let (config, model_dims, dialog) = match dims {
        GradcheckDims::Tiny => (
            ModelConfig {
                hidden: 4,
                embedding: 6,
                heads: 2,
                speaker_layers: 1,
                interaction_layers: 2,
                activation: Activation::Elu,
                per_type_projection: false,
                ablation,
            },
            ModelDims {
                vocab: 8,
                acts: 2,
                sentiments: 2,
            },
            EncodedDialog {
                id: "tiny".into(),
                tokens: vec![vec![2, 5, 1], vec![7, 3]],
                speakers: vec![0, 1],
                acts: vec![Some(0), Some(1)],
                sentiments: vec![Some(1), Some(1)],
            },
        ),
        GradcheckDims::Small => (
            ModelConfig {
                hidden: 8,
                embedding: 8,
                heads: 2,
                speaker_layers: 2,
                interaction_layers: 2,
                activation: Activation::Elu,
                per_type_projection: false,
                ablation,
            },
            ModelDims {
                vocab: 12,
                acts: 3,
                sentiments: 3,
            },
            EncodedDialog {
                id: "small".into(),
                tokens: vec![vec![2, 9, 4, 11], vec![5, 1], vec![3, 10, 6]],
                speakers: vec![0, 1, 0],
                acts: vec![Some(2), Some(0), Some(1)],
                sentiments: vec![Some(0), Some(2), Some(0)],
            },
        ),
    };
    Ok((CoGat::new(config, model_dims, seed)?, dialog))
}

/// Finite-difference check of the joint loss over every parameter.
pub fn run_gradcheck(
    dims: GradcheckDims,
    ablation: AblationMode,
    seed: u64,
    epsilon: f64,
) -> Result<GradCheckReport> {
    let (model, dialog) = gradcheck_fixture(dims, ablation, seed)?;
    finite_difference_check(model.params(), epsilon, |tape, bound| {
        model.dialog_loss(tape, bound, &dialog)
    })
}
