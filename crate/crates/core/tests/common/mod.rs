#![allow(dead_code)]

use cogat::corpus::EncodedDialog;
use cogat::model::{AblationMode, CoGat, ModelConfig, ModelDims};
use cogat::nn::Activation;
use rand::Rng;

/// A small random configuration satisfying the width constraints.
pub fn random_config(rng: &mut impl Rng, ablation: AblationMode) -> ModelConfig {
    let heads = [1, 2, 4][rng.gen_range(0..3)];
    let unit = if heads == 1 { 2 } else { heads };
    ModelConfig {
        hidden: unit * rng.gen_range(1..=3),
        embedding: rng.gen_range(3..=8),
        heads,
        speaker_layers: rng.gen_range(1..=2),
        interaction_layers: rng.gen_range(1..=3),
        activation: if rng.gen_bool(0.5) {
            Activation::Elu
        } else {
            Activation::Relu
        },
        per_type_projection: rng.gen_bool(0.5),
        ablation,
    }
}

pub fn random_dims(rng: &mut impl Rng) -> ModelDims {
    ModelDims {
        vocab: rng.gen_range(4..=15),
        acts: rng.gen_range(2..=4),
        sentiments: rng.gen_range(2..=4),
    }
}

pub fn random_dialog(rng: &mut impl Rng, dims: ModelDims, max_utterances: usize) -> EncodedDialog {
    let n = rng.gen_range(1..=max_utterances);
    let mut names: Vec<usize> = Vec::new();
    let speakers = (0..n)
        .map(|_| {
            let raw = rng.gen_range(0..3);
            names.iter().position(|&s| s == raw).unwrap_or_else(|| {
                names.push(raw);
                names.len() - 1
            })
        })
        .collect();
    EncodedDialog {
        id: "random".into(),
        tokens: (0..n)
            .map(|_| {
                (0..rng.gen_range(1..=4))
                    .map(|_| rng.gen_range(1..dims.vocab))
                    .collect()
            })
            .collect(),
        speakers,
        acts: (0..n).map(|_| Some(rng.gen_range(0..dims.acts))).collect(),
        sentiments: (0..n)
            .map(|_| Some(rng.gen_range(0..dims.sentiments)))
            .collect(),
    }
}

pub fn random_fixture(
    rng: &mut impl Rng,
    ablation: AblationMode,
    max_utterances: usize,
) -> (CoGat, EncodedDialog) {
    let config = random_config(rng, ablation);
    let dims = random_dims(rng);
    let model = CoGat::new(config, dims, rng.gen()).expect("valid random config");
    let dialog = random_dialog(rng, dims, max_utterances);
    (model, dialog)
}

/// Brute-force scores from a full confusion matrix: rows gold, columns predicted.
pub struct ConfusionOracle {
    pub matrix: Vec<Vec<u64>>,
}

impl ConfusionOracle {
    pub fn new(gold: &[usize], pred: &[usize], n: usize) -> Self {
        let mut matrix = vec![vec![0u64; n]; n];
        for (&g, &p) in gold.iter().zip(pred) {
            matrix[g][p] += 1;
        }
        Self { matrix }
    }

    fn tp_fp_fn(&self, l: usize) -> (u64, u64, u64) {
        let n = self.matrix.len();
        let tp = self.matrix[l][l];
        let col: u64 = (0..n).map(|g| self.matrix[g][l]).sum();
        let row: u64 = self.matrix[l].iter().sum();
        (tp, col - tp, row - tp)
    }

    fn f1(&self, l: usize) -> f64 {
        let (tp, fp, fn_) = self.tp_fp_fn(l);
        let d = 2 * tp + fp + fn_;
        if d == 0 {
            0.0
        } else {
            (2 * tp) as f64 / d as f64
        }
    }

    fn active(&self) -> Vec<usize> {
        (0..self.matrix.len())
            .filter(|&l| {
                let (tp, fp, fn_) = self.tp_fp_fn(l);
                tp + fp + fn_ > 0
            })
            .collect()
    }

    pub fn macro_f1(&self) -> f64 {
        let active = self.active();
        if active.is_empty() {
            return 0.0;
        }
        active.iter().map(|&l| self.f1(l)).sum::<f64>() / active.len() as f64
    }

    pub fn weighted_f1(&self) -> f64 {
        let active = self.active();
        let support = |l: usize| self.matrix[l].iter().sum::<u64>();
        let total: u64 = active.iter().map(|&l| support(l)).sum();
        if total == 0 {
            return 0.0;
        }
        active
            .iter()
            .map(|&l| support(l) as f64 / total as f64 * self.f1(l))
            .sum()
    }
}
