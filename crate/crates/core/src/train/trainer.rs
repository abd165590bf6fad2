use std::thread;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::corpus::{
    build_label_sets, build_vocab, encode_dialog, load_corpus, Dialog, EncodedDialog, LabelSet,
    Split, UnknownLabels, Vocab,
};
use crate::error::{Error, Result};
use crate::model::{CoGat, ModelDims};
use crate::train::adam::{Adam, AdamConfig};
use crate::train::checkpoint::Checkpoint;
use crate::train::config::TrainConfig;
use crate::train::metrics::{EvalReport, MetricMode, TaskCounts};

// Separate RNG streams derived from the run seed.
const SPLIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Encoded train/dev/test data with the inventories built from training.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub vocab: Vocab,
    pub acts: LabelSet,
    pub sentiments: LabelSet,
    pub train: Vec<EncodedDialog>,
    pub dev: Vec<EncodedDialog>,
    pub test: Option<Vec<EncodedDialog>>,
    pub dev_protocol: String,
}

impl PreparedData {
    pub fn dims(&self) -> ModelDims {
        ModelDims {
            vocab: self.vocab.len(),
            acts: self.acts.len(),
            sentiments: self.sentiments.len(),
        }
    }
}

/// Splits `dialogs` into train and dev with a seeded shuffle; both keep file order.
pub fn split_train_dev(
    dialogs: Vec<Dialog>,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<Dialog>, Vec<Dialog>)> {
    let n = dialogs.len();
    if n < 2 {
        return Err(Error::Config(
            "need at least two dialogs to carve out a dev set".into(),
        ));
    }
    let keep = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, SPLIT_STREAM));
    let mut is_train = vec![false; n];
    order[..keep].iter().for_each(|&i| is_train[i] = true);
    let (mut train, mut dev) = (Vec::new(), Vec::new());
    for (d, t) in dialogs.into_iter().zip(is_train) {
        if t {
            train.push(d);
        } else {
            dev.push(d);
        }
    }
    Ok((train, dev))
}

pub fn prepare(
    config: &TrainConfig,
    train: Vec<Dialog>,
    dev: Option<Vec<Dialog>>,
    test: Option<Vec<Dialog>>,
) -> Result<PreparedData> {
    let (train, dev, dev_protocol) = match dev {
        Some(dev) => (train, dev, "dev file".to_string()),
        None => {
            let (t, d) = split_train_dev(train, config.train_fraction, config.seed)?;
            let protocol = format!(
                "seeded split of training data: train_fraction={} seed={}",
                config.train_fraction, config.seed
            );
            (t, d, protocol)
        }
    };
    if train.is_empty() || dev.is_empty() {
        return Err(Error::Config(
            "training and dev sets must be non-empty".into(),
        ));
    }
    let vocab = build_vocab(&train, config.min_freq);
    let (acts, sentiments) = build_label_sets(&train);
    let enc = |ds: &[Dialog], policy| -> Result<Vec<EncodedDialog>> {
        ds.iter()
            .map(|d| encode_dialog(d, &vocab, &acts, &sentiments, policy))
            .collect()
    };
    let train_enc = enc(&train, UnknownLabels::Reject)?;
    let dev_enc = enc(&dev, UnknownLabels::Keep)?;
    let test_enc = test.map(|t| enc(&t, UnknownLabels::Keep)).transpose()?;
    Ok(PreparedData {
        train: train_enc,
        dev: dev_enc,
        test: test_enc,
        vocab,
        acts,
        sentiments,
        dev_protocol,
    })
}

/// Reads the corpora named in the config and prepares them.
pub fn load_data(config: &TrainConfig) -> Result<PreparedData> {
    let train_path = config
        .train_path
        .as_ref()
        .ok_or_else(|| Error::Config("train_path is required".into()))?;
    let train = load_corpus(train_path, Split::Train)?;
    let dev = config
        .dev_path
        .as_ref()
        .map(|p| load_corpus(p, Split::Dev))
        .transpose()?;
    let test = config
        .test_path
        .as_ref()
        .map(|p| load_corpus(p, Split::Test))
        .transpose()?;
    let mut data = prepare(config, train, dev, test)?;
    if let Some(p) = &config.dev_path {
        data.dev_protocol = format!("dev file {}", p.display());
    }
    Ok(data)
}

fn label_indices(set: &LabelSet, names: &[String]) -> Vec<usize> {
    names.iter().filter_map(|n| set.get(n)).collect()
}

/// Scores a model on encoded dialogs. Dialogs are spread over worker threads;
/// the integer counts merge to the same totals in any order.
pub fn evaluate(
    model: &CoGat,
    dialogs: &[EncodedDialog],
    acts: &LabelSet,
    sentiments: &LabelSet,
    act_mode: MetricMode,
    sentiment_excluded: &[String],
) -> Result<EvalReport> {
    if dialogs.is_empty() {
        return Err(Error::Config("cannot evaluate an empty corpus".into()));
    }
    let workers = thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(dialogs.len());
    let chunk = dialogs.len().div_ceil(workers);
    let partials: Vec<Result<(TaskCounts, TaskCounts)>> = thread::scope(|s| {
        let handles: Vec<_> = dialogs
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    let mut a = TaskCounts::new(acts.len());
                    let mut t = TaskCounts::new(sentiments.len());
                    for d in part {
                        let p = model.predict(d)?;
                        for i in 0..d.len() {
                            a.record(d.acts[i], p.acts[i]);
                            t.record(d.sentiments[i], p.sentiments[i]);
                        }
                    }
                    Ok((a, t))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation worker panicked"))
            .collect()
    });
    let mut act_counts = TaskCounts::new(acts.len());
    let mut sent_counts = TaskCounts::new(sentiments.len());
    for p in partials {
        let (a, t) = p?;
        act_counts.merge(&a);
        sent_counts.merge(&t);
    }
    Ok(EvalReport {
        dialogs: dialogs.len(),
        utterances: dialogs.iter().map(EncodedDialog::len).sum(),
        act: act_counts.report(acts.labels(), act_mode, &[]),
        sentiment: sent_counts.report(
            sentiments.labels(),
            MetricMode::Macro,
            &label_indices(sentiments, sentiment_excluded),
        ),
    })
}

/// One optimization step per dialog, Adam on the joint loss plus L2.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    model: CoGat,
    adam: Adam,
    rng: ChaCha8Rng,
    epoch: usize,
}

impl Trainer {
    pub fn new(config: &TrainConfig, dims: ModelDims) -> Result<Self> {
        config.validate()?;
        let model = CoGat::new(config.model_config(), dims, config.seed)?;
        let adam = Adam::new(
            model.params(),
            AdamConfig {
                lr: config.learning_rate,
                beta1: config.beta1,
                beta2: config.beta2,
                eps: config.adam_eps,
            },
        );
        Ok(Self {
            config: config.clone(),
            model,
            adam,
            rng: stream_rng(config.seed, SHUFFLE_STREAM),
            epoch: 0,
        })
    }

    pub fn model(&self) -> &CoGat {
        &self.model
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Updates on one dialog and returns its joint loss before the update.
    pub fn step(&mut self, dialog: &EncodedDialog, step: usize) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = self.model.params().bind(&mut tape);
        let joint = self.model.dialog_loss(&mut tape, &bound, dialog)?;
        let loss_value = tape.value(joint)[0];
        let total = match self
            .model
            .params()
            .l2_penalty(&mut tape, &bound, self.config.l2)
        {
            Some(pen) if self.config.l2 > 0.0 => tape.add(joint, pen)?,
            _ => joint,
        };
        let total_value = tape.value(total)[0];
        if !total_value.is_finite() {
            return Err(Error::Divergence {
                epoch: self.epoch + 1,
                step,
                loss: total_value,
            });
        }
        tape.backward(total)?;
        let params = self.model.params_mut();
        params.zero_grad();
        params.accumulate_grads(&tape, &bound);
        let clip = self.config.clip_norm;
        if clip > 0.0 {
            let norm = params.grad_norm();
            if norm > clip {
                let s = clip / norm;
                params
                    .iter_mut()
                    .for_each(|p| p.tensor.grad_mut().iter_mut().for_each(|g| *g *= s));
            }
        }
        self.adam.step(params);
        Ok(loss_value)
    }

    /// One shuffled pass; returns the mean per-dialog joint loss.
    pub fn train_epoch(&mut self, data: &[EncodedDialog]) -> Result<f64> {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        for (step, &i) in order.iter().enumerate() {
            total += self.step(&data[i], step + 1)?;
        }
        self.epoch += 1;
        Ok(total / data.len().max(1) as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_score: f64,
    pub dev_act_f1: f64,
    pub dev_sentiment_f1: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Snapshot from the epoch with the best dev score.
    pub checkpoint: Checkpoint,
    pub best_dev: EvalReport,
    pub log: Vec<EpochRecord>,
}

pub fn train(
    config: &TrainConfig,
    data: &PreparedData,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config, data.dims())?;
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(EpochRecord, EvalReport, CoGat)> = None;
    for _ in 0..config.epochs {
        let train_loss = trainer.train_epoch(&data.train)?;
        let report = evaluate(
            trainer.model(),
            &data.dev,
            &data.acts,
            &data.sentiments,
            config.metric,
            &config.sentiment_excluded_labels,
        )?;
        let record = EpochRecord {
            epoch: trainer.epoch(),
            train_loss,
            dev_score: report.score(),
            dev_act_f1: report.act.aggregate.f1,
            dev_sentiment_f1: report.sentiment.aggregate.f1,
        };
        on_epoch(&record);
        if best
            .as_ref()
            .is_none_or(|(b, _, _)| record.dev_score > b.dev_score)
        {
            best = Some((record.clone(), report, trainer.model().clone()));
        }
        log.push(record);
    }
    let (record, best_dev, model) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            config: config.clone(),
            model,
            vocab: data.vocab.clone(),
            acts: data.acts.clone(),
            sentiments: data.sentiments.clone(),
            dev_protocol: data.dev_protocol.clone(),
            best_dev: Some(record),
        },
        best_dev,
        log,
    })
}
