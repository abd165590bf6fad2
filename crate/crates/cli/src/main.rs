use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use cogat::corpus::{encode_dialog, load_corpus, save_corpus, Split, UnknownLabels};
use cogat::diagnostics::{run_gradcheck, GradcheckDims};
use cogat::graph::{ablate, cointeractive_adjacency, speaker_adjacency, EdgeType};
use cogat::model::AblationMode;
use cogat::synthetic::{generate, SyntheticSpec};
use cogat::train::{
    evaluate, load_data, run_ablation_table, train, Checkpoint, MetricMode, TrainConfig,
};

#[derive(Parser)]
#[command(
    name = "cogat",
    version,
    about = "Joint dialog act and sentiment tagging with co-interactive graph attention"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and save the best-dev checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        ablation: Option<AblationMode>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Checkpoint directory; overrides `output_dir` from the config.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score a checkpoint on a corpus.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// A JSON-lines file, or a directory holding `<split>.jsonl`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Dialog-act aggregation; defaults to the checkpoint's setting.
        #[arg(long)]
        metric: Option<MetricMode>,
        /// Where to write the JSON report.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train and score every ablation variant under one seed.
    AblationTable {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Compare backpropagated gradients with finite differences on a fixed small model.
    Gradcheck {
        #[arg(long, default_value = "tiny")]
        dims: GradcheckDims,
        #[arg(long, default_value_t = 1e-4)]
        epsilon: f64,
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
        #[arg(long, default_value = "full")]
        ablation: AblationMode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the adjacency grids for a dialog with the given speaker sequence.
    Masks {
        /// Comma-separated speakers, e.g. `A,B,A`.
        #[arg(long, value_delimiter = ',', required = true)]
        speakers: Vec<String>,
        #[arg(long, default_value = "full")]
        ablation: AblationMode,
    },
    /// Write a generated corpus with cue-word labels.
    Synth {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 20)]
        dialogs: usize,
        #[arg(long, default_value_t = 4)]
        utterances: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn cmd_train(
    config: &Path,
    seed: Option<u64>,
    ablation: Option<AblationMode>,
    epochs: Option<usize>,
    output: Option<PathBuf>,
) -> Result<()> {
    let mut cfg =
        TrainConfig::load(config).with_context(|| format!("reading {}", config.display()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(a) = ablation {
        cfg.ablation = a;
    }
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    let out_dir = output
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("checkpoint"));
    cfg.validate()?;
    let data = load_data(&cfg)?;
    println!(
        "train {} dialogs, dev {} dialogs ({}), vocab {}, {} acts, {} sentiments, mode {}",
        data.train.len(),
        data.dev.len(),
        data.dev_protocol,
        data.vocab.len(),
        data.acts.len(),
        data.sentiments.len(),
        cfg.ablation
    );
    let outcome = train(&cfg, &data, |r| {
        println!(
            "epoch {:>4}  loss {:>10.4}  dev act F1 {:.4}  dev sentiment F1 {:.4}  score {:.4}",
            r.epoch, r.train_loss, r.dev_act_f1, r.dev_sentiment_f1, r.dev_score
        );
    })?;
    outcome.checkpoint.save(&out_dir)?;
    write_json(&out_dir.join("training_log.json"), &outcome.log)?;
    let best = outcome
        .checkpoint
        .best_dev
        .as_ref()
        .expect("best epoch recorded");
    println!(
        "best dev score {:.4} at epoch {}; saved {}",
        best.dev_score,
        best.epoch,
        out_dir.display()
    );
    print!("{}", outcome.best_dev.to_table());
    if let Some(test) = &data.test {
        let report = evaluate(
            &outcome.checkpoint.model,
            test,
            &data.acts,
            &data.sentiments,
            cfg.metric,
            &cfg.sentiment_excluded_labels,
        )?;
        println!("test:");
        print!("{}", report.to_table());
        write_json(&out_dir.join("test_report.json"), &report)?;
    }
    Ok(())
}

fn cmd_eval(
    checkpoint: &Path,
    data: &Path,
    split: Split,
    metric: Option<MetricMode>,
    report: Option<PathBuf>,
) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let dialogs = load_corpus(data, split)?;
    let encoded = dialogs
        .iter()
        .map(|d| encode_dialog(d, &ck.vocab, &ck.acts, &ck.sentiments, UnknownLabels::Keep))
        .collect::<cogat::Result<Vec<_>>>()?;
    let mode = metric.unwrap_or(ck.config.metric);
    let r = evaluate(
        &ck.model,
        &encoded,
        &ck.acts,
        &ck.sentiments,
        mode,
        &ck.config.sentiment_excluded_labels,
    )?;
    println!("{} dialogs, {} utterances", r.dialogs, r.utterances);
    print!("{}", r.to_table());
    let path = report.unwrap_or_else(|| PathBuf::from("eval_report.json"));
    write_json(&path, &r)?;
    println!("report written to {}", path.display());
    Ok(())
}

fn cmd_ablation(config: &Path, report: Option<PathBuf>) -> Result<()> {
    let cfg = TrainConfig::load(config).with_context(|| format!("reading {}", config.display()))?;
    cfg.validate()?;
    let data = load_data(&cfg)?;
    let table = run_ablation_table(&cfg, &data)?;
    print!("{}", table.render());
    if let Some(p) = report {
        write_json(&p, &table)?;
    }
    Ok(())
}

fn cmd_gradcheck(
    dims: GradcheckDims,
    epsilon: f64,
    tolerance: f64,
    ablation: AblationMode,
    seed: u64,
) -> Result<bool> {
    let start = std::time::Instant::now();
    let report = run_gradcheck(dims, ablation, seed, epsilon)?;
    for p in &report.params {
        println!(
            "{:<40} {:>6} {:>12.3e}",
            p.name, p.components, p.max_rel_error
        );
    }
    let worst = report.max_rel_error();
    let pass = worst < tolerance;
    println!(
        "{} gradcheck dims={dims} eps={epsilon:e}: {} parameters, {} components, max relative error {worst:.3e} (tolerance {tolerance:e}), {:.2?}",
        if pass { "PASS" } else { "FAIL" },
        report.params.len(),
        report.components(),
        start.elapsed()
    );
    Ok(pass)
}

fn cmd_masks(speakers: &[String], ablation: AblationMode) -> Result<()> {
    let n = speakers.len();
    if n == 0 {
        bail!("need at least one speaker");
    }
    let speaker = speaker_adjacency(speakers);
    println!("same_speaker ({n}x{n}):");
    print!(
        "{}",
        speaker
            .mask(EdgeType::SameSpeaker)
            .expect("speaker mask")
            .to_grid()
    );
    let full = cointeractive_adjacency(n)?;
    let adj = match ablation {
        AblationMode::NoCrossTask => ablate(&full, &[EdgeType::CrossTask])?,
        AblationMode::NoCrossUtterance => ablate(&full, &[EdgeType::SameTask])?,
        _ => full,
    };
    for (t, m) in adj.masks() {
        println!("{t} ({0}x{0}):", 2 * n);
        print!("{}", m.to_grid());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train {
            config,
            seed,
            ablation,
            epochs,
            output,
        } => cmd_train(&config, seed, ablation, epochs, output)?,
        Command::Eval {
            checkpoint,
            data,
            split,
            metric,
            report,
        } => cmd_eval(&checkpoint, &data, split, metric, report)?,
        Command::AblationTable { config, report } => cmd_ablation(&config, report)?,
        Command::Gradcheck {
            dims,
            epsilon,
            tolerance,
            ablation,
            seed,
        } => return cmd_gradcheck(dims, epsilon, tolerance, ablation, seed),
        Command::Masks { speakers, ablation } => cmd_masks(&speakers, ablation)?,
        Command::Synth {
            output,
            dialogs,
            utterances,
            seed,
        } => {
            let spec = SyntheticSpec {
                dialogs,
                utterances,
                seed,
                ..SyntheticSpec::default()
            };
            save_corpus(&output, &generate(&spec)?)?;
            println!("wrote {dialogs} dialogs to {}", output.display());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
