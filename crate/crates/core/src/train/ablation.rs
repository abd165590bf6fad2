use std::thread;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::AblationMode;
use crate::train::config::TrainConfig;
use crate::train::metrics::{EvalReport, TaskReport};
use crate::train::trainer::{evaluate, train, PreparedData};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: AblationMode,
    pub best_epoch: usize,
    pub dev: EvalReport,
    pub test: Option<EvalReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

/// Trains every mode from the same seed and data, one thread per mode.
pub fn run_ablation_table(config: &TrainConfig, data: &PreparedData) -> Result<AblationTable> {
    let results: Vec<Result<AblationRow>> = thread::scope(|s| {
        let handles: Vec<_> = AblationMode::ALL
            .into_iter()
            .map(|mode| {
                let cfg = TrainConfig {
                    ablation: mode,
                    ..config.clone()
                };
                s.spawn(move || -> Result<AblationRow> {
                    let out = train(&cfg, data, |_| {})?;
                    let model = &out.checkpoint.model;
                    let test = data
                        .test
                        .as_ref()
                        .map(|t| {
                            evaluate(
                                model,
                                t,
                                &data.acts,
                                &data.sentiments,
                                cfg.metric,
                                &cfg.sentiment_excluded_labels,
                            )
                        })
                        .transpose()?;
                    Ok(AblationRow {
                        mode,
                        best_epoch: out.checkpoint.best_dev.as_ref().map_or(0, |r| r.epoch),
                        dev: out.best_dev,
                        test,
                    })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("ablation worker panicked"))
            .collect()
    });
    Ok(AblationTable {
        rows: results.into_iter().collect::<Result<_>>()?,
    })
}

impl AblationTable {
    pub fn row(&self, mode: AblationMode) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.mode == mode)
    }

    /// Aligned text table; test scores when available, dev otherwise.
    pub fn render(&self) -> String {
        let prf = |t: &TaskReport| {
            format!(
                "{:>6.1} {:>6.1} {:>6.1}",
                100.0 * t.aggregate.precision,
                100.0 * t.aggregate.recall,
                100.0 * t.aggregate.f1
            )
        };
        let split = if self.rows.iter().all(|r| r.test.is_some()) {
            "test"
        } else {
            "dev"
        };
        let mut s = format!(
            "{:<38} {:>20}   {:>20}\n{:<38} {:>6} {:>6} {:>6}   {:>6} {:>6} {:>6}\n",
            format!("model ({split})"),
            "sentiment",
            "dialog act",
            "",
            "P",
            "R",
            "F1",
            "P",
            "R",
            "F1"
        );
        for r in &self.rows {
            let rep = r.test.as_ref().unwrap_or(&r.dev);
            s += &format!(
                "{:<38} {}   {}\n",
                r.mode.description(),
                prf(&rep.sentiment),
                prf(&rep.act)
            );
        }
        s
    }
}
