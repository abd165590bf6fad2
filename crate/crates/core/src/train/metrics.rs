use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricMode {
    /// Unweighted mean over labels.
    #[default]
    Macro,
    /// Mean of per-label scores weighted by gold frequency.
    #[serde(alias = "prevalence_weighted")]
    Weighted,
}

impl MetricMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricMode::Macro => "macro",
            MetricMode::Weighted => "weighted",
        }
    }
}

impl fmt::Display for MetricMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "macro" => Ok(MetricMode::Macro),
            "weighted" | "prevalence_weighted" => Ok(MetricMode::Weighted),
            _ => Err(Error::Config(format!("unknown metric mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl LabelCounts {
    /// Gold occurrences of the label.
    pub fn support(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn predicted(&self) -> u64 {
        self.tp + self.fp
    }

    pub fn scores(&self) -> Prf {
        let ratio = |n: u64, d: u64| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        Prf {
            precision: ratio(self.tp, self.tp + self.fp),
            recall: ratio(self.tp, self.tp + self.fn_),
            f1: ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Streaming per-label counts for one task. Merging is associative, so
/// partial counts from separate workers can be combined in any grouping.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TaskCounts {
    pub labels: Vec<LabelCounts>,
    /// Utterances whose gold label is outside the label set.
    pub unknown_gold: u64,
    pub correct: u64,
    pub total: u64,
}

impl TaskCounts {
    pub fn new(n_labels: usize) -> Self {
        Self {
            labels: vec![LabelCounts::default(); n_labels],
            ..Self::default()
        }
    }

    /// Records one prediction. An unknown gold label is a false positive for
    /// the predicted label and never a hit.
    pub fn record(&mut self, gold: Option<usize>, pred: usize) {
        self.total += 1;
        match gold {
            Some(g) if g == pred => {
                self.labels[g].tp += 1;
                self.correct += 1;
            }
            Some(g) => {
                self.labels[g].fn_ += 1;
                self.labels[pred].fp += 1;
            }
            None => {
                self.unknown_gold += 1;
                self.labels[pred].fp += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &TaskCounts) {
        for (a, b) in self.labels.iter_mut().zip(&other.labels) {
            a.tp += b.tp;
            a.fp += b.fp;
            a.fn_ += b.fn_;
        }
        self.unknown_gold += other.unknown_gold;
        self.correct += other.correct;
        self.total += other.total;
    }

    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }

    /// Aggregate over the labels that occur in gold or predictions, minus the
    /// excluded ones.
    pub fn aggregate(&self, mode: MetricMode, excluded: &[usize]) -> Prf {
        let active: Vec<&LabelCounts> = self
            .labels
            .iter()
            .enumerate()
            .filter(|(i, c)| !excluded.contains(i) && (c.support() > 0 || c.predicted() > 0))
            .map(|(_, c)| c)
            .collect();
        let mut out = Prf::default();
        match mode {
            MetricMode::Macro => {
                if active.is_empty() {
                    return out;
                }
                for c in &active {
                    let s = c.scores();
                    out.precision += s.precision;
                    out.recall += s.recall;
                    out.f1 += s.f1;
                }
                let n = active.len() as f64;
                out.precision /= n;
                out.recall /= n;
                out.f1 /= n;
            }
            MetricMode::Weighted => {
                let total: u64 = active.iter().map(|c| c.support()).sum();
                if total == 0 {
                    return out;
                }
                for c in &active {
                    let s = c.scores();
                    let w = c.support() as f64 / total as f64;
                    out.precision += w * s.precision;
                    out.recall += w * s.recall;
                    out.f1 += w * s.f1;
                }
            }
        }
        out
    }

    pub fn report(&self, names: &[String], mode: MetricMode, excluded: &[usize]) -> TaskReport {
        TaskReport {
            mode,
            excluded: excluded.iter().map(|&i| names[i].clone()).collect(),
            per_label: names
                .iter()
                .zip(&self.labels)
                .map(|(name, c)| LabelReport {
                    label: name.clone(),
                    counts: *c,
                    support: c.support(),
                    scores: c.scores(),
                })
                .collect(),
            aggregate: self.aggregate(mode, excluded),
            accuracy: self.accuracy(),
            unknown_gold: self.unknown_gold,
            total: self.total,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelReport {
    pub label: String,
    pub counts: LabelCounts,
    pub support: u64,
    pub scores: Prf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub mode: MetricMode,
    pub excluded: Vec<String>,
    pub per_label: Vec<LabelReport>,
    pub aggregate: Prf,
    pub accuracy: f64,
    pub unknown_gold: u64,
    pub total: u64,
}

impl TaskReport {
    /// Rebuilds the aggregate from the stored counts.
    pub fn recompute(&self) -> Prf {
        let counts = TaskCounts {
            labels: self.per_label.iter().map(|l| l.counts).collect(),
            ..TaskCounts::default()
        };
        let excluded: Vec<usize> = self
            .per_label
            .iter()
            .enumerate()
            .filter(|(_, l)| self.excluded.contains(&l.label))
            .map(|(i, _)| i)
            .collect();
        counts.aggregate(self.mode, &excluded)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dialogs: usize,
    pub utterances: usize,
    pub act: TaskReport,
    pub sentiment: TaskReport,
}

impl EvalReport {
    /// Model-selection score: the sum of both tasks' aggregate F1.
    pub fn score(&self) -> f64 {
        self.act.aggregate.f1 + self.sentiment.aggregate.f1
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<10} {:>8} {:>9} {:>9} {:>9} {:>9}\n",
            "task", "metric", "precision", "recall", "f1", "accuracy"
        );
        for (name, t) in [("act", &self.act), ("sentiment", &self.sentiment)] {
            s += &format!(
                "{:<10} {:>8} {:>9.4} {:>9.4} {:>9.4} {:>9.4}\n",
                name,
                t.mode.as_str(),
                t.aggregate.precision,
                t.aggregate.recall,
                t.aggregate.f1,
                t.accuracy
            );
        }
        s
    }
}
