//! Multi-label detection metrics: per-AU precision/recall/F1 plus expression
//! accuracy, with pooled scoring across evaluation shards and deterministic
//! JSON/CSV serialization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Raw predictions accumulated before scoring. Cross-validation appends every
/// fold's test predictions here and scores the pool once, so the reported
/// numbers are computed over all held-out samples rather than averaged over
/// per-fold scores.
#[derive(Clone, Debug, Default)]
pub struct PredictionSet {
    au_names: Vec<String>,
    /// Per sample: (ground-truth 0/1 per AU, predicted 0/1 per AU).
    au_rows: Vec<(Vec<u8>, Vec<u8>)>,
    /// Per sample: (true class, predicted class).
    expr_rows: Vec<(usize, usize)>,
}

impl PredictionSet {
    pub fn new(au_names: &[String]) -> Self {
        Self {
            au_names: au_names.to_vec(),
            au_rows: Vec::new(),
            expr_rows: Vec::new(),
        }
    }

    pub fn push_au(&mut self, truth: Vec<u8>, pred: Vec<u8>) -> Result<()> {
        if truth.len() != self.au_names.len() || pred.len() != self.au_names.len() {
            return Err(Error::shape(
                "PredictionSet::push_au",
                self.au_names.len(),
                format!("truth {} / pred {}", truth.len(), pred.len()),
            ));
        }
        self.au_rows.push((truth, pred));
        Ok(())
    }

    pub fn push_expr(&mut self, truth: usize, pred: usize) {
        self.expr_rows.push((truth, pred));
    }

    /// Merge another set (same AU names) into this one.
    pub fn absorb(&mut self, other: PredictionSet) -> Result<()> {
        if other.au_names != self.au_names {
            return Err(Error::invalid(
                "cannot pool predictions over different action-unit sets",
            ));
        }
        self.au_rows.extend(other.au_rows);
        self.expr_rows.extend(other.expr_rows);
        Ok(())
    }

    pub fn au_sample_count(&self) -> usize {
        self.au_rows.len()
    }

    pub fn expr_sample_count(&self) -> usize {
        self.expr_rows.len()
    }

    /// Score the pooled predictions.
    pub fn score(&self) -> MetricsReport {
        let c = self.au_names.len();
        let mut per_au = Vec::with_capacity(c);
        for (j, name) in self.au_names.iter().enumerate() {
            let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
            for (truth, pred) in &self.au_rows {
                match (truth[j], pred[j]) {
                    (1, 1) => tp += 1,
                    (0, 1) => fp += 1,
                    (1, 0) => fn_ += 1,
                    _ => tn += 1,
                }
            }
            let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
            let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            // No positives in the ground truth and none predicted: the score
            // carries no signal for this unit, so flag it rather than let a
            // silent zero suggest a failed detector.
            let degenerate = tp + fp + fn_ == 0;
            per_au.push(AuMetrics {
                name: name.clone(),
                tp,
                fp,
                false_negatives: fn_,
                tn,
                precision,
                recall,
                f1,
                degenerate,
            });
        }
        let mean_f1 = if per_au.is_empty() {
            0.0
        } else {
            per_au.iter().map(|a| a.f1).sum::<f64>() / per_au.len() as f64
        };
        let expr_accuracy = if self.expr_rows.is_empty() {
            None
        } else {
            let hits = self.expr_rows.iter().filter(|(t, p)| t == p).count();
            Some(hits as f64 / self.expr_rows.len() as f64)
        };
        MetricsReport {
            per_au,
            mean_f1,
            expr_accuracy,
            au_samples: self.au_rows.len(),
            expr_samples: self.expr_rows.len(),
        }
    }
}

/// Confusion counts and derived scores for one action unit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AuMetrics {
    pub name: String,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub false_negatives: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// True when the unit never appeared in the ground truth and was never
    /// predicted, making its zero F1 uninformative.
    pub degenerate: bool,
}

/// Scored evaluation results for one prediction pool.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_au: Vec<AuMetrics>,
    pub mean_f1: f64,
    pub expr_accuracy: Option<f64>,
    pub au_samples: usize,
    pub expr_samples: usize,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Per-AU table as CSV, one row per action unit plus a `mean` summary row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("au,precision,recall,f1,tp,fp,fn,tn,degenerate\n");
        for a in &self.per_au {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                a.name,
                a.precision,
                a.recall,
                a.f1,
                a.tp,
                a.fp,
                a.false_negatives,
                a.tn,
                a.degenerate
            ));
        }
        out.push_str(&format!("mean,,,{},,,,,\n", self.mean_f1));
        out
    }
}
