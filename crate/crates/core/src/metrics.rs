//! Evaluation metrics: position error, the reality-loss metric, and
//! player/team-level possession accuracy.

use ndarray::{Array2, Array3, ArrayD, Axis};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::losses;
use crate::types::AgentSet;

/// The four headline metrics of a model evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Mean distance between predicted and true ball locations, meters.
    pub pe: f64,
    /// Reality-loss metric of the predicted trajectory.
    pub rl: f64,
    /// Player-level possession accuracy in [0, 1].
    pub ppa: f64,
    /// Team-level possession accuracy in [0, 1].
    pub tpa: f64,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "pe,rl,ppa,tpa";

    pub fn csv_row(&self) -> String {
        format!("{:.6},{:.6},{:.6},{:.6}", self.pe, self.rl, self.ppa, self.tpa)
    }

    /// Flat `key = value` record, one metric per line.
    pub fn text_record(&self) -> String {
        format!(
            "pe = {:.6}\nrl = {:.6}\nppa = {:.6}\ntpa = {:.6}\n",
            self.pe, self.rl, self.ppa, self.tpa
        )
    }
}

/// Mean Euclidean distance between two trajectories `[T, 2]`.
pub fn position_error(pred: &Array2<f64>, truth: &Array2<f64>) -> Result<f64> {
    if pred.shape() != truth.shape() || pred.shape()[1] != 2 {
        return Err(Error::Shape(format!(
            "position_error expects matching [T, 2] inputs, got {:?} vs {:?}",
            pred.shape(),
            truth.shape()
        )));
    }
    let t = pred.shape()[0];
    if t == 0 {
        return Ok(0.0);
    }
    let sum: f64 = pred
        .rows()
        .into_iter()
        .zip(truth.rows())
        .map(|(p, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt())
        .sum();
    Ok(sum / t as f64)
}

/// Reality-loss metric of a trajectory against player tracks; identical to
/// the training penalty, evaluated through the same code path.
pub fn reality_metric(pred: &Array2<f64>, players: &Array3<f64>) -> Result<f64> {
    let tape = Tape::<f64>::new();
    let p = tape.constant(pred.clone().into_dyn());
    let loss = losses::reality_loss(&tape, p, &players.clone().into_dyn())?;
    Ok(tape.scalar(loss))
}

/// Player- and team-level possession accuracy of per-frame probabilities
/// `[T, K]` against true class labels. Team-level accuracy buckets the
/// argmax player into team 1, team 2 or ball-out and compares buckets.
pub fn possession_accuracy(
    probs: &Array2<f64>,
    labels: &[usize],
    agents: &AgentSet,
) -> Result<(f64, f64)> {
    let t = probs.shape()[0];
    let k = probs.shape()[1];
    if k != agents.num_classes() {
        return Err(Error::Shape(format!(
            "probabilities have {k} classes but roster defines {}",
            agents.num_classes()
        )));
    }
    if labels.len() != t {
        return Err(Error::Shape(format!(
            "{} labels for {t} frames",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&q| q >= k) {
        return Err(Error::Label(format!("label {bad} out of range")));
    }
    if t == 0 {
        return Ok((0.0, 0.0));
    }
    let mut player_hits = 0usize;
    let mut team_hits = 0usize;
    for (row, &truth) in probs.axis_iter(Axis(0)).zip(labels) {
        let mut best = 0usize;
        for (j, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = j;
            }
        }
        if best == truth {
            player_hits += 1;
        }
        if agents.team_of(best) == agents.team_of(truth) {
            team_hits += 1;
        }
    }
    Ok((player_hits as f64 / t as f64, team_hits as f64 / t as f64))
}

/// Mean squared error of two trajectories, the plain-array counterpart of
/// the training term.
pub fn mse_value(pred: &Array2<f64>, truth: &Array2<f64>) -> Result<f64> {
    if pred.shape() != truth.shape() || pred.shape()[1] != 2 {
        return Err(Error::Shape("mse expects matching [T, 2] inputs".into()));
    }
    let t = pred.shape()[0];
    if t == 0 {
        return Ok(0.0);
    }
    let sum: f64 = pred
        .rows()
        .into_iter()
        .zip(truth.rows())
        .map(|(p, q)| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2))
        .sum();
    Ok(sum / t as f64)
}

/// Reality metric over a dynamic-rank batch, averaging window means.
pub fn reality_metric_batched(pred: &ArrayD<f64>, players: &ArrayD<f64>) -> Result<f64> {
    let tape = Tape::<f64>::new();
    let p = tape.constant(pred.clone());
    let loss = losses::reality_loss(&tape, p, players)?;
    Ok(tape.scalar(loss))
}
