//! Minibatch SGD over point clouds with the regularized objective.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Axis, Matrix, Tape};
use crate::data::{augment, LabeledCloud, JITTER_STD};
use crate::error::Result;
use crate::loss::{total_objective, EmaAggregate, TrainConfig};
use crate::model::{forward, segment_logits, ModelParams};

/// A total loss above this, or any non-finite loss, stops the run.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Known classes plus the merged unknown cluster.
    Initial,
    /// After head surgery, with unknown-source labels revealed.
    Finetune,
}

/// Loss values of one optimizer step. `l3cm` is the unweighted regularizer,
/// zero when the term was inactive for the batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub phase: Phase,
    pub epoch: usize,
    pub ce: f64,
    pub l3cm: f64,
    pub total: f64,
}

/// Epoch means of the step losses plus training point accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: Phase,
    pub epoch: usize,
    pub mean_ce: f64,
    pub mean_l3cm: f64,
    pub mean_total: f64,
    pub point_accuracy: f64,
}

/// `q̂` after the given number of optimizer steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QSnapshot {
    pub step: usize,
    pub q_hat: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub phase: Phase,
    /// Index of the step whose loss tripped the detector; that step was not
    /// applied.
    pub step: usize,
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub q_hat: Vec<QSnapshot>,
    pub diverged: Option<Divergence>,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Per-point argmax over the output columns; ties go to the lower column.
pub fn predict_columns(params: &ModelParams, points: &[[f64; 3]]) -> Result<Vec<usize>> {
    let logits = segment_logits(points, params)?;
    Ok(logits.iter_rows().map(argmax).collect())
}

/// Runs `cfg.epochs` epochs of SGD on `clouds`, whose labels must already be
/// in output-column space. The aggregate is updated after each step from
/// the batch's unknown-labeled points, and only when the term was active.
pub fn train_phase(
    params: &mut ModelParams,
    clouds: &[LabeledCloud],
    cfg: &TrainConfig,
    agg: &mut EmaAggregate,
    phase: Phase,
    augment_points: bool,
    rng: &mut impl Rng,
) -> Result<PhaseLog> {
    cfg.validate()?;
    let mut log = PhaseLog::default();
    if cfg.epochs > 0 && agg.seen_count() == 0 && cfg.unknown_label.is_some() {
        log.q_hat.push(QSnapshot {
            step: 0,
            q_hat: agg.q_hat().as_slice().to_vec(),
        });
    }
    let mut order: Vec<usize> = (0..clouds.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let first_step = log.steps.len();
        let (mut hits, mut seen) = (0usize, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let mut logits = Vec::with_capacity(batch.len());
            let mut labels = Vec::new();
            for &i in batch {
                let c = &clouds[i];
                let pts = if augment_points {
                    augment(&c.points, JITTER_STD, rng)
                } else {
                    c.points.clone()
                };
                let x = tape.constant(Matrix::new(
                    pts.len(),
                    3,
                    pts.into_iter().flatten().collect(),
                )?);
                logits.push(forward(&mut tape, x, &bound)?.seg_logits);
                labels.extend_from_slice(&c.part_labels);
            }
            let stacked = tape.concat(&logits, Axis::Rows)?;
            let obj = total_objective(&mut tape, stacked, &labels, agg, cfg)?;
            let ce = tape.scalar(obj.ce);
            let l3cm = obj.l3cm.map_or(0.0, |v| tape.scalar(v));
            let total = tape.scalar(obj.total);
            if !(ce.is_finite() && l3cm.is_finite() && total.is_finite())
                || total.abs() > DIVERGENCE_THRESHOLD
            {
                log.diverged = Some(Divergence {
                    phase,
                    step: log.steps.len(),
                    total,
                });
                return Ok(log);
            }
            for (row, &y) in tape.value(stacked).iter_rows().zip(&labels) {
                hits += usize::from(argmax(row) == y);
            }
            seen += labels.len();

            tape.backward(obj.total)?;
            params.sgd_step(&tape, &bound, cfg.lr);
            if obj.l3cm.is_some() {
                agg.update(&obj.unknown_probs(&tape)?)?;
            }
            log.steps.push(StepRecord {
                phase,
                epoch,
                ce,
                l3cm,
                total,
            });
        }
        let steps = &log.steps[first_step..];
        let mean = |f: fn(&StepRecord) -> f64| {
            steps.iter().map(f).sum::<f64>() / steps.len().max(1) as f64
        };
        log.epochs.push(EpochRecord {
            phase,
            epoch,
            mean_ce: mean(|s| s.ce),
            mean_l3cm: mean(|s| s.l3cm),
            mean_total: mean(|s| s.total),
            point_accuracy: hits as f64 / seen.max(1) as f64,
        });
        if cfg.unknown_label.is_some() {
            log.q_hat.push(QSnapshot {
                step: log.steps.len(),
                q_hat: agg.q_hat().as_slice().to_vec(),
            });
        }
    }
    Ok(log)
}
