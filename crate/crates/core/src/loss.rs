//! Training objectives: per-point cross-entropy, the unknown-cluster CMI
//! term, their weighted combination, and the EMA aggregate the CMI term is
//! measured against.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Axis, Matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::infotheory::{class_aggregate, floored_ln, kl_divergence, ProbVector};

/// Direction in which the CMI term enters the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignMode {
    /// `CE − λ·L`: gradient descent increases the unknown-cluster CMI.
    #[default]
    MaximizeCmi,
    /// `CE + λ·L`: gradient descent pulls unknown-cluster predictions toward the aggregate.
    MinimizeKl,
}

impl SignMode {
    pub fn sign(self) -> f64 {
        match self {
            SignMode::MaximizeCmi => -1.0,
            SignMode::MinimizeKl => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SignMode::MaximizeCmi => "maximize_cmi",
            SignMode::MinimizeKl => "minimize_kl",
        }
    }
}

impl std::str::FromStr for SignMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "maximize_cmi" => Ok(SignMode::MaximizeCmi),
            "minimize_kl" => Ok(SignMode::MinimizeKl),
            other => Err(Error::Config(format!(
                "sign_mode must be maximize_cmi or minimize_kl, got `{other}`"
            ))),
        }
    }
}

/// Optimization settings for one training phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the CMI term; `0` disables it.
    pub lambda: f64,
    /// EMA factor for the unknown-cluster aggregate.
    pub beta: f64,
    pub sign_mode: SignMode,
    pub lr: f64,
    pub epochs: usize,
    /// Clouds per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
    /// Label of the merged unknown cluster, or `None` when no such label
    /// exists (e.g. after head surgery).
    pub unknown_label: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.5,
            beta: 0.995,
            sign_mode: SignMode::MaximizeCmi,
            lr: 0.01,
            epochs: 60,
            batch_size: 8,
            seed: 0,
            unknown_label: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!(
                "beta must lie in [0, 1], got {}",
                self.beta
            )));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Running estimate `Q̂` of the unknown cluster's mean prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmaAggregate {
    q_hat: ProbVector,
    beta: f64,
    seen_count: u64,
}

impl EmaAggregate {
    /// Starts from the uniform distribution over `classes` outcomes.
    pub fn uniform(classes: usize, beta: f64) -> Result<Self> {
        Self::from_q(ProbVector::uniform(classes)?, beta)
    }

    pub fn from_q(q_hat: ProbVector, beta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::invalid(format!(
                "beta must lie in [0, 1], got {beta}"
            )));
        }
        Ok(EmaAggregate {
            q_hat,
            beta,
            seen_count: 0,
        })
    }

    pub fn q_hat(&self) -> &ProbVector {
        &self.q_hat
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn seen_count(&self) -> u64 {
        self.seen_count
    }

    pub fn dim(&self) -> usize {
        self.q_hat.dim()
    }

    /// `Q̂ ← β·Q̂ + (1 − β)·mean(batch)`.
    pub fn update(&mut self, batch: &[ProbVector]) -> Result<()> {
        if batch.iter().any(|p| p.dim() != self.dim()) {
            return Err(Error::invalid(format!(
                "batch distributions must have dimension {}",
                self.dim()
            )));
        }
        let mean = class_aggregate(batch)?;
        let b = self.beta;
        let next: Vec<f64> = self
            .q_hat
            .as_slice()
            .iter()
            .zip(mean.as_slice())
            .map(|(&q, &m)| b * q + (1.0 - b) * m)
            .collect();
        self.q_hat = ProbVector::new(next)?;
        self.seen_count += batch.len() as u64;
        Ok(())
    }
}

/// Functional form of [`EmaAggregate::update`].
pub fn ema_update(agg: &EmaAggregate, batch: &[ProbVector]) -> Result<EmaAggregate> {
    let mut next = agg.clone();
    next.update(batch)?;
    Ok(next)
}

/// Row-wise `z − logsumexp(z)` for `N × C` logits.
pub fn log_softmax(tape: &mut Tape, logits: Var) -> Result<Var> {
    let (n, c) = tape.shape(logits);
    let row_max = tape.max_reduce(logits, Axis::Cols);
    let ones_c = tape.constant(Matrix::filled(1, c, 1.0));
    let max_tiled = tape.matmul(row_max, ones_c)?;
    let shifted = tape.sub(logits, max_tiled)?;
    let e = tape.exp(shifted);
    let ones_col = tape.constant(Matrix::filled(c, 1, 1.0));
    let sums = tape.matmul(e, ones_col)?;
    let log_sums = tape.log(sums);
    let lse_tiled = tape.matmul(log_sums, ones_c)?;
    debug_assert_eq!(tape.shape(lse_tiled), (n, c));
    tape.sub(shifted, lse_tiled)
}

fn check_labels(labels: &[usize], n: usize, c: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::invalid(format!(
            "{n} rows of logits but {} labels",
            labels.len()
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::invalid(format!(
            "label {l} out of range for {c} classes"
        )));
    }
    Ok(())
}

fn ce_from_log_probs(tape: &mut Tape, log_probs: Var, labels: &[usize]) -> Result<Var> {
    let (n, c) = tape.shape(log_probs);
    let mut onehot = Matrix::zeros(n, c);
    for (i, &l) in labels.iter().enumerate() {
        onehot.set(i, l, 1.0);
    }
    let onehot = tape.constant(onehot);
    let picked = tape.mul(log_probs, onehot)?;
    let total = tape.sum(picked);
    Ok(tape.scale(total, -1.0 / n as f64))
}

/// Mean over points of `−log softmax(logits)[label]`.
pub fn ce_loss(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let (n, c) = tape.shape(logits);
    check_labels(labels, n, c)?;
    let lp = log_softmax(tape, logits)?;
    ce_from_log_probs(tape, lp, labels)
}

/// Mean `KL(P_j ‖ Q̂)` over the rows of `log_probs` listed in
/// `unknown_rows`. `Q̂` enters as a constant. Returns `None` when
/// `unknown_rows` is empty: the term is inactive for this batch.
pub fn l3cm(
    tape: &mut Tape,
    log_probs: Var,
    unknown_rows: &[usize],
    agg: &EmaAggregate,
) -> Result<Option<Var>> {
    if unknown_rows.is_empty() {
        return Ok(None);
    }
    let (_, c) = tape.shape(log_probs);
    if c != agg.dim() {
        return Err(Error::invalid(format!(
            "{c} classes but the aggregate has dimension {}",
            agg.dim()
        )));
    }
    let m = unknown_rows.len();
    let lp = tape.select_rows(log_probs, unknown_rows)?;
    let p = tape.exp(lp);
    let log_q: Vec<f64> = agg
        .q_hat()
        .as_slice()
        .iter()
        .map(|&q| floored_ln(q))
        .collect();
    let log_q = tape.constant(Matrix::new(m, c, log_q.repeat(m))?);
    let diff = tape.sub(lp, log_q)?;
    let terms = tape.mul(p, diff)?;
    let total = tape.sum(terms);
    Ok(Some(tape.scale(total, 1.0 / m as f64)))
}

/// Value-only counterpart of [`l3cm`].
pub fn l3cm_value(unknown_probs: &[ProbVector], agg: &EmaAggregate) -> Result<Option<f64>> {
    if unknown_probs.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    for p in unknown_probs {
        total += kl_divergence(p, agg.q_hat())?;
    }
    Ok(Some(total / unknown_probs.len() as f64))
}

/// Nodes recorded by [`total_objective`].
#[derive(Debug, Clone)]
pub struct Objective {
    pub total: Var,
    pub ce: Var,
    /// Unweighted CMI term, when active.
    pub l3cm: Option<Var>,
    /// `N × C` log-probabilities.
    pub log_probs: Var,
    /// Rows labeled with the unknown label.
    pub unknown_rows: Vec<usize>,
}

impl Objective {
    /// Predicted distributions of the unknown rows, for the EMA update.
    pub fn unknown_probs(&self, tape: &Tape) -> Result<Vec<ProbVector>> {
        let lp = tape.value(self.log_probs);
        self.unknown_rows
            .iter()
            .map(|&r| {
                ProbVector::from_weights(&lp.row(r).iter().map(|v| v.exp()).collect::<Vec<_>>())
            })
            .collect()
    }
}

/// `CE + s·λ·L` where `s` follows `cfg.sign_mode`. The CMI term is computed
/// over points labeled `cfg.unknown_label` and only when at least one such
/// point is present.
pub fn total_objective(
    tape: &mut Tape,
    logits: Var,
    labels: &[usize],
    agg: &EmaAggregate,
    cfg: &TrainConfig,
) -> Result<Objective> {
    let (n, c) = tape.shape(logits);
    check_labels(labels, n, c)?;
    let log_probs = log_softmax(tape, logits)?;
    let ce = ce_from_log_probs(tape, log_probs, labels)?;
    let unknown_rows: Vec<usize> = match cfg.unknown_label {
        Some(u) if cfg.lambda > 0.0 => (0..n).filter(|&i| labels[i] == u).collect(),
        _ => Vec::new(),
    };
    let term = l3cm(tape, log_probs, &unknown_rows, agg)?;
    let total = match term {
        Some(l) => {
            let weighted = tape.scale(l, cfg.sign_mode.sign() * cfg.lambda);
            tape.add(ce, weighted)?
        }
        None => ce,
    };
    Ok(Objective {
        total,
        ce,
        l3cm: term,
        log_probs,
        unknown_rows,
    })
}
