//! Entropy, cross-entropy, KL divergence and empirical conditional mutual
//! information over discrete distributions.
//!
//! All quantities are in nats. Arguments of `log` are floored at
//! [`PROB_FLOOR`] and `0 · log 0` is taken as `0`. Sums run in ascending
//! index order so results are reproducible bit for bit.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to probabilities before taking a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Tolerance on the simplex sum accepted by [`ProbVector::new`].
pub const SIMPLEX_TOL: f64 = 1e-9;

/// A point on the probability simplex with at least two entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::invalid(format!(
                "probability vector needs dimension >= 2, got {}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::invalid(format!("probability entry {v} is not >= 0")));
        }
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::invalid(format!(
                "probability entries sum to {total}, not 1"
            )));
        }
        Ok(ProbVector(values))
    }

    /// The uniform distribution over `dim` outcomes.
    pub fn uniform(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::invalid("uniform distribution needs dimension >= 2"));
        }
        Ok(ProbVector(vec![1.0 / dim as f64; dim]))
    }

    /// Normalizes a nonnegative weight vector onto the simplex.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::invalid("weights must have a positive finite sum"));
        }
        Self::new(weights.iter().map(|w| w / total).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        ProbVector::new(values)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(p: ProbVector) -> Self {
        p.0
    }
}

impl AsRef<[f64]> for ProbVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

#[inline]
pub(crate) fn floored_ln(x: f64) -> f64 {
    x.max(PROB_FLOOR).ln()
}

fn same_dim(p: &ProbVector, q: &ProbVector) -> Result<()> {
    if p.dim() != q.dim() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} vs {}",
            p.dim(),
            q.dim()
        )));
    }
    Ok(())
}

/// Shannon entropy in nats.
pub fn entropy(p: &ProbVector) -> f64 {
    p.0.iter()
        .filter(|&&pc| pc > 0.0)
        .map(|&pc| -pc * floored_ln(pc))
        .sum()
}

/// `Σ −p·log q` with `q` floored at [`PROB_FLOOR`].
pub fn cross_entropy(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    same_dim(p, q)?;
    Ok(p.0
        .iter()
        .zip(&q.0)
        .filter(|(&pc, _)| pc > 0.0)
        .map(|(&pc, &qc)| -pc * floored_ln(qc))
        .sum())
}

/// `KL(p ‖ q)` in nats.
pub fn kl_divergence(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    same_dim(p, q)?;
    let kl: f64 =
        p.0.iter()
            .zip(&q.0)
            .filter(|(&pc, _)| pc > 0.0)
            .map(|(&pc, &qc)| pc * (floored_ln(pc) - floored_ln(qc)))
            .sum();
    // Rounding can leave a tiny negative residue when p == q.
    Ok(kl.max(0.0))
}

/// Elementwise mean of a nonempty set of distributions.
pub fn class_aggregate(dists: &[ProbVector]) -> Result<ProbVector> {
    let first = dists
        .first()
        .ok_or_else(|| Error::invalid("class aggregate of an empty set"))?;
    let dim = first.dim();
    let mut acc = vec![0.0; dim];
    for d in dists {
        if d.dim() != dim {
            return Err(Error::invalid(format!(
                "dimension mismatch: {} vs {dim}",
                d.dim()
            )));
        }
        for (a, v) in acc.iter_mut().zip(&d.0) {
            *a += v;
        }
    }
    let n = dists.len() as f64;
    Ok(ProbVector(acc.into_iter().map(|a| a / n).collect()))
}

/// Mean KL from every sample to its own class aggregate, normalized by the
/// total sample count across all groups.
pub fn empirical_cmi<K: Ord>(groups: &BTreeMap<K, Vec<ProbVector>>) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    let mut dim = None;
    for members in groups.values() {
        let q = class_aggregate(members)?;
        match dim {
            None => dim = Some(q.dim()),
            Some(d) if d != q.dim() => {
                return Err(Error::invalid("groups have differing dimensions"));
            }
            _ => {}
        }
        for p in members {
            total += kl_divergence(p, &q)?;
        }
        count += members.len();
    }
    if count == 0 {
        return Err(Error::invalid("empirical CMI needs at least one group"));
    }
    Ok(total / count as f64)
}
