//! Per-class learning status and the flexible confidence thresholds derived
//! from it.

use serde::{Deserialize, Serialize};

use crate::aum::AumGate;
use crate::error::{Error, Result};

const PROB_TOL: f64 = 1e-6;

/// Count of confidently predicted unlabeled examples per genuine class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LearningStatus {
    pub counts: Vec<u64>,
    pub total_unlabeled: u64,
}

impl LearningStatus {
    pub fn empty(classes: usize) -> Self {
        Self {
            counts: vec![0; classes],
            total_unlabeled: 0,
        }
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }
}

/// Thresholds in force for one pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdState {
    pub pass_index: u32,
    pub tau: f64,
    pub per_class: Vec<f64>,
    pub gamma: AumGate,
}

impl ThresholdState {
    /// Every class at `tau`, AUM gate off.
    pub fn fixed(pass_index: u32, tau: f64, classes: usize) -> Self {
        Self {
            pass_index,
            tau,
            per_class: vec![tau; classes],
            gamma: AumGate::Disabled,
        }
    }

    pub fn classes(&self) -> usize {
        self.per_class.len()
    }
}

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!("tau must lie in (0, 1), got {tau}")))
    }
}

/// Checks a (possibly truncated) class distribution: entries in `[0, 1]`,
/// total at most one. Truncating a `C+1`-way softmax to its first `C`
/// entries produces such vectors.
pub(crate) fn check_probs(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::invalid("empty probability vector"));
    }
    let mut sum = 0.0;
    for &p in probs {
        if !(-PROB_TOL..=1.0 + PROB_TOL).contains(&p) || !p.is_finite() {
            return Err(Error::invalid(format!("probability {p} outside [0, 1]")));
        }
        sum += p;
    }
    if sum > 1.0 + PROB_TOL {
        return Err(Error::invalid(format!("probabilities sum to {sum} > 1")));
    }
    Ok(())
}

/// Index and value of the largest entry; ties go to the lowest index.
pub(crate) fn argmax(probs: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    (best, probs[best])
}

/// `counts[c]` = number of examples whose argmax is `c` and whose max
/// probability strictly exceeds `tau`.
pub fn learning_status<I, P>(classes: usize, weak_confidences: I, tau: f64) -> Result<LearningStatus>
where
    I: IntoIterator<Item = P>,
    P: AsRef<[f64]>,
{
    check_tau(tau)?;
    let mut status = LearningStatus::empty(classes);
    for probs in weak_confidences {
        let probs = probs.as_ref();
        if probs.len() != classes {
            return Err(Error::invalid(format!(
                "expected {classes} class probabilities, got {}",
                probs.len()
            )));
        }
        check_probs(probs)?;
        let (c, p) = argmax(probs);
        if p > tau {
            status.counts[c] += 1;
        }
        status.total_unlabeled += 1;
    }
    Ok(status)
}

/// `T_c = counts[c] / max(counts) * tau`, or `tau` everywhere when no
/// class has any confident prediction yet.
pub fn flexible_thresholds(status: &LearningStatus, tau: f64) -> Result<Vec<f64>> {
    check_tau(tau)?;
    let max = status.counts.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return Ok(vec![tau; status.classes()]);
    }
    let max = max as f64;
    Ok(status
        .counts
        .iter()
        .map(|&a| a as f64 / max * tau)
        .collect())
}
