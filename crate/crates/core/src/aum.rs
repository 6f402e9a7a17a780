//! Per-class margins and EMA-smoothed area-under-the-margin trackers.
//!
//! Every unlabeled example carries an [`AumTracker`] holding one running
//! margin per output class (the `C` genuine classes plus the virtual
//! threshold class). Trackers are advanced once per pass with
//!
//! ```text
//! AUM[t] = M[t] * d / (1 + t) + AUM[t-1] * (1 - d / (1 + t))
//! ```
//!
//! starting from zero. With `d = 1` this is exactly the running mean of
//! `{0, M[1], ..., M[t]}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Raw pre-softmax scores for one example at one pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogitRecord {
    pub example_id: u64,
    pub iteration: u32,
    pub logits: Vec<f64>,
}

impl LogitRecord {
    pub fn new(example_id: u64, iteration: u32, logits: Vec<f64>) -> Result<Self> {
        check_logits(&logits)?;
        Ok(Self {
            example_id,
            iteration,
            logits,
        })
    }
}

fn check_logits(logits: &[f64]) -> Result<()> {
    if logits.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 logits, got {}",
            logits.len()
        )));
    }
    if let Some(i) = logits.iter().position(|z| !z.is_finite()) {
        return Err(Error::invalid(format!("logit {i} is not finite")));
    }
    Ok(())
}

/// Margin of every class: its logit minus the largest other logit.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginVector(Vec<f64>);

impl MarginVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for MarginVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// `out[c] = logits[c] - max_{i != c} logits[i]`.
pub fn margin_vector(logits: &[f64]) -> Result<MarginVector> {
    check_logits(logits)?;
    // Top two values; the runner-up is the "largest other" for the argmax.
    let mut best = 0;
    for (i, &z) in logits.iter().enumerate().skip(1) {
        if z > logits[best] {
            best = i;
        }
    }
    let runner_up = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != best)
        .map(|(_, &z)| z)
        .fold(f64::NEG_INFINITY, f64::max);
    let top = logits[best];
    Ok(MarginVector(
        logits
            .iter()
            .enumerate()
            .map(|(c, &z)| if c == best { z - runner_up } else { z - top })
            .collect(),
    ))
}

/// Margin of the virtual threshold class, which must be the last index.
pub fn threshold_margin(logits: &[f64], virtual_class: usize) -> Result<f64> {
    if virtual_class + 1 != logits.len() {
        return Err(Error::invalid(format!(
            "virtual class must be the last index ({}), got {virtual_class}",
            logits.len().saturating_sub(1)
        )));
    }
    Ok(margin_vector(logits)?[virtual_class])
}

/// Running EMA margins for one example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AumTracker {
    pub example_id: u64,
    pub aum: Vec<f64>,
    pub last_t: u32,
    pub update_count: u32,
}

impl AumTracker {
    /// A fresh tracker: all entries zero, no passes incorporated.
    pub fn new(example_id: u64, width: usize) -> Self {
        Self {
            example_id,
            aum: vec![0.0; width],
            last_t: 0,
            update_count: 0,
        }
    }

    /// Returns the tracker advanced to pass `t`, leaving `self` untouched.
    pub fn ema_update(&self, margins: &MarginVector, t: u32, delta: f64) -> Result<Self> {
        let mut next = self.clone();
        next.apply(margins.as_slice(), t, delta)?;
        Ok(next)
    }

    /// In-place form of [`AumTracker::ema_update`].
    pub fn apply(&mut self, margins: &[f64], t: u32, delta: f64) -> Result<()> {
        check_delta(delta)?;
        if t != self.last_t + 1 {
            return Err(Error::OutOfOrderUpdate {
                example_id: self.example_id,
                expected: self.last_t + 1,
                got: t,
            });
        }
        if margins.len() != self.aum.len() {
            return Err(Error::invalid(format!(
                "margin width {} does not match tracker width {}",
                margins.len(),
                self.aum.len()
            )));
        }
        let w = delta / (1.0 + t as f64);
        for (a, &m) in self.aum.iter_mut().zip(margins) {
            *a = m * w + *a * (1.0 - w);
        }
        self.last_t = t;
        self.update_count += 1;
        Ok(())
    }

    pub fn aum_of_class(&self, c: usize) -> Result<f64> {
        self.aum.get(c).copied().ok_or_else(|| {
            Error::invalid(format!(
                "class {c} out of range for tracker of width {}",
                self.aum.len()
            ))
        })
    }
}

pub(crate) fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta <= 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!("delta must lie in (0, 1], got {delta}")))
    }
}

/// Nearest-rank percentile (ascending) of the threshold-sample AUMs.
pub fn calibrate_gamma(threshold_sample_aums: &[f64], percentile: f64) -> Result<f64> {
    if threshold_sample_aums.is_empty() {
        return Err(Error::CalibrationUnavailable);
    }
    if !(percentile > 0.0 && percentile <= 100.0) {
        return Err(Error::config(format!(
            "percentile must lie in (0, 100], got {percentile}"
        )));
    }
    if threshold_sample_aums.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite threshold-sample AUM"));
    }
    let mut sorted = threshold_sample_aums.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = ((percentile * n as f64) / 100.0).ceil() as usize;
    Ok(sorted[rank.clamp(1, n) - 1])
}

/// The AUM cutoff in effect for a pass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AumGate {
    /// No cutoff: every example passes.
    Disabled,
    /// Pseudo-label class AUM must exceed the cutoff.
    Cutoff(f64),
}

impl AumGate {
    pub fn admits(&self, aum: f64) -> bool {
        match *self {
            AumGate::Disabled => true,
            AumGate::Cutoff(gamma) => aum > gamma,
        }
    }

    pub fn gamma(&self) -> Option<f64> {
        match *self {
            AumGate::Disabled => None,
            AumGate::Cutoff(g) => Some(g),
        }
    }
}
