//! Per-pass selection state shared by the trainer and trace replay.
//!
//! A [`SelectionEngine`] owns the AUM trackers of every unlabeled example
//! and threshold sample, remembers the previous pass's weak-view
//! confidences for the learning-status estimate, and turns weak-view
//! logits into [`MaskDecision`]s. Both live training and offline replay
//! drive the same engine, so a recorded trace reproduces the live decision
//! log exactly.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::aum::{calibrate_gamma, check_delta, margin_vector, AumGate, AumTracker};
use crate::error::{Error, Result};
use crate::model::softmax;
use crate::policy::{decide, MaskDecision, PolicyKind};
use crate::thresholds::{check_tau, flexible_thresholds, learning_status, ThresholdState};

/// Knobs that shape per-pass gating.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub policy: PolicyKind,
    pub tau: f64,
    pub delta: f64,
    pub percentile: f64,
    /// Force every class threshold to `tau` (fixed-confidence ablation).
    pub fixed_confidence: bool,
    /// Use a constant AUM cutoff instead of calibrating one.
    pub fixed_gamma: Option<f64>,
    /// Stop recalibrating gamma after this many passes.
    pub gamma_freeze_after: Option<u32>,
    /// Passes during which the AUM gate stays off.
    pub aum_warmup_passes: u32,
    /// Renormalize the genuine-class probabilities after dropping the
    /// virtual class.
    pub renormalize_confidence: bool,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            policy: PolicyKind::MarginMatch,
            tau: 0.95,
            delta: 0.997,
            percentile: 95.0,
            fixed_confidence: false,
            fixed_gamma: None,
            gamma_freeze_after: None,
            aum_warmup_passes: 1,
            renormalize_confidence: false,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        check_tau(self.tau)?;
        check_delta(self.delta)?;
        if !(self.percentile > 0.0 && self.percentile <= 100.0) {
            return Err(Error::config(format!(
                "percentile must lie in (0, 100], got {}",
                self.percentile
            )));
        }
        if let Some(g) = self.fixed_gamma {
            if !g.is_finite() {
                return Err(Error::config("fixed_gamma must be finite"));
            }
        }
        Ok(())
    }

    fn uses_flexible_confidence(&self) -> bool {
        self.policy != PolicyKind::FixMatch && !self.fixed_confidence
    }
}

/// Drops the virtual class from a `C+1`-way softmax.
pub fn genuine_class_probs(logits: &[f64], renormalize: bool) -> Vec<f64> {
    let mut p = softmax(logits);
    p.pop();
    if renormalize {
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= s);
    }
    p
}

#[derive(Clone, Debug)]
pub struct SelectionEngine {
    config: SelectionConfig,
    classes: usize,
    unlabeled: Vec<AumTracker>,
    unlabeled_index: HashMap<u64, usize>,
    threshold: Vec<AumTracker>,
    threshold_index: HashMap<u64, usize>,
    prev_confidences: Vec<Vec<f64>>,
    current_confidences: Vec<Vec<f64>>,
    frozen_gamma: Option<AumGate>,
    state: Option<ThresholdState>,
    warnings: Vec<String>,
}

impl SelectionEngine {
    /// `classes` is the number of genuine classes; logits have `classes + 1`
    /// entries.
    pub fn new(
        config: SelectionConfig,
        classes: usize,
        unlabeled_ids: &[u64],
        threshold_ids: &[u64],
    ) -> Result<Self> {
        config.validate()?;
        if classes < 2 {
            return Err(Error::config("need at least 2 genuine classes"));
        }
        let width = classes + 1;
        let index = |ids: &[u64]| -> Result<HashMap<u64, usize>> {
            let mut m = HashMap::with_capacity(ids.len());
            for (i, &id) in ids.iter().enumerate() {
                if m.insert(id, i).is_some() {
                    return Err(Error::invalid(format!("duplicate example id {id}")));
                }
            }
            Ok(m)
        };
        let unlabeled_index = index(unlabeled_ids)?;
        let threshold_index = index(threshold_ids)?;
        if let Some(id) = threshold_ids.iter().find(|id| unlabeled_index.contains_key(id)) {
            return Err(Error::invalid(format!(
                "example {id} is both unlabeled and a threshold sample"
            )));
        }
        let mut warnings = Vec::new();
        if threshold_ids.is_empty() && config.policy == PolicyKind::MarginMatch && config.fixed_gamma.is_none() {
            warnings.push("no threshold samples: AUM gate disabled for the whole run".to_string());
        }
        Ok(Self {
            classes,
            unlabeled: unlabeled_ids.iter().map(|&id| AumTracker::new(id, width)).collect(),
            unlabeled_index,
            threshold: threshold_ids.iter().map(|&id| AumTracker::new(id, width)).collect(),
            threshold_index,
            prev_confidences: Vec::new(),
            current_confidences: Vec::with_capacity(unlabeled_ids.len()),
            frozen_gamma: None,
            state: None,
            warnings,
            config,
        })
    }

    pub fn config(&self) -> &SelectionConfig {
        &self.config
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn unlabeled_trackers(&self) -> &[AumTracker] {
        &self.unlabeled
    }

    pub fn threshold_trackers(&self) -> &[AumTracker] {
        &self.threshold
    }

    pub fn state(&self) -> Option<&ThresholdState> {
        self.state.as_ref()
    }

    fn gamma_for(&mut self, t: u32) -> Result<AumGate> {
        if self.config.policy != PolicyKind::MarginMatch || t <= self.config.aum_warmup_passes {
            return Ok(AumGate::Disabled);
        }
        if let Some(g) = self.config.fixed_gamma {
            return Ok(AumGate::Cutoff(g));
        }
        if let Some(g) = self.frozen_gamma {
            return Ok(g);
        }
        let virt = self.classes;
        let aums: Vec<f64> = self.threshold.iter().map(|tr| tr.aum[virt]).collect();
        let gate = match calibrate_gamma(&aums, self.config.percentile) {
            Ok(g) => AumGate::Cutoff(g),
            Err(Error::CalibrationUnavailable) => AumGate::Disabled,
            Err(e) => return Err(e),
        };
        if let Some(freeze) = self.config.gamma_freeze_after {
            if t >= freeze {
                self.frozen_gamma = Some(gate);
            }
        }
        Ok(gate)
    }

    /// Starts pass `t`: thresholds from the previous pass's confidences and
    /// gamma from the threshold samples' current AUMs.
    pub fn begin_pass(&mut self, t: u32) -> Result<&ThresholdState> {
        let expected = self.state.as_ref().map_or(1, |s| s.pass_index + 1);
        if t != expected {
            return Err(Error::invalid(format!("expected pass {expected}, got {t}")));
        }
        let tau = self.config.tau;
        let per_class = if self.config.uses_flexible_confidence() {
            let status = learning_status(self.classes, &self.prev_confidences, tau)?;
            flexible_thresholds(&status, tau)?
        } else {
            vec![tau; self.classes]
        };
        let gamma = self.gamma_for(t)?;
        self.current_confidences.clear();
        self.state = Some(ThresholdState {
            pass_index: t,
            tau,
            per_class,
            gamma,
        });
        Ok(self.state.as_ref().unwrap())
    }

    fn pass(&self) -> Result<&ThresholdState> {
        self.state
            .as_ref()
            .ok_or_else(|| Error::invalid("begin_pass has not been called"))
    }

    /// Updates the example's tracker with this pass's weak-view logits and
    /// returns the policy verdict.
    pub fn observe_unlabeled(&mut self, example_id: u64, logits: &[f64]) -> Result<MaskDecision> {
        if logits.len() != self.classes + 1 {
            return Err(Error::invalid(format!(
                "expected {} logits, got {}",
                self.classes + 1,
                logits.len()
            )));
        }
        let t = self.pass()?.pass_index;
        let idx = *self
            .unlabeled_index
            .get(&example_id)
            .ok_or_else(|| Error::invalid(format!("unknown unlabeled example {example_id}")))?;
        let margins = margin_vector(logits)?;
        self.unlabeled[idx].apply(margins.as_slice(), t, self.config.delta)?;
        let probs = genuine_class_probs(logits, self.config.renormalize_confidence);
        let state = self.state.as_ref().unwrap();
        let decision = decide(
            self.config.policy,
            example_id,
            &probs,
            state,
            Some(&self.unlabeled[idx]),
        )?;
        self.current_confidences.push(probs);
        Ok(decision)
    }

    /// Updates a threshold sample's tracker for this pass.
    pub fn observe_threshold(&mut self, example_id: u64, logits: &[f64]) -> Result<()> {
        if logits.len() != self.classes + 1 {
            return Err(Error::invalid(format!(
                "expected {} logits, got {}",
                self.classes + 1,
                logits.len()
            )));
        }
        let t = self.pass()?.pass_index;
        let idx = *self
            .threshold_index
            .get(&example_id)
            .ok_or_else(|| Error::invalid(format!("unknown threshold sample {example_id}")))?;
        let margins = margin_vector(logits)?;
        self.threshold[idx].apply(margins.as_slice(), t, self.config.delta)
    }

    /// Closes the pass; every tracker must have been updated exactly once.
    pub fn end_pass(&mut self) -> Result<()> {
        let t = self.pass()?.pass_index;
        for tr in self.unlabeled.iter().chain(&self.threshold) {
            if tr.last_t != t || tr.update_count != t {
                return Err(Error::IncompleteTrace(format!(
                    "example {} has {} updates after pass {t}",
                    tr.example_id, tr.update_count
                )));
            }
        }
        std::mem::swap(&mut self.prev_confidences, &mut self.current_confidences);
        self.current_confidences.clear();
        Ok(())
    }
}
