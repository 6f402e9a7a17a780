//! Masking policies: which unlabeled examples contribute their pseudo-label
//! to the consistency loss.
//!
//! All three policies share the same shape: a confidence test on the weak
//! view, optionally followed by an AUM test on the pseudo-label class. An
//! example is selected only when both pass.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::aum::AumTracker;
use crate::error::{Error, Result};
use crate::thresholds::{argmax, check_probs, check_tau, ThresholdState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    /// Fixed confidence threshold `tau`.
    FixMatch,
    /// Per-class thresholds scaled by learning status.
    FlexMatch,
    /// Flexible thresholds plus the AUM gate.
    MarginMatch,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 3] = [
        PolicyKind::FixMatch,
        PolicyKind::FlexMatch,
        PolicyKind::MarginMatch,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PolicyKind::FixMatch => "fixmatch",
            PolicyKind::FlexMatch => "flexmatch",
            PolicyKind::MarginMatch => "marginmatch",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fixmatch" => Ok(PolicyKind::FixMatch),
            "flexmatch" => Ok(PolicyKind::FlexMatch),
            "marginmatch" => Ok(PolicyKind::MarginMatch),
            other => Err(Error::config(format!("unknown policy `{other}`"))),
        }
    }
}

/// Verdict for one unlabeled example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskDecision {
    pub example_id: u64,
    pub pseudo_label: usize,
    pub confidence: f64,
    pub conf_pass: bool,
    pub aum_pass: bool,
    pub selected: bool,
}

impl MaskDecision {
    fn new(example_id: u64, pseudo_label: usize, confidence: f64, conf_pass: bool, aum_pass: bool) -> Self {
        Self {
            example_id,
            pseudo_label,
            confidence,
            conf_pass,
            aum_pass,
            selected: conf_pass && aum_pass,
        }
    }
}

pub fn decide_fixmatch(example_id: u64, weak_probs: &[f64], tau: f64) -> Result<MaskDecision> {
    check_tau(tau)?;
    check_probs(weak_probs)?;
    let (label, conf) = argmax(weak_probs);
    Ok(MaskDecision::new(example_id, label, conf, conf > tau, true))
}

pub fn decide_flexmatch(
    example_id: u64,
    weak_probs: &[f64],
    thresholds: &ThresholdState,
) -> Result<MaskDecision> {
    let (label, conf) = confidence_verdict(weak_probs, thresholds)?;
    Ok(MaskDecision::new(
        example_id,
        label,
        conf,
        conf > thresholds.per_class[label],
        true,
    ))
}

pub fn decide_marginmatch(
    example_id: u64,
    weak_probs: &[f64],
    thresholds: &ThresholdState,
    tracker: &AumTracker,
) -> Result<MaskDecision> {
    let (label, conf) = confidence_verdict(weak_probs, thresholds)?;
    let aum = tracker.aum_of_class(label)?;
    Ok(MaskDecision::new(
        example_id,
        label,
        conf,
        conf > thresholds.per_class[label],
        thresholds.gamma.admits(aum),
    ))
}

fn confidence_verdict(weak_probs: &[f64], thresholds: &ThresholdState) -> Result<(usize, f64)> {
    if weak_probs.len() != thresholds.classes() {
        return Err(Error::invalid(format!(
            "{} class probabilities but {} thresholds",
            weak_probs.len(),
            thresholds.classes()
        )));
    }
    check_probs(weak_probs)?;
    Ok(argmax(weak_probs))
}

/// Dispatches to the scalar rule for `policy`. `tracker` is required for
/// MarginMatch and ignored otherwise.
pub fn decide(
    policy: PolicyKind,
    example_id: u64,
    weak_probs: &[f64],
    thresholds: &ThresholdState,
    tracker: Option<&AumTracker>,
) -> Result<MaskDecision> {
    match policy {
        PolicyKind::FixMatch => decide_fixmatch(example_id, weak_probs, thresholds.tau),
        PolicyKind::FlexMatch => decide_flexmatch(example_id, weak_probs, thresholds),
        PolicyKind::MarginMatch => {
            let tracker = tracker.ok_or_else(|| {
                Error::invalid(format!("marginmatch needs a tracker for example {example_id}"))
            })?;
            decide_marginmatch(example_id, weak_probs, thresholds, tracker)
        }
    }
}

/// Order-preserving vectorized form of [`decide`]. `trackers` may be empty
/// for policies without an AUM gate.
pub fn decide_batch(
    policy: PolicyKind,
    example_ids: &[u64],
    weak_probs: &[Vec<f64>],
    trackers: &[AumTracker],
    thresholds: &ThresholdState,
) -> Result<Vec<MaskDecision>> {
    if example_ids.len() != weak_probs.len() {
        return Err(Error::invalid(format!(
            "{} ids but {} probability vectors",
            example_ids.len(),
            weak_probs.len()
        )));
    }
    let need_trackers = policy == PolicyKind::MarginMatch;
    if need_trackers && trackers.len() != example_ids.len() {
        return Err(Error::invalid(format!(
            "{} ids but {} trackers",
            example_ids.len(),
            trackers.len()
        )));
    }
    example_ids
        .iter()
        .zip(weak_probs)
        .enumerate()
        .map(|(i, (&id, p))| {
            let tracker = if need_trackers { Some(&trackers[i]) } else { None };
            decide(policy, id, p, thresholds, tracker)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aum::AumGate;

    fn flex_state(gamma: AumGate) -> ThresholdState {
        ThresholdState {
            pass_index: 3,
            tau: 0.95,
            per_class: vec![0.95, 0.475, 0.0],
            gamma,
        }
    }

    fn tracker(aum: [f64; 3]) -> AumTracker {
        let mut t = AumTracker::new(0, 4);
        t.aum[..3].copy_from_slice(&aum);
        t
    }

    #[test]
    fn fixmatch_examples() {
        let d = decide_fixmatch(1, &[0.97, 0.02, 0.01], 0.95).unwrap();
        assert!(d.selected);
        assert_eq!(d.pseudo_label, 0);
        assert_eq!(d.confidence, 0.97);
        assert!(!decide_fixmatch(1, &[0.95, 0.03, 0.02], 0.95).unwrap().selected);
        let third = 1.0 / 3.0;
        assert!(!decide_fixmatch(1, &[third; 3], 0.95).unwrap().selected);
        assert!(decide_fixmatch(1, &[0.6, 0.6], 0.95).is_err());
    }

    #[test]
    fn flexmatch_examples() {
        let st = flex_state(AumGate::Disabled);
        assert!(!decide_flexmatch(0, &[0.50, 0.30, 0.20], &st).unwrap().selected);
        let d = decide_flexmatch(0, &[0.30, 0.50, 0.20], &st).unwrap();
        assert!(d.selected);
        assert_eq!(d.pseudo_label, 1);

        let zero = ThresholdState {
            per_class: vec![0.0; 3],
            ..st.clone()
        };
        assert!(decide_flexmatch(0, &[0.2, 0.2, 0.6], &zero).unwrap().selected);
        assert!(!decide_flexmatch(0, &[0.0, 0.0, 0.0], &zero).unwrap().selected);
        assert!(decide_flexmatch(0, &[0.5, 0.5], &st).is_err());
    }

    #[test]
    fn marginmatch_examples() {
        let st = flex_state(AumGate::Cutoff(-0.2));
        let probs = [0.30, 0.50, 0.20];
        let d = decide_marginmatch(0, &probs, &st, &tracker([-0.1, 0.8, -1.2])).unwrap();
        assert!(d.conf_pass && d.aum_pass && d.selected);
        let d = decide_marginmatch(0, &probs, &st, &tracker([-0.1, -0.9, -1.2])).unwrap();
        assert!(d.conf_pass);
        assert!(!d.aum_pass);
        assert!(!d.selected);
    }

    #[test]
    fn disabled_gate_reduces_to_flexmatch() {
        let st = flex_state(AumGate::Disabled);
        let tr = tracker([-5.0, -5.0, -5.0]);
        for probs in [[0.3, 0.5, 0.2], [0.5, 0.3, 0.2], [0.1, 0.1, 0.8]] {
            assert_eq!(
                decide_marginmatch(9, &probs, &st, &tr).unwrap(),
                decide_flexmatch(9, &probs, &st).unwrap()
            );
        }
    }

    #[test]
    fn batch_composes_scalar_cases() {
        let st = flex_state(AumGate::Cutoff(-0.2));
        let probs = vec![vec![0.30, 0.50, 0.20], vec![0.30, 0.50, 0.20]];
        let trs = vec![tracker([-0.1, 0.8, -1.2]), tracker([-0.1, -0.9, -1.2])];
        let out = decide_batch(PolicyKind::MarginMatch, &[10, 11], &probs, &trs, &st).unwrap();
        assert_eq!(
            out.iter().map(|d| d.selected).collect::<Vec<_>>(),
            vec![true, false]
        );
        assert_eq!(out[1].example_id, 11);

        let single = decide_batch(PolicyKind::FlexMatch, &[10], &probs[..1], &[], &st).unwrap();
        assert_eq!(single[0], decide_flexmatch(10, &probs[0], &st).unwrap());

        let rev = decide_batch(PolicyKind::MarginMatch, &[11, 10], &[probs[1].clone(), probs[0].clone()], &[trs[1].clone(), trs[0].clone()], &st).unwrap();
        assert_eq!(rev[0], out[1]);
        assert_eq!(rev[1], out[0]);

        assert!(decide_batch(PolicyKind::FixMatch, &[1, 2], &probs[..1], &[], &st).is_err());
        assert!(decide_batch(PolicyKind::MarginMatch, &[1, 2], &probs, &trs[..1], &st).is_err());
    }

    #[test]
    fn policy_names_round_trip() {
        for p in PolicyKind::ALL {
            assert_eq!(p.as_str().parse::<PolicyKind>().unwrap(), p);
        }
        assert!("meanteacher".parse::<PolicyKind>().is_err());
    }
}
