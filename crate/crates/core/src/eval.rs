//! The only place hidden gold labels of unlabeled examples can be read.
//!
//! Training code receives a [`crate::data::TrainingView`] with features only;
//! pass-level diagnostics go through an [`Evaluator`], which answers
//! aggregate questions (how many selected pseudo-labels are wrong) without
//! exposing individual labels.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::policy::MaskDecision;
use crate::trace::TraceRecord;

/// Gold labels of the unlabeled pool, keyed by example id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HiddenLabels {
    labels: HashMap<u64, usize>,
}

impl HiddenLabels {
    pub(crate) fn new(labels: HashMap<u64, usize>) -> Self {
        Self { labels }
    }

    pub(crate) fn remove(&mut self, id: u64) -> Option<usize> {
        self.labels.remove(&id)
    }

    pub(crate) fn get(&self, id: u64) -> Option<usize> {
        self.labels.get(&id).copied()
    }

    pub(crate) fn sorted_entries(&self) -> Vec<(u64, usize)> {
        let mut v: Vec<_> = self.labels.iter().map(|(&k, &v)| (k, v)).collect();
        v.sort_unstable();
        v
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Pass-level selection quality.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelectionQuality {
    pub selected: usize,
    pub wrong: usize,
}

impl SelectionQuality {
    /// Error rate among selected examples; `None` when nothing was selected.
    pub fn impurity(&self) -> Option<f64> {
        (self.selected > 0).then(|| self.wrong as f64 / self.selected as f64)
    }
}

#[derive(Clone, Debug)]
pub struct Evaluator {
    hidden: HiddenLabels,
}

impl Evaluator {
    pub fn new(hidden: HiddenLabels) -> Self {
        Self { hidden }
    }

    pub fn pool_size(&self) -> usize {
        self.hidden.len()
    }

    pub fn quality(&self, decisions: &[MaskDecision]) -> Result<SelectionQuality> {
        let mut q = SelectionQuality {
            selected: 0,
            wrong: 0,
        };
        for d in decisions.iter().filter(|d| d.selected) {
            let gold = self.hidden.get(d.example_id).ok_or_else(|| {
                Error::invalid(format!("no gold label for example {}", d.example_id))
            })?;
            q.selected += 1;
            if gold != d.pseudo_label {
                q.wrong += 1;
            }
        }
        Ok(q)
    }

    /// Fraction of the pool whose argmax pseudo-label is wrong, selected or not.
    pub fn pseudo_label_error(&self, decisions: &[MaskDecision]) -> Result<f64> {
        if decisions.is_empty() {
            return Ok(0.0);
        }
        let mut wrong = 0usize;
        for d in decisions {
            let gold = self.hidden.get(d.example_id).ok_or_else(|| {
                Error::invalid(format!("no gold label for example {}", d.example_id))
            })?;
            wrong += usize::from(gold != d.pseudo_label);
        }
        Ok(wrong as f64 / decisions.len() as f64)
    }

    /// Fills `gold_label` on trace records of unlabeled examples.
    pub fn annotate_trace(&self, records: &mut [TraceRecord]) {
        for r in records {
            r.gold_label = self.hidden.get(r.example_id).map(|g| g as u32);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decision(id: u64, label: usize, selected: bool) -> MaskDecision {
        MaskDecision {
            example_id: id,
            pseudo_label: label,
            confidence: 0.99,
            conf_pass: selected,
            aum_pass: true,
            selected,
        }
    }

    #[test]
    fn impurity_counts_wrong_selected_only() {
        let ev = Evaluator::new(HiddenLabels::new(
            [(1, 0), (2, 1), (3, 2)].into_iter().collect(),
        ));
        let ds = vec![decision(1, 0, true), decision(2, 0, true), decision(3, 0, false)];
        let q = ev.quality(&ds).unwrap();
        assert_eq!(q, SelectionQuality { selected: 2, wrong: 1 });
        assert_eq!(q.impurity(), Some(0.5));
        assert!((ev.pseudo_label_error(&ds).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn no_selection_means_no_impurity() {
        let ev = Evaluator::new(HiddenLabels::new([(1, 0)].into_iter().collect()));
        let q = ev.quality(&[decision(1, 1, false)]).unwrap();
        assert_eq!(q.impurity(), None);
        assert!(ev.quality(&[decision(9, 1, true)]).is_err());
    }
}
