//! The training loop: per-pass thresholds and gamma, per-batch supervised
//! and gated consistency losses, AUM updates, and per-pass metrics.
//!
//! A pass is one traversal of the unlabeled pool in batches of `nu * B`.
//! Each step pairs an unlabeled batch with `B` labeled examples drawn with
//! replacement. Threshold samples enter the supervised loss with the
//! virtual label; each is scheduled into exactly one batch per pass and its
//! tracker is refreshed from a weak view at the end of the pass.

use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, ThresholdSchedule, UnlabeledReduction};
use crate::data::{
    assign_threshold_samples, augment_into, generate_synthetic, AugmentKind, LabeledExample,
    TrainingView,
};
use crate::error::{Error, Result};
use crate::eval::Evaluator;
use crate::model::{sgd_step, LossTerm, Mlp, OptimizerState, Scratch};
use crate::aum::AumTracker;
use crate::policy::MaskDecision;
use crate::seeds::rng_for;
use crate::selection::SelectionEngine;
use crate::thresholds::ThresholdState;
use crate::trace::{DecisionRecord, TraceRecord};

use rand::seq::SliceRandom;
use rand::Rng;

/// Metrics for one completed pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PassMetrics {
    pub kind: String,
    pub pass_index: u32,
    pub steps_completed: u64,
    pub learning_rate: f64,
    pub mask_rate: f64,
    /// Absent when nothing was selected.
    pub impurity: Option<f64>,
    pub test_error: f64,
    pub pseudo_label_error: f64,
    pub per_class_thresholds: Vec<f64>,
    pub gamma: Option<f64>,
    pub unlabeled_count: usize,
    pub selected_count: usize,
    pub masked_count: usize,
    pub wrong_selected: usize,
    pub conf_pass_count: usize,
    pub supervised_loss: f64,
    pub unsupervised_loss: f64,
    pub total_loss: f64,
}

/// Receives artifacts as the run produces them.
pub trait RunObserver {
    fn wants_decisions(&self) -> bool {
        false
    }

    fn wants_trace(&self) -> bool {
        false
    }

    fn decision(&mut self, _record: &DecisionRecord) -> Result<()> {
        Ok(())
    }

    fn trace_record(&mut self, _record: TraceRecord) -> Result<()> {
        Ok(())
    }

    fn pass_finished(&mut self, _metrics: &PassMetrics, _model: &Mlp, _opt: &OptimizerState) -> Result<()> {
        Ok(())
    }
}

/// Ignores everything.
pub struct NullObserver;

impl RunObserver for NullObserver {}

/// Keeps decisions and trace records in memory.
#[derive(Default)]
pub struct MemoryObserver {
    pub record_decisions: bool,
    pub record_trace: bool,
    pub decisions: Vec<DecisionRecord>,
    pub trace: Vec<TraceRecord>,
}

impl RunObserver for MemoryObserver {
    fn wants_decisions(&self) -> bool {
        self.record_decisions
    }

    fn wants_trace(&self) -> bool {
        self.record_trace
    }

    fn decision(&mut self, record: &DecisionRecord) -> Result<()> {
        self.decisions.push(record.clone());
        Ok(())
    }

    fn trace_record(&mut self, record: TraceRecord) -> Result<()> {
        self.trace.push(record);
        Ok(())
    }
}

/// Final state of a run.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub config_hash: String,
    pub model: Mlp,
    pub optimizer: OptimizerState,
    pub metrics: Vec<PassMetrics>,
    pub threshold_ids: Vec<u64>,
    pub classes: usize,
    pub history: Vec<ThresholdState>,
    /// Decisions of the last pass, in visiting order.
    pub final_decisions: Vec<MaskDecision>,
    /// Unlabeled-example trackers after the last pass.
    pub unlabeled_trackers: Vec<AumTracker>,
    pub warnings: Vec<String>,
}

impl RunOutcome {
    pub fn final_metrics(&self) -> &PassMetrics {
        self.metrics.last().expect("a run has at least one pass")
    }
}

/// `(1/n) sum CE` over labeled inputs, with gradient.
pub fn supervised_loss(model: &Mlp, batch: &[(Vec<f64>, usize)]) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty supervised batch"));
    }
    let w = 1.0 / batch.len() as f64;
    let terms: Vec<LossTerm<'_>> = batch
        .iter()
        .map(|(x, y)| LossTerm {
            input: x,
            target: *y,
            weight: w,
        })
        .collect();
    model.backward(&terms)
}

/// Pre-augmented views of one unlabeled batch.
#[derive(Clone, Debug)]
pub struct UnlabeledBatch {
    pub ids: Vec<u64>,
    pub weak: Vec<Vec<f64>>,
    pub strong: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct UnlabeledOutcome {
    pub loss: f64,
    pub grads: Vec<f64>,
    pub decisions: Vec<MaskDecision>,
    pub weak_logits: Vec<Vec<f64>>,
}

/// Gated consistency loss for one batch.
///
/// Weak views go through the model to produce logits, which update each
/// example's AUM tracker and feed the policy. Selected examples contribute
/// cross-entropy between their (constant) pseudo-label and the strong-view
/// prediction; only the strong branch carries gradient.
pub fn unlabeled_loss(
    model: &Mlp,
    batch: &UnlabeledBatch,
    engine: &mut SelectionEngine,
    reduction: UnlabeledReduction,
    nominal_batch: usize,
) -> Result<UnlabeledOutcome> {
    if batch.ids.len() != batch.weak.len() || batch.ids.len() != batch.strong.len() {
        return Err(Error::invalid("unlabeled batch views have different lengths"));
    }
    let mut scratch = model.scratch();
    let mut decisions = Vec::with_capacity(batch.ids.len());
    let mut weak_logits = Vec::with_capacity(batch.ids.len());
    for (&id, x) in batch.ids.iter().zip(&batch.weak) {
        let logits = model.forward_with(x, &mut scratch)?.to_vec();
        decisions.push(engine.observe_unlabeled(id, &logits)?);
        weak_logits.push(logits);
    }
    let w = match reduction {
        UnlabeledReduction::MeanOverBatch => 1.0 / nominal_batch as f64,
        UnlabeledReduction::Sum => 1.0,
    };
    let mut grads = vec![0.0; model.num_params()];
    let mut loss = 0.0;
    for (d, x) in decisions.iter().zip(&batch.strong) {
        if d.selected {
            loss += model.accumulate_ce(x, d.pseudo_label, w, &mut grads, &mut scratch)?;
        }
    }
    Ok(UnlabeledOutcome {
        loss,
        grads,
        decisions,
        weak_logits,
    })
}

/// `L = L_s + lambda * L_u`.
pub fn total_loss(supervised: f64, unsupervised: f64, lambda: f64) -> Result<f64> {
    let total = supervised + lambda * unsupervised;
    if !total.is_finite() {
        return Err(Error::NumericalFailure(format!(
            "non-finite loss: {supervised} + {lambda} * {unsupervised}"
        )));
    }
    Ok(total)
}

/// `grad L_s + lambda * grad L_u`, consuming the supervised gradient.
pub fn total_gradient(mut supervised: Vec<f64>, unsupervised: &[f64], lambda: f64) -> Vec<f64> {
    if lambda != 0.0 {
        for (g, gu) in supervised.iter_mut().zip(unsupervised) {
            *g += lambda * gu;
        }
    }
    supervised
}

/// Fraction of `examples` whose argmax over the genuine classes is wrong.
pub fn classification_error(model: &Mlp, examples: &[LabeledExample], classes: usize) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut scratch = model.scratch();
    let mut wrong = 0usize;
    for ex in examples {
        let z = model.forward_with(&ex.features, &mut scratch)?;
        let mut best = 0;
        for c in 1..classes {
            if z[c] > z[best] {
                best = c;
            }
        }
        wrong += usize::from(best != ex.label);
    }
    Ok(wrong as f64 / examples.len() as f64)
}

/// Builds the dataset a config describes, threshold samples included.
pub fn build_dataset(config: &RunConfig) -> Result<crate::data::DatasetBundle> {
    let seeds = config.sub_seeds();
    let bundle = generate_synthetic(&config.data, seeds.data)?;
    assign_threshold_samples(
        bundle,
        config.threshold_samples.fraction,
        config.threshold_samples.min_count,
        seeds.threshold,
    )
}

/// Number of optimizer steps in one pass over `pool` unlabeled examples.
pub fn steps_per_pass(pool: usize, unlabeled_batch: usize) -> usize {
    pool.div_ceil(unlabeled_batch).max(1)
}

/// Runs the configured experiment end to end.
pub fn run(config: &RunConfig, observer: &mut dyn RunObserver) -> Result<RunOutcome> {
    config.validate()?;
    let (view, evaluator) = build_dataset(config)?.split();
    run_on(config, view, &evaluator, observer)
}

/// Runs on an already-built dataset.
pub fn run_on(
    config: &RunConfig,
    view: TrainingView,
    evaluator: &Evaluator,
    observer: &mut dyn RunObserver,
) -> Result<RunOutcome> {
    config.validate()?;
    let seeds = config.sub_seeds();
    let classes = view.classes;
    let width = classes + 1;
    if view.labeled.is_empty() {
        return Err(Error::config("no labeled examples"));
    }
    if view.unlabeled.is_empty() {
        return Err(Error::config("no unlabeled examples"));
    }

    let mut dims = vec![view.feature_dim];
    dims.extend(&config.model.hidden);
    dims.push(width);
    let mut model = Mlp::init_uniform(&dims, &mut rng_for(seeds.init, &[]))?;
    let mut opt = OptimizerState::new(
        model.num_params(),
        config.model.momentum,
        config.model.learning_rate,
        config.steps,
    );
    opt.weight_decay = config.model.weight_decay;

    let unlabeled_ids: Vec<u64> = view.unlabeled.iter().map(|e| e.id).collect();
    let threshold_ids: Vec<u64> = view.threshold_samples.iter().map(|e| e.id).collect();
    let mut engine = SelectionEngine::new(config.selection(), classes, &unlabeled_ids, &threshold_ids)?;

    let ub = config.unlabeled_batch();
    let per_pass = steps_per_pass(view.unlabeled.len(), ub);
    if (per_pass as u64) > config.steps {
        return Err(Error::config(format!(
            "steps = {} is shorter than one pass ({per_pass} steps)",
            config.steps
        )));
    }
    let passes = (config.steps / per_pass as u64) as u32;

    let mut sampler = rng_for(seeds.sampling, &[]);
    let aug_seed = seeds.augmentation;
    let spec = &config.augment;
    let schedule = config.threshold_samples.schedule;
    let lambda = config.lambda;
    let config_hash = config.hash();
    let want_decisions = observer.wants_decisions();
    let want_trace = observer.wants_trace();

    let mut metrics = Vec::with_capacity(passes as usize);
    let mut final_decisions = Vec::new();
    let mut history = Vec::with_capacity(passes as usize);
    let mut scratch: Scratch = model.scratch();
    let mut buf = Vec::with_capacity(view.feature_dim);
    let mut order: Vec<usize> = (0..view.unlabeled.len()).collect();
    let mut thresh_order: Vec<usize> = (0..view.threshold_samples.len()).collect();

    for t in 1..=passes {
        let state = engine.begin_pass(t)?.clone();
        order.shuffle(&mut sampler);
        thresh_order.shuffle(&mut sampler);

        let mut pass_decisions: Vec<MaskDecision> = Vec::with_capacity(order.len());
        let (mut sum_s, mut sum_u, mut sum_total) = (0.0, 0.0, 0.0);
        let mut lr = 0.0;
        let mut batches = 0usize;

        for (s, chunk) in order.chunks(ub).enumerate() {
            let k = opt.step;
            let aug = |id: u64, kind: AugmentKind| rng_for(aug_seed, &[id, k, kind.tag()]);

            // Supervised part: B labeled draws plus this step's threshold samples.
            let mut sup: Vec<(Vec<f64>, usize)> = Vec::with_capacity(config.batch_size + 1);
            let n_lab = view.labeled.len();
            let draw_pool = match schedule {
                ThresholdSchedule::OncePerPass => n_lab,
                ThresholdSchedule::WithLabeled => n_lab + view.threshold_samples.len(),
            };
            for _ in 0..config.batch_size {
                let j = sampler.random_range(0..draw_pool);
                let (id, features, label) = if j < n_lab {
                    let ex = &view.labeled[j];
                    (ex.id, &ex.features, ex.label)
                } else {
                    let ex = &view.threshold_samples[j - n_lab];
                    (ex.id, &ex.features, classes)
                };
                augment_into(features, spec, AugmentKind::Weak, &mut aug(id, AugmentKind::Weak), &mut buf);
                sup.push((buf.clone(), label));
            }
            if schedule == ThresholdSchedule::OncePerPass {
                for &j in thresh_order.iter().skip(s).step_by(per_pass) {
                    let ex = &view.threshold_samples[j];
                    augment_into(&ex.features, spec, AugmentKind::Weak, &mut aug(ex.id, AugmentKind::Weak), &mut buf);
                    sup.push((buf.clone(), classes));
                }
            }
            let (loss_s, grad_s) = supervised_loss(&model, &sup)?;

            let mut batch = UnlabeledBatch {
                ids: Vec::with_capacity(chunk.len()),
                weak: Vec::with_capacity(chunk.len()),
                strong: Vec::with_capacity(chunk.len()),
            };
            for &i in chunk {
                let ex = &view.unlabeled[i];
                batch.ids.push(ex.id);
                augment_into(&ex.features, spec, AugmentKind::Weak, &mut aug(ex.id, AugmentKind::Weak), &mut buf);
                batch.weak.push(buf.clone());
                augment_into(&ex.features, spec, AugmentKind::Strong, &mut aug(ex.id, AugmentKind::Strong), &mut buf);
                batch.strong.push(buf.clone());
            }
            let out = unlabeled_loss(&model, &batch, &mut engine, config.unlabeled_loss_reduction, ub)?;
            let total = total_loss(loss_s, out.loss, lambda)?;

            if want_decisions {
                for d in &out.decisions {
                    observer.decision(&DecisionRecord::new(config.policy, t, d))?;
                }
            }
            if want_trace {
                for (d, z) in out.decisions.iter().zip(out.weak_logits) {
                    observer.trace_record(annotated(evaluator, d.example_id, t, z))?;
                }
            }
            pass_decisions.extend(out.decisions);

            let grads = total_gradient(grad_s, &out.grads, lambda);
            lr = sgd_step(&mut model, &grads, &mut opt)?;
            sum_s += loss_s;
            sum_u += out.loss;
            sum_total += total;
            batches += 1;
        }

        for ex in &view.threshold_samples {
            let mut rng = rng_for(aug_seed, &[ex.id, u64::MAX - t as u64, AugmentKind::Weak.tag()]);
            augment_into(&ex.features, spec, AugmentKind::Weak, &mut rng, &mut buf);
            let z = model.forward_with(&buf, &mut scratch)?.to_vec();
            engine.observe_threshold(ex.id, &z)?;
            if want_trace {
                observer.trace_record(TraceRecord {
                    example_id: ex.id,
                    pass_index: t,
                    logits: z,
                    gold_label: None,
                })?;
            }
        }
        engine.end_pass()?;

        let quality = evaluator.quality(&pass_decisions)?;
        let n = pass_decisions.len();
        let m = PassMetrics {
            kind: "pass_metrics".into(),
            pass_index: t,
            steps_completed: opt.step,
            learning_rate: lr,
            mask_rate: 1.0 - quality.selected as f64 / n as f64,
            impurity: quality.impurity(),
            test_error: classification_error(&model, &view.test, classes)?,
            pseudo_label_error: evaluator.pseudo_label_error(&pass_decisions)?,
            per_class_thresholds: state.per_class.clone(),
            gamma: state.gamma.gamma(),
            unlabeled_count: n,
            selected_count: quality.selected,
            masked_count: n - quality.selected,
            wrong_selected: quality.wrong,
            conf_pass_count: pass_decisions.iter().filter(|d| d.conf_pass).count(),
            supervised_loss: sum_s / batches as f64,
            unsupervised_loss: sum_u / batches as f64,
            total_loss: sum_total / batches as f64,
        };
        observer.pass_finished(&m, &model, &opt)?;
        metrics.push(m);
        history.push(state);
        final_decisions = pass_decisions;
    }

    Ok(RunOutcome {
        config_hash,
        model,
        optimizer: opt,
        metrics,
        threshold_ids,
        classes,
        history,
        final_decisions,
        unlabeled_trackers: engine.unlabeled_trackers().to_vec(),
        warnings: engine.warnings().to_vec(),
    })
}

fn annotated(evaluator: &Evaluator, id: u64, pass: u32, logits: Vec<f64>) -> TraceRecord {
    let mut rec = [TraceRecord {
        example_id: id,
        pass_index: pass,
        logits,
        gold_label: None,
    }];
    evaluator.annotate_trace(&mut rec);
    let [rec] = rec;
    rec
}
