//! Losses, AdamW, learning-rate schedules, the training loop and metrics.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Target};
use crate::model::{bind_constants, PreparedGraph, SatConfig, SatModel, Task};
use crate::params::ModelParams;
use crate::rng::{derive_seed, seeded};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    #[default]
    TransformerInvSqrt,
    Cosine,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    #[default]
    L1,
    CrossEntropy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    pub schedule: Schedule,
    pub seed: u64,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 0.001,
            batch_size: 128,
            epochs: 2000,
            warmup_steps: 5000,
            weight_decay: 1e-5,
            schedule: Schedule::TransformerInvSqrt,
            seed: 0,
            loss: LossKind::L1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!("base_lr {} must be finite and non-negative", self.base_lr)));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.warmup_steps == 0 {
            return Err(Error::Config("batch_size, epochs and warmup_steps must be positive".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight_decay {} must be non-negative", self.weight_decay)));
        }
        Ok(())
    }

    /// The loss matching a task.
    pub fn loss_for(task: Task) -> LossKind {
        if task.is_classification() {
            LossKind::CrossEntropy
        } else {
            LossKind::L1
        }
    }
}

/// Mean absolute error, or mean cross-entropy of row-wise softmax logits.
pub fn loss(tape: &mut Tape, pred: Var, target: &Target, kind: LossKind) -> Result<Var> {
    let (rows, cols) = tape.shape(pred);
    match (kind, target) {
        (LossKind::L1, Target::Scalar(y)) => {
            if (rows, cols) != (1, 1) {
                return Err(Error::ShapeMismatch { op: "l1 loss", detail: format!("prediction is {rows}x{cols}") });
            }
            let t = tape.constant(Tensor::scalar(*y));
            let d = tape.sub(pred, t)?;
            let a = tape.abs(d);
            Ok(tape.mean_all(a))
        }
        (LossKind::CrossEntropy, Target::Class(c)) => cross_entropy(tape, pred, vec![*c]),
        (LossKind::CrossEntropy, Target::NodeClasses(cs)) => cross_entropy(tape, pred, cs.clone()),
        (kind, t) => Err(Error::Config(format!("{kind:?} loss does not apply to target {t:?}"))),
    }
}

fn cross_entropy(tape: &mut Tape, logits: Var, classes: Vec<usize>) -> Result<Var> {
    let lp = tape.log_softmax_rows(logits);
    let picked = tape.pick_cols(lp, classes)?;
    let m = tape.mean_all(picked);
    Ok(tape.scale(m, -1.0))
}

/// Moment buffers of AdamW.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        AdamState { m: params.zeros_like(), v: params.zeros_like(), step: 0 }
    }
}

/// AdamW hyperparameters besides the learning rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        AdamW { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay }
    }

    /// One decoupled-weight-decay Adam update in place.
    pub fn step(&self, params: &mut ModelParams, grads: &ModelParams, state: &mut AdamState, lr: f64) -> Result<()> {
        let same = |a: &ModelParams| {
            a.len() == params.len() && a.tensors().iter().zip(params.tensors()).all(|(x, y)| x.shape() == y.shape())
        };
        if !same(grads) || !same(&state.m) || !same(&state.v) {
            return Err(Error::ShapeMismatch {
                op: "adamw_step",
                detail: "gradient or moment shapes differ from parameters".into(),
            });
        }
        state.step += 1;
        let t = state.step as i32;
        let c1 = 1.0 - libm::pow(self.beta1, t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, t as f64);
        let tensors = params.tensors_mut().iter_mut();
        let moments = state.m.tensors_mut().iter_mut().zip(state.v.tensors_mut().iter_mut());
        for ((p, g), (m, v)) in tensors.zip(grads.tensors()).zip(moments) {
            let it = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut().zip(v.data_mut()));
            for ((theta, &g), (m, v)) in it {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *theta -= lr * (m_hat / (libm::sqrt(v_hat) + self.eps) + self.weight_decay * *theta);
            }
        }
        Ok(())
    }
}

/// `adamw_step` with the default betas and epsilon.
pub fn adamw_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    AdamW::new(weight_decay).step(params, grads, state, lr)
}

/// Learning rate at optimisation step `step >= 1`.
///
/// `total_steps` is only used by the cosine schedule.
pub fn lr_at(step: usize, tcfg: &TrainConfig, total_steps: usize) -> f64 {
    let s = step.max(1) as f64;
    let w = tcfg.warmup_steps.max(1) as f64;
    let factor = match tcfg.schedule {
        Schedule::TransformerInvSqrt => (s / w).min(libm::sqrt(w / s)),
        Schedule::Cosine => {
            if s <= w {
                s / w
            } else {
                let span = (total_steps as f64 - w).max(1.0);
                let progress = ((s - w) / span).min(1.0);
                0.5 * (1.0 + libm::cos(core::f64::consts::PI * progress))
            }
        }
    };
    tcfg.base_lr * factor
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// MAE for regression, accuracy for classification; absent without a
    /// validation split.
    pub val_metric: Option<f64>,
    /// Learning rate of the last step in the epoch.
    pub lr: f64,
    /// Seconds since training started, as reported by the observer.
    pub wall_time: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were retained.
    pub best_epoch: Option<usize>,
}

impl TrainHistory {
    /// Equality ignoring wall-clock times.
    pub fn same_trajectory(&self, other: &TrainHistory) -> bool {
        self.best_epoch == other.best_epoch
            && self.epochs.len() == other.epochs.len()
            && self.epochs.iter().zip(&other.epochs).all(|(a, b)| {
                a.epoch == b.epoch
                    && a.train_loss.to_bits() == b.train_loss.to_bits()
                    && a.val_metric.map(f64::to_bits) == b.val_metric.map(f64::to_bits)
                    && a.lr.to_bits() == b.lr.to_bits()
            })
    }
}

/// Hooks into the training loop: a clock and per-epoch reporting.
pub trait TrainObserver {
    /// Seconds since some fixed origin.
    fn now(&mut self) -> f64 {
        0.0
    }

    fn on_epoch(&mut self, _record: &EpochRecord) {}
}

/// Observer that does nothing; wall times are recorded as 0.
pub struct Silent;

impl TrainObserver for Silent {}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub loss: f64,
    pub mae: Option<f64>,
    pub accuracy: Option<f64>,
    /// Node tasks: accuracy per class (NaN for a class that never occurs).
    pub per_class_accuracy: Vec<f64>,
    pub count: usize,
}

impl Metrics {
    /// MAE for regression, accuracy otherwise.
    pub fn primary(&self) -> f64 {
        self.mae.or(self.accuracy).unwrap_or(f64::NAN)
    }
}

fn better(task: Task, candidate: f64, best: f64) -> bool {
    if task == Task::Regression {
        candidate < best
    } else {
        candidate > best
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Attaches encodings and caches structure for every sample.
pub fn prepare_all(model: &SatModel, dataset: &Dataset) -> Result<Vec<PreparedGraph>> {
    dataset.samples().iter().map(|s| model.prepare(&s.graph)).collect()
}

/// Metrics of `params` on `indices`.
pub fn evaluate(
    model: &SatModel,
    params: &ModelParams,
    dataset: &Dataset,
    prepared: &[PreparedGraph],
    indices: &[usize],
) -> Result<Metrics> {
    let task = model.cfg.task;
    if task != dataset.task() {
        return Err(Error::Config(format!("model task {task:?} does not match dataset task {:?}", dataset.task())));
    }
    let kind = TrainConfig::loss_for(task);
    let mut total_loss = 0.0;
    let (mut abs_err, mut correct, mut seen) = (0.0, 0usize, 0usize);
    let classes = dataset.output_dim();
    let mut per_class = vec![(0usize, 0usize); if task == Task::NodeClass { classes } else { 0 }];
    for &i in indices {
        let mut tape = Tape::new();
        let vars = bind_constants(params, &mut tape);
        let out = model.forward(&mut tape, &vars, &prepared[i], false, 0)?;
        let target = &dataset.samples()[i].target;
        let l = loss(&mut tape, out.prediction, target, kind)?;
        total_loss += tape.value(l).item();
        let pred = tape.value(out.prediction);
        match target {
            Target::Scalar(y) => abs_err += (pred.item() - y).abs(),
            Target::Class(c) => correct += (argmax(pred.row(0)) == *c) as usize,
            Target::NodeClasses(cs) => {
                for (r, &c) in cs.iter().enumerate() {
                    let hit = argmax(pred.row(r)) == c;
                    correct += hit as usize;
                    per_class[c].0 += hit as usize;
                    per_class[c].1 += 1;
                }
                seen += cs.len();
                continue;
            }
        }
        seen += 1;
    }
    let count = indices.len();
    let denom = seen.max(1) as f64;
    Ok(Metrics {
        loss: total_loss / count.max(1) as f64,
        mae: (task == Task::Regression).then(|| abs_err / denom),
        accuracy: task.is_classification().then(|| correct as f64 / denom),
        per_class_accuracy: per_class
            .iter()
            .map(|&(h, t)| if t == 0 { f64::NAN } else { h as f64 / t as f64 })
            .collect(),
        count,
    })
}

/// Trains from the model's seeded initialisation.
pub fn train(dataset: &Dataset, cfg: &SatConfig, tcfg: &TrainConfig) -> Result<(ModelParams, TrainHistory)> {
    train_with(dataset, cfg, tcfg, &mut Silent)
}

/// [`train`] with an observer for timing and progress.
pub fn train_with(
    dataset: &Dataset,
    cfg: &SatConfig,
    tcfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<(ModelParams, TrainHistory)> {
    let (model, params) = SatModel::new(cfg.clone(), tcfg.seed)?;
    train_from(&model, params, dataset, tcfg, observer)
}

/// Runs the training loop from given parameters.
///
/// Graphs are processed one at a time and gradients averaged per batch.
/// After each epoch the validation split is scored and the best parameters
/// so far are kept; without a validation split the final parameters are
/// returned.
pub fn train_from(
    model: &SatModel,
    mut params: ModelParams,
    dataset: &Dataset,
    tcfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<(ModelParams, TrainHistory)> {
    tcfg.validate()?;
    let train_idx = &dataset.splits.train;
    if train_idx.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let prepared = prepare_all(model, dataset)?;
    let task = model.cfg.task;
    if task != dataset.task() {
        return Err(Error::Config(format!("model task {task:?} does not match dataset task {:?}", dataset.task())));
    }
    let optimiser = AdamW::new(tcfg.weight_decay);
    let mut state = AdamState::new(&params);
    let mut rng = seeded(derive_seed(tcfg.seed, 0x5eed, 0));
    let batches_per_epoch = train_idx.len().div_ceil(tcfg.batch_size);
    let total_steps = batches_per_epoch * tcfg.epochs;
    let start = observer.now();
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, ModelParams)> = None;
    let mut step = 0usize;
    let mut order = train_idx.clone();
    for epoch in 0..tcfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut lr = 0.0;
        for batch in order.chunks(tcfg.batch_size) {
            step += 1;
            let mut grads = params.zeros_like();
            for &i in batch {
                let mut tape = Tape::new();
                let vars = params.bind(&mut tape);
                let seed = derive_seed(tcfg.seed, step as u64, i as u64 + 1);
                let out = model.forward(&mut tape, &vars, &prepared[i], true, seed)?;
                let l = loss(&mut tape, out.prediction, &dataset.samples()[i].target, tcfg.loss)?;
                let value = tape.value(l).item();
                if !value.is_finite() {
                    return Err(Error::NanLoss { epoch, step });
                }
                epoch_loss += value;
                tape.backward(l)?;
                grads.accumulate_grads(&tape, &vars);
            }
            grads.scale(1.0 / batch.len() as f64);
            lr = lr_at(step, tcfg, total_steps);
            optimiser.step(&mut params, &grads, &mut state, lr)?;
            if !params.all_finite() {
                return Err(Error::NanLoss { epoch, step });
            }
        }
        let val_metric = if dataset.splits.val.is_empty() {
            None
        } else {
            Some(evaluate(model, &params, dataset, &prepared, &dataset.splits.val)?.primary())
        };
        if let Some(v) = val_metric {
            if best.as_ref().is_none_or(|(b, _)| better(task, v, *b)) {
                best = Some((v, params.clone()));
                history.best_epoch = Some(epoch);
            }
        }
        let record = EpochRecord {
            epoch,
            train_loss: epoch_loss / train_idx.len() as f64,
            val_metric,
            lr,
            wall_time: observer.now() - start,
        };
        observer.on_epoch(&record);
        history.epochs.push(record);
    }
    let params = match best {
        Some((_, p)) => p,
        None => {
            history.best_epoch = tcfg.epochs.checked_sub(1);
            params
        }
    };
    Ok((params, history))
}

/// Predictions for one prepared graph.
pub fn predict(model: &SatModel, params: &ModelParams, pg: &PreparedGraph) -> Result<Tensor> {
    Ok(model.predict(params, pg)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_cycle_vs_triangles, split, GraphSample};
    use crate::graph::Graph;
    use crate::model::Readout;
    use crate::posenc::PeKind;
    use crate::rng::normal;
    use proptest::prelude::*;

    fn scalar_loss(pred: Tensor, target: Target, kind: LossKind) -> f64 {
        let mut tape = Tape::new();
        let p = tape.constant(pred);
        let l = loss(&mut tape, p, &target, kind).unwrap();
        tape.value(l).item()
    }

    #[test]
    fn loss_examples() {
        assert_eq!(scalar_loss(Tensor::scalar(3.0), Target::Scalar(3.0), LossKind::L1), 0.0);
        let ce = scalar_loss(Tensor::row_vector(&[0.0, 0.0]), Target::Class(1), LossKind::CrossEntropy);
        assert!((ce - core::f64::consts::LN_2).abs() < 1e-15);
        let nodes = Tensor::from_rows(&[[1.0], [2.0]]).unwrap();
        let mut tape = Tape::new();
        let p = tape.constant(nodes);
        let t = tape.constant(Tensor::from_rows(&[[0.0], [4.0]]).unwrap());
        let d = tape.sub(p, t).unwrap();
        let a = tape.abs(d);
        let m = tape.mean_all(a);
        assert_eq!(tape.value(m).item(), 1.5);
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::row_vector(&[0.0, 0.0]));
        assert!(matches!(
            loss(&mut tape, p, &Target::Class(2), LossKind::CrossEntropy),
            Err(Error::InvalidClass { class: 2, num_classes: 2 })
        ));
    }

    fn one_param(v: f64) -> ModelParams {
        let mut p = ModelParams::new();
        p.push("theta", Tensor::scalar(v));
        p
    }

    #[test]
    fn adamw_examples() {
        let mut p = one_param(1.0);
        let mut s = AdamState::new(&p);
        adamw_step(&mut p, &one_param(1.0), &mut s, 0.1, 0.0).unwrap();
        assert!((p.tensors()[0].item() - 0.9).abs() < 1e-7);

        let mut p = one_param(2.5);
        let mut s = AdamState::new(&p);
        adamw_step(&mut p, &one_param(0.0), &mut s, 0.1, 0.0).unwrap();
        assert_eq!(p.tensors()[0].item(), 2.5);

        let mut p = one_param(2.0);
        let mut s = AdamState::new(&p);
        adamw_step(&mut p, &one_param(0.0), &mut s, 1.0, 0.1).unwrap();
        assert!((p.tensors()[0].item() - 1.8).abs() < 1e-15);

        let mut two = one_param(0.0);
        two.push("b", Tensor::scalar(0.0));
        assert!(adamw_step(&mut one_param(0.0), &two, &mut AdamState::new(&one_param(0.0)), 0.1, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn adamw_matches_scalar_reference(
            init in -2.0f64..2.0,
            grads in proptest::collection::vec(-3.0f64..3.0, 1..30),
            lr in 1e-4f64..0.1,
            wd in 0.0f64..0.1,
        ) {
            let mut p = one_param(init);
            let mut s = AdamState::new(&p);
            let (mut theta, mut m, mut v) = (init, 0.0f64, 0.0f64);
            for (t, &g) in grads.iter().enumerate() {
                adamw_step(&mut p, &one_param(g), &mut s, lr, wd).unwrap();
                m = 0.9 * m + 0.1 * g;
                v = 0.999 * v + 0.001 * g * g;
                let mh = m / (1.0 - 0.9f64.powi(t as i32 + 1));
                let vh = v / (1.0 - 0.999f64.powi(t as i32 + 1));
                theta -= lr * (mh / (vh.sqrt() + 1e-8) + wd * theta);
                prop_assert!((p.tensors()[0].item() - theta).abs() < 1e-12);
            }
        }

        #[test]
        fn schedules_are_continuous_at_warmup(w in 1usize..10_000, base in 1e-5f64..1.0) {
            for schedule in [Schedule::TransformerInvSqrt, Schedule::Cosine] {
                let cfg = TrainConfig { warmup_steps: w, base_lr: base, schedule, ..TrainConfig::default() };
                let total = 3 * w + 10;
                let at = lr_at(w, &cfg, total);
                prop_assert!((at - base).abs() <= 1e-12 * base);
                let next = lr_at(w + 1, &cfg, total);
                prop_assert!((next - at).abs() <= base / w as f64 + 1e-12);
            }
        }
    }

    #[test]
    fn schedule_examples() {
        let cfg = TrainConfig { warmup_steps: 100, base_lr: 0.5, ..TrainConfig::default() };
        assert_eq!(lr_at(100, &cfg, 1000), 0.5);
        assert_eq!(lr_at(400, &cfg, 1000), 0.25);
        assert_eq!(lr_at(50, &cfg, 1000), 0.25);
        let cos = TrainConfig { schedule: Schedule::Cosine, ..cfg };
        assert_eq!(lr_at(100, &cos, 1000), 0.5);
        assert!(lr_at(1000, &cos, 1000) < 1e-15);
        assert!((lr_at(550, &cos, 1000) - 0.25).abs() < 1e-12);
    }

    fn tiny_cfg(task: Task, output_dim: usize) -> SatConfig {
        SatConfig {
            num_layers: 1,
            hidden_dim: 16,
            num_heads: 2,
            k: 1,
            pe: PeKind::Rwpe,
            pe_dim: 4,
            task,
            output_dim,
            ..SatConfig::default()
        }
    }

    fn tiny_tcfg(epochs: usize) -> TrainConfig {
        TrainConfig { base_lr: 0.01, batch_size: 4, epochs, warmup_steps: 10, ..TrainConfig::default() }
    }

    #[test]
    fn overfits_single_graph() {
        let g = Graph::with_constant_features(5, &[(0, 1), (1, 2), (2, 0), (2, 3), (3, 4)]).unwrap();
        let d = Dataset::new(vec![GraphSample { graph: g, target: Target::Scalar(2.5) }]).unwrap();
        let tcfg = TrainConfig {
            base_lr: 0.01,
            batch_size: 1,
            epochs: 400,
            warmup_steps: 20,
            schedule: Schedule::Cosine,
            ..TrainConfig::default()
        };
        let (_, h) = train(&d, &tiny_cfg(Task::Regression, 1), &tcfg).unwrap();
        assert!(h.epochs.last().unwrap().train_loss < 1e-2, "{:?}", h.epochs.last());
    }

    #[test]
    fn training_is_deterministic() {
        let d = split(gen_cycle_vs_triangles(12, 0).unwrap(), [0.5, 0.25, 0.25], 0, true).unwrap();
        let cfg = SatConfig { dropout: 0.2, readout: Readout::Cls, ..tiny_cfg(Task::GraphClass, 2) };
        let tcfg = TrainConfig { loss: LossKind::CrossEntropy, ..tiny_tcfg(5) };
        let (pa, ha) = train(&d, &cfg, &tcfg).unwrap();
        let (pb, hb) = train(&d, &cfg, &tcfg).unwrap();
        assert_eq!(pa, pb);
        assert!(ha.same_trajectory(&hb));
        assert_eq!(ha.epochs.len(), 5);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let d = gen_cycle_vs_triangles(4, 0).unwrap();
        let cfg = SatConfig { readout: Readout::Cls, ..tiny_cfg(Task::GraphClass, 2) };
        let tcfg = TrainConfig { base_lr: 0.0, loss: LossKind::CrossEntropy, ..tiny_tcfg(3) };
        let (p, _) = train(&d, &cfg, &tcfg).unwrap();
        let (_, init) = SatModel::new(cfg, tcfg.seed).unwrap();
        assert_eq!(p, init);
    }

    #[test]
    fn empty_training_split_is_an_error() {
        let d = gen_cycle_vs_triangles(4, 0).unwrap();
        let d = d.with_splits(crate::data::Splits::default()).unwrap();
        let cfg = SatConfig { readout: Readout::Cls, ..tiny_cfg(Task::GraphClass, 2) };
        assert!(matches!(train(&d, &cfg, &tiny_tcfg(1)), Err(Error::EmptyDataset)));
    }

    #[test]
    fn diverging_training_aborts() {
        let g = Graph::with_constant_features(3, &[(0, 1)]).unwrap();
        let d = Dataset::new(vec![GraphSample { graph: g, target: Target::Scalar(1.0) }]).unwrap();
        let tcfg = TrainConfig { base_lr: 1e308, warmup_steps: 1, ..tiny_tcfg(3) };
        let r = train(&d, &tiny_cfg(Task::Regression, 1), &tcfg);
        assert!(matches!(r, Err(Error::NanLoss { .. })), "{r:?}");
    }

    #[test]
    fn metrics_match_independent_pass() {
        let d = gen_cycle_vs_triangles(8, 2).unwrap();
        let cfg = SatConfig { readout: Readout::Cls, ..tiny_cfg(Task::GraphClass, 2) };
        let (model, mut params) = SatModel::new(cfg, 1).unwrap();
        // zero head -> constant logits -> every graph predicted class 0
        *params.get_mut(model.head_w) = Tensor::zeros(16, 2);
        let prepared = prepare_all(&model, &d).unwrap();
        let all: Vec<usize> = (0..8).collect();
        let m = evaluate(&model, &params, &d, &prepared, &all).unwrap();
        assert_eq!(m.accuracy, Some(0.5));
        assert!((m.loss - core::f64::consts::LN_2).abs() < 1e-12);

        let reg = crate::data::gen_triangle_count_regression(6, 6, 0.5, 3).unwrap();
        let (model, params) = SatModel::new(tiny_cfg(Task::Regression, 1), 1).unwrap();
        let prepared = prepare_all(&model, &reg).unwrap();
        let m = evaluate(&model, &params, &reg, &prepared, &all[..6]).unwrap();
        let mut total = 0.0;
        for (s, pg) in reg.samples().iter().zip(&prepared) {
            let Target::Scalar(y) = s.target else { panic!() };
            total += (predict(&model, &params, pg).unwrap().item() - y).abs();
        }
        assert!((m.mae.unwrap() - total / 6.0).abs() < 1e-12);
        assert!(evaluate(&model, &params, &d, &prepared, &all[..1]).is_err());
    }

    #[test]
    fn perfect_predictions_score_perfectly() {
        let d = Dataset::new(vec![GraphSample { graph: Graph::cycle(3), target: Target::Scalar(0.0) }]).unwrap();
        let cfg = SatConfig { pe: PeKind::None, pe_dim: 0, ..tiny_cfg(Task::Regression, 1) };
        let (model, mut params) = SatModel::new(cfg, 0).unwrap();
        *params.get_mut(model.head_w) = Tensor::zeros(16, 1);
        let prepared = prepare_all(&model, &d).unwrap();
        assert_eq!(evaluate(&model, &params, &d, &prepared, &[0]).unwrap().mae, Some(0.0));
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.3, 0.3, 0.1]), 0);
        assert_eq!(argmax(&[0.1, 0.3, 0.3]), 1);
    }

    #[test]
    fn one_small_step_rarely_increases_loss() {
        let mut ok = 0;
        let trials = 40;
        for t in 0..trials {
            let mut rng = seeded(t);
            let g = Graph::new(
                5,
                &[(0, 1), (1, 2), (2, 3), (3, 4), (0, 2)],
                Tensor::from_vec(5, 1, (0..5).map(|_| normal(&mut rng, 0.0, 1.0)).collect()).unwrap(),
                None,
            )
            .unwrap();
            let target = Target::Scalar(normal(&mut rng, 0.0, 2.0));
            let (model, mut params) = SatModel::new(tiny_cfg(Task::Regression, 1), t).unwrap();
            let pg = model.prepare(&g).unwrap();
            let eval = |p: &ModelParams| {
                let mut tape = Tape::new();
                let vars = p.bind(&mut tape);
                let out = model.forward(&mut tape, &vars, &pg, false, 0).unwrap();
                let l = loss(&mut tape, out.prediction, &target, LossKind::L1).unwrap();
                (tape, vars, l)
            };
            let (mut tape, vars, l) = eval(&params);
            let before = tape.value(l).item();
            tape.backward(l).unwrap();
            let mut grads = params.zeros_like();
            grads.accumulate_grads(&tape, &vars);
            let mut state = AdamState::new(&params);
            adamw_step(&mut params, &grads, &mut state, 1e-3, 0.0).unwrap();
            let (tape, _, l) = eval(&params);
            ok += (tape.value(l).item() <= before) as usize;
        }
        assert!(ok * 100 >= 95 * trials as usize, "{ok}/{trials}");
    }
}
