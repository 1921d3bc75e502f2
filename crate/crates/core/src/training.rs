//! Mini-batch training with early stopping, evaluation metrics and the
//! architecture-selection harness.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{SplitTriple, Task, TensorDataset};
use crate::engine::loss::{mean_squared_error, softmax_cross_entropy};
use crate::engine::{BackwardMode, Graph, Selector, Tensor};
use crate::error::{Error, Result};
use crate::models::{build, Model, ModelSpec};

const EVAL_CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 100,
            patience: 10,
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.patience == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "max_epochs, patience and batch_size must be positive".into(),
            ));
        }
        if self.patience >= self.max_epochs {
            return Err(Error::Config(format!(
                "patience {} must be below max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if !(self.learning_rate > 0.0) || !(self.epsilon > 0.0) {
            return Err(Error::Config("learning rate and epsilon must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Accuracy,
    R2,
    Loss,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub kind: MetricKind,
    pub value: f64,
}

impl MetricValue {
    /// Whether `self` beats `other`; loss is minimized, the rest maximized.
    pub fn better_than(&self, other: &MetricValue) -> bool {
        match self.kind {
            MetricKind::Loss => self.value < other.value,
            _ => self.value > other.value,
        }
    }
}

impl std::fmt::Display for MetricValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self.kind {
            MetricKind::Accuracy => "accuracy",
            MetricKind::R2 => "R²",
            MetricKind::Loss => "loss",
        };
        write!(f, "{name} {:.4}", self.value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub train_loss: Vec<f32>,
    pub val_loss: Vec<f32>,
    pub validation: MetricValue,
}

impl TrainReport {
    pub fn best_val_loss(&self) -> f32 {
        self.val_loss[self.best_epoch - 1]
    }
}

/// Patience-based stopping on a minimized quantity. Ties keep the earlier
/// epoch.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f32,
    best_epoch: usize,
    epoch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f32::INFINITY,
            best_epoch: 0,
            epoch: 0,
        }
    }

    pub fn observe(&mut self, loss: f32) -> StopDecision {
        self.epoch += 1;
        if loss < self.best {
            self.best = loss;
            self.best_epoch = self.epoch;
            StopDecision::Improved
        } else if self.epoch - self.best_epoch >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

struct Adam {
    cfg: TrainConfig,
    step: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    fn new(graph: &Graph, cfg: &TrainConfig) -> Self {
        let zeros = || graph.params().iter().map(|p| vec![0.0; p.value.len()]).collect();
        Adam {
            cfg: cfg.clone(),
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    fn update(&mut self, graph: &mut Graph, grads: &[Tensor]) {
        self.step += 1;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step);
        let bc2 = 1.0 - c.beta2.powi(self.step);
        for (p, param) in graph.params_mut().iter_mut().enumerate() {
            let (m, v) = (&mut self.m[p], &mut self.v[p]);
            for (i, (w, &g)) in param
                .value
                .data_mut()
                .iter_mut()
                .zip(grads[p].data())
                .enumerate()
            {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *w -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
            }
        }
    }
}

fn batch_tensor(data: &TensorDataset, indices: &[usize]) -> Tensor {
    let (t, b) = (data.n_steps(), data.n_bands());
    let mut values = Vec::with_capacity(indices.len() * t * b);
    for &i in indices {
        values.extend_from_slice(data.sample(i));
    }
    Tensor::new(vec![indices.len(), t, b], values).expect("sample layout")
}

fn loss_and_grad(head: Task, pred: &Tensor, targets: &[f32]) -> Result<(f32, Tensor)> {
    match head {
        Task::Classification { .. } => softmax_cross_entropy(pred, targets),
        Task::Regression => mean_squared_error(pred, targets),
    }
}

fn check_compatible(model: &Model, data: &TensorDataset) -> Result<()> {
    if model.input_shape() != (data.n_steps(), data.n_bands()) {
        return Err(Error::Shape(format!(
            "model expects [T, B] = {:?}, data is [{}, {}]",
            model.input_shape(),
            data.n_steps(),
            data.n_bands()
        )));
    }
    if model.head() != data.schema().task {
        return Err(Error::Shape("model head does not match the dataset task".into()));
    }
    Ok(())
}

/// Model outputs for every sample, evaluated in chunks.
pub fn predict_all(model: &Model, data: &TensorDataset) -> Result<Tensor> {
    check_compatible(model, data)?;
    let out_dim = model.output_dim();
    let mut out = Vec::with_capacity(data.len() * out_dim);
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(EVAL_CHUNK) {
        let y = model.predict(&batch_tensor(data, chunk))?;
        out.extend_from_slice(y.data());
    }
    Tensor::new(vec![data.len(), out_dim], out)
}

/// Mean loss over a split.
pub fn dataset_loss(model: &Model, data: &TensorDataset) -> Result<f32> {
    let pred = predict_all(model, data)?;
    Ok(loss_and_grad(model.head(), &pred, data.targets())?.0)
}

/// Accuracy for classification, R² (about the split's own target mean) for
/// regression.
pub fn evaluate(model: &Model, data: &TensorDataset) -> Result<MetricValue> {
    let pred = predict_all(model, data)?;
    metric_from_predictions(model.head(), &pred, data.targets())
}

pub fn metric_from_predictions(head: Task, pred: &Tensor, targets: &[f32]) -> Result<MetricValue> {
    match head {
        Task::Classification { .. } => {
            let c = pred.shape()[1];
            let correct = pred
                .data()
                .chunks_exact(c)
                .zip(targets)
                .filter(|(row, &y)| argmax(row) == y as usize)
                .count();
            Ok(MetricValue {
                kind: MetricKind::Accuracy,
                value: correct as f64 / targets.len().max(1) as f64,
            })
        }
        Task::Regression => Ok(MetricValue {
            kind: MetricKind::R2,
            value: r_squared(pred.data(), targets)?,
        }),
    }
}

/// `1 − SS_res / SS_tot`.
pub fn r_squared(pred: &[f32], targets: &[f32]) -> Result<f64> {
    let n = targets.len() as f64;
    let mean = targets.iter().map(|&y| y as f64).sum::<f64>() / n;
    let ss_tot: f64 = targets.iter().map(|&y| (y as f64 - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::ConstantTargets);
    }
    let ss_res: f64 = pred
        .iter()
        .zip(targets)
        .map(|(&p, &y)| (p as f64 - y as f64).powi(2))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Trains until validation loss stops improving for `patience` epochs and
/// returns the weights of the best epoch.
pub fn train(
    mut model: Model,
    train_set: &TensorDataset,
    val: &TensorDataset,
    cfg: &TrainConfig,
) -> Result<(Model, TrainReport)> {
    cfg.validate()?;
    check_compatible(&model, train_set)?;
    check_compatible(&model, val)?;
    if train_set.is_empty() || val.is_empty() {
        return Err(Error::Dataset("training and validation splits must be non-empty".into()));
    }

    let head = model.head();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(1);
    let mut adam = Adam::new(model.graph(), cfg);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_params = model.graph().params().to_vec();
    let mut train_hist = Vec::new();
    let mut val_hist = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0f64;
        for batch in order.chunks(cfg.batch_size) {
            let x = batch_tensor(train_set, batch);
            let y: Vec<f32> = batch.iter().map(|&i| train_set.targets()[i]).collect();
            let grads = {
                let acts = model.graph().forward_train(&x, &mut dropout_rng)?;
                let (loss, seed) = loss_and_grad(head, acts.output(), &y)?;
                if !loss.is_finite() {
                    return Err(Error::Diverged { epoch, loss });
                }
                total += loss as f64 * batch.len() as f64;
                acts.backward(Selector::Upstream(&seed), BackwardMode::Standard)?
            };
            adam.update(model.graph_mut(), &grads.params);
        }
        let train_loss = (total / train_set.len() as f64) as f32;
        let val_loss = dataset_loss(&model, val)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch, loss: val_loss });
        }
        train_hist.push(train_loss);
        val_hist.push(val_loss);
        log::debug!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5}");
        match stopper.observe(val_loss) {
            StopDecision::Improved => best_params = model.graph().params().to_vec(),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }

    model.graph_mut().params_mut().clone_from_slice(&best_params);
    let validation = evaluate(&model, val)?;
    Ok((
        model,
        TrainReport {
            best_epoch: stopper.best_epoch(),
            epochs_run: val_hist.len(),
            train_loss: train_hist,
            val_loss: val_hist,
            validation,
        },
    ))
}

/// One grid entry: what to build and how to train it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub spec: ModelSpec,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

/// Observable steps of [`select_model`], in the order they happen.
#[derive(Debug, Clone, PartialEq)]
pub enum SelectionEvent {
    Evaluated { candidate: usize, split: SplitName },
    Ranked { order: Vec<usize> },
}

#[derive(Debug, Clone)]
pub struct CandidateResult {
    pub index: usize,
    pub candidate: Candidate,
    pub outcome: std::result::Result<CandidateScores, String>,
}

#[derive(Debug, Clone)]
pub struct CandidateScores {
    pub report: TrainReport,
    pub validation: MetricValue,
    pub test: MetricValue,
}

#[derive(Debug)]
pub struct Selection {
    /// Successful candidates first, best validation metric first; failed
    /// candidates trail in grid order.
    pub ranked: Vec<CandidateResult>,
    pub best: Model,
}

impl Selection {
    pub fn winner(&self) -> &CandidateResult {
        &self.ranked[0]
    }
}

/// Trains every candidate, ranks by validation metric (ties keep the
/// earlier grid entry) and only then scores each on the test split.
///
/// `probe` sees every split evaluation and the ranking, so callers can
/// verify that the test split plays no part in selection.
pub fn select_model(
    grid: &[Candidate],
    splits: &SplitTriple,
    seed: u64,
    probe: &(dyn Fn(SelectionEvent) + Sync),
) -> Result<Selection> {
    if grid.is_empty() {
        return Err(Error::Config("model grid is empty".into()));
    }
    let head = splits.train.schema().task;
    let (t, b) = (splits.train.n_steps(), splits.train.n_bands());

    let trained: Vec<std::result::Result<(Model, TrainReport, MetricValue), String>> = grid
        .par_iter()
        .enumerate()
        .map(|(i, cand)| {
            let run = || -> Result<(Model, TrainReport, MetricValue)> {
                let model = build(&cand.spec, head, t, b, seed.wrapping_add(i as u64))?;
                let (model, report) = train(model, &splits.train, &splits.validation, &cand.train)?;
                probe(SelectionEvent::Evaluated {
                    candidate: i,
                    split: SplitName::Validation,
                });
                let val = report.validation;
                Ok((model, report, val))
            };
            run().map_err(|e| {
                log::warn!("candidate {i} ({}) failed: {e}", cand.spec.architecture);
                e.to_string()
            })
        })
        .collect();

    let mut order: Vec<usize> = (0..grid.len()).filter(|&i| trained[i].is_ok()).collect();
    if order.is_empty() {
        return Err(Error::Config("every candidate in the grid failed".into()));
    }
    // stable sort keeps grid order among equal metrics
    order.sort_by(|&a, &b| {
        let va = trained[a].as_ref().unwrap().2.value;
        let vb = trained[b].as_ref().unwrap().2.value;
        vb.total_cmp(&va)
    });
    probe(SelectionEvent::Ranked {
        order: order.clone(),
    });

    let mut models: Vec<Option<Model>> = Vec::with_capacity(grid.len());
    let mut ranked = Vec::with_capacity(grid.len());
    let mut results: Vec<Option<CandidateResult>> = vec![None; grid.len()];
    for (i, outcome) in trained.into_iter().enumerate() {
        let outcome = match outcome {
            Ok((model, report, validation)) => {
                let test = evaluate(&model, &splits.test)?;
                probe(SelectionEvent::Evaluated {
                    candidate: i,
                    split: SplitName::Test,
                });
                models.push(Some(model));
                Ok(CandidateScores {
                    report,
                    validation,
                    test,
                })
            }
            Err(e) => {
                models.push(None);
                Err(e)
            }
        };
        results[i] = Some(CandidateResult {
            index: i,
            candidate: grid[i].clone(),
            outcome,
        });
    }
    let best = models[order[0]].take().expect("winner trained");
    for &i in &order {
        ranked.push(results[i].take().unwrap());
    }
    ranked.extend(results.into_iter().flatten());
    Ok(Selection { ranked, best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureSchema;
    use crate::models::Architecture;

    #[test]
    fn r2_hand_values() {
        assert_eq!(r_squared(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(r_squared(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert!((r_squared(&[1.0, 2.0, 4.0], &[1.0, 2.0, 3.0]).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn r2_constant_targets() {
        assert!(matches!(
            r_squared(&[1.0, 2.0], &[3.0, 3.0]),
            Err(Error::ConstantTargets)
        ));
    }

    #[test]
    fn early_stopping_on_rising_loss() {
        let mut stop = EarlyStopping::new(10);
        let mut stopped_at = None;
        for epoch in 1..=100 {
            if stop.observe(epoch as f32) == StopDecision::Stop {
                stopped_at = Some(epoch);
                break;
            }
        }
        assert_eq!(stopped_at, Some(11));
        assert_eq!(stop.best_epoch(), 1);
    }

    #[test]
    fn early_stopping_tie_keeps_earlier() {
        let mut stop = EarlyStopping::new(3);
        stop.observe(1.0);
        stop.observe(1.0);
        assert_eq!(stop.best_epoch(), 1);
    }

    #[test]
    fn patience_must_be_below_budget() {
        let cfg = TrainConfig {
            max_epochs: 5,
            patience: 5,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    fn separable(n: usize) -> TensorDataset {
        let schema = FeatureSchema::indexed(2, 2, Task::Classification { n_classes: 2 }).unwrap();
        let mut values = Vec::new();
        let mut targets = Vec::new();
        for i in 0..n {
            let s = if i % 2 == 0 { 1.0 } else { -1.0 };
            let jitter = (i as f32 * 0.618).fract() * 0.5;
            values.extend_from_slice(&[s + jitter, s - jitter, 0.3 * s, jitter]);
            targets.push(if s > 0.0 { 1.0 } else { 0.0 });
        }
        TensorDataset::new(schema, values, targets, vec![2000; n]).unwrap()
    }

    #[test]
    fn separable_set_reaches_full_accuracy() {
        let data = separable(64);
        let spec = ModelSpec {
            hidden: 8,
            depth: 1,
            ..ModelSpec::default_for(Architecture::Mlp)
        };
        let model = build(&spec, data.schema().task, 2, 2, 1).unwrap();
        let cfg = TrainConfig {
            max_epochs: 100,
            patience: 99,
            batch_size: 16,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        let (model, report) = train(model, &data, &data, &cfg).unwrap();
        assert_eq!(evaluate(&model, &data).unwrap().value, 1.0);
        assert!(report.best_epoch <= report.epochs_run);
    }

    #[test]
    fn training_is_deterministic() {
        let data = separable(40);
        let spec = ModelSpec {
            hidden: 6,
            depth: 1,
            dropout: 0.2,
            ..ModelSpec::default_for(Architecture::Mlp)
        };
        let cfg = TrainConfig {
            max_epochs: 12,
            patience: 5,
            batch_size: 8,
            seed: 5,
            ..TrainConfig::default()
        };
        let run = || {
            let model = build(&spec, data.schema().task, 2, 2, 9).unwrap();
            train(model, &data, &data, &cfg).unwrap().0
        };
        assert_eq!(run().graph().params(), run().graph().params());
    }

    #[test]
    fn returned_weights_reproduce_best_val_loss() {
        let data = separable(48);
        let spec = ModelSpec {
            hidden: 4,
            depth: 1,
            ..ModelSpec::default_for(Architecture::Mlp)
        };
        let cfg = TrainConfig {
            max_epochs: 30,
            patience: 4,
            batch_size: 8,
            learning_rate: 5e-2,
            ..TrainConfig::default()
        };
        let model = build(&spec, data.schema().task, 2, 2, 3).unwrap();
        let (model, report) = train(model, &data, &data, &cfg).unwrap();
        let min = report.val_loss.iter().copied().fold(f32::INFINITY, f32::min);
        assert_eq!(report.best_val_loss(), min);
        assert_eq!(dataset_loss(&model, &data).unwrap(), min);
    }
}
