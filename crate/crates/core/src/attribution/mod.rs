//! Feature-group attribution: Shapley value sampling, guided
//! backpropagation, their SmoothGrad² and VarGrad ensembles, and the
//! absolute-mean ranking used to pick features for deletion.
//!
//! The explained scalar is the logit of the class the model predicts for
//! the explained input (classification) or the single output (regression).

mod grouping;
mod ranking;
mod shapley;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::io::{encode_f32, write_file};
use crate::data::{Task, TensorDataset};
use crate::engine::{BackwardMode, Selector, Tensor};
use crate::error::{Error, Result};
use crate::models::Model;
use crate::training::argmax;

pub use grouping::{Grouping, GroupingAxis};
pub use ranking::{aggregate_rank, ImportanceRanking};
pub use shapley::{exact_shapley, svs_sample, SvsEstimate, MAX_EXACT_GROUPS};

const GB_CHUNK: usize = 512;
const NOISE_DOMAIN: u64 = 0x6e6f_6973_6500_0001;
const PERMUTATION_DOMAIN: u64 = 0x7065_726d_0000_0002;

/// Column of the model output being explained for input `x`.
pub(crate) fn explained_column(model: &Model, x: &[f32]) -> Result<usize> {
    match model.head() {
        Task::Regression => Ok(0),
        Task::Classification { .. } => {
            let (t, b) = model.input_shape();
            let y = model.predict(&Tensor::new(vec![1, t, b], x.to_vec())?)?;
            Ok(argmax(y.data()))
        }
    }
}

/// RNG stream for one sample: independent of scheduling and of every other
/// sample.
fn sample_rng(seed: u64, domain: u64, sample_id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ domain);
    rng.set_stream(sample_id as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaseEstimator {
    Svs,
    Gb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Ensemble {
    None,
    SmoothGradSquared,
    VarGrad,
}

/// A base estimator, optionally wrapped in a noise ensemble. Written as
/// `svs`, `gb`, `svs-sgs`, `gb-sgs`, `svs-var` or `gb-var`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EstimatorSpec {
    pub base: BaseEstimator,
    pub ensemble: Ensemble,
}

impl EstimatorSpec {
    pub const fn plain(base: BaseEstimator) -> Self {
        EstimatorSpec {
            base,
            ensemble: Ensemble::None,
        }
    }
}

impl fmt::Display for EstimatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let base = match self.base {
            BaseEstimator::Svs => "svs",
            BaseEstimator::Gb => "gb",
        };
        match self.ensemble {
            Ensemble::None => write!(f, "{base}"),
            Ensemble::SmoothGradSquared => write!(f, "{base}-sgs"),
            Ensemble::VarGrad => write!(f, "{base}-var"),
        }
    }
}

impl FromStr for EstimatorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (base, ens) = s.split_once('-').unwrap_or((s, ""));
        let base = match base {
            "svs" => BaseEstimator::Svs,
            "gb" => BaseEstimator::Gb,
            other => return Err(Error::Config(format!("unknown estimator {other:?}"))),
        };
        let ensemble = match ens {
            "" => Ensemble::None,
            "sgs" => Ensemble::SmoothGradSquared,
            "var" => Ensemble::VarGrad,
            other => return Err(Error::Config(format!("unknown ensemble {other:?}"))),
        };
        Ok(EstimatorSpec { base, ensemble })
    }
}

impl Serialize for EstimatorSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EstimatorSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// How much work an explanation run may spend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplainBudget {
    /// Training samples to explain; `None` means `min(5000, N_train)`.
    pub n_samples: Option<usize>,
    pub n_permutations: usize,
    pub ensemble_size: usize,
    /// Noise standard deviation as a fraction of each cell's training range.
    pub noise_scale: f32,
}

impl Default for ExplainBudget {
    fn default() -> Self {
        ExplainBudget {
            n_samples: None,
            n_permutations: 64,
            ensemble_size: 15,
            noise_scale: 0.15,
        }
    }
}

impl ExplainBudget {
    pub const DEFAULT_SAMPLES: usize = 5000;

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == Some(0) || self.n_permutations == 0 || self.ensemble_size == 0 {
            return Err(Error::Config("explain budget entries must be positive".into()));
        }
        if !(self.noise_scale >= 0.0) {
            return Err(Error::Config("noise scale must be non-negative".into()));
        }
        Ok(())
    }

    /// Seeded selection of training-sample indices, ascending. Computed once
    /// per experiment and reused across cycles.
    pub fn select_samples(&self, n_train: usize, seed: u64) -> Vec<usize> {
        let k = self.n_samples.unwrap_or(Self::DEFAULT_SAMPLES).min(n_train);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ids = sample_indices(&mut rng, n_train, k).into_vec();
        ids.sort_unstable();
        ids
    }
}

/// The samples to explain plus the references the estimators perturb
/// towards.
#[derive(Debug, Clone)]
pub struct ExplainInputs<'a> {
    pub data: &'a TensorDataset,
    pub sample_ids: &'a [usize],
    /// `[T, B]` reference the Shapley estimator fills absent groups with.
    pub baseline: Vec<f32>,
    /// `[T, B]` per-cell ranges that scale ensemble noise.
    pub ranges: Vec<f32>,
}

impl<'a> ExplainInputs<'a> {
    /// Baseline = per-cell training mean; ranges = per-cell training range.
    pub fn from_training(train: &'a TensorDataset, sample_ids: &'a [usize]) -> Self {
        ExplainInputs {
            data: train,
            sample_ids,
            baseline: train.feature_means(),
            ranges: train.feature_ranges(),
        }
    }

    fn rows(&self) -> Vec<f32> {
        let mut rows = Vec::with_capacity(self.sample_ids.len() * self.data.sample_len());
        for &i in self.sample_ids {
            rows.extend_from_slice(self.data.sample(i));
        }
        rows
    }
}

/// Per-sample, per-group scores from one estimator run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionMatrix {
    pub sample_ids: Vec<usize>,
    pub axis: GroupingAxis,
    pub group_ids: Vec<usize>,
    /// Row-major `[n_samples, n_groups]`.
    pub scores: Vec<f32>,
    pub estimator: String,
}

impl AttributionMatrix {
    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn n_groups(&self) -> usize {
        self.group_ids.len()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let g = self.n_groups();
        &self.scores[i * g..(i + 1) * g]
    }

    /// Writes `scores.bin` (`[n_samples, n_groups]` MMTS payload) and an
    /// `attribution.json` sidecar.
    pub fn save(&self, dir: &Path, budget: &ExplainBudget) -> Result<()> {
        #[derive(Serialize)]
        struct Sidecar<'a> {
            estimator: &'a str,
            axis: GroupingAxis,
            group_ids: &'a [usize],
            sample_ids: &'a [usize],
            budget: &'a ExplainBudget,
        }
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_file(
            &dir.join("scores.bin"),
            &encode_f32(&[self.n_samples(), self.n_groups()], &self.scores),
        )?;
        let sidecar = Sidecar {
            estimator: &self.estimator,
            axis: self.axis,
            group_ids: &self.group_ids,
            sample_ids: &self.sample_ids,
            budget,
        };
        let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
        write_file(&dir.join("attribution.json"), text.as_bytes())
    }
}

fn check_model(model: &Model, data: &TensorDataset) -> Result<()> {
    if model.input_shape() != (data.n_steps(), data.n_bands()) {
        return Err(Error::Shape(format!(
            "model input {:?} does not match data [{}, {}]",
            model.input_shape(),
            data.n_steps(),
            data.n_bands()
        )));
    }
    Ok(())
}

/// Base attributions for arbitrary `[n, T, B]` rows; `ids` key the
/// per-sample RNG streams.
fn base_scores(
    model: &Model,
    base: BaseEstimator,
    rows: &[f32],
    ids: &[usize],
    grouping: &Grouping,
    baseline: &[f32],
    n_permutations: usize,
    seed: u64,
) -> Result<Vec<f32>> {
    match base {
        BaseEstimator::Svs => Ok(svs_rows(
            model,
            rows,
            ids,
            grouping,
            baseline,
            n_permutations,
            seed,
        )?
        .0),
        BaseEstimator::Gb => gb_rows(model, rows, grouping),
    }
}

fn svs_rows(
    model: &Model,
    rows: &[f32],
    ids: &[usize],
    grouping: &Grouping,
    baseline: &[f32],
    n_permutations: usize,
    seed: u64,
) -> Result<(Vec<f32>, Vec<f64>)> {
    let len = baseline.len();
    let per_sample: Vec<SvsEstimate> = ids
        .par_iter()
        .enumerate()
        .map(|(k, &id)| {
            let mut rng = sample_rng(seed, PERMUTATION_DOMAIN, id);
            svs_sample(
                model,
                &rows[k * len..(k + 1) * len],
                baseline,
                grouping,
                n_permutations,
                &mut rng,
            )
        })
        .collect::<Result<_>>()?;
    let scores = per_sample
        .iter()
        .flat_map(|e| e.scores.iter().map(|&v| v as f32))
        .collect();
    let errors = per_sample.into_iter().flat_map(|e| e.std_errors).collect();
    Ok((scores, errors))
}

fn gb_rows(model: &Model, rows: &[f32], grouping: &Grouping) -> Result<Vec<f32>> {
    let (t, b) = model.input_shape();
    let len = t * b;
    let m = model.output_dim();
    let mut out = Vec::with_capacity(rows.len() / len * grouping.len());
    for chunk in rows.chunks(GB_CHUNK * len) {
        let n = chunk.len() / len;
        let x = Tensor::new(vec![n, t, b], chunk.to_vec())?;
        let acts = model.graph().forward(&x)?;
        let columns: Vec<usize> = match model.head() {
            Task::Regression => vec![0; n],
            Task::Classification { .. } => {
                acts.output().data().chunks_exact(m).map(argmax).collect()
            }
        };
        let grad = acts.input_gradient(Selector::Columns(&columns), BackwardMode::Guided)?;
        for cell_grads in grad.data().chunks_exact(len) {
            out.extend(grouping.sum_cells(cell_grads));
        }
    }
    Ok(out)
}

fn matrix(inputs: &ExplainInputs<'_>, grouping: Grouping, scores: Vec<f32>, tag: String) -> AttributionMatrix {
    AttributionMatrix {
        sample_ids: inputs.sample_ids.to_vec(),
        axis: grouping.axis,
        group_ids: grouping.ids,
        scores,
        estimator: tag,
    }
}

/// Shapley value sampling with `n_permutations` permutations per sample.
pub fn svs(
    model: &Model,
    inputs: &ExplainInputs<'_>,
    axis: GroupingAxis,
    n_permutations: usize,
    seed: u64,
) -> Result<AttributionMatrix> {
    Ok(svs_with_errors(model, inputs, axis, n_permutations, seed)?.0)
}

/// [`svs`] plus the standard error of every score, row-major like the
/// scores.
pub fn svs_with_errors(
    model: &Model,
    inputs: &ExplainInputs<'_>,
    axis: GroupingAxis,
    n_permutations: usize,
    seed: u64,
) -> Result<(AttributionMatrix, Vec<f64>)> {
    check_model(model, inputs.data)?;
    let grouping = Grouping::new(inputs.data.schema(), axis);
    let (scores, errors) = svs_rows(
        model,
        &inputs.rows(),
        inputs.sample_ids,
        &grouping,
        &inputs.baseline,
        n_permutations,
        seed,
    )?;
    Ok((matrix(inputs, grouping, scores, "svs".into()), errors))
}

/// Guided-backpropagation gradient of the explained scalar, summed (signed)
/// within each group.
pub fn gb(model: &Model, inputs: &ExplainInputs<'_>, axis: GroupingAxis) -> Result<AttributionMatrix> {
    check_model(model, inputs.data)?;
    let grouping = Grouping::new(inputs.data.schema(), axis);
    let scores = gb_rows(model, &inputs.rows(), &grouping)?;
    Ok(matrix(inputs, grouping, scores, "gb".into()))
}

/// Mean of squared base attributions over noisy copies of each sample.
pub fn smoothgrad_squared(
    base: BaseEstimator,
    model: &Model,
    inputs: &ExplainInputs<'_>,
    axis: GroupingAxis,
    budget: &ExplainBudget,
    seed: u64,
) -> Result<AttributionMatrix> {
    noise_ensemble(base, Ensemble::SmoothGradSquared, model, inputs, axis, budget, seed)
}

/// Population variance of base attributions over noisy copies of each
/// sample.
pub fn vargrad(
    base: BaseEstimator,
    model: &Model,
    inputs: &ExplainInputs<'_>,
    axis: GroupingAxis,
    budget: &ExplainBudget,
    seed: u64,
) -> Result<AttributionMatrix> {
    noise_ensemble(base, Ensemble::VarGrad, model, inputs, axis, budget, seed)
}

fn noise_ensemble(
    base: BaseEstimator,
    kind: Ensemble,
    model: &Model,
    inputs: &ExplainInputs<'_>,
    axis: GroupingAxis,
    budget: &ExplainBudget,
    seed: u64,
) -> Result<AttributionMatrix> {
    budget.validate()?;
    check_model(model, inputs.data)?;
    let grouping = Grouping::new(inputs.data.schema(), axis);
    let clean = inputs.rows();
    let len = inputs.data.sample_len();
    let n = inputs.sample_ids.len();
    let g = grouping.len();

    let mut noise_rngs: Vec<ChaCha8Rng> = inputs
        .sample_ids
        .iter()
        .map(|&id| sample_rng(seed, NOISE_DOMAIN, id))
        .collect();
    let sigma: Vec<f32> = inputs.ranges.iter().map(|r| r * budget.noise_scale).collect();

    // Welford accumulators keep σ = 0 collapses exact.
    let mut mean = vec![0f64; n * g];
    let mut m2 = vec![0f64; n * g];
    for replica in 0..budget.ensemble_size {
        let mut noisy = clean.clone();
        if budget.noise_scale > 0.0 {
            for (k, rng) in noise_rngs.iter_mut().enumerate() {
                for (v, s) in noisy[k * len..(k + 1) * len].iter_mut().zip(&sigma) {
                    let z: f32 = StandardNormal.sample(rng);
                    *v += s * z;
                }
            }
        }
        let scores = base_scores(
            model,
            base,
            &noisy,
            inputs.sample_ids,
            &grouping,
            &inputs.baseline,
            budget.n_permutations,
            seed,
        )?;
        let count = (replica + 1) as f64;
        for (i, &a) in scores.iter().enumerate() {
            let v = match kind {
                Ensemble::SmoothGradSquared => (a as f64) * (a as f64),
                _ => a as f64,
            };
            let d = v - mean[i];
            mean[i] += d / count;
            m2[i] += d * (v - mean[i]);
        }
    }
    let size = budget.ensemble_size as f64;
    let scores = match kind {
        Ensemble::VarGrad => m2.iter().map(|&s| (s / size) as f32).collect(),
        _ => mean.iter().map(|&m| m as f32).collect(),
    };
    let tag = EstimatorSpec { base, ensemble: kind }.to_string();
    Ok(matrix(inputs, grouping, scores, tag))
}

/// Runs any estimator by handle.
pub fn explain(
    model: &Model,
    inputs: &ExplainInputs<'_>,
    axis: GroupingAxis,
    estimator: EstimatorSpec,
    budget: &ExplainBudget,
    seed: u64,
) -> Result<AttributionMatrix> {
    budget.validate()?;
    match (estimator.ensemble, estimator.base) {
        (Ensemble::None, BaseEstimator::Svs) => svs(model, inputs, axis, budget.n_permutations, seed),
        (Ensemble::None, BaseEstimator::Gb) => gb(model, inputs, axis),
        (kind, base) => noise_ensemble(base, kind, model, inputs, axis, budget, seed),
    }
}

#[cfg(test)]
mod tests;
