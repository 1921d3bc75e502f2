//! Planted-signal datasets whose relevant cells are known by construction.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{FeatureSchema, Task, TensorDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantTask {
    Regression,
    /// Label 1 when the noisy linear score is positive.
    Threshold,
}

/// `y = Σ w[b]·x[t, b] + ε` over signal bands `b` and signal steps `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    pub n: usize,
    pub t: usize,
    pub b: usize,
    pub signal_bands: BTreeSet<usize>,
    /// Empty means every step.
    #[serde(default)]
    pub signal_steps: BTreeSet<usize>,
    /// Per-band weight; bands not listed get 1.
    #[serde(default)]
    pub weights: BTreeMap<usize, f32>,
    #[serde(default)]
    pub noise_std: f32,
    #[serde(default = "default_task")]
    pub task: PlantTask,
    /// First and last year, assigned round-robin.
    #[serde(default = "default_years")]
    pub years: (u32, u32),
}

fn default_task() -> PlantTask {
    PlantTask::Regression
}

fn default_years() -> (u32, u32) {
    (2016, 2021)
}

impl PlantSpec {
    pub fn regression(n: usize, t: usize, b: usize, signal_bands: &[usize], noise_std: f32) -> Self {
        PlantSpec {
            n,
            t,
            b,
            signal_bands: signal_bands.iter().copied().collect(),
            signal_steps: BTreeSet::new(),
            weights: BTreeMap::new(),
            noise_std,
            task: PlantTask::Regression,
            years: default_years(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.t == 0 || self.b == 0 {
            return Err(Error::Config("plant spec needs positive n, t and b".into()));
        }
        if self.signal_bands.is_empty() {
            return Err(Error::Config("plant spec needs at least one signal band".into()));
        }
        if let Some(&b) = self.signal_bands.iter().find(|&&b| b >= self.b) {
            return Err(Error::Config(format!("signal band {b} outside 0..{}", self.b)));
        }
        if let Some(&t) = self.signal_steps.iter().find(|&&t| t >= self.t) {
            return Err(Error::Config(format!("signal step {t} outside 0..{}", self.t)));
        }
        if let Some(b) = self.weights.keys().find(|b| !self.signal_bands.contains(b)) {
            return Err(Error::Config(format!("weight given for non-signal band {b}")));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(Error::Config("noise_std must be finite and non-negative".into()));
        }
        if self.years.1 < self.years.0 {
            return Err(Error::Config("year range is reversed".into()));
        }
        Ok(())
    }

    /// Whether cell `(t, b)` enters the target.
    pub fn is_signal(&self, t: usize, b: usize) -> bool {
        self.signal_bands.contains(&b) && (self.signal_steps.is_empty() || self.signal_steps.contains(&t))
    }

    pub fn weight(&self, b: usize) -> f32 {
        self.weights.get(&b).copied().unwrap_or(1.0)
    }
}

pub fn generate(spec: &PlantSpec, seed: u64) -> Result<TensorDataset> {
    spec.validate()?;
    let (n, t, b) = (spec.n, spec.t, spec.b);
    let task = match spec.task {
        PlantTask::Regression => Task::Regression,
        PlantTask::Threshold => Task::Classification { n_classes: 2 },
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(n * t * b);
    let mut targets = Vec::with_capacity(n);
    let span = spec.years.1 - spec.years.0 + 1;
    for _ in 0..n {
        let mut score = 0f64;
        for ti in 0..t {
            for bi in 0..b {
                let v: f32 = StandardNormal.sample(&mut rng);
                if spec.is_signal(ti, bi) {
                    score += (spec.weight(bi) * v) as f64;
                }
                values.push(v);
            }
        }
        let eps: f32 = StandardNormal.sample(&mut rng);
        let y = score as f32 + spec.noise_std * eps;
        targets.push(match spec.task {
            PlantTask::Regression => y,
            PlantTask::Threshold => (y > 0.0) as u8 as f32,
        });
    }
    let years = (0..n).map(|i| spec.years.0 + (i as u32 % span)).collect();
    TensorDataset::new(FeatureSchema::indexed(t, b, task)?, values, targets, years)
}
