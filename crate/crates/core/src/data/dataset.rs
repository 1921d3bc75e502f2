use std::collections::BTreeSet;

use crate::data::schema::{FeatureSchema, Task};
use crate::error::{Error, Result};

/// Samples × time steps × bands, with one target and one year per sample.
///
/// `values` is row-major `[N, T, B]`. Classification targets hold class
/// indices stored as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorDataset {
    pub(crate) schema: FeatureSchema,
    pub(crate) values: Vec<f32>,
    pub(crate) targets: Vec<f32>,
    pub(crate) years: Vec<u32>,
}

impl TensorDataset {
    pub fn new(
        schema: FeatureSchema,
        values: Vec<f32>,
        targets: Vec<f32>,
        years: Vec<u32>,
    ) -> Result<Self> {
        schema.validate()?;
        let n = targets.len();
        if years.len() != n {
            return Err(Error::Dataset(format!(
                "{} targets but {} years",
                n,
                years.len()
            )));
        }
        let expected = n * schema.n_steps() * schema.n_bands();
        if values.len() != expected {
            return Err(Error::Dataset(format!(
                "values hold {} entries, expected N·T·B = {expected}",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Dataset(format!("non-finite value at flat index {pos}")));
        }
        if let Some(pos) = targets.iter().position(|v| !v.is_finite()) {
            return Err(Error::Dataset(format!("non-finite target at sample {pos}")));
        }
        if let Task::Classification { n_classes } = schema.task {
            for (i, &y) in targets.iter().enumerate() {
                if y < 0.0 || y.fract() != 0.0 || y as usize >= n_classes {
                    return Err(Error::Dataset(format!(
                        "target {y} of sample {i} is not a class index below {n_classes}"
                    )));
                }
            }
        }
        Ok(TensorDataset {
            schema,
            values,
            targets,
            years,
        })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn targets(&self) -> &[f32] {
        &self.targets
    }

    pub fn years(&self) -> &[u32] {
        &self.years
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn n_steps(&self) -> usize {
        self.schema.n_steps()
    }

    pub fn n_bands(&self) -> usize {
        self.schema.n_bands()
    }

    /// `[N, T, B]`
    pub fn shape(&self) -> [usize; 3] {
        [self.len(), self.n_steps(), self.n_bands()]
    }

    pub fn sample_len(&self) -> usize {
        self.n_steps() * self.n_bands()
    }

    /// The `[T, B]` block of sample `i`.
    pub fn sample(&self, i: usize) -> &[f32] {
        let len = self.sample_len();
        &self.values[i * len..(i + 1) * len]
    }

    /// Copies the listed samples, in the given order.
    pub fn select(&self, indices: &[usize]) -> TensorDataset {
        let len = self.sample_len();
        let mut values = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            values.extend_from_slice(self.sample(i));
        }
        TensorDataset {
            schema: self.schema.clone(),
            values,
            targets: indices.iter().map(|&i| self.targets[i]).collect(),
            years: indices.iter().map(|&i| self.years[i]).collect(),
        }
    }

    /// Removes whole band series. Survivors keep their order and stable ids.
    pub fn delete_bands(&self, band_ids: &BTreeSet<usize>) -> Result<TensorDataset> {
        let keep = surviving_positions(
            &self.schema.band_ids(),
            band_ids,
            "band",
            "cannot delete every band",
        )?;
        let (t, b) = (self.n_steps(), self.n_bands());
        let mut values = Vec::with_capacity(self.len() * t * keep.len());
        for row in self.values.chunks_exact(b) {
            values.extend(keep.iter().map(|&p| row[p]));
        }
        let mut schema = self.schema.clone();
        schema.bands = keep.iter().map(|&p| self.schema.bands[p].clone()).collect();
        Ok(TensorDataset {
            schema,
            values,
            targets: self.targets.clone(),
            years: self.years.clone(),
        })
    }

    /// Removes whole time steps across every band.
    pub fn delete_timesteps(&self, step_ids: &BTreeSet<usize>) -> Result<TensorDataset> {
        let keep = surviving_positions(
            &self.schema.step_ids(),
            step_ids,
            "time step",
            "cannot delete every time step",
        )?;
        let b = self.n_bands();
        let mut values = Vec::with_capacity(self.len() * keep.len() * b);
        for i in 0..self.len() {
            let sample = self.sample(i);
            for &p in &keep {
                values.extend_from_slice(&sample[p * b..(p + 1) * b]);
            }
        }
        let mut schema = self.schema.clone();
        schema.timesteps = keep
            .iter()
            .map(|&p| self.schema.timesteps[p].clone())
            .collect();
        Ok(TensorDataset {
            schema,
            values,
            targets: self.targets.clone(),
            years: self.years.clone(),
        })
    }

    /// Per-cell mean over samples, `[T, B]`.
    pub fn feature_means(&self) -> Vec<f32> {
        let len = self.sample_len();
        let mut acc = vec![0f64; len];
        for i in 0..self.len() {
            for (a, &v) in acc.iter_mut().zip(self.sample(i)) {
                *a += v as f64;
            }
        }
        let n = self.len().max(1) as f64;
        acc.into_iter().map(|a| (a / n) as f32).collect()
    }

    /// Per-cell `max − min` over samples, `[T, B]`.
    pub fn feature_ranges(&self) -> Vec<f32> {
        let len = self.sample_len();
        let mut lo = vec![f32::INFINITY; len];
        let mut hi = vec![f32::NEG_INFINITY; len];
        for i in 0..self.len() {
            for (j, &v) in self.sample(i).iter().enumerate() {
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
        lo.iter()
            .zip(&hi)
            .map(|(l, h)| if h >= l { h - l } else { 0.0 })
            .collect()
    }
}

fn surviving_positions(
    ids: &[usize],
    remove: &BTreeSet<usize>,
    what: &str,
    all_msg: &str,
) -> Result<Vec<usize>> {
    if let Some(unknown) = remove.iter().find(|id| !ids.contains(id)) {
        return Err(Error::Dataset(format!("unknown {what} id {unknown}")));
    }
    if remove.len() >= ids.len() {
        return Err(Error::Dataset(all_msg.to_string()));
    }
    Ok(ids
        .iter()
        .enumerate()
        .filter(|(_, id)| !remove.contains(id))
        .map(|(p, _)| p)
        .collect())
}
