use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One input channel: a spectral band, a weather variable or a static
/// attribute repeated over time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Band {
    pub id: usize,
    pub name: String,
    pub modality: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeStep {
    pub id: usize,
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Task {
    Classification { n_classes: usize },
    Regression,
}

impl Task {
    pub fn is_classification(&self) -> bool {
        matches!(self, Task::Classification { .. })
    }
}

/// Names the bands and time steps of a dataset by stable ids.
///
/// Ids are assigned once and never renumbered, so after deleting band 3
/// from `{0..5}` the survivors are still `{0, 1, 2, 4, 5}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub bands: Vec<Band>,
    pub timesteps: Vec<TimeStep>,
    pub task: Task,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub class_names: Vec<String>,
}

impl FeatureSchema {
    pub fn new(bands: Vec<Band>, timesteps: Vec<TimeStep>, task: Task) -> Result<Self> {
        let schema = FeatureSchema {
            bands,
            timesteps,
            task,
            class_names: Vec::new(),
        };
        schema.validate()?;
        Ok(schema)
    }

    /// Schema with bands `0..n_bands` named `band_<i>` and steps `0..n_steps`
    /// labelled `t<i>`.
    pub fn indexed(n_steps: usize, n_bands: usize, task: Task) -> Result<Self> {
        let bands = (0..n_bands)
            .map(|id| Band {
                id,
                name: format!("band_{id}"),
                modality: "generic".to_string(),
            })
            .collect();
        let timesteps = (0..n_steps)
            .map(|id| TimeStep {
                id,
                label: format!("t{id}"),
            })
            .collect();
        Self::new(bands, timesteps, task)
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        self.class_names = names;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !strictly_increasing(self.bands.iter().map(|b| b.id)) {
            return Err(Error::Schema("band ids must be strictly increasing".into()));
        }
        if !strictly_increasing(self.timesteps.iter().map(|s| s.id)) {
            return Err(Error::Schema("time-step ids must be strictly increasing".into()));
        }
        match self.task {
            Task::Classification { n_classes } if n_classes < 2 => {
                return Err(Error::Schema(format!(
                    "classification needs at least 2 classes, got {n_classes}"
                )));
            }
            Task::Classification { n_classes }
                if !self.class_names.is_empty() && self.class_names.len() != n_classes =>
            {
                return Err(Error::Schema(format!(
                    "{} class names for {n_classes} classes",
                    self.class_names.len()
                )));
            }
            Task::Regression if !self.class_names.is_empty() => {
                return Err(Error::Schema("regression task cannot name classes".into()));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn n_bands(&self) -> usize {
        self.bands.len()
    }

    pub fn n_steps(&self) -> usize {
        self.timesteps.len()
    }

    pub fn band_ids(&self) -> Vec<usize> {
        self.bands.iter().map(|b| b.id).collect()
    }

    pub fn step_ids(&self) -> Vec<usize> {
        self.timesteps.iter().map(|s| s.id).collect()
    }

    /// Current position of a stable band id.
    pub fn band_position(&self, id: usize) -> Option<usize> {
        self.bands.binary_search_by_key(&id, |b| b.id).ok()
    }

    pub fn step_position(&self, id: usize) -> Option<usize> {
        self.timesteps.binary_search_by_key(&id, |s| s.id).ok()
    }
}

fn strictly_increasing(ids: impl Iterator<Item = usize>) -> bool {
    let mut prev: Option<usize> = None;
    for id in ids {
        if prev.is_some_and(|p| p >= id) {
            return false;
        }
        prev = Some(id);
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicate_band_ids() {
        let mut schema = FeatureSchema::indexed(2, 3, Task::Regression).unwrap();
        schema.bands[2].id = 1;
        assert!(schema.validate().is_err());
    }

    #[test]
    fn rejects_single_class() {
        let err = FeatureSchema::indexed(2, 2, Task::Classification { n_classes: 1 });
        assert!(err.is_err());
    }

    #[test]
    fn positions_follow_stable_ids() {
        let mut schema = FeatureSchema::indexed(2, 5, Task::Regression).unwrap();
        schema.bands.remove(3);
        assert_eq!(schema.band_position(4), Some(3));
        assert_eq!(schema.band_position(3), None);
    }
}
