use serde::{Deserialize, Serialize};

use crate::data::FeatureSchema;

/// How the `T × B` cells of a sample are grouped into features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupingAxis {
    /// One group per time step, holding all bands at that step.
    ByTimestep,
    /// One group per band, holding its whole series.
    ByBand,
    /// Every cell on its own.
    Singleton,
}

impl GroupingAxis {
    pub fn name(&self) -> &'static str {
        match self {
            GroupingAxis::ByTimestep => "timestep",
            GroupingAxis::ByBand => "band",
            GroupingAxis::Singleton => "singleton",
        }
    }
}

/// Concrete groups for one schema: stable ids and the flat `t·B + b` cells
/// each group covers.
#[derive(Debug, Clone, PartialEq)]
pub struct Grouping {
    pub axis: GroupingAxis,
    pub ids: Vec<usize>,
    pub cells: Vec<Vec<usize>>,
}

impl Grouping {
    pub fn new(schema: &FeatureSchema, axis: GroupingAxis) -> Self {
        let (t, b) = (schema.n_steps(), schema.n_bands());
        let (ids, cells) = match axis {
            GroupingAxis::ByTimestep => (
                schema.step_ids(),
                (0..t).map(|s| (s * b..(s + 1) * b).collect()).collect(),
            ),
            GroupingAxis::ByBand => (
                schema.band_ids(),
                (0..b).map(|c| (0..t).map(|s| s * b + c).collect()).collect(),
            ),
            // singleton ids are positions in the current grid
            GroupingAxis::Singleton => ((0..t * b).collect(), (0..t * b).map(|i| vec![i]).collect()),
        };
        Grouping { axis, ids, cells }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Sums per-cell values into per-group values.
    pub fn sum_cells(&self, cells: &[f32]) -> Vec<f32> {
        self.cells
            .iter()
            .map(|g| g.iter().map(|&c| cells[c] as f64).sum::<f64>() as f32)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Task;

    #[test]
    fn groups_partition_the_grid() {
        let schema = FeatureSchema::indexed(4, 3, Task::Regression).unwrap();
        for axis in [GroupingAxis::ByTimestep, GroupingAxis::ByBand, GroupingAxis::Singleton] {
            let g = Grouping::new(&schema, axis);
            let mut all: Vec<usize> = g.cells.iter().flatten().copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..12).collect::<Vec<_>>(), "{axis:?}");
        }
    }

    #[test]
    fn band_groups_use_stable_ids() {
        let mut schema = FeatureSchema::indexed(2, 4, Task::Regression).unwrap();
        schema.bands.remove(1);
        let g = Grouping::new(&schema, GroupingAxis::ByBand);
        assert_eq!(g.ids, vec![0, 2, 3]);
        assert_eq!(g.cells[1], vec![1, 4]);
    }
}
