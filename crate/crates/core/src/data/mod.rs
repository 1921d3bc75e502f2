//! Dataset container, feature schema, year-based splits and the on-disk
//! format.

mod dataset;
pub mod io;
mod schema;
mod split;

pub use dataset::TensorDataset;
pub use io::{load_dataset, save_dataset};
pub use schema::{Band, FeatureSchema, Task, TimeStep};
pub use split::{split_by_year, split_membership, SplitMembership, SplitTriple};
