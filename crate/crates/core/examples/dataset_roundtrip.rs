//! Build a small dataset with named bands, split it by year, delete a band
//! and round-trip it through the MMTS directory format.

use std::collections::BTreeSet;

use roar_eo::data::{load_dataset, save_dataset, split_by_year, Band, FeatureSchema, Task, TensorDataset, TimeStep};

fn main() -> roar_eo::Result<()> {
    let bands = ["B2", "B3", "B4", "B8", "temperature"]
        .iter()
        .enumerate()
        .map(|(id, name)| Band {
            id,
            name: name.to_string(),
            modality: if id < 4 { "optical".into() } else { "weather".into() },
        })
        .collect();
    let steps = (0..6).map(|id| TimeStep { id, label: format!("month {}", id + 1) }).collect();
    let schema = FeatureSchema::new(bands, steps, Task::Classification { n_classes: 2 })?
        .with_class_names(vec!["other".into(), "crop".into()])?;

    let n = 40;
    let values = (0..n * 6 * 5).map(|i| ((i * 37) % 101) as f32 / 100.0).collect();
    let targets = (0..n).map(|i| (i % 2) as f32).collect();
    let years = (0..n).map(|i| 2017 + (i % 4) as u32).collect();
    let data = TensorDataset::new(schema, values, targets, years)?;

    let splits = split_by_year(&data, 2, 0)?;
    println!(
        "train {} / validation {} / test {}",
        splits.train.len(),
        splits.validation.len(),
        splits.test.len()
    );

    let shrunk = data.delete_bands(&BTreeSet::from([1]))?;
    println!("bands after deleting id 1: {:?}", shrunk.schema().band_ids());

    let dir = std::env::temp_dir().join("roar_eo_roundtrip");
    save_dataset(&shrunk, &dir)?;
    let back = load_dataset(&dir)?;
    assert_eq!(back, shrunk);
    println!("round trip through {} ok, shape {:?}", dir.display(), back.shape());
    Ok(())
}
