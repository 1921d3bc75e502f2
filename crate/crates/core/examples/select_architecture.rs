//! Rank a grid of architectures on validation data; the test split is only
//! scored after ranking, as the printed event log shows.

use std::sync::Mutex;

use roar_eo::data::split_by_year;
use roar_eo::models::{Architecture, ModelSpec};
use roar_eo::synthetic::{generate, PlantSpec};
use roar_eo::training::{select_model, Candidate, TrainConfig};

fn main() -> roar_eo::Result<()> {
    let data = generate(&PlantSpec::regression(1500, 6, 4, &[1], 0.5), 3)?;
    let splits = split_by_year(&data, 2, 3)?;
    let train = TrainConfig {
        max_epochs: 30,
        patience: 4,
        learning_rate: 5e-3,
        ..TrainConfig::default()
    };
    let grid: Vec<Candidate> = Architecture::ALL
        .iter()
        .map(|&arch| {
            let mut spec = ModelSpec::default_for(arch);
            spec.hidden = 16;
            spec.dense = spec.dense.min(32);
            spec.kernel = spec.kernel.min(3);
            Candidate { spec, train: train.clone() }
        })
        .collect();

    let events = Mutex::new(Vec::new());
    let selection = select_model(&grid, &splits, 3, &|e| events.lock().unwrap().push(e))?;
    for e in events.into_inner().unwrap() {
        println!("{e:?}");
    }
    for r in &selection.ranked {
        match &r.outcome {
            Ok(s) => println!("{:>8}: validation {} test {}", r.candidate.spec.architecture.name(), s.validation, s.test),
            Err(e) => println!("{:>8}: failed: {e}", r.candidate.spec.architecture.name()),
        }
    }
    Ok(())
}
