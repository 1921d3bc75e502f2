//! Train a GRU on a planted classification task with early stopping and
//! print the loss history.

use roar_eo::data::split_by_year;
use roar_eo::models::{build, Architecture, ModelSpec};
use roar_eo::synthetic::{generate, PlantSpec, PlantTask};
use roar_eo::training::{evaluate, train, TrainConfig};

fn main() -> roar_eo::Result<()> {
    let mut plant = PlantSpec::regression(1200, 8, 4, &[0, 3], 0.5);
    plant.task = PlantTask::Threshold;
    let data = generate(&plant, 1)?;
    let splits = split_by_year(&data, 2, 1)?;

    let spec = ModelSpec {
        hidden: 16,
        ..ModelSpec::default_for(Architecture::Gru)
    };
    let model = build(&spec, data.schema().task, 8, 4, 1)?;
    let cfg = TrainConfig {
        max_epochs: 60,
        patience: 5,
        learning_rate: 5e-3,
        ..TrainConfig::default()
    };
    let (model, report) = train(model, &splits.train, &splits.validation, &cfg)?;
    for (e, (tr, va)) in report.train_loss.iter().zip(&report.val_loss).enumerate() {
        let mark = if e + 1 == report.best_epoch { " <- kept" } else { "" };
        println!("epoch {:>2}: train {tr:.4} validation {va:.4}{mark}", e + 1);
    }
    println!("validation {}, test {}", report.validation, evaluate(&model, &splits.test)?);
    Ok(())
}
