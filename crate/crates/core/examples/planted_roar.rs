//! Band-deletion ROAR on a planted dataset where only bands 2 and 5 matter.
//!
//! Runs both deletion orders with Shapley value sampling and prints each
//! curve plus the sufficient and necessary band sets.

use std::time::Instant;

use roar_eo::attribution::GroupingAxis;
use roar_eo::data::split_by_year;
use roar_eo::models::{Architecture, ModelSpec};
use roar_eo::roar::{necessary_set, run_roar, sufficient_set, DeletionOrder, DeletionPlan};
use roar_eo::synthetic::{generate, PlantSpec};
use roar_eo::training::TrainConfig;

fn main() -> roar_eo::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let data = generate(&PlantSpec::regression(4000, 12, 8, &[2, 5], 1.0), 7)?;
    let splits = split_by_year(&data, 2, 7)?;
    let spec = ModelSpec {
        hidden: 16,
        depth: 2,
        kernel: 3,
        dense: 32,
        ..ModelSpec::default_for(Architecture::TempCnn)
    };
    let cfg = TrainConfig {
        max_epochs: 40,
        patience: 5,
        learning_rate: 3e-3,
        ..TrainConfig::default()
    };
    for order in [DeletionOrder::LeastFirst, DeletionOrder::MostFirst] {
        let mut plan = DeletionPlan::new(GroupingAxis::ByBand, order, "svs".parse()?);
        plan.budget.n_samples = Some(256);
        plan.budget.n_permutations = 16;
        plan.tolerance = 0.05;
        let start = Instant::now();
        let curve = run_roar(&splits, &spec, &cfg, &plan, 7, None, &mut |_| Ok(()))?;
        println!("{} ({:.0?})", order.name(), start.elapsed());
        print!("{}", curve.to_csv());
        match order {
            DeletionOrder::LeastFirst => println!("sufficient bands: {:?}", sufficient_set(&curve)?.ids),
            DeletionOrder::MostFirst => {
                let floor = 0.5 * curve.baseline().value;
                println!("necessary bands: {:?}", necessary_set(&curve, floor)?);
            }
        }
    }
    Ok(())
}
