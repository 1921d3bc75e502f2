//! Explain a trained model with every estimator and compare sampled Shapley
//! values against exact enumeration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use roar_eo::attribution::{aggregate_rank, exact_shapley, explain, svs_sample, EstimatorSpec, ExplainBudget, ExplainInputs, Grouping, GroupingAxis};
use roar_eo::data::split_by_year;
use roar_eo::models::{build, Architecture, ModelSpec};
use roar_eo::synthetic::{generate, PlantSpec};
use roar_eo::training::{train, TrainConfig};

fn main() -> roar_eo::Result<()> {
    let data = generate(&PlantSpec::regression(1500, 6, 5, &[1, 4], 0.5), 5)?;
    let splits = split_by_year(&data, 2, 5)?;
    let spec = ModelSpec {
        hidden: 32,
        ..ModelSpec::default_for(Architecture::Mlp)
    };
    let model = build(&spec, data.schema().task, 6, 5, 5)?;
    let cfg = TrainConfig {
        max_epochs: 30,
        patience: 4,
        learning_rate: 3e-3,
        ..TrainConfig::default()
    };
    let (model, report) = train(model, &splits.train, &splits.validation, &cfg)?;
    println!("trained: {}", report.validation);

    let budget = ExplainBudget {
        n_samples: Some(64),
        n_permutations: 32,
        ensemble_size: 8,
        ..ExplainBudget::default()
    };
    let ids = budget.select_samples(splits.train.len(), 5);
    let inputs = ExplainInputs::from_training(&splits.train, &ids);
    for name in ["svs", "gb", "svs-sgs", "gb-sgs", "svs-var", "gb-var"] {
        let est: EstimatorSpec = name.parse()?;
        let ranking = aggregate_rank(&explain(&model, &inputs, GroupingAxis::ByBand, est, &budget, 5)?)?;
        println!("{name:>8}: bands by importance {:?}", ranking.group_ids);
    }

    let grouping = Grouping::new(splits.train.schema(), GroupingAxis::ByBand);
    let x = splits.train.sample(ids[0]);
    let exact = exact_shapley(&model, x, &inputs.baseline, &grouping)?;
    let est = svs_sample(&model, x, &inputs.baseline, &grouping, 2048, &mut ChaCha8Rng::seed_from_u64(0))?;
    for g in 0..grouping.len() {
        println!(
            "band {g}: exact {:+.4} sampled {:+.4} ± {:.4}",
            exact[g], est.scores[g], est.std_errors[g]
        );
    }
    Ok(())
}
