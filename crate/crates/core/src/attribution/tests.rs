use super::*;
use crate::data::FeatureSchema;
use crate::engine::GraphBuilder;
use crate::models::{build, Architecture, ModelSpec};

/// `f(x) = Σ w_i·x_i` over a `[1, B]` sample.
fn linear(weights: &[f32]) -> Model {
    let b = weights.len();
    let mut g = GraphBuilder::new(&[1, b]);
    let x = g.input();
    let flat = g.flatten(x).unwrap();
    let w = g.param("w", Tensor::new(vec![b, 1], weights.to_vec()).unwrap());
    let y = g.matmul(flat, w).unwrap();
    Model::from_graph(g.finish(y).unwrap(), Task::Regression).unwrap()
}

fn dataset(t: usize, b: usize, rows: Vec<Vec<f32>>) -> TensorDataset {
    let n = rows.len();
    let schema = FeatureSchema::indexed(t, b, Task::Regression).unwrap();
    TensorDataset::new(schema, rows.concat(), vec![0.0; n], vec![2000; n]).unwrap()
}

fn inputs<'a>(data: &'a TensorDataset, ids: &'a [usize], baseline: Vec<f32>) -> ExplainInputs<'a> {
    ExplainInputs {
        data,
        sample_ids: ids,
        ranges: data.feature_ranges(),
        baseline,
    }
}

#[test]
fn svs_on_linear_model() {
    let model = linear(&[2.0, 3.0]);
    let data = dataset(1, 2, vec![vec![1.0, 1.0]]);
    let ins = inputs(&data, &[0], vec![0.0, 0.0]);
    let m = svs(&model, &ins, GroupingAxis::Singleton, 16, 1).unwrap();
    assert_eq!(m.scores, vec![2.0, 3.0]);

    let m = svs(&model, &ins, GroupingAxis::ByTimestep, 16, 1).unwrap();
    assert_eq!(m.scores, vec![5.0]);
}

#[test]
fn svs_zero_at_baseline() {
    let model = build(
        &ModelSpec {
            hidden: 6,
            ..ModelSpec::default_for(Architecture::Mlp)
        },
        Task::Regression,
        3,
        2,
        7,
    )
    .unwrap();
    let row = vec![0.3, -1.0, 0.5, 2.0, 0.0, 1.5];
    let data = dataset(3, 2, vec![row.clone()]);
    let ins = inputs(&data, &[0], row);
    let m = svs(&model, &ins, GroupingAxis::ByBand, 32, 4).unwrap();
    assert!(m.scores.iter().all(|&v| v == 0.0), "{:?}", m.scores);
}

#[test]
fn exact_shapley_linear_closed_form() {
    let w = [1.5, -2.0, 0.25, 4.0];
    let model = linear(&w);
    let x = [1.0, 2.0, -3.0, 0.5];
    let base = [0.5, 0.0, 1.0, -1.0];
    let schema = FeatureSchema::indexed(1, 4, Task::Regression).unwrap();
    let grouping = Grouping::new(&schema, GroupingAxis::ByBand);
    let phi = exact_shapley(&model, &x, &base, &grouping).unwrap();
    for i in 0..4 {
        let expected = (w[i] * (x[i] - base[i])) as f64;
        assert!((phi[i] - expected).abs() < 1e-5, "{i}: {} vs {expected}", phi[i]);
    }
}

#[test]
fn exact_shapley_symmetry() {
    // f = ReLU(2·x1) + ReLU(2·x2)
    let mut g = GraphBuilder::new(&[1, 2]);
    let x = g.input();
    let flat = g.flatten(x).unwrap();
    let w = g.param("w", Tensor::new(vec![2, 2], vec![2.0, 0.0, 0.0, 2.0]).unwrap());
    let h = g.matmul(flat, w).unwrap();
    let h = g.relu(h).unwrap();
    let v = g.param("v", Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap());
    let y = g.matmul(h, v).unwrap();
    let model = Model::from_graph(g.finish(y).unwrap(), Task::Regression).unwrap();
    let schema = FeatureSchema::indexed(1, 2, Task::Regression).unwrap();
    let grouping = Grouping::new(&schema, GroupingAxis::ByBand);
    let phi = exact_shapley(&model, &[0.7, 0.7], &[0.0, 0.0], &grouping).unwrap();
    assert_eq!(phi[0], phi[1]);
}

#[test]
fn exact_shapley_group_limit() {
    let model = linear(&[1.0; 13]);
    let schema = FeatureSchema::indexed(1, 13, Task::Regression).unwrap();
    let grouping = Grouping::new(&schema, GroupingAxis::ByBand);
    assert!(exact_shapley(&model, &[0.0; 13], &[0.0; 13], &grouping).is_err());
}

fn small_net(t: usize, b: usize, seed: u64) -> Model {
    build(
        &ModelSpec {
            hidden: 8,
            depth: 2,
            ..ModelSpec::default_for(Architecture::Mlp)
        },
        Task::Regression,
        t,
        b,
        seed,
    )
    .unwrap()
}

fn wavy(n: usize, len: usize, phase: f32) -> Vec<Vec<f32>> {
    (0..n)
        .map(|i| (0..len).map(|j| ((i * len + j) as f32 * 0.77 + phase).sin() * 1.5).collect())
        .collect()
}

#[test]
fn efficiency_of_exact_values() {
    let model = small_net(3, 4, 5);
    let data = dataset(3, 4, wavy(3, 12, 0.3));
    let baseline = data.feature_means();
    for axis in [GroupingAxis::ByBand, GroupingAxis::ByTimestep] {
        let grouping = Grouping::new(data.schema(), axis);
        for i in 0..3 {
            let x = data.sample(i);
            let phi = exact_shapley(&model, x, &baseline, &grouping).unwrap();
            let fx = model.predict(&Tensor::new(vec![1, 3, 4], x.to_vec()).unwrap()).unwrap();
            let fb = model
                .predict(&Tensor::new(vec![1, 3, 4], baseline.clone()).unwrap())
                .unwrap();
            let gap = (fx.data()[0] - fb.data()[0]) as f64;
            assert!((phi.iter().sum::<f64>() - gap).abs() <= 1e-4);
        }
    }
}

#[test]
fn svs_standard_error_shrinks_with_permutations() {
    let model = small_net(2, 5, 8);
    let data = dataset(2, 5, wavy(1, 10, 1.1));
    let ins = inputs(&data, &[0], data.feature_means().iter().map(|_| 0.0).collect());
    // average over seeds to smooth the ratio
    let mean_err = |p: usize| -> f64 {
        (0..8)
            .map(|s| {
                let (_, e) = svs_with_errors(&model, &ins, GroupingAxis::ByBand, p, s).unwrap();
                e.iter().sum::<f64>()
            })
            .sum::<f64>()
    };
    let ratio = mean_err(64) / mean_err(1024);
    // √(1024/64) = 4
    assert!((3.0..5.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn gb_linear_sums_weights() {
    let model = linear(&[2.0, -3.0, 0.5]);
    let data = dataset(1, 3, vec![vec![1.0, 1.0, 1.0], vec![-4.0, 2.0, 0.0]]);
    let ins = inputs(&data, &[0, 1], vec![0.0; 3]);
    let m = gb(&model, &ins, GroupingAxis::ByBand).unwrap();
    assert_eq!(m.scores, vec![2.0, -3.0, 0.5, 2.0, -3.0, 0.5]);
    let m = gb(&model, &ins, GroupingAxis::ByTimestep).unwrap();
    assert_eq!(m.scores, vec![-0.5, -0.5]);
}

#[test]
fn gb_zero_for_ignored_band() {
    // two time steps, band 1 has zero weight at both
    let mut g = GraphBuilder::new(&[2, 2]);
    let x = g.input();
    let flat = g.flatten(x).unwrap();
    let w = g.param("w", Tensor::new(vec![4, 1], vec![1.0, 0.0, -2.0, 0.0]).unwrap());
    let y = g.matmul(flat, w).unwrap();
    let model = Model::from_graph(g.finish(y).unwrap(), Task::Regression).unwrap();
    let data = dataset(2, 2, wavy(3, 4, 0.0));
    let ins = inputs(&data, &[0, 1, 2], vec![0.0; 4]);
    let m = gb(&model, &ins, GroupingAxis::ByBand).unwrap();
    for i in 0..3 {
        assert_eq!(m.row(i)[1], 0.0);
    }
}

#[test]
fn gb_identical_samples_identical_rows() {
    let model = small_net(3, 2, 1);
    let row = wavy(1, 6, 0.4).remove(0);
    let data = dataset(3, 2, vec![row.clone(), row.clone(), row]);
    let ins = inputs(&data, &[0, 1, 2], vec![0.0; 6]);
    let m = gb(&model, &ins, GroupingAxis::ByTimestep).unwrap();
    assert_eq!(m.row(0), m.row(1));
    assert_eq!(m.row(1), m.row(2));
}

fn noiseless(ensemble_size: usize) -> ExplainBudget {
    ExplainBudget {
        n_samples: None,
        n_permutations: 12,
        ensemble_size,
        noise_scale: 0.0,
    }
}

#[test]
fn ensembles_collapse_without_noise() {
    let model = small_net(3, 3, 2);
    let data = dataset(3, 3, wavy(4, 9, 0.9));
    let ids = [0, 1, 2, 3];
    let ins = ExplainInputs::from_training(&data, &ids);
    for base in [BaseEstimator::Svs, BaseEstimator::Gb] {
        for size in [1, 15] {
            let budget = noiseless(size);
            let plain = match base {
                BaseEstimator::Svs => svs(&model, &ins, GroupingAxis::ByBand, 12, 3).unwrap(),
                BaseEstimator::Gb => gb(&model, &ins, GroupingAxis::ByBand).unwrap(),
            };
            let sgs = smoothgrad_squared(base, &model, &ins, GroupingAxis::ByBand, &budget, 3).unwrap();
            let squared: Vec<f32> = plain.scores.iter().map(|v| ((*v as f64) * (*v as f64)) as f32).collect();
            assert_eq!(sgs.scores, squared, "{base:?} size {size}");
            let var = vargrad(base, &model, &ins, GroupingAxis::ByBand, &budget, 3).unwrap();
            assert!(var.scores.iter().all(|&v| v == 0.0), "{base:?} size {size}");
        }
    }
}

#[test]
fn ensembles_nonnegative_and_seeded() {
    let model = small_net(2, 3, 4);
    let data = dataset(2, 3, wavy(3, 6, 0.2));
    let ids = [0, 1, 2];
    let ins = ExplainInputs::from_training(&data, &ids);
    let budget = ExplainBudget {
        n_samples: None,
        n_permutations: 8,
        ensemble_size: 5,
        noise_scale: 0.15,
    };
    for base in [BaseEstimator::Svs, BaseEstimator::Gb] {
        let a = smoothgrad_squared(base, &model, &ins, GroupingAxis::ByTimestep, &budget, 9).unwrap();
        let b = vargrad(base, &model, &ins, GroupingAxis::ByTimestep, &budget, 9).unwrap();
        assert!(a.scores.iter().chain(&b.scores).all(|&v| v >= 0.0));
        assert_eq!(
            b,
            vargrad(base, &model, &ins, GroupingAxis::ByTimestep, &budget, 9).unwrap()
        );
        assert!(b.scores.iter().any(|&v| v > 0.0));
    }
}

#[test]
fn svs_independent_of_sample_batching() {
    let model = small_net(2, 3, 6);
    let data = dataset(2, 3, wavy(4, 6, 0.5));
    let all = [0, 1, 2, 3];
    let ins = ExplainInputs::from_training(&data, &all);
    let joint = svs(&model, &ins, GroupingAxis::ByBand, 10, 2).unwrap();
    let one = [2];
    let single = svs(
        &model,
        &ExplainInputs {
            sample_ids: &one,
            ..ins.clone()
        },
        GroupingAxis::ByBand,
        10,
        2,
    )
    .unwrap();
    assert_eq!(joint.row(2), single.row(0));
}

#[test]
fn sample_selection_is_frozen_by_seed() {
    let budget = ExplainBudget {
        n_samples: Some(10),
        ..ExplainBudget::default()
    };
    let a = budget.select_samples(100, 4);
    assert_eq!(a, budget.select_samples(100, 4));
    assert_eq!(a.len(), 10);
    assert_eq!(ExplainBudget::default().select_samples(30, 1).len(), 30);
}

#[test]
fn estimator_names_round_trip() {
    for name in ["svs", "gb", "svs-sgs", "gb-sgs", "svs-var", "gb-var"] {
        let spec: EstimatorSpec = name.parse().unwrap();
        assert_eq!(spec.to_string(), name);
    }
    assert!("ig".parse::<EstimatorSpec>().is_err());
}
