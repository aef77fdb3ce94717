mod common;

use basis_learner::basis::{
    build_basis1_exact, build_basis_t_exact, default_tolerance, lift_input, BasisState,
};
use basis_learner::dataset::{LabeledDataset, Task};
use basis_learner::linalg::DenseMatrix;
use basis_learner::oracle::{monomial_matrix, span_equal};
use basis_learner::output::LossKind;
use basis_learner::trainer::{train_with_state, BuildMode, StopRule, Termination, TrainConfig};
use proptest::prelude::*;

use common::{consistency_gap, empty, labelled, random_regression};

fn distinct_points(m: usize, d: usize) -> impl Strategy<Value = LabeledDataset> {
    (
        prop::collection::vec(-1.0f64..1.0, m * d),
        prop::collection::vec(-2.0f64..2.0, m),
    )
        .prop_filter_map("rows must be distinct", move |(x, y)| {
            let ds = LabeledDataset::new(
                DenseMatrix::from_row_major(m, d, x).ok()?,
                y,
                Task::Regression,
            )
            .ok()?;
            ds.rows_distinct().then_some(ds)
        })
}

fn sized_dataset() -> impl Strategy<Value = LabeledDataset> {
    (2usize..14, 1usize..4).prop_flat_map(|(m, d)| distinct_points(m, d))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn exact_layers_keep_invariants(ds in sized_dataset()) {
        let m = ds.rows();
        let mut state = BasisState::new(build_basis1_exact(&lift_input(ds.features())).unwrap()).unwrap();
        prop_assert!(state.check_invariants().is_ok());
        for _ in 0..m {
            let layer = build_basis_t_exact(&state, default_tolerance(m));
            if layer.is_empty() {
                break;
            }
            state.push_layer(layer).unwrap();
            let check = state.check_invariants();
            prop_assert!(check.is_ok(), "{:?}", check);
        }
        prop_assert!(state.width() <= m);
    }

    #[test]
    fn trained_networks_reproduce_training_features(ds in sized_dataset(), width in any::<bool>()) {
        let config = TrainConfig {
            mode: if width { BuildMode::Width } else { BuildMode::Exact },
            gamma: 3,
            batch: 2,
            max_depth: Some(5),
            lambda_grid: vec![0.0, 0.1],
            stop: StopRule { validation_patience: 0, error_threshold: None },
            ..TrainConfig::default()
        };
        let (net, _, state) = train_with_state(&ds, &empty(ds.dims(), Task::Regression), &config).unwrap();
        prop_assert!(consistency_gap(&net, &state, &ds) <= 1e-8);
        prop_assert!(net.depth() <= 5);
    }

    #[test]
    fn low_degree_spans_match_monomials(ds in (6usize..16, 1usize..4).prop_flat_map(|(m, d)| distinct_points(m, d))) {
        let m = ds.rows();
        let mut state = BasisState::new(build_basis1_exact(&lift_input(ds.features())).unwrap()).unwrap();
        prop_assert!(span_equal(&state.feature_matrix(), &monomial_matrix(ds.features(), 1).unwrap(), Some(1e-7)).unwrap());
        let layer = build_basis_t_exact(&state, default_tolerance(m));
        if !layer.is_empty() {
            state.push_layer(layer).unwrap();
        }
        prop_assert!(span_equal(&state.feature_matrix(), &monomial_matrix(ds.features(), 2).unwrap(), Some(1e-7)).unwrap());
    }
}

#[test]
fn duplicate_rows_are_reported() {
    let x = DenseMatrix::from_row_major(4, 1, vec![0.0, 1.0, 1.0, 2.0]).unwrap();
    let ds = LabeledDataset::new(x, vec![0.0, 1.0, 2.0, 3.0], Task::Regression).unwrap();
    let config = TrainConfig {
        lambda_grid: vec![0.0],
        stop: StopRule {
            validation_patience: 0,
            error_threshold: None,
        },
        ..TrainConfig::default()
    };
    let (net, trace, state) = train_with_state(&ds, &empty(1, Task::Regression), &config).unwrap();
    assert_eq!(trace.warnings.len(), 1);
    assert_eq!(trace.termination, Termination::EmptyLayer);
    // three distinct points: |F| stops at 3 and the fit cannot improve past depth 2
    assert_eq!(state.width(), 3);
    assert_eq!(net.depth(), 2);
    assert!((trace.records.last().unwrap().train_loss - 0.125).abs() < 1e-12);
}

#[test]
fn exact_mode_reaches_full_rank_on_small_sets() {
    for (seed, m, d) in [(1, 8, 2), (2, 12, 3), (3, 15, 2), (4, 6, 1)] {
        let ds = random_regression(m, d, seed);
        let config = TrainConfig {
            lambda_grid: vec![0.0],
            stop: StopRule {
                validation_patience: 0,
                error_threshold: None,
            },
            ..TrainConfig::default()
        };
        let (net, trace, state) =
            train_with_state(&ds, &empty(d, Task::Regression), &config).unwrap();
        assert_eq!(state.width(), m, "seed {seed}");
        assert_eq!(trace.termination, Termination::EmptyLayer);
        assert!(
            trace.records.last().unwrap().train_loss <= 1e-8,
            "{trace:?}"
        );
        assert_eq!(net.total_nodes(), m);
    }
}

/// Forward differences of order `k` along a line through `x0`.
fn forward_difference(f: impl Fn(f64) -> f64, k: usize, h: f64) -> (f64, f64) {
    let mut sum = 0.0;
    let mut scale = 0.0;
    let mut binom = 1.0;
    for i in 0..=k {
        let sign = if (k - i).is_multiple_of(2) { 1.0 } else { -1.0 };
        let v = f(i as f64 * h);
        sum += sign * binom * v;
        scale += binom * v.abs();
        binom = binom * (k - i) as f64 / (i + 1) as f64;
    }
    (sum, scale)
}

#[test]
fn predictor_is_a_polynomial_of_bounded_degree() {
    for seed in 0..6u64 {
        let d = 1 + seed as usize % 3;
        let (task, loss) = if seed % 2 == 0 {
            (Task::Regression, LossKind::Squared)
        } else {
            (Task::Binary, LossKind::Logistic)
        };
        let ds = labelled(40, d, 50 + seed, task, |x| {
            let s = x[0] * x[0] - 0.2 + x.iter().sum::<f64>() * 0.3;
            if task == Task::Binary {
                if s > 0.0 {
                    1.0
                } else {
                    -1.0
                }
            } else {
                s
            }
        });
        let config = TrainConfig {
            mode: BuildMode::Width,
            gamma: 4,
            batch: 2,
            max_depth: Some(5),
            loss,
            lambda_grid: vec![1e-3],
            epochs: 10,
            stop: StopRule {
                validation_patience: 0,
                error_threshold: None,
            },
            ..TrainConfig::default()
        };
        let (net, _, _) = train_with_state(&ds, &empty(d, task), &config).unwrap();
        let k = net.degree_bound();
        let dir: Vec<f64> = (0..d).map(|i| 0.3 + 0.2 * i as f64).collect();
        let along = |s: f64| {
            let x: Vec<f64> = dir.iter().map(|v| -0.5 + s * v).collect();
            net.predict(&x).unwrap()[0]
        };
        let (exact_order, scale) = forward_difference(along, k + 1, 0.25);
        assert!(
            exact_order.abs() <= 1e-9 * scale.max(1.0),
            "seed {seed}: {exact_order} vs {scale}"
        );
    }
}
