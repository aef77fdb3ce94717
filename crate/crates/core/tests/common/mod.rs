#![allow(dead_code)]

use basis_learner::basis::BasisState;
use basis_learner::dataset::{LabeledDataset, Task};
use basis_learner::linalg::DenseMatrix;
use basis_learner::PolyNetwork;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `m` points uniform in `[-1, 1]^d` with standard normal targets.
pub fn random_regression(m: usize, d: usize, seed: u64) -> LabeledDataset {
    let mut r = rng(seed);
    let x: Vec<f64> = (0..m * d).map(|_| r.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut r)).collect();
    LabeledDataset::new(
        DenseMatrix::from_row_major(m, d, x).unwrap(),
        y,
        Task::Regression,
    )
    .unwrap()
}

/// Points uniform in `[-1, 1]^d` labelled by a fixed function of the point.
pub fn labelled<F: Fn(&[f64]) -> f64>(
    m: usize,
    d: usize,
    seed: u64,
    task: Task,
    label: F,
) -> LabeledDataset {
    let mut r = rng(seed);
    let mut x = Vec::with_capacity(m * d);
    let mut y = Vec::with_capacity(m);
    for _ in 0..m {
        let row: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
        y.push(label(&row));
        x.extend(row);
    }
    LabeledDataset::new(DenseMatrix::from_row_major(m, d, x).unwrap(), y, task).unwrap()
}

pub fn empty(d: usize, task: Task) -> LabeledDataset {
    LabeledDataset::new(DenseMatrix::zeros(0, d), vec![], task).unwrap()
}

/// Largest deviation between `forward_features` on the training rows and the
/// stored feature matrix restricted to the network's nodes.
pub fn consistency_gap(net: &PolyNetwork, state: &BasisState, ds: &LabeledDataset) -> f64 {
    let f = state.feature_prefix(net.total_nodes());
    let mut worst: f64 = 0.0;
    for i in 0..ds.rows() {
        let values = net.forward_features(&ds.row(i)).unwrap();
        for (j, v) in values.iter().enumerate() {
            worst = worst.max((v - f.get(i, j)).abs());
        }
    }
    worst
}

/// 28 x 28 binary image of a rectangle outline, flattened row-major, with
/// label `+1` when the rectangle is taller than wide and `-1` otherwise.
pub fn rectangle_image(r: &mut ChaCha8Rng) -> (Vec<f64>, f64) {
    const SIDE: usize = 28;
    let (h, w) = loop {
        let h = r.random_range(3..=SIDE - 2);
        let w = r.random_range(3..=SIDE - 2);
        if h != w {
            break (h, w);
        }
    };
    let top = r.random_range(0..=SIDE - h);
    let left = r.random_range(0..=SIDE - w);
    let mut img = vec![0.0; SIDE * SIDE];
    for i in top..top + h {
        for j in left..left + w {
            if i == top || i == top + h - 1 || j == left || j == left + w - 1 {
                img[i * SIDE + j] = 1.0;
            }
        }
    }
    (img, if h > w { 1.0 } else { -1.0 })
}

pub fn rectangles(n: usize, seed: u64) -> LabeledDataset {
    let mut r = rng(seed);
    let mut x = Vec::with_capacity(n * 784);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let (img, label) = rectangle_image(&mut r);
        x.extend(img);
        y.push(label);
    }
    LabeledDataset::new(
        DenseMatrix::from_row_major(n, 784, x).unwrap(),
        y,
        Task::Binary,
    )
    .unwrap()
}
