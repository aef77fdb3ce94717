//! The trained polynomial network.
//!
//! Layer 1 maps `[1 x]` linearly to `|F1|` nodes. Each later layer's node `r`
//! multiplies one node of the previous layer with one node of layer 1 and a
//! scalar weight. The output head is linear over the values of *all* nodes.
//! Node values live in a single flat buffer in layer order.

mod serial;

pub use serial::{deserialize, serialize, SCHEMA_VERSION};

use crate::basis::ProductNode;
use crate::dataset::Task;
use crate::error::{input, Error, Result};
use crate::linalg::{dot, DenseMatrix};
use crate::output::{decide, LossKind};
use crate::trainer::Provenance;

#[derive(Clone, Debug, PartialEq)]
pub struct OutputHead {
    /// `total_nodes x outputs`.
    pub weights: DenseMatrix,
    pub loss: LossKind,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolyNetwork {
    input_dim: usize,
    task: Task,
    linear: DenseMatrix,
    product_layers: Vec<Vec<ProductNode>>,
    head: OutputHead,
    provenance: Option<Provenance>,
}

/// Operation counts of one instrumented evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpTally {
    pub mults: u64,
    pub adds: u64,
}

trait OpCounter {
    fn count(&mut self, mults: u64, adds: u64);
}

impl OpCounter for () {
    #[inline]
    fn count(&mut self, _: u64, _: u64) {}
}

impl OpCounter for OpTally {
    fn count(&mut self, mults: u64, adds: u64) {
        self.mults += mults;
        self.adds += adds;
    }
}

impl PolyNetwork {
    pub fn new(
        input_dim: usize,
        task: Task,
        linear: DenseMatrix,
        product_layers: Vec<Vec<ProductNode>>,
        head: OutputHead,
    ) -> Result<Self> {
        let net = PolyNetwork {
            input_dim,
            task,
            linear,
            product_layers,
            head,
            provenance: None,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = Some(provenance);
        self
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Model(m));
        if self.linear.rows() != self.input_dim + 1 {
            return bad(format!(
                "linear layer has {} rows, expected input_dim + 1 = {}",
                self.linear.rows(),
                self.input_dim + 1
            ));
        }
        let first = self.linear.cols();
        if first == 0 {
            return bad("linear layer has no nodes".into());
        }
        let mut prev = first;
        for (l, layer) in self.product_layers.iter().enumerate() {
            let layer_no = l + 2;
            if layer.is_empty() {
                return bad(format!("layer {layer_no} has no nodes"));
            }
            for (r, node) in layer.iter().enumerate() {
                if node.source.prev_col >= prev {
                    return bad(format!(
                        "layer {layer_no} node {r}: prev_index {} out of range (layer {} has {prev} nodes)",
                        node.source.prev_col,
                        layer_no - 1
                    ));
                }
                if node.source.first_col >= first {
                    return bad(format!(
                        "layer {layer_no} node {r}: first_index {} out of range (layer 1 has {first} nodes)",
                        node.source.first_col
                    ));
                }
                if !node.weight.is_finite() || node.weight == 0.0 {
                    return bad(format!(
                        "layer {layer_no} node {r}: weight {} must be finite and nonzero",
                        node.weight
                    ));
                }
            }
            prev = layer.len();
        }
        let total = self.total_nodes();
        if self.head.weights.rows() != total {
            return bad(format!(
                "head has {} weight rows but the network has {total} nodes",
                self.head.weights.rows()
            ));
        }
        if self.head.weights.cols() != self.task.outputs() {
            return bad(format!(
                "head has {} outputs, task {:?} needs {}",
                self.head.weights.cols(),
                self.task,
                self.task.outputs()
            ));
        }
        if !(self.head.lambda >= 0.0 && self.head.lambda.is_finite()) {
            return bad(format!(
                "head lambda {} is not a nonnegative real",
                self.head.lambda
            ));
        }
        self.head
            .loss
            .check_task(self.task)
            .map_err(|e| Error::Model(e.to_string()))?;
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn linear_layer(&self) -> &DenseMatrix {
        &self.linear
    }

    pub fn product_layers(&self) -> &[Vec<ProductNode>] {
        &self.product_layers
    }

    pub fn head(&self) -> &OutputHead {
        &self.head
    }

    pub fn provenance(&self) -> Option<&Provenance> {
        self.provenance.as_ref()
    }

    /// Widths of all hidden layers, first layer included.
    pub fn layer_widths(&self) -> Vec<usize> {
        std::iter::once(self.linear.cols())
            .chain(self.product_layers.iter().map(Vec::len))
            .collect()
    }

    pub fn total_nodes(&self) -> usize {
        self.layer_widths().iter().sum()
    }

    /// Number of layers including the output layer.
    pub fn depth(&self) -> usize {
        self.product_layers.len() + 2
    }

    /// Upper bound on the total degree of the predictor as a polynomial in `x`.
    pub fn degree_bound(&self) -> usize {
        self.product_layers.len() + 1
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return input(format!(
                "input has {} features, network expects {}",
                x.len(),
                self.input_dim
            ));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return input("input has non-finite features");
        }
        Ok(())
    }

    fn features_into<C: OpCounter>(&self, x: &[f64], counter: &mut C) -> Vec<f64> {
        let d = self.input_dim as u64;
        let mut lifted = Vec::with_capacity(x.len() + 1);
        lifted.push(1.0);
        lifted.extend_from_slice(x);

        let mut values = Vec::with_capacity(self.total_nodes());
        for j in 0..self.linear.cols() {
            values.push(dot(&lifted, self.linear.column(j)));
            counter.count(d + 1, d);
        }
        let mut prev_start = 0;
        for layer in &self.product_layers {
            let start = values.len();
            for node in layer {
                let a = values[prev_start + node.source.prev_col];
                let b = values[node.source.first_col];
                values.push(node.weight * (a * b));
                counter.count(2, 0);
            }
            prev_start = start;
        }
        values
    }

    fn scores_from<C: OpCounter>(&self, features: &[f64], counter: &mut C) -> Vec<f64> {
        let n = features.len() as u64;
        (0..self.head.weights.cols())
            .map(|k| {
                counter.count(n, n.saturating_sub(1));
                dot(features, self.head.weights.column(k))
            })
            .collect()
    }

    /// Values of all nodes, in layer order.
    pub fn forward_features(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.features_into(x, &mut ()))
    }

    /// Output scores: one for regression and binary tasks, one per class otherwise.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let f = self.features_into(x, &mut ());
        Ok(self.scores_from(&f, &mut ()))
    }

    /// Scores plus the number of multiplications and additions performed.
    pub fn predict_instrumented(&self, x: &[f64]) -> Result<(Vec<f64>, OpTally)> {
        self.check_input(x)?;
        let mut tally = OpTally::default();
        let f = self.features_into(x, &mut tally);
        let s = self.scores_from(&f, &mut tally);
        Ok((s, tally))
    }

    /// Decision for `x`: regression value, `+-1`, or class id.
    pub fn decide(&self, x: &[f64]) -> Result<f64> {
        Ok(decide(self.task, &self.predict(x)?))
    }

    /// Node values for every row of `x` (n x total_nodes).
    pub fn feature_rows(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let rows = (0..x.rows())
            .map(|i| {
                let r = x.row(i);
                self.check_input(&r)?;
                Ok(self.features_into(&r, &mut ()))
            })
            .collect::<Result<Vec<_>>>()?;
        if rows.is_empty() {
            return Ok(DenseMatrix::zeros(0, self.total_nodes()));
        }
        DenseMatrix::from_rows(&rows)
    }

    /// Scores for every row of `x` (n x outputs).
    pub fn predict_rows(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let rows = (0..x.rows())
            .map(|i| self.predict(&x.row(i)))
            .collect::<Result<Vec<_>>>()?;
        if rows.is_empty() {
            return Ok(DenseMatrix::zeros(0, self.task.outputs()));
        }
        DenseMatrix::from_rows(&rows)
    }

    /// Multiplications plus additions for one `predict` call.
    pub fn arithmetic_cost(&self) -> u64 {
        let d = self.input_dim as u64;
        let first = self.linear.cols() as u64;
        let products: u64 = self.product_layers.iter().map(|l| l.len() as u64).sum();
        let total = self.total_nodes() as u64;
        let outputs = self.head.weights.cols() as u64;
        (2 * d + 1) * first + 2 * products + outputs * (2 * total - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::CandidateRef;

    fn node(prev: usize, first: usize, weight: f64) -> ProductNode {
        ProductNode {
            source: CandidateRef {
                prev_col: prev,
                first_col: first,
            },
            weight,
        }
    }

    fn head(rows: usize, values: &[f64]) -> OutputHead {
        OutputHead {
            weights: DenseMatrix::from_row_major(rows, 1, values.to_vec()).unwrap(),
            loss: LossKind::Squared,
            lambda: 0.0,
        }
    }

    #[test]
    fn constant_node() {
        let w1 = DenseMatrix::from_row_major(2, 1, vec![2.5, 0.0]).unwrap();
        let net = PolyNetwork::new(1, Task::Regression, w1, vec![], head(1, &[1.0])).unwrap();
        for x in [-3.0, 0.0, 7.0] {
            assert_eq!(net.forward_features(&[x]).unwrap(), vec![2.5]);
        }
    }

    #[test]
    fn product_node_value() {
        // layer 1: node0 = 2 (constant), node1 = 3 (constant)
        let w1 = DenseMatrix::from_row_major(2, 2, vec![2.0, 3.0, 0.0, 0.0]).unwrap();
        let net = PolyNetwork::new(
            1,
            Task::Regression,
            w1,
            vec![vec![node(0, 1, 0.5)]],
            head(3, &[0.0, 0.0, 1.0]),
        )
        .unwrap();
        assert_eq!(net.forward_features(&[1.0]).unwrap(), vec![2.0, 3.0, 3.0]);
        assert_eq!(net.predict(&[1.0]).unwrap(), vec![3.0]);
    }

    #[test]
    fn zero_head_scores_zero() {
        let w1 = DenseMatrix::from_row_major(3, 2, vec![1.0, 0.5, -2.0, 1.0, 0.3, 4.0]).unwrap();
        let net = PolyNetwork::new(
            2,
            Task::Binary,
            w1,
            vec![],
            OutputHead {
                weights: DenseMatrix::zeros(2, 1),
                loss: LossKind::Hinge,
                lambda: 0.1,
            },
        )
        .unwrap();
        assert_eq!(net.predict(&[0.3, -9.0]).unwrap(), vec![0.0]);
        assert!(net.predict(&[0.3]).is_err());
        assert!(net.predict(&[0.3, f64::NAN]).is_err());
    }

    #[test]
    fn cost_formula_and_instrumentation() {
        let w1 = DenseMatrix::from_row_major(2, 2, vec![1.0, 0.5, -2.0, 1.0]).unwrap();
        let net = PolyNetwork::new(
            1,
            Task::Regression,
            w1.clone(),
            vec![vec![node(1, 0, 0.7)]],
            head(3, &[1.0, 2.0, 3.0]),
        )
        .unwrap();
        assert_eq!(net.arithmetic_cost(), 13);
        let (_, tally) = net.predict_instrumented(&[0.4]).unwrap();
        assert_eq!(tally.mults + tally.adds, 13);

        let linear =
            PolyNetwork::new(1, Task::Regression, w1, vec![], head(2, &[1.0, 1.0])).unwrap();
        // (2 + 1) * 2 for the linear layer, 2 + 1 for the head
        assert_eq!(linear.arithmetic_cost(), 9);
        assert_eq!(linear.degree_bound(), 1);
        assert_eq!(linear.depth(), 2);
    }

    #[test]
    fn validation_names_the_bad_node() {
        let w1 = DenseMatrix::from_row_major(2, 2, vec![1.0, 0.5, -2.0, 1.0]).unwrap();
        let err = PolyNetwork::new(
            1,
            Task::Regression,
            w1.clone(),
            vec![vec![node(0, 0, 1.0), node(2, 0, 1.0)]],
            head(4, &[0.0; 4]),
        )
        .unwrap_err();
        assert!(err.to_string().contains("layer 2 node 1"), "{err}");

        let err = PolyNetwork::new(
            1,
            Task::Regression,
            w1.clone(),
            vec![vec![node(0, 0, 0.0)]],
            head(3, &[0.0; 3]),
        )
        .unwrap_err();
        assert!(err.to_string().contains("weight"));
        assert!(PolyNetwork::new(1, Task::Regression, w1, vec![], head(3, &[0.0; 3])).is_err());
    }
}
