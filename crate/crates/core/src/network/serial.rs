//! Versioned JSON model documents.
//!
//! Reals are written in shortest round-trip decimal form and parsed back
//! exactly, so a saved network predicts bit-for-bit like the original.

use serde::{Deserialize, Serialize};

use super::{OutputHead, PolyNetwork};
use crate::basis::{CandidateRef, ProductNode};
use crate::dataset::Task;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::output::LossKind;
use crate::trainer::Provenance;

pub const SCHEMA_VERSION: &str = "basis-learner/1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    schema: String,
    input_dim: usize,
    task: Task,
    layers: Vec<LayerDoc>,
    head: HeadDoc,
    provenance: Option<Provenance>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
enum LayerDoc {
    Linear {
        rows: usize,
        cols: usize,
        /// Row-major.
        weights: Vec<f64>,
    },
    Product {
        /// `(prev_index, first_index, weight)` per node.
        nodes: Vec<(usize, usize, f64)>,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeadDoc {
    rows: usize,
    outputs: usize,
    /// Row-major, `rows x outputs`.
    weights: Vec<f64>,
    loss: LossKind,
    lambda: f64,
}

pub fn serialize(net: &PolyNetwork) -> Vec<u8> {
    let mut layers = vec![LayerDoc::Linear {
        rows: net.linear.rows(),
        cols: net.linear.cols(),
        weights: net.linear.to_row_major(),
    }];
    layers.extend(net.product_layers.iter().map(|layer| {
        LayerDoc::Product {
            nodes: layer
                .iter()
                .map(|n| (n.source.prev_col, n.source.first_col, n.weight))
                .collect(),
        }
    }));
    let doc = Document {
        schema: SCHEMA_VERSION.to_string(),
        input_dim: net.input_dim,
        task: net.task,
        layers,
        head: HeadDoc {
            rows: net.head.weights.rows(),
            outputs: net.head.weights.cols(),
            weights: net.head.weights.to_row_major(),
            loss: net.head.loss,
            lambda: net.head.lambda,
        },
        provenance: net.provenance.clone(),
    };
    let mut out = serde_json::to_vec(&doc).expect("model documents always serialize");
    out.push(b'\n');
    out
}

pub fn deserialize(bytes: &[u8]) -> Result<PolyNetwork> {
    // check the version before the full schema so old files get a clear message
    let probe: serde_json::Value = serde_json::from_slice(bytes)
        .map_err(|e| Error::Model(format!("malformed document: {e}")))?;
    match probe.get("schema").and_then(|s| s.as_str()) {
        Some(SCHEMA_VERSION) => {}
        Some(other) => {
            return Err(Error::Model(format!(
                "unsupported schema version {other:?}, expected {SCHEMA_VERSION:?}"
            )))
        }
        None => return Err(Error::Model("missing schema version".into())),
    }
    let doc: Document = serde_json::from_value(probe)
        .map_err(|e| Error::Model(format!("schema violation: {e}")))?;

    let mut layers = doc.layers.into_iter();
    let linear = match layers.next() {
        Some(LayerDoc::Linear {
            rows,
            cols,
            weights,
        }) => DenseMatrix::from_row_major(rows, cols, weights)
            .map_err(|e| Error::Model(format!("linear layer: {e}")))?,
        _ => return Err(Error::Model("first layer must be linear".into())),
    };
    let product_layers = layers
        .enumerate()
        .map(|(l, layer)| match layer {
            LayerDoc::Product { nodes } => Ok(nodes
                .into_iter()
                .map(|(prev_col, first_col, weight)| ProductNode {
                    source: CandidateRef {
                        prev_col,
                        first_col,
                    },
                    weight,
                })
                .collect()),
            LayerDoc::Linear { .. } => Err(Error::Model(format!(
                "layer {} is linear; only the first layer may be",
                l + 2
            ))),
        })
        .collect::<Result<Vec<_>>>()?;
    let weights = DenseMatrix::from_row_major(doc.head.rows, doc.head.outputs, doc.head.weights)
        .map_err(|e| Error::Model(format!("head: {e}")))?;
    let net = PolyNetwork::new(
        doc.input_dim,
        doc.task,
        linear,
        product_layers,
        OutputHead {
            weights,
            loss: doc.head.loss,
            lambda: doc.head.lambda,
        },
    )?;
    Ok(match doc.provenance {
        Some(p) => net.with_provenance(p),
        None => net,
    })
}
