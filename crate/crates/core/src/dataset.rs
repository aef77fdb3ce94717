//! Labeled training data: loading, holdout splitting and target encoding.
//!
//! Two text formats are supported. CSV has one instance per line with the label
//! in the first field and the features after it. The sparse format is the
//! familiar `label idx:val idx:val ...` layout with 1-based feature indices.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::linalg::DenseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Task {
    Regression,
    /// Labels in `{-1, +1}`.
    Binary,
    /// Labels are class ids `0..classes`.
    Multiclass {
        classes: usize,
    },
}

impl Task {
    /// Number of score columns a predictor for this task produces.
    pub fn outputs(&self) -> usize {
        match self {
            Task::Multiclass { classes } => *classes,
            _ => 1,
        }
    }

    pub fn is_classification(&self) -> bool {
        !matches!(self, Task::Regression)
    }

    fn check_label(&self, y: f64) -> std::result::Result<(), String> {
        if !y.is_finite() {
            return Err(format!("label {y} is not finite"));
        }
        match self {
            Task::Regression => Ok(()),
            Task::Binary if y == 1.0 || y == -1.0 => Ok(()),
            Task::Binary => Err(format!("binary label must be -1 or +1, got {y}")),
            Task::Multiclass { classes } => {
                if y >= 0.0 && y.fract() == 0.0 && (y as usize) < *classes {
                    Ok(())
                } else {
                    Err(format!("unknown class label {y} (expected 0..{classes})"))
                }
            }
        }
    }
}

/// Guesses the task from label values: all `+-1` is binary, all nonnegative
/// integers is multiclass with `max + 1` classes (at least two), anything else
/// is regression.
pub fn infer_task(labels: &[f64]) -> Task {
    if labels.iter().all(|&y| y == 1.0 || y == -1.0) {
        Task::Binary
    } else if labels
        .iter()
        .all(|&y| y >= 0.0 && y.fract() == 0.0 && y < 1e9)
    {
        let max = labels.iter().fold(0.0f64, |a, &b| a.max(b)) as usize;
        Task::Multiclass {
            classes: (max + 1).max(2),
        }
    } else {
        Task::Regression
    }
}

/// Instance matrix `X` (m x d) with one label per row.
///
/// Zero rows are allowed so that an empty validation split is representable;
/// the loaders never produce one.
#[derive(Clone, Debug)]
pub struct LabeledDataset {
    features: DenseMatrix,
    labels: Vec<f64>,
    task: Task,
    distinct: bool,
}

impl LabeledDataset {
    pub fn new(features: DenseMatrix, labels: Vec<f64>, task: Task) -> Result<Self> {
        if features.rows() != labels.len() {
            return input(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            ));
        }
        if let Task::Multiclass { classes } = task {
            if classes < 2 {
                return input("multiclass task needs at least two classes");
            }
        }
        for (i, &y) in labels.iter().enumerate() {
            task.check_label(y)
                .map_err(|m| Error::Input(format!("row {i}: {m}")))?;
        }
        let distinct = rows_are_distinct(&features);
        Ok(LabeledDataset {
            features,
            labels,
            task,
            distinct,
        })
    }

    pub fn rows(&self) -> usize {
        self.features.rows()
    }

    pub fn dims(&self) -> usize {
        self.features.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.rows() == 0
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn task(&self) -> Task {
        self.task
    }

    /// Whether all instance rows are pairwise distinct.
    pub fn rows_distinct(&self) -> bool {
        self.distinct
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.features.row(i)
    }

    fn slice(&self, start: usize, end: usize) -> LabeledDataset {
        let features = self.features.row_range(start, end);
        LabeledDataset {
            distinct: rows_are_distinct(&features),
            features,
            labels: self.labels[start..end].to_vec(),
            task: self.task,
        }
    }
}

fn rows_are_distinct(x: &DenseMatrix) -> bool {
    let mut seen = HashSet::with_capacity(x.rows());
    (0..x.rows()).all(|i| {
        // +0.0 and -0.0 are the same point
        let key: Vec<u64> = x.row(i).iter().map(|v| (v + 0.0).to_bits()).collect();
        seen.insert(key)
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DataFormat {
    #[default]
    Csv,
    Sparse,
}

#[derive(Clone, Debug, Default)]
pub struct LoadOptions {
    pub format: DataFormat,
    /// Skip the first line (CSV only).
    pub header: bool,
    /// Feature dimension for the sparse format; inferred from the largest index otherwise.
    pub dims: Option<usize>,
    /// Overrides label-based task inference.
    pub task: Option<Task>,
}

pub fn load_dense(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<LabeledDataset> {
    let text = fs::read_to_string(path)?;
    parse_dense(&text, opts)
}

pub fn parse_dense(text: &str, opts: &LoadOptions) -> Result<LabeledDataset> {
    let (rows, labels) = match opts.format {
        DataFormat::Csv => parse_csv(text, opts.header)?,
        DataFormat::Sparse => parse_sparse(text, opts.dims)?,
    };
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "no data rows".into(),
        });
    }
    let task = opts
        .task
        .unwrap_or_else(|| infer_task(&labels.iter().map(|l| l.1).collect::<Vec<_>>()));
    for &(line, y) in &labels {
        task.check_label(y)
            .map_err(|message| Error::Parse { line, message })?;
    }
    let features = DenseMatrix::from_rows(&rows)?;
    LabeledDataset::new(features, labels.into_iter().map(|l| l.1).collect(), task)
}

type Parsed = (Vec<Vec<f64>>, Vec<(usize, f64)>);

fn parse_real(field: &str, line: usize) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("not a number: {:?}", field.trim()),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("non-finite value {v}"),
        });
    }
    Ok(v)
}

fn parse_csv(text: &str, header: bool) -> Result<Parsed> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (idx, raw) in text.lines().enumerate().skip(usize::from(header)) {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        let expected = *width.get_or_insert(fields.len());
        if fields.len() != expected {
            return Err(Error::Parse {
                line,
                message: format!("expected {expected} fields, found {}", fields.len()),
            });
        }
        labels.push((line, parse_real(fields[0], line)?));
        rows.push(
            fields[1..]
                .iter()
                .map(|f| parse_real(f, line))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Ok((rows, labels))
}

fn parse_sparse(text: &str, dims: Option<usize>) -> Result<Parsed> {
    let mut entries: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut labels = Vec::new();
    let mut max_index = 0;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let mut tokens = raw.split_whitespace();
        let Some(label) = tokens.next() else { continue };
        labels.push((line, parse_real(label, line)?));
        let mut row = Vec::new();
        for tok in tokens {
            let (i, v) = tok.split_once(':').ok_or_else(|| Error::Parse {
                line,
                message: format!("expected idx:val, found {tok:?}"),
            })?;
            let i: usize = i.parse().map_err(|_| Error::Parse {
                line,
                message: format!("bad feature index {i:?}"),
            })?;
            if i == 0 {
                return Err(Error::Parse {
                    line,
                    message: "feature indices are 1-based".into(),
                });
            }
            if let Some(d) = dims {
                if i > d {
                    return Err(Error::Parse {
                        line,
                        message: format!("feature index {i} exceeds --dims {d}"),
                    });
                }
            }
            max_index = max_index.max(i);
            row.push((i - 1, parse_real(v, line)?));
        }
        entries.push(row);
    }
    let d = dims.unwrap_or(max_index);
    let rows = entries
        .into_iter()
        .map(|row| {
            let mut dense = vec![0.0; d];
            for (i, v) in row {
                dense[i] = v;
            }
            dense
        })
        .collect();
    Ok((rows, labels))
}

/// Holdout specification: the last `validation_count` rows become the validation set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SplitSpec {
    pub validation_count: usize,
}

/// Splits off the tail of `ds` without shuffling.
pub fn split(ds: &LabeledDataset, spec: SplitSpec) -> Result<(LabeledDataset, LabeledDataset)> {
    let m = ds.rows();
    if spec.validation_count >= m {
        return input(format!(
            "validation count {} must be smaller than the {m} available rows",
            spec.validation_count
        ));
    }
    let cut = m - spec.validation_count;
    Ok((ds.slice(0, cut), ds.slice(cut, m)))
}

/// Label vector as an m x 1 matrix, or the m x k class-indicator matrix for
/// multiclass data.
pub fn target_matrix(ds: &LabeledDataset) -> DenseMatrix {
    encode_targets(ds.labels(), ds.task())
}

pub(crate) fn encode_targets(labels: &[f64], task: Task) -> DenseMatrix {
    let m = labels.len();
    match task {
        Task::Multiclass { classes } => {
            let mut v = DenseMatrix::zeros(m, classes);
            for (i, &y) in labels.iter().enumerate() {
                v.set(i, y as usize, 1.0);
            }
            v
        }
        _ => DenseMatrix::from_columns(m, &[labels]).expect("labels are finite"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn csv(text: &str) -> Result<LabeledDataset> {
        parse_dense(text, &LoadOptions::default())
    }

    fn sparse(text: &str, dims: Option<usize>) -> Result<LabeledDataset> {
        parse_dense(
            text,
            &LoadOptions {
                format: DataFormat::Sparse,
                dims,
                ..Default::default()
            },
        )
    }

    #[test]
    fn csv_two_lines() {
        let ds = csv("1,0.5,0.25\n-1,0.1,0.9").unwrap();
        assert_eq!((ds.rows(), ds.dims()), (2, 2));
        assert_eq!(ds.task(), Task::Binary);
        assert_eq!(ds.row(1), vec![0.1, 0.9]);
        assert!(ds.rows_distinct());
    }

    #[test]
    fn csv_header_and_errors() {
        let ds = parse_dense(
            "y,a\n2.5,1\n",
            &LoadOptions {
                header: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(ds.task(), Task::Regression);

        match csv("1,2,3\n1,2\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected ragged-row error, got {other:?}"),
        }
        match csv("1,2\n1,abc\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected numeric error, got {other:?}"),
        }
        assert!(matches!(csv(""), Err(Error::Parse { .. })));
    }

    #[test]
    fn sparse_line() {
        let ds = sparse("3 1:0.5 7:1.0", None).unwrap();
        assert_eq!(ds.dims(), 7);
        assert_eq!(ds.row(0), vec![0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(ds.task(), Task::Multiclass { classes: 4 });

        let ds = sparse("3 1:0.5 7:1.0", Some(9)).unwrap();
        assert_eq!(ds.dims(), 9);
        assert!(sparse("3 1:0.5 7:1.0", Some(5)).is_err());
        assert!(sparse("1 0:1", None).is_err());
        assert!(sparse("\n\n", None).is_err());
    }

    #[test]
    fn unknown_class_label_is_a_parse_error() {
        let opts = LoadOptions {
            task: Some(Task::Multiclass { classes: 3 }),
            ..Default::default()
        };
        match parse_dense("0,1\n1,2\n5,3\n", &opts) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_rows_are_flagged() {
        let ds = csv("1,0.5\n-1,0.5\n").unwrap();
        assert!(!ds.rows_distinct());
    }

    fn ten_rows() -> LabeledDataset {
        let x = DenseMatrix::from_row_major(10, 1, (0..10).map(f64::from).collect()).unwrap();
        LabeledDataset::new(
            x,
            (0..10).map(|i| f64::from(i) * 0.5).collect(),
            Task::Regression,
        )
        .unwrap()
    }

    #[test]
    fn split_takes_the_tail() {
        let ds = ten_rows();
        let (train, valid) = split(
            &ds,
            SplitSpec {
                validation_count: 2,
            },
        )
        .unwrap();
        assert_eq!(train.rows(), 8);
        assert_eq!(valid.labels(), &[4.0, 4.5]);
        assert_eq!(valid.row(0), vec![8.0]);

        let (train, valid) = split(&ds, SplitSpec::default()).unwrap();
        assert_eq!(train.rows(), 10);
        assert!(valid.is_empty());

        assert!(split(
            &ds,
            SplitSpec {
                validation_count: 10
            }
        )
        .is_err());
    }

    #[test]
    fn target_encodings() {
        let x = DenseMatrix::zeros(2, 1);
        let b = LabeledDataset::new(x.clone(), vec![1.0, -1.0], Task::Binary).unwrap();
        assert_eq!(target_matrix(&b).column(0), &[1.0, -1.0]);

        let mc = LabeledDataset::new(x, vec![0.0, 2.0], Task::Multiclass { classes: 3 }).unwrap();
        let v = target_matrix(&mc);
        assert_eq!(v.row(0), vec![1.0, 0.0, 0.0]);
        assert_eq!(v.row(1), vec![0.0, 0.0, 1.0]);

        let r = LabeledDataset::new(DenseMatrix::zeros(1, 1), vec![0.5], Task::Regression).unwrap();
        assert_eq!(target_matrix(&r).column(0), &[0.5]);
    }

    proptest! {
        #[test]
        fn split_reassembles(m in 1usize..30, frac in 0.0f64..1.0, classes in 2usize..5) {
            let v = ((m as f64) * frac) as usize % m;
            let x = DenseMatrix::from_row_major(m, 2, (0..2 * m).map(|i| i as f64).collect()).unwrap();
            let labels: Vec<f64> = (0..m).map(|i| (i % classes) as f64).collect();
            let ds = LabeledDataset::new(x, labels, Task::Multiclass { classes }).unwrap();
            let (train, valid) = split(&ds, SplitSpec { validation_count: v }).unwrap();
            prop_assert_eq!(train.rows() + valid.rows(), m);
            let mut rows: Vec<Vec<f64>> = (0..train.rows()).map(|i| train.row(i)).collect();
            rows.extend((0..valid.rows()).map(|i| valid.row(i)));
            let orig: Vec<Vec<f64>> = (0..m).map(|i| ds.row(i)).collect();
            prop_assert_eq!(rows, orig);
            let mut labels = train.labels().to_vec();
            labels.extend_from_slice(valid.labels());
            prop_assert_eq!(labels, ds.labels().to_vec());

            let t = target_matrix(&ds);
            for i in 0..m {
                prop_assert_eq!(t.row(i).iter().sum::<f64>(), 1.0);
            }
        }
    }
}
