use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Slack allowed on the unit-ball check for rounding in the normalizer.
pub const UNIT_BALL_SLACK: f64 = 1e-9;

/// Labeled training or test data: `N` rows of dimension `D` with class labels
/// in `0..C`. Labels are stored as class indices; [`LabeledDataset::one_hot`]
/// gives the simplex-vertex view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset<T> {
    inputs: Matrix<T>,
    labels: Vec<usize>,
    n_classes: usize,
}

impl<T: Scalar> LabeledDataset<T> {
    /// Builds a dataset without checking the unit-ball invariant. Use
    /// [`LabeledDataset::new`] wherever a privacy guarantee depends on it.
    pub fn new_unchecked(inputs: Matrix<T>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::InvalidInput(format!(
                "{} input rows but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        if n_classes == 0 {
            return Err(Error::InvalidInput("dataset needs at least one class".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::InvalidInput(format!("label {bad} out of range for {n_classes} classes")));
        }
        if !inputs.is_finite() {
            return Err(Error::InvalidInput("non-finite input feature".into()));
        }
        Ok(Self { inputs, labels, n_classes })
    }

    /// Builds a dataset and enforces `‖x_n‖₂ ≤ 1` on every row.
    pub fn new(inputs: Matrix<T>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        let ds = Self::new_unchecked(inputs, labels, n_classes)?;
        let max = ds.max_row_norm();
        if max > 1.0 + UNIT_BALL_SLACK {
            return Err(Error::InvalidInput(format!("input row norm {max} exceeds the unit ball")));
        }
        Ok(ds)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    #[inline]
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    #[inline]
    pub fn inputs(&self) -> &Matrix<T> {
        &self.inputs
    }

    #[inline]
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    #[inline]
    pub fn x(&self, n: usize) -> &[T] {
        self.inputs.row(n)
    }

    #[inline]
    pub fn y(&self, n: usize) -> usize {
        self.labels[n]
    }

    pub fn one_hot(&self, n: usize) -> Vec<T> {
        let mut v = vec![T::zero(); self.n_classes];
        v[self.labels[n]] = T::one();
        v
    }

    pub fn max_row_norm(&self) -> f64 {
        self.inputs.iter_rows().map(|r| norm(r).as_f64()).fold(0.0, f64::max)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    /// Rows `idx` in the given order.
    pub fn select(&self, idx: &[usize]) -> Self {
        let d = self.dim();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(self.x(i));
        }
        Self {
            inputs: Matrix::from_vec(idx.len(), d, data).expect("shape by construction"),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
        }
    }

    /// Copy with row `n` replaced, used to build neighboring datasets.
    pub fn with_replaced(&self, n: usize, x: &[T], y: usize) -> Result<Self> {
        if x.len() != self.dim() || y >= self.n_classes || n >= self.len() {
            return Err(Error::InvalidInput("replacement row does not fit dataset".into()));
        }
        let mut out = self.clone();
        out.inputs.row_mut(n).copy_from_slice(x);
        out.labels[n] = y;
        Ok(out)
    }

    pub fn cast<U: Scalar>(&self) -> LabeledDataset<U> {
        LabeledDataset { inputs: self.inputs.cast(), labels: self.labels.clone(), n_classes: self.n_classes }
    }

    pub(crate) fn into_parts(self) -> (Matrix<T>, Vec<usize>, usize) {
        (self.inputs, self.labels, self.n_classes)
    }
}

pub(crate) fn norm<T: Scalar>(v: &[T]) -> T {
    v.iter().map(|&a| a * a).sum::<T>().sqrt()
}
