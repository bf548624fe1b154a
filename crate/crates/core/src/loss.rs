//! Multi-class logistic loss, its derivatives, and the regularized empirical
//! risk objectives minimized by the trainer.
//!
//! The loss is the negative log-likelihood `ℓ(a, y) = log Σ_j e^{a_j} − a_y`,
//! minimized. Its gradient `p − y` lies between two points of the probability
//! simplex, so `‖∇ℓ‖₂ ≤ √2`, and its Hessian `diag(p) − ppᵀ` has spectral norm
//! at most `½`. Those two numbers are the Lipschitz and smoothness constants
//! every noise calibration in [`crate::accounting`] consumes.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Pre-softmax class scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LogitVector<T>(pub Vec<T>);

/// Softmax output: non-negative entries summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector<T>(Vec<T>);

/// A vertex of the probability simplex, stored as its class index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelOneHot {
    class: usize,
    n_classes: usize,
}

/// Linear model parameters `θ ∈ ℝ^{D×C}`; column `c` holds the logit weights of class `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamMatrix<T>(Matrix<T>);

/// Constants of the loss that privacy calibrations depend on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConstants {
    /// Bound on `‖∇_a ℓ‖₂`.
    pub lipschitz_k: f64,
    /// Bound on `λ_max(∇²_a ℓ)`.
    pub hessian_bound_l: f64,
}

impl LossConstants {
    pub const MULTICLASS_LOGISTIC: LossConstants =
        LossConstants { lipschitz_k: std::f64::consts::SQRT_2, hessian_bound_l: 0.5 };
}

impl<T: Scalar> LogitVector<T> {
    pub fn new(a: Vec<T>) -> Result<Self> {
        if a.is_empty() {
            return Err(Error::InvalidInput("empty logit vector".into()));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite logit".into()));
        }
        Ok(Self(a))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    /// Index of the largest logit; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

impl<T: Scalar> ProbVector<T> {
    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<T> {
        self.0
    }
}

impl<T> Deref for ProbVector<T> {
    type Target = [T];

    fn deref(&self) -> &[T] {
        &self.0
    }
}

impl LabelOneHot {
    pub fn new(class: usize, n_classes: usize) -> Result<Self> {
        if class >= n_classes {
            return Err(Error::InvalidInput(format!("class {class} out of range for {n_classes} classes")));
        }
        Ok(Self { class, n_classes })
    }

    #[inline]
    pub fn class(&self) -> usize {
        self.class
    }

    #[inline]
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn to_vec<T: Scalar>(&self) -> Vec<T> {
        let mut v = vec![T::zero(); self.n_classes];
        v[self.class] = T::one();
        v
    }
}

impl<T: Scalar> ParamMatrix<T> {
    pub fn zeros(dim: usize, n_classes: usize) -> Self {
        Self(Matrix::zeros(dim, n_classes))
    }

    pub fn from_matrix(m: Matrix<T>) -> Result<Self> {
        if !m.is_finite() {
            return Err(Error::InvalidInput("non-finite parameter".into()));
        }
        Ok(Self(m))
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    #[inline]
    pub fn n_classes(&self) -> usize {
        self.0.cols()
    }

    #[inline]
    pub fn matrix(&self) -> &Matrix<T> {
        &self.0
    }

    #[inline]
    pub fn matrix_mut(&mut self) -> &mut Matrix<T> {
        &mut self.0
    }

    pub fn into_matrix(self) -> Matrix<T> {
        self.0
    }

    /// `θᵀx` without validation; `x.len()` must equal `dim()`.
    pub(crate) fn logits_raw(&self, x: &[T], out: &mut [T]) {
        out.iter_mut().for_each(|o| *o = T::zero());
        for (d, &xd) in x.iter().enumerate() {
            if xd == T::zero() {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.0.row(d)) {
                *o += w * xd;
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamMatrix<U> {
        ParamMatrix(self.0.cast())
    }
}

pub(crate) fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn log_sum_exp<T: Scalar>(a: &[T]) -> T {
    let m = a.iter().copied().fold(T::neg_infinity(), T::max);
    m + a.iter().map(|&v| (v - m).exp()).sum::<T>().ln()
}

fn softmax_into<T: Scalar>(a: &[T], p: &mut [T]) {
    let m = a.iter().copied().fold(T::neg_infinity(), T::max);
    let mut z = T::zero();
    for (pi, &ai) in p.iter_mut().zip(a) {
        *pi = (ai - m).exp();
        z += *pi;
    }
    for pi in p.iter_mut() {
        *pi /= z;
    }
}

pub fn softmax<T: Scalar>(a: &LogitVector<T>) -> Result<ProbVector<T>> {
    if a.0.is_empty() || a.0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("softmax needs a non-empty finite logit vector".into()));
    }
    let mut p = vec![T::zero(); a.len()];
    softmax_into(&a.0, &mut p);
    Ok(ProbVector(p))
}

fn check_pair<T: Scalar>(a: &LogitVector<T>, y: &LabelOneHot) -> Result<()> {
    if a.len() != y.n_classes() {
        return Err(Error::InvalidInput(format!("{} logits for {} classes", a.len(), y.n_classes())));
    }
    if a.0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite logit".into()));
    }
    Ok(())
}

pub fn mc_logistic_loss<T: Scalar>(a: &LogitVector<T>, y: &LabelOneHot) -> Result<T> {
    check_pair(a, y)?;
    Ok(log_sum_exp(&a.0) - a.0[y.class()])
}

/// `∇_a ℓ = softmax(a) − y`.
pub fn mc_logistic_grad<T: Scalar>(a: &LogitVector<T>, y: &LabelOneHot) -> Result<Vec<T>> {
    check_pair(a, y)?;
    let mut g = vec![T::zero(); a.len()];
    softmax_into(&a.0, &mut g);
    g[y.class()] -= T::one();
    Ok(g)
}

/// `∇²_a ℓ = diag(p) − ppᵀ`; independent of the label.
pub fn mc_logistic_hessian<T: Scalar>(a: &LogitVector<T>) -> Result<Matrix<T>> {
    let p = softmax(a)?;
    let c = p.len();
    Ok(Matrix::from_fn(c, c, |i, j| if i == j { p[i] - p[i] * p[i] } else { -p[i] * p[j] }))
}

/// Mean loss over the dataset and its gradient with respect to `θ`.
fn empirical_risk<T: Scalar>(theta: &ParamMatrix<T>, data: &LabeledDataset<T>) -> Result<(T, Matrix<T>)> {
    if data.is_empty() {
        return Err(Error::InvalidInput("empty dataset".into()));
    }
    if theta.dim() != data.dim() || theta.n_classes() != data.n_classes() {
        return Err(Error::InvalidInput(format!(
            "parameters are {}x{} but data has D={} C={}",
            theta.dim(),
            theta.n_classes(),
            data.dim(),
            data.n_classes()
        )));
    }
    let c = theta.n_classes();
    let mut grad = Matrix::zeros(theta.dim(), c);
    let mut logits = vec![T::zero(); c];
    let mut resid = vec![T::zero(); c];
    let mut total = T::zero();
    for n in 0..data.len() {
        let x = data.x(n);
        let y = data.y(n);
        theta.logits_raw(x, &mut logits);
        total += log_sum_exp(&logits) - logits[y];
        softmax_into(&logits, &mut resid);
        resid[y] -= T::one();
        for (d, &xd) in x.iter().enumerate() {
            if xd == T::zero() {
                continue;
            }
            for (g, &r) in grad.row_mut(d).iter_mut().zip(&resid) {
                *g += xd * r;
            }
        }
    }
    let inv_n = T::one() / T::of_usize(data.len());
    grad.scale(inv_n);
    Ok((total * inv_n, grad))
}

/// `J(θ) = (1/N) Σ ℓ(θᵀx_n, y_n) + λ·½‖θ‖²_F` and its gradient.
pub fn erm_objective<T: Scalar>(
    theta: &ParamMatrix<T>,
    data: &LabeledDataset<T>,
    lambda: T,
) -> Result<(T, ParamMatrix<T>)> {
    if lambda < T::zero() || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let (risk, mut grad) = empirical_risk(theta, data)?;
    grad.axpy(lambda, theta.matrix());
    let half = T::of(0.5);
    Ok((risk + half * lambda * theta.matrix().frobenius_sq(), ParamMatrix(grad)))
}

/// Objective with a random linear term and extra ridge:
/// `(1/N) Σ ℓ + (λ/N)·½‖θ‖²_F + (1/N) tr(Bᵀθ) + (ρ/2N)‖θ‖²_F`.
pub fn perturbed_objective<T: Scalar>(
    theta: &ParamMatrix<T>,
    data: &LabeledDataset<T>,
    lambda: T,
    noise: &ParamMatrix<T>,
    rho: T,
) -> Result<(T, ParamMatrix<T>)> {
    if lambda < T::zero() || rho < T::zero() || !lambda.is_finite() || !rho.is_finite() {
        return Err(Error::InvalidParameter("lambda and rho must be finite and >= 0".into()));
    }
    if !noise.matrix().same_shape(theta.matrix()) {
        return Err(Error::InvalidInput(format!(
            "noise matrix is {:?} but parameters are {:?}",
            noise.matrix().shape(),
            theta.matrix().shape()
        )));
    }
    let (risk, mut grad) = empirical_risk(theta, data)?;
    let inv_n = T::one() / T::of_usize(data.len());
    let ridge = (lambda + rho) * inv_n;
    grad.axpy(ridge, theta.matrix());
    grad.axpy(inv_n, noise.matrix());
    let value = risk
        + T::of(0.5) * ridge * theta.matrix().frobenius_sq()
        + inv_n * noise.matrix().dot(theta.matrix());
    Ok((value, ParamMatrix(grad)))
}
