//! Deterministic minimization of the regularized (optionally perturbed)
//! empirical risk for linear multi-class models.

pub mod lbfgs;

use serde::{Deserialize, Serialize};

use crate::dataset::{norm, LabeledDataset, UNIT_BALL_SLACK};
use crate::error::{Error, Result};
use crate::loss::{erm_objective, perturbed_objective, LogitVector, ParamMatrix};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

pub use lbfgs::{LbfgsOptions, LbfgsReport};

/// Random linear term and extra ridge added to the objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation<T> {
    pub noise: ParamMatrix<T>,
    pub rho: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig<T> {
    /// Regularization weight. With a perturbation present the objective
    /// applies it as `λ/N`.
    pub lambda: T,
    pub max_iterations: usize,
    pub grad_tolerance: T,
    pub perturbation: Option<Perturbation<T>>,
}

impl<T: Scalar> TrainConfig<T> {
    /// Defaults: 500 iterations, gradient tolerance `1e-8` (`1e-4` for `f32`).
    pub fn new(lambda: T) -> Self {
        let tol = if T::EPS_F64 < 1e-10 { 1e-8 } else { 1e-4 };
        Self { lambda, max_iterations: 500, grad_tolerance: T::of(tol), perturbation: None }
    }

    pub fn with_tolerance(mut self, grad_tolerance: T) -> Self {
        self.grad_tolerance = grad_tolerance;
        self
    }

    pub fn with_max_iterations(mut self, max_iterations: usize) -> Self {
        self.max_iterations = max_iterations;
        self
    }

    pub fn with_perturbation(mut self, noise: ParamMatrix<T>, rho: T) -> Self {
        self.perturbation = Some(Perturbation { noise, rho });
        self
    }

    fn validate(&self, data: &LabeledDataset<T>) -> Result<()> {
        if !(self.lambda > T::zero()) || !self.lambda.is_finite() {
            return Err(Error::InvalidParameter(format!("lambda must be > 0 for a unique minimizer, got {}", self.lambda)));
        }
        if !(self.grad_tolerance > T::zero()) || self.max_iterations == 0 {
            return Err(Error::InvalidParameter("gradient tolerance and iteration cap must be positive".into()));
        }
        if let Some(p) = &self.perturbation {
            if p.noise.dim() != data.dim() || p.noise.n_classes() != data.n_classes() {
                return Err(Error::InvalidInput(format!(
                    "perturbation is {}x{}, expected {}x{}",
                    p.noise.dim(),
                    p.noise.n_classes(),
                    data.dim(),
                    data.n_classes()
                )));
            }
            if p.rho < T::zero() {
                return Err(Error::InvalidParameter("rho must be >= 0".into()));
            }
        }
        Ok(())
    }
}

/// Objective value and gradient for a configuration.
pub fn training_objective<T: Scalar>(
    theta: &ParamMatrix<T>,
    data: &LabeledDataset<T>,
    cfg: &TrainConfig<T>,
) -> Result<(T, ParamMatrix<T>)> {
    match &cfg.perturbation {
        None => erm_objective(theta, data, cfg.lambda),
        Some(p) => perturbed_objective(theta, data, cfg.lambda, &p.noise, p.rho),
    }
}

/// Minimizer of the training objective, started from `θ = 0`.
pub fn minimize_erm<T: Scalar>(data: &LabeledDataset<T>, cfg: &TrainConfig<T>) -> Result<ParamMatrix<T>> {
    Ok(minimize_erm_report(data, cfg)?.0)
}

pub fn minimize_erm_report<T: Scalar>(
    data: &LabeledDataset<T>,
    cfg: &TrainConfig<T>,
) -> Result<(ParamMatrix<T>, LbfgsReport<T>)> {
    if data.is_empty() {
        return Err(Error::InvalidInput("cannot train on an empty dataset".into()));
    }
    cfg.validate(data)?;
    let (d, c) = (data.dim(), data.n_classes());
    let objective = |x: &[T]| -> Result<(T, Vec<T>)> {
        let theta = ParamMatrix::from_matrix(Matrix::from_vec(d, c, x.to_vec())?)?;
        let (v, g) = training_objective(&theta, data, cfg)?;
        Ok((v, g.into_matrix().into_vec()))
    };
    let opts = LbfgsOptions::new(cfg.max_iterations, cfg.grad_tolerance);
    let report = lbfgs::minimize(objective, vec![T::zero(); d * c], &opts)?;
    let theta = ParamMatrix::from_matrix(Matrix::from_vec(d, c, report.x.clone())?)?;
    Ok((theta, report))
}

/// `θᵀx` for an input in the unit ball.
pub fn predict_logits<T: Scalar>(theta: &ParamMatrix<T>, x: &[T]) -> Result<LogitVector<T>> {
    if x.len() != theta.dim() {
        return Err(Error::InvalidInput(format!("input has {} features, model expects {}", x.len(), theta.dim())));
    }
    if norm(x).as_f64() > 1.0 + UNIT_BALL_SLACK {
        return Err(Error::InvalidInput("query input lies outside the unit ball".into()));
    }
    let mut out = vec![T::zero(); theta.n_classes()];
    theta.logits_raw(x, &mut out);
    LogitVector::new(out)
}

/// Fraction of rows whose arg-max logit equals the label.
pub fn accuracy<T: Scalar>(theta: &ParamMatrix<T>, data: &LabeledDataset<T>) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let mut logits = vec![T::zero(); theta.n_classes()];
    let correct = (0..data.len())
        .filter(|&n| {
            theta.logits_raw(data.x(n), &mut logits);
            crate::loss::argmax(&logits) == data.y(n)
        })
        .count();
    correct as f64 / data.len() as f64
}
