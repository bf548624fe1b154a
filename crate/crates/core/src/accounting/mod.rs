//! Noise-scale calibration and privacy composition.
//!
//! Everything here runs in `f64`. The closed forms live in this file; the
//! analytic Gaussian calibration, the Rényi accountant used for DP-SGD and the
//! inference-budget counter have their own submodules.

mod analytic_gaussian;
mod budget;
mod rdp;

pub use analytic_gaussian::{
    analytic_gaussian_alpha, gaussian_mechanism_delta, gaussian_model_sigma, gaussian_prediction_sigma,
    gaussian_sigma_for_sensitivity, normal_cdf, ADVANCED_COMPOSITION_GRID,
};
pub use budget::{consume_budget, BudgetState};
pub use rdp::{
    dpsgd_epsilon, dpsgd_sigma_for_target, rdp_subsampled_gaussian, RdpCurve, DEFAULT_RDP_ORDERS, SIGMA_SEARCH_MAX,
    SIGMA_SEARCH_MIN,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LossConstants;

/// Target `(ε, δ)` and the number of released predictions `B` it covers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacySpec {
    pub epsilon: f64,
    pub delta: f64,
    pub budget: u64,
}

impl PrivacySpec {
    pub fn new(epsilon: f64, delta: f64, budget: u64) -> Result<Self> {
        let s = Self { epsilon, delta, budget };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidParameter(format!("epsilon must be finite and > 0, got {}", self.epsilon)));
        }
        if !(0.0..1.0).contains(&self.delta) {
            return Err(Error::InvalidParameter(format!("delta must lie in [0, 1), got {}", self.delta)));
        }
        if self.budget == 0 {
            return Err(Error::InvalidParameter("inference budget must be >= 1".into()));
        }
        Ok(())
    }

    pub fn is_pure(&self) -> bool {
        self.delta == 0.0
    }

    fn require_pure(&self, what: &str) -> Result<()> {
        self.validate()?;
        if !self.is_pure() {
            return Err(Error::WrongVariant(format!("{what} is the delta = 0 calibration, got delta = {}", self.delta)));
        }
        Ok(())
    }

    fn require_approx(&self, what: &str) -> Result<()> {
        self.validate()?;
        if self.is_pure() {
            return Err(Error::WrongVariant(format!("{what} needs delta > 0")));
        }
        Ok(())
    }
}

/// Problem quantities that enter the calibrations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemDims {
    pub n_train: usize,
    pub lambda: f64,
    pub n_classes: usize,
    pub lipschitz_k: f64,
    pub hessian_l: f64,
}

impl ProblemDims {
    pub fn new(n_train: usize, lambda: f64, n_classes: usize, constants: LossConstants) -> Result<Self> {
        let d = Self {
            n_train,
            lambda,
            n_classes,
            lipschitz_k: constants.lipschitz_k,
            hessian_l: constants.hessian_bound_l,
        };
        d.validate()?;
        Ok(d)
    }

    /// Dimensions for the multi-class logistic loss (`K = √2`, `L = ½`).
    pub fn logistic(n_train: usize, lambda: f64, n_classes: usize) -> Result<Self> {
        Self::new(n_train, lambda, n_classes, LossConstants::MULTICLASS_LOGISTIC)
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if self.n_train == 0 || self.n_classes == 0 {
            return Err(Error::InvalidParameter("N and C must be positive".into()));
        }
        if !pos(self.lambda) || !pos(self.lipschitz_k) || !pos(self.hessian_l) {
            return Err(Error::InvalidParameter(format!(
                "lambda, K and L must be finite and positive: {} {} {}",
                self.lambda, self.lipschitz_k, self.hessian_l
            )));
        }
        Ok(())
    }

    /// L2 sensitivity of the regularized minimizer, `2K/(Nλ)`.
    pub fn minimizer_sensitivity(&self) -> f64 {
        2.0 * self.lipschitz_k / (self.n_train as f64 * self.lambda)
    }
}

/// DP-SGD schedule. `sample_rate` is always `batch_size / n_train`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpSgdConfig {
    pub clip_nu: f64,
    pub batch_size: usize,
    pub n_steps: usize,
    pub sample_rate: f64,
    pub learning_rate: f64,
}

impl DpSgdConfig {
    pub fn new(clip_nu: f64, batch_size: usize, n_steps: usize, n_train: usize, learning_rate: f64) -> Result<Self> {
        if batch_size == 0 || batch_size > n_train {
            return Err(Error::InvalidParameter(format!("batch size {batch_size} must be in 1..={n_train}")));
        }
        let cfg = Self { clip_nu, batch_size, n_steps, sample_rate: batch_size as f64 / n_train as f64, learning_rate };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clip_nu > 0.0) || self.batch_size == 0 || self.n_steps == 0 {
            return Err(Error::InvalidParameter("clip, batch size and step count must be positive".into()));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate <= 1.0) {
            return Err(Error::InvalidParameter(format!("sample rate must be in (0, 1], got {}", self.sample_rate)));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidParameter("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Radial-exponential rate for output perturbation, `β = Nλε/(2K)`.
pub fn model_sensitivity_beta(dims: &ProblemDims, spec: &PrivacySpec) -> Result<f64> {
    dims.validate()?;
    spec.require_pure("model sensitivity beta")?;
    Ok(dims.n_train as f64 * dims.lambda * spec.epsilon / (2.0 * dims.lipschitz_k))
}

/// Objective perturbation: noise rate `β = ε/(2K)` and extra ridge
/// `ρ = 2LC/ε`, the smallest admissible value.
pub fn loss_perturbation_params(dims: &ProblemDims, spec: &PrivacySpec) -> Result<(f64, f64)> {
    dims.validate()?;
    spec.require_pure("loss perturbation parameters")?;
    Ok((spec.epsilon / (2.0 * dims.lipschitz_k), loss_perturbation_rho(dims, spec)))
}

pub fn loss_perturbation_rho(dims: &ProblemDims, spec: &PrivacySpec) -> f64 {
    2.0 * dims.hessian_l * dims.n_classes as f64 / spec.epsilon
}

/// Gaussian objective perturbation, `σ = (K/ε)·√(8 ln(2/δ) + 4ε)`.
pub fn gaussian_loss_sigma(dims: &ProblemDims, spec: &PrivacySpec) -> Result<f64> {
    dims.validate()?;
    spec.require_approx("gaussian loss perturbation")?;
    let eps = spec.epsilon;
    Ok(dims.lipschitz_k / eps * (8.0 * (2.0 / spec.delta).ln() + 4.0 * eps).sqrt())
}

/// Per-query noise rate for noisy logits under standard composition,
/// `β = Nλε/(2KB)`.
pub fn prediction_sensitivity_beta(dims: &ProblemDims, spec: &PrivacySpec) -> Result<f64> {
    dims.validate()?;
    spec.require_pure("prediction sensitivity beta")?;
    Ok(dims.n_train as f64 * dims.lambda * spec.epsilon / (2.0 * dims.lipschitz_k * spec.budget as f64))
}

/// Inverse temperature of the ensemble vote. `ε/B` for `δ = 0`; for `δ > 0`
/// the larger of that and the advanced-composition value
/// `√(2/B)(√(ln(1/δ)+ε) − √(ln(1/δ)))`.
pub fn subsample_beta(spec: &PrivacySpec) -> Result<f64> {
    spec.validate()?;
    let b = spec.budget as f64;
    let standard = spec.epsilon / b;
    if spec.is_pure() {
        return Ok(standard);
    }
    Ok(standard.max(advanced_composition_step(spec.epsilon, spec.delta, spec.budget)))
}

/// Largest per-step ε such that `B` adaptive compositions stay within
/// `(ε, δ)` by the quadratic relaxation of the advanced composition bound.
pub(crate) fn advanced_composition_step(epsilon: f64, delta: f64, budget: u64) -> f64 {
    let l = (1.0 / delta).ln();
    (2.0 / budget as f64).sqrt() * ((l + epsilon).sqrt() - l.sqrt())
}
