//! Self-checks behind `privpred verify`: loss-constant bounds, calibration
//! tightness, empirical minimizer sensitivity and budget enforcement.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::accounting::{gaussian_mechanism_delta, gaussian_sigma_for_sensitivity, PrivacySpec, ProblemDims};
use crate::data::synth_blobs;
use crate::error::{Error, Result};
use crate::loss::{mc_logistic_grad, mc_logistic_hessian, LabelOneHot, LogitVector, LossConstants};
use crate::mechanisms::{train, MechanismKind, MechanismSpec};
use crate::noise::RngStream;
use crate::trainer::{minimize_erm, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Bounds,
    Calibration,
    Sensitivity,
    Budget,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Bounds, Suite::Calibration, Suite::Sensitivity, Suite::Budget];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Bounds => "bounds",
            Suite::Calibration => "calibration",
            Suite::Sensitivity => "sensitivity",
            Suite::Budget => "budget",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| Error::InvalidParameter(format!("unknown suite {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub suite: Suite,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(suite: Suite, name: &str, passed: bool, detail: String) -> CheckResult {
    CheckResult { suite, name: name.into(), passed, detail }
}

/// Runs one suite. `trials` scales the number of random cases.
pub fn run_suite(suite: Suite, seed: u64, trials: usize) -> Result<Vec<CheckResult>> {
    match suite {
        Suite::Bounds => bounds(seed, trials),
        Suite::Calibration => calibration(),
        Suite::Sensitivity => sensitivity(seed, trials),
        Suite::Budget => budget(seed),
    }
}

fn bounds(seed: u64, trials: usize) -> Result<Vec<CheckResult>> {
    let k = LossConstants::MULTICLASS_LOGISTIC;
    let mut rng = RngStream::new(seed, 0);
    let (mut worst_g, mut worst_h) = (0.0f64, 0.0f64);
    for _ in 0..trials.max(1) * 100 {
        let c = rng.gen_range(2..=12);
        let scale = 10f64.powf(rng.gen_range(-2.0..2.0));
        let a = LogitVector::new((0..c).map(|_| scale * rng.gen_range(-1.0..1.0)).collect())?;
        let y = LabelOneHot::new(rng.gen_range(0..c), c)?;
        let g = mc_logistic_grad(&a, &y)?;
        worst_g = worst_g.max(g.iter().map(|v| v * v).sum::<f64>().sqrt());
        let h = mc_logistic_hessian(&a)?;
        // Gershgorin bound is loose; use the exact top eigenvalue
        let eig = nalgebra::SymmetricEigen::new(nalgebra::DMatrix::from_row_slice(c, c, h.as_slice()));
        worst_h = worst_h.max(eig.eigenvalues.max());
    }
    Ok(vec![
        check(Suite::Bounds, "gradient_norm", worst_g <= k.lipschitz_k + 1e-9, format!("max {worst_g:.12} vs {}", k.lipschitz_k)),
        check(Suite::Bounds, "hessian_top_eigenvalue", worst_h <= k.hessian_bound_l + 1e-9, format!("max {worst_h:.12} vs {}", k.hessian_bound_l)),
    ])
}

fn calibration() -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for eps in [0.1, 1.0, 5.0] {
        for delta in [1e-6, 1e-3, 0.3] {
            let sigma = gaussian_sigma_for_sensitivity(eps, delta, 1.0)?;
            let at = gaussian_mechanism_delta(eps, sigma, 1.0);
            let below = gaussian_mechanism_delta(eps, 0.99 * sigma, 1.0);
            out.push(check(
                Suite::Calibration,
                &format!("eps={eps},delta={delta}"),
                at <= delta + 1e-9 && below > delta,
                format!("delta(sigma)={at:.3e}, delta(0.99 sigma)={below:.3e}"),
            ));
        }
    }
    Ok(out)
}

fn sensitivity(seed: u64, trials: usize) -> Result<Vec<CheckResult>> {
    let (n, lambda) = (200, 0.1);
    let mut rng = RngStream::new(seed, 1);
    let data = synth_blobs(n / 4 + 1, 4, 10, 2.0, &mut rng)?.select(&(0..n).collect::<Vec<_>>());
    let cfg = TrainConfig::new(lambda).with_tolerance(1e-10);
    let base = minimize_erm(&data, &cfg)?;
    let bound = 2.0 * LossConstants::MULTICLASS_LOGISTIC.lipschitz_k / (n as f64 * lambda);
    let mut worst = 0.0f64;
    for _ in 0..trials.max(1) {
        let row = rng.gen_range(0..n);
        let x: Vec<f64> = {
            let v: Vec<f64> = (0..data.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let r = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            v.into_iter().map(|a| a / r.max(1.0)).collect()
        };
        let other = minimize_erm(&data.with_replaced(row, &x, rng.gen_range(0..4))?, &cfg)?;
        worst = worst.max(base.matrix().sub(other.matrix()).frobenius());
    }
    Ok(vec![check(
        Suite::Sensitivity,
        "minimizer_sensitivity",
        worst <= bound * (1.0 + 1e-3),
        format!("max ||dtheta|| {worst:.6e} vs bound {bound:.6e}"),
    )])
}

fn budget(seed: u64) -> Result<Vec<CheckResult>> {
    let data = synth_blobs(20, 3, 4, 2.0, &mut RngStream::new(seed, 2))?;
    let mut out = Vec::new();
    for kind in [MechanismKind::PredictionSensitivity, MechanismKind::SubsampleAggregate] {
        for delta in [0.0, 1e-5] {
            let b = 7;
            let dims = ProblemDims::logistic(data.len(), 0.1, 3)?;
            let spec = MechanismSpec::new(kind, PrivacySpec::new(1.0, delta, b)?, dims).with_ensemble_size(6).with_seed(seed, 0);
            let p = train(&data, &spec)?;
            let answered = (0..b).filter(|&i| p.predict(data.x(i as usize)).is_ok()).count() as u64;
            let refused = p.predict(data.x(0)).map_or_else(|e| e.is_refusal(), |_| false);
            out.push(check(
                Suite::Budget,
                &format!("{kind},delta={delta}"),
                answered == b && refused,
                format!("answered {answered}/{b}, next refused: {refused}"),
            ));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass_small() {
        for s in Suite::ALL {
            let r = run_suite(s, 0, 3).unwrap();
            assert!(!r.is_empty());
            assert!(r.iter().all(|c| c.passed), "{r:?}");
        }
    }
}
