//! Rényi DP accountant for the subsampled Gaussian mechanism, used to pick
//! the DP-SGD noise multiplier.

use serde::{Deserialize, Serialize};

use super::{DpSgdConfig, PrivacySpec};
use crate::error::{Error, Result};

/// Integer orders 2..=64.
pub const DEFAULT_RDP_ORDERS: std::ops::RangeInclusive<u32> = 2..=64;

pub const SIGMA_SEARCH_MIN: f64 = 0.01;
pub const SIGMA_SEARCH_MAX: f64 = 1e4;
const SIGMA_SEARCH_ITERS: usize = 100;

/// RDP guarantee as a function of the order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdpCurve {
    pub orders: Vec<f64>,
    pub eps_at_order: Vec<f64>,
}

impl RdpCurve {
    /// Curve of `steps` compositions of the subsampled Gaussian.
    pub fn subsampled_gaussian(q: f64, sigma: f64, steps: usize, orders: impl IntoIterator<Item = u32>) -> Result<Self> {
        let orders: Vec<f64> = orders.into_iter().map(f64::from).collect();
        let eps_at_order = orders
            .iter()
            .map(|&a| rdp_subsampled_gaussian(q, sigma, a).map(|e| e * steps as f64))
            .collect::<Result<_>>()?;
        Ok(Self { orders, eps_at_order })
    }

    /// Conversion to `(ε, δ)`: `min_α ε(α) + ln(1/δ)/(α − 1)`.
    pub fn to_epsilon(&self, delta: f64) -> f64 {
        let l = (1.0 / delta).ln();
        self.orders
            .iter()
            .zip(&self.eps_at_order)
            .map(|(&a, &e)| e + l / (a - 1.0))
            .fold(f64::INFINITY, f64::min)
    }
}

/// RDP of one subsampled Gaussian step at integer order `α`:
/// `(1/(α−1)) log Σ_k C(α,k)(1−q)^{α−k} q^k exp((k²−k)/(2σ²))`,
/// with the `q = 1` case returned as exactly `α/(2σ²)`.
pub fn rdp_subsampled_gaussian(q: f64, sigma: f64, order: f64) -> Result<f64> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::InvalidParameter(format!("sample rate must lie in (0, 1], got {q}")));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!("sigma must be > 0, got {sigma}")));
    }
    if !(order >= 2.0) || order.fract() != 0.0 || !order.is_finite() {
        return Err(Error::UnsupportedOrder(order));
    }
    if q == 1.0 {
        return Ok(order / (2.0 * sigma * sigma));
    }
    let a = order as u64;
    let ln_q = q.ln();
    let ln_1mq = (-q).ln_1p();
    let two_var = 2.0 * sigma * sigma;
    let mut ln_binom = 0.0;
    let mut terms = Vec::with_capacity(a as usize + 1);
    for k in 0..=a {
        if k > 0 {
            ln_binom += ((a - k + 1) as f64).ln() - (k as f64).ln();
        }
        let kf = k as f64;
        terms.push(ln_binom + (a - k) as f64 * ln_1mq + kf * ln_q + (kf * kf - kf) / two_var);
    }
    let top = (0..terms.len()).fold(0, |b, k| if terms[k] > terms[b] { k } else { b });
    let m = terms[top];
    // ln_1p keeps precision when the result is far below machine epsilon
    let rest: f64 = terms.iter().enumerate().filter(|&(k, _)| k != top).map(|(_, t)| (t - m).exp()).sum();
    let lse = m + rest.ln_1p();
    // rounding can push the log of a sum that is exactly ≥ 1 slightly negative
    Ok((lse / (order - 1.0)).max(0.0))
}

/// `ε` spent by DP-SGD with noise multiplier `sigma` under the integer-order grid.
pub fn dpsgd_epsilon(sigma: f64, cfg: &DpSgdConfig, delta: f64) -> Result<f64> {
    Ok(RdpCurve::subsampled_gaussian(cfg.sample_rate, sigma, cfg.n_steps, DEFAULT_RDP_ORDERS)?.to_epsilon(delta))
}

/// Smallest noise multiplier on `[SIGMA_SEARCH_MIN, SIGMA_SEARCH_MAX]` whose
/// accounted `ε` after `M` steps is at most the target.
pub fn dpsgd_sigma_for_target(spec: &PrivacySpec, cfg: &DpSgdConfig) -> Result<f64> {
    spec.require_approx("DP-SGD accounting")?;
    cfg.validate()?;
    let within = |s: f64| -> Result<bool> { Ok(dpsgd_epsilon(s, cfg, spec.delta)? <= spec.epsilon) };
    if !within(SIGMA_SEARCH_MAX)? {
        return Err(Error::Infeasible(format!(
            "epsilon {} unreachable with sigma <= {SIGMA_SEARCH_MAX} for {} steps at q = {}",
            spec.epsilon, cfg.n_steps, cfg.sample_rate
        )));
    }
    if within(SIGMA_SEARCH_MIN)? {
        return Ok(SIGMA_SEARCH_MIN);
    }
    let (mut bad, mut good) = (SIGMA_SEARCH_MIN, SIGMA_SEARCH_MAX);
    for _ in 0..SIGMA_SEARCH_ITERS {
        let mid = (bad * good).sqrt();
        if within(mid)? {
            good = mid;
        } else {
            bad = mid;
        }
    }
    Ok(good)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn full_batch_is_gaussian_rdp() {
        assert_eq!(rdp_subsampled_gaussian(1.0, 2.0, 8.0).unwrap(), 1.0);
    }

    #[test]
    fn vanishing_sample_rate() {
        // leading order q²·C(α,2)(e^{1/σ²} − 1)/(α − 1)
        let v = rdp_subsampled_gaussian(1e-12, 1.0, 16.0).unwrap();
        let lead = 1e-24 * 120.0 * (1f64.exp() - 1.0) / 15.0;
        assert_relative_eq!(v, lead, max_relative = 1e-6);
    }

    #[test]
    fn reference_value() {
        // forward Rényi divergence of the mixture, 40-digit quadrature
        let v = rdp_subsampled_gaussian(0.01, 1.0, 16.0).unwrap();
        assert_relative_eq!(v, 3.0878507836962446, max_relative = 1e-12);
    }

    #[test]
    fn rejects_fractional_orders() {
        assert!(matches!(rdp_subsampled_gaussian(0.1, 1.0, 2.5), Err(Error::UnsupportedOrder(_))));
        assert!(matches!(rdp_subsampled_gaussian(0.1, 1.0, 1.0), Err(Error::UnsupportedOrder(_))));
        assert!(rdp_subsampled_gaussian(0.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn curve_nondecreasing_in_order() {
        let c = RdpCurve::subsampled_gaussian(0.05, 1.1, 1, DEFAULT_RDP_ORDERS).unwrap();
        for w in c.eps_at_order.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn infeasible_target() {
        let spec = PrivacySpec::new(1e-9, 1e-5, 1).unwrap();
        let cfg = DpSgdConfig::new(1.0, 100, 100_000, 100, 0.1).unwrap();
        assert!(matches!(dpsgd_sigma_for_target(&spec, &cfg), Err(Error::Infeasible(_))));
        let pure = PrivacySpec::new(1.0, 0.0, 1).unwrap();
        assert!(matches!(dpsgd_sigma_for_target(&pure, &cfg), Err(Error::WrongVariant(_))));
    }
}
