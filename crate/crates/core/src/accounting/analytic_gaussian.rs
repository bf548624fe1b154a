//! Exact calibration of the Gaussian mechanism.
//!
//! For sensitivity `Δ` the mechanism with standard deviation `σ` is `(ε, δ)`-DP
//! iff `Φ(Δ/2σ − εσ/Δ) − e^ε Φ(−Δ/2σ − εσ/Δ) ≤ δ`. Writing `σ = αΔ/√(2ε)`,
//! the smallest admissible `α` is found by bisection on one of two monotone
//! one-dimensional functions, chosen by comparing `δ` with the value `δ₀`
//! the left-hand side takes at `σ = Δ/√(2ε)`.

use libm::erfc;

use super::{advanced_composition_step, PrivacySpec, ProblemDims};
use crate::error::{Error, Result};

const SEARCH_LO: f64 = 1e-12;
const SEARCH_HI: f64 = 1e12;
const SEARCH_ITERS: usize = 80;

/// Number of `δ'` values tried when splitting `δ` for advanced composition.
pub const ADVANCED_COMPOSITION_GRID: usize = 200;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn b_plus(eps: f64, v: f64) -> f64 {
    normal_cdf((eps * v).sqrt()) - eps.exp() * normal_cdf(-(eps * (v + 2.0)).sqrt())
}

fn b_minus(eps: f64, u: f64) -> f64 {
    normal_cdf(-(eps * u).sqrt()) - eps.exp() * normal_cdf(-(eps * (u + 2.0)).sqrt())
}

/// The smallest `δ` for which the Gaussian mechanism with noise `sigma` and
/// L2 sensitivity `sensitivity` is `(epsilon, δ)`-DP.
pub fn gaussian_mechanism_delta(epsilon: f64, sigma: f64, sensitivity: f64) -> f64 {
    let a = sensitivity / (2.0 * sigma);
    let b = epsilon * sigma / sensitivity;
    normal_cdf(a - b) - epsilon.exp() * normal_cdf(-a - b)
}

/// Geometric bisection over `[SEARCH_LO, SEARCH_HI]`. `feasible` must be
/// monotone; `feasible_below` says on which side the feasible set lies.
/// Returns the last feasible bracket end.
fn bisect(mut feasible: impl FnMut(f64) -> bool, feasible_below: bool) -> f64 {
    let (mut good, mut bad) = if feasible_below { (SEARCH_LO, SEARCH_HI) } else { (SEARCH_HI, SEARCH_LO) };
    for _ in 0..SEARCH_ITERS {
        let mid = (good * bad).sqrt();
        if feasible(mid) {
            good = mid;
        } else {
            bad = mid;
        }
    }
    good
}

/// Scale factor `α` with `σ = αΔ/√(2ε)` the smallest `(ε, δ)`-DP Gaussian noise.
pub fn analytic_gaussian_alpha(epsilon: f64, delta: f64) -> Result<f64> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidParameter(format!("epsilon must be finite and > 0, got {epsilon}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!("delta must lie in (0, 1), got {delta}")));
    }
    let delta0 = normal_cdf(0.0) - epsilon.exp() * normal_cdf(-(2.0 * epsilon).sqrt());
    if delta >= delta0 {
        // v* = sup{v ≥ 0 : B⁺(v) ≤ δ}, B⁺ increasing
        let v = if b_plus(epsilon, SEARCH_LO) > delta {
            0.0
        } else if b_plus(epsilon, SEARCH_HI) <= delta {
            SEARCH_HI
        } else {
            bisect(|v| b_plus(epsilon, v) <= delta, true)
        };
        Ok((1.0 + v / 2.0).sqrt() - (v / 2.0).sqrt())
    } else {
        // u* = inf{u ≥ 0 : B⁻(u) ≤ δ}, B⁻ decreasing
        if b_minus(epsilon, SEARCH_HI) > delta {
            return Err(Error::Numerical(format!(
                "analytic gaussian search did not bracket u* for epsilon={epsilon}, delta={delta}"
            )));
        }
        let u = if b_minus(epsilon, SEARCH_LO) <= delta {
            0.0
        } else {
            bisect(|u| b_minus(epsilon, u) <= delta, false)
        };
        Ok((1.0 + u / 2.0).sqrt() + (u / 2.0).sqrt())
    }
}

/// Analytic Gaussian `σ` for an arbitrary L2 sensitivity.
pub fn gaussian_sigma_for_sensitivity(epsilon: f64, delta: f64, sensitivity: f64) -> Result<f64> {
    Ok(analytic_gaussian_alpha(epsilon, delta)? * sensitivity / (2.0 * epsilon).sqrt())
}

/// Output perturbation with Gaussian noise: `σ = 2Kα/(Nλ√(2ε))`.
pub fn gaussian_model_sigma(dims: &ProblemDims, spec: &PrivacySpec) -> Result<f64> {
    dims.validate()?;
    spec.require_approx("gaussian model sensitivity")?;
    gaussian_sigma_for_sensitivity(spec.epsilon, spec.delta, dims.minimizer_sensitivity())
}

/// Per-query Gaussian noise on the logits for a budget of `B` queries: the
/// smaller of the standard-composition `σ'` (`ε/B`, `δ/B` per query) and the
/// best advanced-composition `σ''` over a geometric grid of splits `δ'`.
pub fn gaussian_prediction_sigma(dims: &ProblemDims, spec: &PrivacySpec) -> Result<f64> {
    dims.validate()?;
    spec.require_approx("gaussian prediction sensitivity")?;
    let sens = dims.minimizer_sensitivity();
    let b = spec.budget as f64;
    let standard = gaussian_sigma_for_sensitivity(spec.epsilon / b, spec.delta / b, sens)?;

    let lo = spec.delta * 1e-6;
    let hi = spec.delta * (1.0 - 1.0 / b);
    if !(hi > lo) {
        return Ok(standard);
    }
    let ratio = (hi / lo).ln();
    let mut best = standard;
    for i in 0..ADVANCED_COMPOSITION_GRID {
        let t = i as f64 / (ADVANCED_COMPOSITION_GRID - 1) as f64;
        let delta_split = lo * (ratio * t).exp();
        let eps_step = advanced_composition_step(spec.epsilon, delta_split, spec.budget);
        let delta_step = (spec.delta - delta_split) / b;
        if !(eps_step > 0.0) || !(delta_step > 0.0) {
            continue;
        }
        let sigma = gaussian_sigma_for_sensitivity(eps_step, delta_step, sens)?;
        if sigma < best {
            best = sigma;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn delta0_at_eps_one() {
        // 50-digit reference value
        let d0 = normal_cdf(0.0) - 1f64.exp() * normal_cdf(-2f64.sqrt());
        assert_relative_eq!(d0, 0.28620821192209649779, max_relative = 1e-13);
    }

    #[test]
    fn alpha_matches_reference_values() {
        // references computed by an independent 40-digit bisection
        assert_relative_eq!(analytic_gaussian_alpha(1.0, 0.5).unwrap(), 0.71709824451896814, max_relative = 1e-9);
        assert_relative_eq!(analytic_gaussian_alpha(1.0, 1e-5).unwrap(), 5.2759098541748165, max_relative = 1e-9);
        assert_relative_eq!(analytic_gaussian_alpha(0.1, 1e-6).unwrap(), 16.235951139011917, max_relative = 1e-9);
        assert_relative_eq!(analytic_gaussian_alpha(5.0, 0.3).unwrap(), 1.0717867372029735, max_relative = 1e-9);
    }

    #[test]
    fn alpha_rejects_bad_delta() {
        assert!(analytic_gaussian_alpha(1.0, 0.0).is_err());
        assert!(analytic_gaussian_alpha(1.0, 1.0).is_err());
        assert!(analytic_gaussian_alpha(0.0, 0.5).is_err());
    }

    #[test]
    fn grid_scan_cross_check() {
        // brute-force scan of B⁺ for ε=1, δ=0.5: v* is the last grid point with B⁺ ≤ δ
        let (eps, delta) = (1.0, 0.5);
        let step = 1e-5;
        let mut v = 0.0;
        while b_plus(eps, v + step) <= delta {
            v += step;
        }
        let alpha_scan = (1.0 + v / 2.0).sqrt() - (v / 2.0).sqrt();
        let alpha = analytic_gaussian_alpha(eps, delta).unwrap();
        assert!((alpha - alpha_scan).abs() < 1e-5, "{alpha} vs {alpha_scan}");
    }

    #[test]
    fn model_sigma_example() {
        let dims = ProblemDims::logistic(1000, 0.01, 10).unwrap();
        let s = gaussian_model_sigma(&dims, &PrivacySpec::new(1.0, 1e-5, 1).unwrap()).unwrap();
        assert_relative_eq!(s, 1.0551819708349633, max_relative = 1e-9);
        let dims2 = ProblemDims::logistic(2000, 0.01, 10).unwrap();
        let s2 = gaussian_model_sigma(&dims2, &PrivacySpec::new(1.0, 1e-5, 1).unwrap()).unwrap();
        assert_relative_eq!(s2, s / 2.0, max_relative = 1e-12);
        assert!(gaussian_model_sigma(&dims, &PrivacySpec::new(1.0, 0.0, 1).unwrap()).is_err());
    }

    #[test]
    fn model_sigma_shrinks_as_delta_grows() {
        let dims = ProblemDims::logistic(1000, 0.01, 10).unwrap();
        let mut prev = f64::INFINITY;
        for delta in [1e-8, 1e-5, 1e-2, 0.3, 0.6, 0.9, 0.99, 0.999999] {
            let s = gaussian_model_sigma(&dims, &PrivacySpec::new(1.0, delta, 1).unwrap()).unwrap();
            assert!(s < prev, "delta {delta}: {s} !< {prev}");
            prev = s;
        }
        assert!(prev < 0.05);
    }

    #[test]
    fn prediction_sigma_reductions() {
        let dims = ProblemDims::logistic(1000, 0.01, 10).unwrap();
        let one = PrivacySpec::new(1.0, 1e-5, 1).unwrap();
        assert_eq!(gaussian_prediction_sigma(&dims, &one).unwrap(), gaussian_model_sigma(&dims, &one).unwrap());

        let big = PrivacySpec::new(1.0, 1e-5, 10_000).unwrap();
        let standard = gaussian_sigma_for_sensitivity(1.0 / 1e4, 1e-9, dims.minimizer_sensitivity()).unwrap();
        let chosen = gaussian_prediction_sigma(&dims, &big).unwrap();
        assert!(chosen < standard * 0.5, "{chosen} vs {standard}");

        for b in [2, 5, 30, 100] {
            let spec = PrivacySpec::new(1.0, 1e-5, b).unwrap();
            let standard = gaussian_sigma_for_sensitivity(1.0 / b as f64, 1e-5 / b as f64, dims.minimizer_sensitivity())
                .unwrap();
            assert!(gaussian_prediction_sigma(&dims, &spec).unwrap() <= standard);
        }
    }
}
