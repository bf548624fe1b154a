use rand::seq::index;
use rand::Rng;

use super::{calibrate, MechanismSpec, PredictorModel, PrivatePredictor};
use crate::accounting::{BudgetState, DpSgdConfig};
use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::loss::ParamMatrix;
use crate::matrix::Matrix;
use crate::noise::{sample_gaussian, NoiseShape, RngStream};

const NOISE_SEED_SALT: u64 = 0x5DEE_CE66_D1CE_4E5B;
use crate::scalar::Scalar;

/// `∇_θ ℓ(θᵀx, y) = x (p − e_y)ᵀ`.
pub fn per_example_gradient<T: Scalar>(theta: &ParamMatrix<T>, x: &[T], y: usize) -> Matrix<T> {
    let c = theta.n_classes();
    let mut r = vec![T::zero(); c];
    theta.logits_raw(x, &mut r);
    let m = r.iter().copied().fold(T::neg_infinity(), T::max);
    let mut z = T::zero();
    for v in r.iter_mut() {
        *v = (*v - m).exp();
        z += *v;
    }
    for v in r.iter_mut() {
        *v /= z;
    }
    r[y] -= T::one();
    Matrix::from_fn(x.len(), c, |d, k| x[d] * r[k])
}

/// Scales `g` by `1/max(1, ‖g‖_F/ν)`.
pub fn clip_gradient<T: Scalar>(g: &mut Matrix<T>, nu: f64) {
    let norm = g.frobenius().as_f64();
    if norm > nu {
        g.scale(T::of(nu / norm));
    }
}

/// `|𝓑|` distinct indices drawn uniformly from `0..n`.
pub fn sample_batch<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Vec<usize> {
    index::sample(rng, n, batch_size).into_vec()
}

/// Sum of clipped per-example gradients over `batch`, plus `N(0, σ²ν²)` per
/// coordinate. `sigma = 0` adds nothing.
pub fn noisy_gradient_sum<T: Scalar, R: Rng + ?Sized>(
    theta: &ParamMatrix<T>,
    data: &LabeledDataset<T>,
    batch: &[usize],
    nu: f64,
    sigma: f64,
    noise_rng: &mut R,
) -> Result<Matrix<T>> {
    let mut sum = Matrix::zeros(theta.dim(), theta.n_classes());
    for &n in batch {
        let mut g = per_example_gradient(theta, data.x(n), data.y(n));
        clip_gradient(&mut g, nu);
        sum.axpy(T::one(), &g);
    }
    if sigma > 0.0 {
        let noise = sample_gaussian::<T, _>(NoiseShape::new(theta.dim(), theta.n_classes())?, sigma * nu, noise_rng)?;
        sum.axpy(T::one(), &noise);
    }
    Ok(sum)
}

/// `M` steps of `θ ← θ − η·(Σ clip(g_n) + noise)/|𝓑|` from `θ = 0`. Batches
/// and noise come from separate streams so a run with `σ = 0` sees the same
/// batch sequence as a noisy one.
pub fn train_dpsgd_with_sigma<T: Scalar, R1: Rng + ?Sized, R2: Rng + ?Sized>(
    data: &LabeledDataset<T>,
    cfg: &DpSgdConfig,
    sigma: f64,
    batch_rng: &mut R1,
    noise_rng: &mut R2,
) -> Result<ParamMatrix<T>> {
    cfg.validate()?;
    if cfg.batch_size > data.len() {
        return Err(Error::InvalidParameter(format!("batch size {} exceeds N = {}", cfg.batch_size, data.len())));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!("noise multiplier must be >= 0, got {sigma}")));
    }
    let mut theta = ParamMatrix::zeros(data.dim(), data.n_classes());
    let step = T::of(-cfg.learning_rate / cfg.batch_size as f64);
    for _ in 0..cfg.n_steps {
        let batch = sample_batch(data.len(), cfg.batch_size, batch_rng);
        let g = noisy_gradient_sum(&theta, data, &batch, cfg.clip_nu, sigma, noise_rng)?;
        theta.matrix_mut().axpy(step, &g);
    }
    if !theta.matrix().is_finite() {
        return Err(Error::Numerical("DP-SGD produced non-finite parameters".into()));
    }
    Ok(theta)
}

pub fn train_dpsgd<T: Scalar>(data: &LabeledDataset<T>, spec: &MechanismSpec) -> Result<PrivatePredictor<T>> {
    spec.check_data(data)?;
    let report = calibrate(spec)?;
    let cfg = spec.dpsgd.as_ref().expect("validated");
    let sigma = if spec.unsafe_disable_noise { 0.0 } else { report.scale };
    let mut noise_rng = RngStream::new(spec.seed ^ NOISE_SEED_SALT, spec.stream);
    let theta = train_dpsgd_with_sigma(data, cfg, sigma, &mut spec.rng(), &mut noise_rng)?;
    Ok(PrivatePredictor::new(spec, report, PredictorModel::Released { theta }, BudgetState::unlimited()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frozen() -> LabeledDataset<f64> {
        let x = Matrix::from_rows(&[vec![0.6, 0.0], vec![0.0, 0.8], vec![-0.5, 0.5], vec![0.3, -0.4]]).unwrap();
        LabeledDataset::new(x, vec![0, 1, 2, 1], 3).unwrap()
    }

    #[test]
    fn clip_definition() {
        let mut g = Matrix::from_vec(1, 2, vec![1.2f64, 1.6]).unwrap(); // norm 2
        clip_gradient(&mut g, 1.0);
        assert!((g.frobenius() - 1.0).abs() < 1e-15);
        let mut h = Matrix::from_vec(1, 2, vec![0.3, 0.4]).unwrap(); // norm 0.5
        let before = h.clone();
        clip_gradient(&mut h, 1.0);
        assert_eq!(h, before);
    }

    #[test]
    fn gradient_matches_objective_gradient() {
        let data = frozen();
        let theta = ParamMatrix::from_matrix(Matrix::from_fn(2, 3, |i, j| 0.3 * i as f64 - 0.2 * j as f64)).unwrap();
        let mut mean = Matrix::zeros(2, 3);
        for n in 0..data.len() {
            mean.axpy(1.0 / data.len() as f64, &per_example_gradient(&theta, data.x(n), data.y(n)));
        }
        // tiny λ so the ridge term is negligible at this precision
        let (_, g) = crate::loss::erm_objective(&theta, &data, 1e-300).unwrap();
        assert!(mean.sub(g.matrix()).frobenius() < 1e-14);
    }

    #[test]
    fn noise_free_huge_clip_is_plain_sgd() {
        let data = frozen();
        let cfg = DpSgdConfig::new(1e9, 2, 25, data.len(), 0.7).unwrap();
        let got = train_dpsgd_with_sigma(&data, &cfg, 0.0, &mut RngStream::new(4, 0), &mut RngStream::new(4, 1)).unwrap();

        let mut rng = RngStream::new(4, 0);
        let mut theta = ParamMatrix::zeros(2, 3);
        for _ in 0..25 {
            let batch = sample_batch(4, 2, &mut rng);
            let mut sum = Matrix::zeros(2, 3);
            for &n in &batch {
                sum.axpy(1.0, &per_example_gradient(&theta, data.x(n), data.y(n)));
            }
            theta.matrix_mut().axpy(-0.7 / 2.0, &sum);
        }
        assert_eq!(got, theta);
    }

    #[test]
    fn summed_noise_variance() {
        let data = frozen();
        let theta = ParamMatrix::zeros(2, 3);
        let (nu, sigma) = (0.5, 1.7);
        let clean = noisy_gradient_sum(&theta, &data, &[0, 2], nu, 0.0, &mut RngStream::new(0, 0)).unwrap();
        let mut rng = RngStream::new(8, 8);
        let reps = 20_000;
        let mut sq = 0.0;
        for _ in 0..reps {
            let g = noisy_gradient_sum(&theta, &data, &[0, 2], nu, sigma, &mut rng).unwrap();
            sq += g.sub(&clean).frobenius_sq();
        }
        let var = sq / (reps * 6) as f64;
        let want = sigma * sigma * nu * nu;
        // sample variance of 120k squared normals has relative sd √(2/120000) ≈ 0.004
        assert!((var / want - 1.0).abs() < 0.02, "{var} vs {want}");
    }

    #[test]
    fn batches_are_distinct_indices() {
        let b = sample_batch(10, 10, &mut RngStream::new(0, 0));
        let mut s = b.clone();
        s.sort_unstable();
        assert_eq!(s, (0..10).collect::<Vec<_>>());
    }
}
