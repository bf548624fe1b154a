//! Noise samplers: the radial-exponential matrix density `p(B) ∝ e^{−β‖B‖_F}`
//! and isotropic Gaussian noise.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseShape {
    pub rows: usize,
    pub cols: usize,
}

impl NoiseShape {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidParameter(format!("noise shape {rows}x{cols} is empty")));
        }
        Ok(Self { rows, cols })
    }

    pub fn vector(len: usize) -> Result<Self> {
        Self::new(len, 1)
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Deterministic random stream keyed by `(seed, stream_id)`.
///
/// Streams with the same seed and different ids are independent ChaCha
/// streams, so every (trial, mechanism) pair can own one without coordinating
/// with the others.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// A new independent stream derived from this one's seed.
    pub fn fork(&self, stream_id: u64) -> Self {
        Self::new(self.seed, stream_id)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

/// Draws `B = r·U` with `r ~ Gamma(n, rate β)` and `U` uniform on the unit
/// sphere of `ℝⁿ`, `n = rows·cols`. This is exactly the density `∝ e^{−β‖B‖_F}`:
/// in polar coordinates its radial part is `∝ r^{n−1} e^{−βr}`.
pub fn sample_radial_exponential<T: Scalar, R: Rng + ?Sized>(
    shape: NoiseShape,
    beta: f64,
    rng: &mut R,
) -> Result<Matrix<T>> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidParameter(format!("radial-exponential rate must be > 0, got {beta}")));
    }
    let n = shape.len();
    let radius = Gamma::new(n as f64, 1.0 / beta)
        .map_err(|e| Error::InvalidParameter(format!("gamma({n}, 1/{beta}): {e}")))?
        .sample(rng);
    let dir = unit_sphere(n, rng);
    Matrix::from_vec(shape.rows, shape.cols, dir.into_iter().map(|u| T::of(radius * u)).collect())
}

/// I.i.d. `N(0, σ²)` entries.
pub fn sample_gaussian<T: Scalar, R: Rng + ?Sized>(shape: NoiseShape, sigma: f64, rng: &mut R) -> Result<Matrix<T>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!("gaussian sigma must be > 0, got {sigma}")));
    }
    let data = (0..shape.len())
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            T::of(sigma * z)
        })
        .collect();
    Matrix::from_vec(shape.rows, shape.cols, data)
}

fn unit_sphere<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        // the all-zero draw has probability zero but would divide by zero
        if norm > 0.0 {
            return z.into_iter().map(|v| v / norm).collect();
        }
    }
}
