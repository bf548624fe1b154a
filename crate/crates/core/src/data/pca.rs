use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{RawDataset, UnitBallScaler};
use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Mean-centered projection onto the top principal directions, followed by a
/// global rescale into the unit ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `D_raw × D`, orthonormal columns.
    pub projection: Matrix<f64>,
    pub scaler: UnitBallScaler,
    /// Eigenvalues of the kept directions, descending.
    pub variances: Vec<f64>,
}

impl PcaModel {
    pub fn target_dim(&self) -> usize {
        self.projection.cols()
    }

    /// Centered projection without the rescale.
    pub fn project(&self, data: &RawDataset) -> Result<Matrix<f64>> {
        let (d_raw, d) = self.projection.shape();
        if data.dim() != d_raw {
            return Err(Error::InvalidInput(format!("PCA fit on {d_raw} features, got {}", data.dim())));
        }
        let mut out = Matrix::zeros(data.len(), d);
        let mut centered = vec![0.0; d_raw];
        for n in 0..data.len() {
            for ((c, &x), &m) in centered.iter_mut().zip(data.x(n)).zip(&self.mean) {
                *c = x - m;
            }
            let row = out.row_mut(n);
            for (i, &c) in centered.iter().enumerate() {
                if c != 0.0 {
                    for (o, &w) in row.iter_mut().zip(self.projection.row(i)) {
                        *o += c * w;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Projects held-out data; rows still outside the ball are projected onto it.
    pub fn transform(&self, data: &RawDataset) -> Result<LabeledDataset<f64>> {
        let z = self.project(data)?;
        self.scaler.apply(&LabeledDataset::new_unchecked(z, data.labels().to_vec(), data.n_classes())?)
    }
}

/// Fits on `data` and returns the transformed training set.
pub fn pca_fit_transform(data: &RawDataset, target_d: usize) -> Result<(PcaModel, LabeledDataset<f64>)> {
    let (n, d_raw) = (data.len(), data.dim());
    if target_d == 0 || target_d > n.min(d_raw) {
        return Err(Error::InvalidParameter(format!("target dimension {target_d} must be in 1..={}", n.min(d_raw))));
    }
    let mut mean = vec![0.0; d_raw];
    for row in data.inputs().iter_rows() {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = DMatrix::<f64>::zeros(d_raw, d_raw);
    let mut c = vec![0.0; d_raw];
    for row in data.inputs().iter_rows() {
        for ((ci, &x), &m) in c.iter_mut().zip(row).zip(&mean) {
            *ci = x - m;
        }
        for i in 0..d_raw {
            if c[i] == 0.0 {
                continue;
            }
            for j in i..d_raw {
                cov[(i, j)] += c[i] * c[j];
            }
        }
    }
    for i in 0..d_raw {
        for j in i..d_raw {
            let v = cov[(i, j)] / n as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d_raw).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut projection = Matrix::zeros(d_raw, target_d);
    let mut variances = Vec::with_capacity(target_d);
    for (k, &col) in order.iter().take(target_d).enumerate() {
        let v = eig.eigenvectors.column(col);
        let pivot = (0..d_raw).fold(0, |best, i| if v[i].abs() > v[best].abs() { i } else { best });
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d_raw {
            projection[(i, k)] = sign * v[i];
        }
        variances.push(eig.eigenvalues[col]);
    }

    let mut model = PcaModel { mean, projection, scaler: UnitBallScaler { factor: 1.0 }, variances };
    let z = LabeledDataset::new_unchecked(model.project(data)?, data.labels().to_vec(), data.n_classes())?;
    let (scaler, train) = UnitBallScaler::fit_transform(&z)?;
    model.scaler = scaler;
    Ok((model, train))
}
