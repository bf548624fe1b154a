//! Dataset ingestion and preprocessing: unit-ball scaling, PCA, class
//! filtering, subsampling and a synthetic generator.
//!
//! Every transform is fit on training data only and then applied unchanged to
//! held-out data.

mod idx;
mod pca;

use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{norm, LabeledDataset};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

pub use idx::{idx_to_dataset, load_idx, parse_idx, read_idx, IdxArray};
pub use pca::{pca_fit_transform, PcaModel};

/// Unnormalized features, possibly outside the unit ball.
pub type RawDataset = LabeledDataset<f64>;

/// One global scale factor `1/max_n ‖x_n‖` fit on training rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitBallScaler {
    pub factor: f64,
}

impl UnitBallScaler {
    pub fn fit(train: &RawDataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::InvalidInput("cannot fit a scaler on an empty dataset".into()));
        }
        let max = train.max_row_norm();
        if !(max > 0.0) {
            return Err(Error::InvalidInput("all training rows are zero".into()));
        }
        Ok(Self { factor: 1.0 / max })
    }

    pub fn fit_transform(train: &RawDataset) -> Result<(Self, LabeledDataset<f64>)> {
        let s = Self::fit(train)?;
        let out = s.apply(train)?;
        Ok((s, out))
    }

    /// Scales every row; rows still outside the ball are projected onto it.
    /// On the fitting data the projection only absorbs rounding.
    pub fn apply(&self, data: &RawDataset) -> Result<LabeledDataset<f64>> {
        let mut x = data.inputs().clone();
        x.scale(self.factor);
        for n in 0..x.rows() {
            let row = x.row_mut(n);
            let r = norm(row);
            if r > 1.0 {
                row.iter_mut().for_each(|v| *v /= r);
            }
        }
        LabeledDataset::new(x, data.labels().to_vec(), data.n_classes())
    }
}

/// Scales a training set into the unit ball with one global factor.
pub fn normalize_unit_ball(data: &RawDataset) -> Result<LabeledDataset<f64>> {
    Ok(UnitBallScaler::fit_transform(data)?.1)
}

/// Keeps rows with label `< keep`; the label space shrinks to `keep`.
pub fn filter_classes<T: Scalar>(data: &LabeledDataset<T>, keep: usize) -> Result<LabeledDataset<T>> {
    if keep < 2 || keep > data.n_classes() {
        return Err(Error::InvalidParameter(format!("keep must be in 2..={}, got {keep}", data.n_classes())));
    }
    let idx: Vec<usize> = (0..data.len()).filter(|&n| data.y(n) < keep).collect();
    let counts = data.class_counts();
    if let Some(empty) = (0..keep).find(|&c| counts[c] == 0) {
        return Err(Error::InvalidInput(format!("class {empty} has no examples")));
    }
    let sel = data.select(&idx);
    let (x, y, _) = sel.into_parts();
    LabeledDataset::new_unchecked(x, y, keep)
}

/// Uniform subset of `target_n` rows without replacement.
pub fn subsample_train<T: Scalar, R: Rng + ?Sized>(
    data: &LabeledDataset<T>,
    target_n: usize,
    rng: &mut R,
) -> Result<LabeledDataset<T>> {
    if target_n == 0 || target_n > data.len() {
        return Err(Error::InvalidParameter(format!("target size must be in 1..={}, got {target_n}", data.len())));
    }
    Ok(data.select(&index::sample(rng, data.len(), target_n).into_vec()))
}

/// Shuffled split into `(train, test)` with `n_test` test rows.
pub fn train_test_split<T: Scalar, R: Rng + ?Sized>(
    data: &LabeledDataset<T>,
    n_test: usize,
    rng: &mut R,
) -> Result<(LabeledDataset<T>, LabeledDataset<T>)> {
    if n_test == 0 || n_test >= data.len() {
        return Err(Error::InvalidParameter(format!("test size must be in 1..{}, got {n_test}", data.len())));
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(rng);
    let (test, train) = idx.split_at(n_test);
    Ok((data.select(train), data.select(test)))
}

/// Gaussian clusters in `ℝ^D`, `n_per_class` per class, rows shuffled and
/// scaled into the unit ball.
///
/// Class `c` is centered at `separation·a_c` for unit anchors `a_c`: the
/// coordinate axes when `C ≤ D`, random directions otherwise. Within-class
/// noise is `N(0, I/D)`, so a cluster has radius about 1 before scaling.
pub fn synth_blobs<R: Rng + ?Sized>(
    n_per_class: usize,
    n_classes: usize,
    dim: usize,
    separation: f64,
    rng: &mut R,
) -> Result<LabeledDataset<f64>> {
    if n_per_class == 0 || n_classes == 0 || dim == 0 {
        return Err(Error::InvalidParameter("blob counts and dimension must be positive".into()));
    }
    if !(separation >= 0.0) || !separation.is_finite() {
        return Err(Error::InvalidParameter(format!("separation must be finite and >= 0, got {separation}")));
    }
    let anchors: Vec<Vec<f64>> = (0..n_classes)
        .map(|c| {
            if n_classes <= dim {
                (0..dim).map(|i| if i == c { 1.0 } else { 0.0 }).collect()
            } else {
                let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                let r = norm(&v);
                v.into_iter().map(|a| a / r).collect()
            }
        })
        .collect();
    let n = n_per_class * n_classes;
    let sd = (1.0 / dim as f64).sqrt();
    let mut labels: Vec<usize> = (0..n).map(|i| i % n_classes).collect();
    labels.shuffle(rng);
    let mut x = Matrix::zeros(n, dim);
    for (i, &c) in labels.iter().enumerate() {
        for (v, &a) in x.row_mut(i).iter_mut().zip(&anchors[c]) {
            let z: f64 = rng.sample(StandardNormal);
            *v = separation * a + sd * z;
        }
    }
    normalize_unit_ball(&RawDataset::new_unchecked(x, labels, n_classes)?)
}

/// Reads `f0,…,f{D−1},label` rows with a header line.
pub fn load_csv(path: &Path) -> Result<RawDataset> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let headers = rdr.headers().map_err(|e| Error::Config(format!("{}: {e}", path.display())))?.clone();
    let d = headers.len().checked_sub(1).filter(|&d| d > 0).ok_or_else(|| Error::Parse {
        offset: 0,
        msg: "header needs at least one feature column and a label".into(),
    })?;
    for (i, h) in headers.iter().enumerate().take(d) {
        if h != format!("f{i}") {
            return Err(Error::Parse { offset: 0, msg: format!("column {i} should be named f{i}, got {h:?}") });
        }
    }
    if &headers[d] != "label" {
        return Err(Error::Parse { offset: 0, msg: "last column must be named label".into() });
    }
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            offset: e.position().map_or(0, |p| p.byte() as usize),
            msg: e.to_string(),
        })?;
        let offset = rec.position().map_or(0, |p| p.byte() as usize);
        let bad = |msg: String| Error::Parse { offset, msg };
        for f in rec.iter().take(d) {
            xs.push(f.trim().parse::<f64>().map_err(|e| bad(format!("feature {f:?}: {e}")))?);
        }
        ys.push(rec[d].trim().parse::<usize>().map_err(|e| bad(format!("label {:?}: {e}", &rec[d])))?);
    }
    if ys.is_empty() {
        return Err(Error::InvalidInput(format!("{} has no rows", path.display())));
    }
    let c = ys.iter().max().map_or(1, |m| m + 1);
    RawDataset::new_unchecked(Matrix::from_vec(ys.len(), d, xs)?, ys, c)
}

/// Writes the format [`load_csv`] reads.
pub fn write_csv<T: Scalar>(data: &LabeledDataset<T>, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut header: Vec<String> = (0..data.dim()).map(|i| format!("f{i}")).collect();
    header.push("label".into());
    let io = |e: csv::Error| Error::Config(format!("{}: {e}", path.display()));
    w.write_record(&header).map_err(io)?;
    for n in 0..data.len() {
        let mut row: Vec<String> = data.x(n).iter().map(|v| format!("{:?}", v.as_f64())).collect();
        row.push(data.y(n).to_string());
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
