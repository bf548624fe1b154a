use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::predictor::ensemble_vote;
use super::{calibrate, MechanismKind, MechanismSpec, PredictorModel, PrivatePredictor};
use crate::accounting::BudgetState;
use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::loss::ParamMatrix;
use crate::scalar::Scalar;
use crate::trainer::{minimize_erm, predict_logits};

/// Per-class vote counts of the sub-models; sums to `T`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteHistogram {
    counts: Vec<u64>,
}

impl VoteHistogram {
    pub fn new(counts: Vec<u64>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::InvalidInput("vote histogram needs at least one class".into()));
        }
        Ok(Self { counts })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }
}

/// Seeded shuffle of `0..n`, cut into `t` disjoint blocks of `⌊n/t⌋`.
/// The last `n mod t` shuffled indices are dropped.
pub fn partition_indices<R: Rng + ?Sized>(n: usize, t: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    if t == 0 || t > n {
        return Err(Error::InvalidParameter(format!("ensemble size {t} must be in 1..={n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let size = n / t;
    Ok(idx.chunks_exact(size).take(t).map(<[usize]>::to_vec).collect())
}

/// Trains one model per block, in parallel.
pub fn train_ensemble_members<T: Scalar>(
    data: &LabeledDataset<T>,
    blocks: &[Vec<usize>],
    spec: &MechanismSpec,
) -> Result<Vec<ParamMatrix<T>>> {
    let cfg = spec.train_config::<T>(spec.dims.lambda);
    blocks.par_iter().map(|b| minimize_erm(&data.select(b), &cfg)).collect()
}

/// Disjoint-partition ensemble answered by a noisy vote.
pub fn build_subsample_ensemble<T: Scalar>(data: &LabeledDataset<T>, spec: &MechanismSpec) -> Result<PrivatePredictor<T>> {
    if spec.kind != MechanismKind::SubsampleAggregate {
        return Err(Error::WrongVariant(format!("{} spec passed to the ensemble builder", spec.kind)));
    }
    spec.check_data(data)?;
    let report = calibrate(spec)?;
    let blocks = partition_indices(data.len(), spec.ensemble_size, &mut spec.rng())?;
    let members = train_ensemble_members(data, &blocks, spec)?;
    // f64::MAX makes the vote a hard arg-max (ties uniform)
    let beta = if spec.unsafe_disable_noise { f64::MAX } else { report.scale };
    let model = PredictorModel::Ensemble { members, beta };
    Ok(PrivatePredictor::new(spec, report, model, BudgetState::limited(spec.privacy.budget)))
}

/// Each member votes for its arg-max class (lowest index on ties).
pub fn vote_histogram<T: Scalar>(members: &[ParamMatrix<T>], x: &[T]) -> Result<VoteHistogram> {
    predict_votes(members, x)
}

pub(super) fn predict_votes<T: Scalar>(members: &[ParamMatrix<T>], x: &[T]) -> Result<VoteHistogram> {
    let c = members.first().ok_or_else(|| Error::InvalidInput("empty ensemble".into()))?.n_classes();
    let mut counts = vec![0u64; c];
    for m in members {
        counts[predict_logits(m, x)?.argmax()] += 1;
    }
    VoteHistogram::new(counts)
}

/// `P(c) = e^{β·counts_c} / Σ e^{β·counts_c'}`, computed with the max shifted out.
pub fn exponential_mechanism_probabilities(votes: &VoteHistogram, beta: f64) -> Vec<f64> {
    let top = *votes.counts.iter().max().expect("non-empty") as f64;
    let w: Vec<f64> = votes
        .counts
        .iter()
        .map(|&k| {
            let gap = k as f64 - top;
            if gap == 0.0 {
                1.0
            } else {
                (beta * gap).exp()
            }
        })
        .collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|v| v / z).collect()
}

pub fn sample_exponential_mechanism<R: Rng + ?Sized>(votes: &VoteHistogram, beta: f64, rng: &mut R) -> usize {
    let p = exponential_mechanism_probabilities(votes, beta);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (c, &pc) in p.iter().enumerate() {
        acc += pc;
        if u < acc {
            return c;
        }
    }
    // u landed in the rounding gap above the last partial sum
    p.iter().rposition(|&pc| pc > 0.0).unwrap_or(0)
}

/// Sampled label for `x`; spends one unit of budget.
pub fn predict_subsample_aggregate<T: Scalar>(p: &PrivatePredictor<T>, x: &[T]) -> Result<usize> {
    ensemble_vote(p, x)
}
