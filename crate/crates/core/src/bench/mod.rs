//! Accuracy sweeps over privacy and problem parameters.
//!
//! A sweep is deterministic in its config: every (grid point, trial) job owns
//! its random streams, jobs run in parallel on the current rayon pool, and the
//! results come back in canonical order (grid order, then trial).

mod config;
mod output;

use std::collections::BTreeMap;
use std::time::Instant;

use log::warn;
use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{DatasetSource, DpSgdSettings, PredictionProtocol, SweepConfig};
pub use output::{
    emit_csv, emit_summary_csv, read_records_csv, write_records, write_summaries, RECORD_HEADER, SUMMARY_HEADER,
};

use crate::accounting::{DpSgdConfig, PrivacySpec, ProblemDims};
use crate::data::{
    filter_classes, load_csv, load_idx, pca_fit_transform, subsample_train, synth_blobs, train_test_split, RawDataset,
    UnitBallScaler,
};
use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::mechanisms::{train, MechanismKind, MechanismSpec, PrivatePredictor, SolverSettings};
use crate::noise::RngStream;
use crate::trainer::accuracy;

/// Stream ids reserved for data preparation; trial streams use the trial index.
const SPLIT_STREAM: u64 = u64::MAX;
const SUBSAMPLE_STREAM: u64 = u64::MAX - 1;
const QUERY_SEED_SALT: u64 = 0x7175_6572_795F_7374;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub mechanism: MechanismKind,
    pub epsilon: f64,
    pub delta: f64,
    pub budget: u64,
    pub n_train: Option<usize>,
    pub dim: Option<usize>,
    pub classes: Option<usize>,
    pub lambda: f64,
    pub ensemble: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub mechanism: MechanismKind,
    pub epsilon: f64,
    pub delta: f64,
    pub budget: u64,
    pub n_train: usize,
    pub dim: usize,
    pub classes: usize,
    pub lambda: f64,
    pub ensemble: usize,
    pub trial: usize,
    pub seed: u64,
    /// `NaN` when the trial failed.
    pub accuracy: f64,
    pub wall_time_s: f64,
    #[serde(skip)]
    pub error: Option<String>,
}

impl TrialRecord {
    pub fn failed(&self) -> bool {
        self.error.is_some() || self.accuracy.is_nan()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub mechanism: MechanismKind,
    pub epsilon: f64,
    pub delta: f64,
    pub budget: u64,
    pub n_train: usize,
    pub dim: usize,
    pub classes: usize,
    pub lambda: f64,
    pub ensemble: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub n_trials: usize,
}

impl SummaryRow {
    /// `std/√n`.
    pub fn std_error(&self) -> f64 {
        self.std_accuracy / (self.n_trials as f64).sqrt()
    }
}

/// Grid points in canonical order: mechanism, ε, δ, B, N, D, C, λ, T.
pub fn grid_points(cfg: &SweepConfig) -> Vec<GridPoint> {
    fn opt(v: &[usize]) -> Vec<Option<usize>> {
        if v.is_empty() {
            vec![None]
        } else {
            v.iter().copied().map(Some).collect()
        }
    }
    let (ns, ds, cs) = (opt(&cfg.n_train), opt(&cfg.dims), opt(&cfg.classes));
    let mut out = Vec::new();
    for &mechanism in &cfg.mechanisms {
        for &epsilon in &cfg.epsilons {
            for &delta in &cfg.deltas {
                for &budget in &cfg.budgets {
                    for &n_train in &ns {
                        for &dim in &ds {
                            for &classes in &cs {
                                for &lambda in &cfg.lambdas {
                                    for &ensemble in &cfg.ensembles {
                                        out.push(GridPoint {
                                            mechanism,
                                            epsilon,
                                            delta,
                                            budget,
                                            n_train,
                                            dim,
                                            classes,
                                            lambda,
                                            ensemble,
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// The fixed raw train/test split every trial shares.
pub fn load_split(cfg: &SweepConfig) -> Result<(RawDataset, RawDataset)> {
    let split = |all: RawDataset| {
        let n_test = cfg.n_test.unwrap_or(all.len() / 5).max(1);
        train_test_split(&all, n_test, &mut RngStream::new(cfg.base_seed, SPLIT_STREAM))
    };
    match &cfg.dataset {
        DatasetSource::Synth { n_per_class, classes, dim, separation, seed } => {
            split(synth_blobs(*n_per_class, *classes, *dim, *separation, &mut RngStream::new(*seed, 0))?)
        }
        DatasetSource::Idx { train_images, train_labels, test_images, test_labels } => {
            let train = load_idx(train_images, train_labels)?;
            match (test_images, test_labels) {
                (Some(i), Some(l)) => Ok((train, load_idx(i, l)?)),
                (None, None) => split(train),
                _ => Err(Error::Config("test_images and test_labels must be given together".into())),
            }
        }
        DatasetSource::Csv { train, test } => {
            let tr = load_csv(train)?;
            match test {
                Some(t) => Ok((tr, load_csv(t)?)),
                None => split(tr),
            }
        }
    }
}

/// Applies class filtering, training-set subsampling and then either PCA or
/// plain unit-ball scaling. Everything is fit on the training side only.
pub fn prepare(
    cfg: &SweepConfig,
    raw: &(RawDataset, RawDataset),
    classes: Option<usize>,
    n_train: Option<usize>,
    dim: Option<usize>,
) -> Result<(LabeledDataset<f64>, LabeledDataset<f64>)> {
    let (mut train, mut test) = (raw.0.clone(), raw.1.clone());
    if let Some(c) = classes {
        train = filter_classes(&train, c)?;
        test = filter_classes(&test, c)?;
    }
    if test.n_classes() != train.n_classes() {
        let (x, y, _) = test.into_parts();
        test = LabeledDataset::new_unchecked(x, y, train.n_classes())?;
    }
    if let Some(n) = n_train {
        train = subsample_train(&train, n, &mut RngStream::new(cfg.base_seed, SUBSAMPLE_STREAM))?;
    }
    match dim {
        Some(d) => {
            let (model, tr) = pca_fit_transform(&train, d)?;
            Ok((tr, model.transform(&test)?))
        }
        None => {
            let (scaler, tr) = UnitBallScaler::fit_transform(&train)?;
            Ok((tr, scaler.apply(&test)?))
        }
    }
}

type Prepared = BTreeMap<(Option<usize>, Option<usize>, Option<usize>), Result<(LabeledDataset<f64>, LabeledDataset<f64>), String>>;

/// Runs every (grid point, trial) job. Mechanism failures become failed rows;
/// only config and data-loading problems abort the sweep.
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<TrialRecord>> {
    cfg.validate()?;
    let raw = load_split(cfg)?;
    let points = grid_points(cfg);
    let mut prepared: Prepared = BTreeMap::new();
    for p in &points {
        prepared
            .entry((p.classes, p.n_train, p.dim))
            .or_insert_with(|| prepare(cfg, &raw, p.classes, p.n_train, p.dim).map_err(|e| e.to_string()));
    }
    let jobs: Vec<(usize, usize)> =
        (0..points.len()).flat_map(|i| (0..cfg.trials).map(move |t| (i, t))).collect();
    let records = jobs
        .par_iter()
        .map(|&(i, t)| {
            let p = &points[i];
            let data = &prepared[&(p.classes, p.n_train, p.dim)];
            run_trial(cfg, p, data, t)
        })
        .collect::<Vec<_>>();
    for (i, group) in records.chunks(cfg.trials).enumerate() {
        let failed: Vec<&TrialRecord> = group.iter().filter(|r| r.failed()).collect();
        if let Some(first) = failed.first() {
            let p = &points[i];
            warn!(
                "{} at epsilon {}, delta {}, budget {}: {}/{} trials failed ({})",
                p.mechanism,
                p.epsilon,
                p.delta,
                p.budget,
                failed.len(),
                group.len(),
                first.error.as_deref().unwrap_or("non-finite accuracy")
            );
        }
    }
    Ok(records)
}

fn run_trial(
    cfg: &SweepConfig,
    p: &GridPoint,
    data: &Result<(LabeledDataset<f64>, LabeledDataset<f64>), String>,
    trial: usize,
) -> TrialRecord {
    let mut rec = TrialRecord {
        mechanism: p.mechanism,
        epsilon: p.epsilon,
        delta: p.delta,
        budget: p.budget,
        n_train: p.n_train.unwrap_or(0),
        dim: p.dim.unwrap_or(0),
        classes: p.classes.unwrap_or(0),
        lambda: p.lambda,
        ensemble: p.ensemble,
        trial,
        seed: cfg.base_seed,
        accuracy: f64::NAN,
        wall_time_s: 0.0,
        error: None,
    };
    let (train_set, test_set) = match data {
        Ok(d) => d,
        Err(e) => {
            rec.error = Some(e.clone());
            return rec;
        }
    };
    rec.n_train = train_set.len();
    rec.dim = train_set.dim();
    rec.classes = train_set.n_classes();
    let start = Instant::now();
    match trial_accuracy(cfg, p, train_set, test_set, trial as u64) {
        Ok(a) => rec.accuracy = a,
        Err(e) => rec.error = Some(e.to_string()),
    }
    if cfg.record_timing {
        rec.wall_time_s = start.elapsed().as_secs_f64();
    }
    rec
}

/// The mechanism spec a sweep builds for one grid point and trial.
pub fn trial_spec(cfg: &SweepConfig, p: &GridPoint, n_train: usize, n_classes: usize, trial: u64) -> Result<MechanismSpec> {
    let dims = ProblemDims::logistic(n_train, p.lambda, n_classes)?;
    let mut spec = MechanismSpec::new(p.mechanism, PrivacySpec::new(p.epsilon, p.delta, p.budget)?, dims)
        .with_seed(cfg.base_seed, trial)
        .with_ensemble_size(p.ensemble)
        .with_solver(SolverSettings { max_iterations: cfg.max_iterations, grad_tolerance: cfg.grad_tolerance });
    if p.mechanism == MechanismKind::Dpsgd {
        let s = &cfg.dpsgd;
        let batch = s.batch_size.min(n_train);
        spec = spec.with_dpsgd(DpSgdConfig::new(s.clip_nu, batch, s.steps(n_train), n_train, s.learning_rate)?);
    }
    Ok(spec)
}

fn trial_accuracy(
    cfg: &SweepConfig,
    p: &GridPoint,
    train_set: &LabeledDataset<f64>,
    test_set: &LabeledDataset<f64>,
    trial: u64,
) -> Result<f64> {
    let spec = trial_spec(cfg, p, train_set.len(), train_set.n_classes(), trial)?;
    let predictor = train(train_set, &spec)?;
    if let Some(theta) = predictor.released_params() {
        return Ok(accuracy(theta, test_set));
    }
    let mut rng = RngStream::new(cfg.base_seed ^ QUERY_SEED_SALT, trial);
    match cfg.protocol {
        PredictionProtocol::BudgetSample => {
            let queries = budget_queries(test_set.len(), p.budget, &mut rng);
            answer(&predictor, test_set, &queries)
        }
        PredictionProtocol::FullTest => {
            let all: Vec<usize> = (0..test_set.len()).collect();
            let mut correct = 0.0;
            for (k, chunk) in all.chunks(p.budget as usize).enumerate() {
                let fresh = predictor.redeploy(k as u64);
                correct += answer(&fresh, test_set, chunk)? * chunk.len() as f64;
            }
            Ok(correct / all.len() as f64)
        }
    }
}

/// `B` test indices: distinct when `B ≤ n`, otherwise drawn with replacement.
pub fn budget_queries<R: Rng + ?Sized>(n: usize, budget: u64, rng: &mut R) -> Vec<usize> {
    let b = budget as usize;
    if b <= n {
        index::sample(rng, n, b).into_vec()
    } else {
        (0..b).map(|_| rng.gen_range(0..n)).collect()
    }
}

fn answer(p: &PrivatePredictor<f64>, test: &LabeledDataset<f64>, queries: &[usize]) -> Result<f64> {
    let mut correct = 0usize;
    for &i in queries {
        if p.predict(test.x(i))?.label() == test.y(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / queries.len() as f64)
}

/// Mean and sample standard deviation (`n − 1` denominator) per
/// configuration, in first-appearance order. Failed trials are left out; a
/// configuration with no successful trial is dropped with a warning. With a
/// single trial the standard deviation is reported as 0.
pub fn summarize(records: &[TrialRecord]) -> Vec<SummaryRow> {
    let mut order: Vec<SummaryRow> = Vec::new();
    let mut acc: Vec<Vec<f64>> = Vec::new();
    let same = |r: &TrialRecord, s: &SummaryRow| {
        r.mechanism == s.mechanism
            && r.epsilon.to_bits() == s.epsilon.to_bits()
            && r.delta.to_bits() == s.delta.to_bits()
            && r.budget == s.budget
            && r.n_train == s.n_train
            && r.dim == s.dim
            && r.classes == s.classes
            && r.lambda.to_bits() == s.lambda.to_bits()
            && r.ensemble == s.ensemble
    };
    for r in records {
        let slot = match order.iter().position(|s| same(r, s)) {
            Some(i) => i,
            None => {
                order.push(SummaryRow {
                    mechanism: r.mechanism,
                    epsilon: r.epsilon,
                    delta: r.delta,
                    budget: r.budget,
                    n_train: r.n_train,
                    dim: r.dim,
                    classes: r.classes,
                    lambda: r.lambda,
                    ensemble: r.ensemble,
                    mean_accuracy: f64::NAN,
                    std_accuracy: f64::NAN,
                    n_trials: 0,
                });
                acc.push(Vec::new());
                order.len() - 1
            }
        };
        if !r.failed() {
            acc[slot].push(r.accuracy);
        }
    }
    order
        .into_iter()
        .zip(acc)
        .filter_map(|(mut s, v)| {
            if v.is_empty() {
                warn!("no successful trials for {} at epsilon {}, budget {}", s.mechanism, s.epsilon, s.budget);
                return None;
            }
            let n = v.len() as f64;
            // shifting by the first value keeps constant inputs exact
            let mean = v[0] + v.iter().map(|a| a - v[0]).sum::<f64>() / n;
            let var = if v.len() > 1 { v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
            s.mean_accuracy = mean;
            s.std_accuracy = var.sqrt();
            s.n_trials = v.len();
            Some(s)
        })
        .collect()
}
