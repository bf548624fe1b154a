use proptest::prelude::*;
use rand::Rng;
use rayon::prelude::*;

use privpred::accounting::{PrivacySpec, ProblemDims};
use privpred::data::{synth_blobs, train_test_split};
use privpred::mechanisms::{
    build_subsample_ensemble, exponential_mechanism_probabilities, partition_indices, train, vote_histogram,
    MechanismKind, MechanismSpec, PredictorModel, VoteHistogram,
};
use privpred::noise::{sample_radial_exponential, NoiseShape, RngStream};
use privpred::trainer::{accuracy, minimize_erm, TrainConfig};
use privpred::{Dataset64, ParamMatrix64};

const LAMBDA: f64 = 0.1;

/// 200 training and 400 test points from four blobs in five dimensions.
fn blobs() -> (Dataset64, Dataset64) {
    let all = synth_blobs(150, 4, 5, 0.8, &mut RngStream::new(31, 0)).unwrap();
    let (train, test) = train_test_split(&all, 400, &mut RngStream::new(31, 1)).unwrap();
    (train, test)
}

fn non_private(train: &Dataset64, test: &Dataset64) -> f64 {
    accuracy(&minimize_erm(train, &TrainConfig::new(LAMBDA)).unwrap(), test)
}

/// Mean and standard error of test accuracy over `trials` independent runs.
fn private_accuracy(kind: MechanismKind, eps: f64, trials: u64, train_set: &Dataset64, test: &Dataset64) -> (f64, f64) {
    let dims = ProblemDims::logistic(train_set.len(), LAMBDA, 4).unwrap();
    let acc: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let spec = MechanismSpec::new(kind, PrivacySpec::new(eps, 0.0, 1).unwrap(), dims).with_seed(32, t);
            let p = train(train_set, &spec).unwrap();
            accuracy(p.released_params().unwrap(), test)
        })
        .collect();
    let n = acc.len() as f64;
    let mean = acc.iter().sum::<f64>() / n;
    let var = acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn model_sensitivity_sits_between_chance_and_non_private() {
    let (train, test) = blobs();
    assert_eq!(train.len(), 200);
    let clean = non_private(&train, &test);
    let (mean, se) = private_accuracy(MechanismKind::ModelSensitivity, 1.0, 50, &train, &test);
    assert!(mean - 3.0 * se > 0.25, "{mean} ± {se}");
    assert!(mean + 3.0 * se < clean, "{mean} ± {se} vs {clean}");
}

#[test]
fn vanishing_noise_recovers_non_private_accuracy() {
    let (train, test) = blobs();
    let clean = non_private(&train, &test);
    let (mean, _) = private_accuracy(MechanismKind::ModelSensitivity, 1e7, 20, &train, &test);
    assert!((mean - clean).abs() <= 0.005, "{mean} vs {clean}");
}

#[test]
fn loss_perturbation_degrades_as_epsilon_shrinks() {
    let (train, test) = blobs();
    let curve: Vec<(f64, f64)> =
        [10.0, 1.0, 0.1].iter().map(|&e| private_accuracy(MechanismKind::LossPerturbation, e, 50, &train, &test)).collect();
    for w in curve.windows(2) {
        assert!(w[0].0 > w[1].0, "{curve:?}");
    }
}

#[test]
fn neighbouring_data_changes_at_most_one_member() {
    let (train, test) = blobs();
    let dims = ProblemDims::logistic(train.len(), LAMBDA, 4).unwrap();
    let spec = MechanismSpec::new(MechanismKind::SubsampleAggregate, PrivacySpec::new(1.0, 0.0, 10).unwrap(), dims)
        .with_ensemble_size(16)
        .with_seed(33, 0);
    let members = |d: &Dataset64| match build_subsample_ensemble(d, &spec).unwrap().model() {
        PredictorModel::Ensemble { members, .. } => members.clone(),
        _ => unreachable!(),
    };
    let base = members(&train);
    let mut rng = RngStream::new(34, 0);
    for _ in 0..10 {
        let row = rng.gen_range(0..train.len());
        let other = rng.gen_range(0..test.len());
        let neighbour = train.with_replaced(row, test.x(other), test.y(other)).unwrap();
        let changed = members(&neighbour);
        let differing = base.iter().zip(&changed).filter(|(a, b)| a != b).count();
        assert!(differing <= 1, "{differing} members changed");
        for q in 0..test.len() {
            let h1 = vote_histogram(&base, test.x(q)).unwrap();
            let h2 = vote_histogram(&changed, test.x(q)).unwrap();
            let moved: u64 = h1.counts().iter().zip(h2.counts()).map(|(a, b)| a.abs_diff(*b)).sum();
            assert!(moved <= 2);
        }
    }
}

proptest! {
    #[test]
    fn partitions_are_disjoint(n in 1usize..3000, t in 1usize..300, seed in any::<u64>()) {
        prop_assume!(t <= n);
        let blocks = partition_indices(n, t, &mut RngStream::new(seed, 0)).unwrap();
        prop_assert_eq!(blocks.len(), t);
        let mut seen = vec![false; n];
        for b in &blocks {
            prop_assert_eq!(b.len(), n / t);
            for &i in b {
                prop_assert!(!seen[i]);
                seen[i] = true;
            }
        }
    }

    #[test]
    fn votes_sum_to_ensemble_size(t in 1usize..40, seed in any::<u64>()) {
        let mut rng = RngStream::new(seed, 0);
        let members: Vec<ParamMatrix64> = (0..t)
            .map(|_| ParamMatrix64::from_matrix(sample_radial_exponential(NoiseShape::new(3, 4).unwrap(), 1.0, &mut rng).unwrap()).unwrap())
            .collect();
        let h = vote_histogram(&members, &[0.5, -0.2, 0.1]).unwrap();
        prop_assert_eq!(h.total(), t as u64);
        prop_assert_eq!(h.n_classes(), 4);
    }

    #[test]
    fn vote_distribution_is_proper(counts in prop::collection::vec(0u64..1000, 2..12), beta in 0.0f64..50.0) {
        let p = exponential_mechanism_probabilities(&VoteHistogram::new(counts.clone()).unwrap(), beta);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..counts.len() {
            for j in 0..counts.len() {
                if counts[i] > counts[j] {
                    prop_assert!(p[i] >= p[j]);
                }
            }
        }
    }

    #[test]
    fn streams_are_deterministic(seed in any::<u64>(), stream in any::<u64>()) {
        let draw = || sample_radial_exponential::<f64, _>(NoiseShape::new(2, 3).unwrap(), 2.0, &mut RngStream::new(seed, stream)).unwrap();
        prop_assert_eq!(draw(), draw());
        let other = sample_radial_exponential::<f64, _>(NoiseShape::new(2, 3).unwrap(), 2.0, &mut RngStream::new(seed, stream ^ 1)).unwrap();
        prop_assert_ne!(draw(), other);
    }
}
