//! The five private prediction pipelines. Each produces a [`PrivatePredictor`].
//!
//! Model sensitivity, loss perturbation and DP-SGD privatize the parameters,
//! so the resulting predictor answers any number of queries. Prediction
//! sensitivity and subsample-and-aggregate privatize each answer and refuse
//! once the inference budget `B` is spent.

mod dpsgd;
mod ensemble;
mod predictor;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use dpsgd::{clip_gradient, noisy_gradient_sum, per_example_gradient, sample_batch, train_dpsgd, train_dpsgd_with_sigma};
pub use ensemble::{
    build_subsample_ensemble, exponential_mechanism_probabilities, partition_indices, predict_subsample_aggregate,
    sample_exponential_mechanism, train_ensemble_members, vote_histogram, VoteHistogram,
};
pub use predictor::{predict_prediction_sensitivity, PredictorModel, PrivateAnswer, PrivatePredictor, QueryNoise};

use crate::accounting::{
    dpsgd_sigma_for_target, gaussian_loss_sigma, gaussian_model_sigma, gaussian_prediction_sigma,
    loss_perturbation_params, loss_perturbation_rho, model_sensitivity_beta, prediction_sensitivity_beta,
    subsample_beta, BudgetState, DpSgdConfig, PrivacySpec, ProblemDims,
};
use crate::dataset::{LabeledDataset, UNIT_BALL_SLACK};
use crate::error::{Error, Result};
use crate::loss::ParamMatrix;
use crate::noise::{sample_gaussian, sample_radial_exponential, NoiseShape, RngStream};
use crate::scalar::Scalar;
use crate::trainer::{minimize_erm, TrainConfig};

pub const DEFAULT_ENSEMBLE_SIZE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MechanismKind {
    ModelSensitivity,
    LossPerturbation,
    Dpsgd,
    PredictionSensitivity,
    SubsampleAggregate,
}

impl MechanismKind {
    pub const ALL: [MechanismKind; 5] = [
        MechanismKind::ModelSensitivity,
        MechanismKind::LossPerturbation,
        MechanismKind::Dpsgd,
        MechanismKind::PredictionSensitivity,
        MechanismKind::SubsampleAggregate,
    ];

    /// True for mechanisms that spend budget per answered query.
    pub fn is_prediction_side(self) -> bool {
        matches!(self, MechanismKind::PredictionSensitivity | MechanismKind::SubsampleAggregate)
    }

    pub fn supports_pure_dp(self) -> bool {
        self != MechanismKind::Dpsgd
    }

    pub fn name(self) -> &'static str {
        match self {
            MechanismKind::ModelSensitivity => "model_sensitivity",
            MechanismKind::LossPerturbation => "loss_perturbation",
            MechanismKind::Dpsgd => "dpsgd",
            MechanismKind::PredictionSensitivity => "prediction_sensitivity",
            MechanismKind::SubsampleAggregate => "subsample_aggregate",
        }
    }
}

impl fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MechanismKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MechanismKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown mechanism {s:?}")))
    }
}

/// Solver settings for the deterministic minimizations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub max_iterations: usize,
    pub grad_tolerance: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { max_iterations: 500, grad_tolerance: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismSpec {
    pub kind: MechanismKind,
    pub privacy: PrivacySpec,
    pub dims: ProblemDims,
    /// Number of disjoint sub-models `T` for subsample-and-aggregate.
    pub ensemble_size: usize,
    /// Required for DP-SGD.
    pub dpsgd: Option<DpSgdConfig>,
    pub solver: SolverSettings,
    pub seed: u64,
    pub stream: u64,
    /// Disables all privacy noise. The resulting predictor is NOT private;
    /// this exists only so reduction tests can compare against the
    /// non-private pipelines.
    #[serde(default)]
    pub unsafe_disable_noise: bool,
}

impl MechanismSpec {
    pub fn new(kind: MechanismKind, privacy: PrivacySpec, dims: ProblemDims) -> Self {
        Self {
            kind,
            privacy,
            dims,
            ensemble_size: DEFAULT_ENSEMBLE_SIZE,
            dpsgd: None,
            solver: SolverSettings::default(),
            seed: 0,
            stream: 0,
            unsafe_disable_noise: false,
        }
    }

    pub fn with_seed(mut self, seed: u64, stream: u64) -> Self {
        self.seed = seed;
        self.stream = stream;
        self
    }

    pub fn with_ensemble_size(mut self, t: usize) -> Self {
        self.ensemble_size = t;
        self
    }

    pub fn with_dpsgd(mut self, cfg: DpSgdConfig) -> Self {
        self.dpsgd = Some(cfg);
        self
    }

    pub fn with_solver(mut self, solver: SolverSettings) -> Self {
        self.solver = solver;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.privacy.validate()?;
        self.dims.validate()?;
        if self.kind == MechanismKind::Dpsgd {
            if self.privacy.is_pure() {
                return Err(Error::UnsupportedVariant("DP-SGD does not support delta = 0".into()));
            }
            self.dpsgd
                .as_ref()
                .ok_or_else(|| Error::InvalidParameter("DP-SGD needs a DpSgdConfig".into()))?
                .validate()?;
        }
        if self.kind == MechanismKind::SubsampleAggregate && self.ensemble_size == 0 {
            return Err(Error::InvalidParameter("ensemble size must be >= 1".into()));
        }
        Ok(())
    }

    fn check_data<T: Scalar>(&self, data: &LabeledDataset<T>) -> Result<()> {
        self.validate()?;
        if data.len() != self.dims.n_train || data.n_classes() != self.dims.n_classes {
            return Err(Error::InvalidInput(format!(
                "mechanism calibrated for N={} C={} but data has N={} C={}",
                self.dims.n_train,
                self.dims.n_classes,
                data.len(),
                data.n_classes()
            )));
        }
        let max = data.max_row_norm();
        if max > 1.0 + UNIT_BALL_SLACK {
            return Err(Error::InvalidInput(format!("training row norm {max} exceeds the unit ball")));
        }
        Ok(())
    }

    fn train_config<T: Scalar>(&self, lambda: f64) -> TrainConfig<T> {
        TrainConfig::new(T::of(lambda))
            .with_max_iterations(self.solver.max_iterations)
            .with_tolerance(T::of(self.solver.grad_tolerance))
    }

    fn rng(&self) -> RngStream {
        RngStream::new(self.seed, self.stream)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    RadialExponential,
    Gaussian,
    ExponentialMechanism,
}

/// Audit record of how a mechanism was calibrated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub mechanism: MechanismKind,
    pub epsilon: f64,
    pub delta: f64,
    pub budget: u64,
    pub noise: NoiseFamily,
    /// `β` for radial-exponential noise and the vote, `σ` for Gaussian noise
    /// (for DP-SGD, the noise multiplier).
    pub scale: f64,
    pub rho: Option<f64>,
}

/// Noise scales a mechanism will use, without training anything.
pub fn calibrate(spec: &MechanismSpec) -> Result<CalibrationReport> {
    spec.validate()?;
    let (p, d) = (&spec.privacy, &spec.dims);
    let pure = p.is_pure();
    let (noise, scale, rho) = match spec.kind {
        MechanismKind::ModelSensitivity if pure => (NoiseFamily::RadialExponential, model_sensitivity_beta(d, p)?, None),
        MechanismKind::ModelSensitivity => (NoiseFamily::Gaussian, gaussian_model_sigma(d, p)?, None),
        MechanismKind::LossPerturbation if pure => {
            let (beta, rho) = loss_perturbation_params(d, p)?;
            (NoiseFamily::RadialExponential, beta, Some(rho))
        }
        MechanismKind::LossPerturbation => {
            (NoiseFamily::Gaussian, gaussian_loss_sigma(d, p)?, Some(loss_perturbation_rho(d, p)))
        }
        MechanismKind::Dpsgd => {
            let cfg = spec.dpsgd.as_ref().expect("validated");
            (NoiseFamily::Gaussian, dpsgd_sigma_for_target(p, cfg)?, None)
        }
        MechanismKind::PredictionSensitivity if pure => {
            (NoiseFamily::RadialExponential, prediction_sensitivity_beta(d, p)?, None)
        }
        MechanismKind::PredictionSensitivity => (NoiseFamily::Gaussian, gaussian_prediction_sigma(d, p)?, None),
        MechanismKind::SubsampleAggregate => (NoiseFamily::ExponentialMechanism, subsample_beta(p)?, None),
    };
    Ok(CalibrationReport { mechanism: spec.kind, epsilon: p.epsilon, delta: p.delta, budget: p.budget, noise, scale, rho })
}

fn released<T: Scalar>(spec: &MechanismSpec, report: CalibrationReport, theta: ParamMatrix<T>) -> PrivatePredictor<T> {
    PrivatePredictor::new(spec, report, PredictorModel::Released { theta }, BudgetState::unlimited())
}

/// Output perturbation: `θ_priv = argmin J + B`.
pub fn train_model_sensitivity<T: Scalar>(data: &LabeledDataset<T>, spec: &MechanismSpec) -> Result<PrivatePredictor<T>> {
    spec.check_data(data)?;
    let report = calibrate(spec)?;
    let mut theta = minimize_erm(data, &spec.train_config(spec.dims.lambda))?;
    if !spec.unsafe_disable_noise {
        let shape = NoiseShape::new(data.dim(), data.n_classes())?;
        let mut rng = spec.rng();
        let noise = match report.noise {
            NoiseFamily::RadialExponential => sample_radial_exponential::<T, _>(shape, report.scale, &mut rng)?,
            _ => sample_gaussian::<T, _>(shape, report.scale, &mut rng)?,
        };
        theta.matrix_mut().axpy(T::one(), &noise);
    }
    Ok(released(spec, report, theta))
}

/// Objective perturbation. The data term keeps regularization `λ` by passing
/// `Nλ` to the `λ/N`-scaled perturbed objective.
pub fn train_loss_perturbation<T: Scalar>(data: &LabeledDataset<T>, spec: &MechanismSpec) -> Result<PrivatePredictor<T>> {
    spec.check_data(data)?;
    let report = calibrate(spec)?;
    let shape = NoiseShape::new(data.dim(), data.n_classes())?;
    let (noise, rho) = if spec.unsafe_disable_noise {
        (ParamMatrix::zeros(data.dim(), data.n_classes()), 0.0)
    } else {
        let mut rng = spec.rng();
        let m = match report.noise {
            NoiseFamily::RadialExponential => sample_radial_exponential::<T, _>(shape, report.scale, &mut rng)?,
            _ => sample_gaussian::<T, _>(shape, report.scale, &mut rng)?,
        };
        (ParamMatrix::from_matrix(m)?, report.rho.expect("loss perturbation sets rho"))
    };
    let n = data.len() as f64;
    let cfg = spec.train_config(n * spec.dims.lambda).with_perturbation(noise, T::of(rho));
    let theta = minimize_erm(data, &cfg)?;
    Ok(released(spec, report, theta))
}

/// Non-private model whose answers get fresh logit noise per query.
pub fn train_prediction_sensitivity<T: Scalar>(
    data: &LabeledDataset<T>,
    spec: &MechanismSpec,
) -> Result<PrivatePredictor<T>> {
    spec.check_data(data)?;
    let report = calibrate(spec)?;
    let theta = minimize_erm(data, &spec.train_config(spec.dims.lambda))?;
    let noise = match (spec.unsafe_disable_noise, report.noise) {
        (true, _) => QueryNoise::None,
        (false, NoiseFamily::RadialExponential) => QueryNoise::RadialExponential { beta: report.scale },
        (false, _) => QueryNoise::Gaussian { sigma: report.scale },
    };
    let budget = BudgetState::limited(spec.privacy.budget);
    Ok(PrivatePredictor::new(spec, report, PredictorModel::NoisyLogits { theta, noise }, budget))
}

/// Dispatches on `spec.kind`.
pub fn train<T: Scalar>(data: &LabeledDataset<T>, spec: &MechanismSpec) -> Result<PrivatePredictor<T>> {
    match spec.kind {
        MechanismKind::ModelSensitivity => train_model_sensitivity(data, spec),
        MechanismKind::LossPerturbation => train_loss_perturbation(data, spec),
        MechanismKind::Dpsgd => train_dpsgd(data, spec),
        MechanismKind::PredictionSensitivity => train_prediction_sensitivity(data, spec),
        MechanismKind::SubsampleAggregate => build_subsample_ensemble(data, spec),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;

    fn blobs(n_per_class: usize) -> LabeledDataset<f64> {
        synth_blobs(n_per_class, 3, 5, 3.0, &mut RngStream::new(42, 0)).unwrap()
    }

    fn spec_for(kind: MechanismKind, eps: f64, delta: f64, b: u64, data: &LabeledDataset<f64>) -> MechanismSpec {
        let dims = ProblemDims::logistic(data.len(), 0.01, data.n_classes()).unwrap();
        let mut s = MechanismSpec::new(kind, PrivacySpec::new(eps, delta, b).unwrap(), dims).with_seed(7, 1);
        if kind == MechanismKind::Dpsgd {
            s = s.with_dpsgd(DpSgdConfig::new(0.5, 30, 50, data.len(), 0.5).unwrap());
        }
        s.with_ensemble_size(10)
    }

    #[test]
    fn kind_names_round_trip() {
        for k in MechanismKind::ALL {
            assert_eq!(k.name().parse::<MechanismKind>().unwrap(), k);
        }
        assert!("nope".parse::<MechanismKind>().is_err());
    }

    #[test]
    fn dpsgd_rejects_pure_dp() {
        let data = blobs(20);
        let s = spec_for(MechanismKind::Dpsgd, 1.0, 0.0, 1, &data);
        assert!(matches!(train(&data, &s), Err(Error::UnsupportedVariant(_))));
    }

    #[test]
    fn dims_must_match_data() {
        let data = blobs(20);
        let mut s = spec_for(MechanismKind::ModelSensitivity, 1.0, 0.0, 1, &data);
        s.dims.n_train += 1;
        assert!(train(&data, &s).is_err());
    }

    #[test]
    fn noise_free_model_sensitivity_equals_erm() {
        let data = blobs(30);
        let mut s = spec_for(MechanismKind::ModelSensitivity, 1.0, 0.0, 1, &data);
        s.unsafe_disable_noise = true;
        let p = train(&data, &s).unwrap();
        let erm = minimize_erm(&data, &TrainConfig::new(0.01)).unwrap();
        assert_eq!(p.released_params().unwrap(), &erm);
    }

    #[test]
    fn noise_free_loss_perturbation_equals_erm() {
        let data = blobs(30);
        let mut s = spec_for(MechanismKind::LossPerturbation, 1.0, 0.0, 1, &data);
        s.unsafe_disable_noise = true;
        let p = train(&data, &s).unwrap();
        let erm = minimize_erm(&data, &TrainConfig::new(0.01)).unwrap();
        let diff = p.released_params().unwrap().matrix().sub(erm.matrix()).frobenius();
        assert!(diff < 1e-6, "{diff}");
    }

    #[test]
    fn training_side_predictors_are_unlimited() {
        let data = blobs(20);
        for kind in [MechanismKind::ModelSensitivity, MechanismKind::LossPerturbation, MechanismKind::Dpsgd] {
            let p = train(&data, &spec_for(kind, 1.0, 1e-5, 1, &data)).unwrap();
            let x = data.x(0);
            let first = p.predict(x).unwrap();
            for _ in 0..50 {
                assert_eq!(p.predict(x).unwrap(), first);
            }
        }
    }

    #[test]
    fn calibration_report_matches_accounting() {
        let data = blobs(20);
        let s = spec_for(MechanismKind::PredictionSensitivity, 1.0, 0.0, 100, &data);
        let r = calibrate(&s).unwrap();
        assert_eq!(r.noise, NoiseFamily::RadialExponential);
        assert_eq!(r.scale, prediction_sensitivity_beta(&s.dims, &s.privacy).unwrap());
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"mechanism\":\"prediction_sensitivity\""));
    }

    #[test]
    fn loss_perturbation_ridge_shrinks_norm_on_average() {
        // with ρ = 2LC/ε the extra ridge pulls the minimizer in; compare the
        // same noise draws with and without ρ
        let data = blobs(30);
        let s = spec_for(MechanismKind::LossPerturbation, 0.5, 0.0, 1, &data);
        let report = calibrate(&s).unwrap();
        let n = data.len() as f64;
        let (mut with_rho, mut without) = (0.0, 0.0);
        for trial in 0..20 {
            let mut rng = RngStream::new(99, trial);
            let shape = NoiseShape::new(data.dim(), data.n_classes()).unwrap();
            let b = ParamMatrix::from_matrix(sample_radial_exponential::<f64, _>(shape, report.scale, &mut rng).unwrap())
                .unwrap();
            let base = TrainConfig::new(n * 0.01);
            let a = minimize_erm(&data, &base.clone().with_perturbation(b.clone(), report.rho.unwrap())).unwrap();
            let z = minimize_erm(&data, &base.with_perturbation(b, 0.0)).unwrap();
            with_rho += a.matrix().frobenius();
            without += z.matrix().frobenius();
        }
        assert!(with_rho <= without, "{with_rho} vs {without}");
    }
}
