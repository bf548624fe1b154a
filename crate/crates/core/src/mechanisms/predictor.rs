use serde::{Deserialize, Serialize};

use super::ensemble::{predict_votes, sample_exponential_mechanism};
use super::{CalibrationReport, MechanismKind, MechanismSpec};
use crate::accounting::{BudgetState, PrivacySpec};
use crate::error::{Error, Result};
use crate::loss::{LogitVector, ParamMatrix};
use crate::noise::{sample_gaussian, sample_radial_exponential, NoiseShape, RngStream};
use crate::scalar::Scalar;
use crate::trainer::predict_logits;

/// Fresh noise added to every answered logit vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum QueryNoise {
    RadialExponential { beta: f64 },
    Gaussian { sigma: f64 },
    /// Only reachable through the unsafe noise-free test switch.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum PredictorModel<T> {
    /// Private parameters; answers are exact logits.
    Released { theta: ParamMatrix<T> },
    /// Non-private parameters guarded by per-query noise.
    NoisyLogits { theta: ParamMatrix<T>, noise: QueryNoise },
    /// Disjoint sub-models whose votes go through the exponential mechanism.
    Ensemble { members: Vec<ParamMatrix<T>>, beta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "answer", rename_all = "snake_case")]
pub enum PrivateAnswer<T> {
    Logits { logits: Vec<T> },
    Label { label: usize },
}

impl<T: Scalar> PrivateAnswer<T> {
    /// Predicted class: the sampled label, or the arg-max logit.
    pub fn label(&self) -> usize {
        match self {
            PrivateAnswer::Label { label } => *label,
            PrivateAnswer::Logits { logits } => crate::loss::argmax(logits),
        }
    }
}

/// A trained model bound to its privacy guarantee.
///
/// Prediction-side predictors hold a [`BudgetState`] with `B` slots and
/// refuse once it is spent. Query `i` draws its noise from the stream
/// `(noise_seed, i)`, so answers are reproducible for a given query order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrivatePredictor<T> {
    kind: MechanismKind,
    privacy: PrivacySpec,
    calibration: CalibrationReport,
    model: PredictorModel<T>,
    budget: BudgetState,
    noise_seed: u64,
}

fn mix(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(31);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl<T: Scalar> PrivatePredictor<T> {
    pub(crate) fn new(
        spec: &MechanismSpec,
        calibration: CalibrationReport,
        model: PredictorModel<T>,
        budget: BudgetState,
    ) -> Self {
        Self {
            kind: spec.kind,
            privacy: spec.privacy,
            calibration,
            model,
            budget,
            noise_seed: mix(spec.seed, spec.stream),
        }
    }

    pub fn kind(&self) -> MechanismKind {
        self.kind
    }

    pub fn privacy(&self) -> &PrivacySpec {
        &self.privacy
    }

    pub fn calibration(&self) -> &CalibrationReport {
        &self.calibration
    }

    pub fn model(&self) -> &PredictorModel<T> {
        &self.model
    }

    pub fn budget(&self) -> &BudgetState {
        &self.budget
    }

    /// `None` when unlimited.
    pub fn remaining_budget(&self) -> Option<u64> {
        self.budget.remaining()
    }

    pub fn dim(&self) -> usize {
        match &self.model {
            PredictorModel::Released { theta } | PredictorModel::NoisyLogits { theta, .. } => theta.dim(),
            PredictorModel::Ensemble { members, .. } => members[0].dim(),
        }
    }

    pub fn n_classes(&self) -> usize {
        match &self.model {
            PredictorModel::Released { theta } | PredictorModel::NoisyLogits { theta, .. } => theta.n_classes(),
            PredictorModel::Ensemble { members, .. } => members[0].n_classes(),
        }
    }

    /// The private parameters, for model-releasing mechanisms only.
    pub fn released_params(&self) -> Option<&ParamMatrix<T>> {
        match &self.model {
            PredictorModel::Released { theta } => Some(theta),
            _ => None,
        }
    }

    /// Answers one query. Validation happens before any budget is spent, so
    /// malformed queries never consume a slot.
    pub fn predict(&self, x: &[T]) -> Result<PrivateAnswer<T>> {
        match &self.model {
            PredictorModel::Released { theta } => {
                Ok(PrivateAnswer::Logits { logits: predict_logits(theta, x)?.0 })
            }
            PredictorModel::NoisyLogits { .. } => {
                Ok(PrivateAnswer::Logits { logits: predict_prediction_sensitivity(self, x)?.0 })
            }
            PredictorModel::Ensemble { .. } => {
                Ok(PrivateAnswer::Label { label: super::ensemble::predict_subsample_aggregate(self, x)? })
            }
        }
    }

    /// Same model with a fresh budget of `B` and an independent noise
    /// stream. Each redeployment is a separate release with its own
    /// guarantee; used only by the full-test-set scoring protocol.
    pub(crate) fn redeploy(&self, deployment: u64) -> Self {
        let mut out = self.clone();
        out.budget = match self.budget.budget() {
            Some(b) => BudgetState::limited(b),
            None => BudgetState::unlimited(),
        };
        out.noise_seed = mix(self.noise_seed, deployment.wrapping_add(1));
        out
    }

    pub(crate) fn query_rng(&self, query: u64) -> RngStream {
        RngStream::new(self.noise_seed, query)
    }
}

/// `θᵀx + b` with fresh `b` per query; spends one unit of budget.
pub fn predict_prediction_sensitivity<T: Scalar>(p: &PrivatePredictor<T>, x: &[T]) -> Result<LogitVector<T>> {
    let PredictorModel::NoisyLogits { theta, noise } = &p.model else {
        return Err(Error::WrongVariant(format!("{} predictor does not produce noisy logits", p.kind)));
    };
    let mut logits = predict_logits(theta, x)?;
    let query = p.budget.consume()?;
    let mut rng = p.query_rng(query);
    let shape = NoiseShape::vector(theta.n_classes())?;
    let b = match *noise {
        QueryNoise::RadialExponential { beta } => sample_radial_exponential::<T, _>(shape, beta, &mut rng)?,
        QueryNoise::Gaussian { sigma } => sample_gaussian::<T, _>(shape, sigma, &mut rng)?,
        QueryNoise::None => return Ok(logits),
    };
    for (l, &n) in logits.0.iter_mut().zip(b.as_slice()) {
        *l += n;
    }
    Ok(logits)
}

pub(super) fn ensemble_vote<T: Scalar>(p: &PrivatePredictor<T>, x: &[T]) -> Result<usize> {
    let PredictorModel::Ensemble { members, beta } = &p.model else {
        return Err(Error::WrongVariant(format!("{} predictor is not an ensemble", p.kind)));
    };
    let votes = predict_votes(members, x)?;
    let query = p.budget.consume()?;
    let mut rng = p.query_rng(query);
    Ok(sample_exponential_mechanism(&votes, *beta, &mut rng))
}
