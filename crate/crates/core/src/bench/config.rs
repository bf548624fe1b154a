use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanisms::MechanismKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Synth {
        n_per_class: usize,
        classes: usize,
        dim: usize,
        separation: f64,
        #[serde(default)]
        seed: u64,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: Option<PathBuf>,
        test_labels: Option<PathBuf>,
    },
    Csv {
        train: PathBuf,
        test: Option<PathBuf>,
    },
}

/// How prediction-side mechanisms are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionProtocol {
    /// Answer exactly `B` test points drawn per trial (without replacement
    /// when `B ≤` test size, with replacement otherwise).
    #[default]
    BudgetSample,
    /// Answer the whole test set, redeploying the predictor with a fresh
    /// budget and noise stream every `B` queries. The privacy guarantee then
    /// covers each block of `B` answers separately.
    FullTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpSgdSettings {
    #[serde(default = "default_clip")]
    pub clip_nu: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: f64,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
}

fn default_clip() -> f64 {
    0.1
}
fn default_batch() -> usize {
    64
}
fn default_epochs() -> f64 {
    5.0
}
fn default_lr() -> f64 {
    1.0
}

impl Default for DpSgdSettings {
    fn default() -> Self {
        Self { clip_nu: default_clip(), batch_size: default_batch(), epochs: default_epochs(), learning_rate: default_lr() }
    }
}

impl DpSgdSettings {
    /// `⌈epochs·N/|𝓑|⌉` steps, at least one.
    pub fn steps(&self, n_train: usize) -> usize {
        ((self.epochs * n_train as f64 / self.batch_size as f64).ceil() as usize).max(1)
    }
}

/// A sweep: the Cartesian product of the grids, each point repeated `trials`
/// times. Empty `n_train`, `dims` or `classes` grids mean "use the data as is".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub dataset: DatasetSource,
    pub mechanisms: Vec<MechanismKind>,
    pub epsilons: Vec<f64>,
    #[serde(default = "default_deltas")]
    pub deltas: Vec<f64>,
    #[serde(default = "default_budgets")]
    pub budgets: Vec<u64>,
    #[serde(default)]
    pub n_train: Vec<usize>,
    #[serde(default)]
    pub dims: Vec<usize>,
    #[serde(default)]
    pub classes: Vec<usize>,
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
    #[serde(default = "default_ensembles")]
    pub ensembles: Vec<usize>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Held-out rows when the source has no separate test set; defaults to a
    /// fifth of the data.
    pub n_test: Option<usize>,
    #[serde(default)]
    pub protocol: PredictionProtocol,
    #[serde(default)]
    pub dpsgd: DpSgdSettings,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_tolerance")]
    pub grad_tolerance: f64,
    /// Off by default so reruns produce identical files.
    #[serde(default)]
    pub record_timing: bool,
}

fn default_deltas() -> Vec<f64> {
    vec![0.0]
}
fn default_budgets() -> Vec<u64> {
    vec![1]
}
fn default_lambdas() -> Vec<f64> {
    vec![1e-3]
}
fn default_ensembles() -> Vec<usize> {
    vec![crate::mechanisms::DEFAULT_ENSEMBLE_SIZE]
}
fn default_trials() -> usize {
    100
}
fn default_max_iterations() -> usize {
    500
}
fn default_tolerance() -> f64 {
    1e-6
}

impl SweepConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let empty = [
            ("mechanisms", self.mechanisms.is_empty()),
            ("epsilons", self.epsilons.is_empty()),
            ("deltas", self.deltas.is_empty()),
            ("budgets", self.budgets.is_empty()),
            ("lambdas", self.lambdas.is_empty()),
            ("ensembles", self.ensembles.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(Error::Config(format!("grid {name} is empty")));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        if self.epsilons.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
            return Err(Error::Config("epsilons must be finite and > 0".into()));
        }
        if self.deltas.iter().any(|&d| !(0.0..1.0).contains(&d)) {
            return Err(Error::Config("deltas must lie in [0, 1)".into()));
        }
        if self.budgets.contains(&0) || self.ensembles.contains(&0) || self.n_train.contains(&0) || self.dims.contains(&0) {
            return Err(Error::Config("budgets, ensembles, n_train and dims must be positive".into()));
        }
        if self.classes.iter().any(|&c| c < 2) {
            return Err(Error::Config("classes must be >= 2".into()));
        }
        if self.lambdas.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::Config("lambdas must be finite and > 0".into()));
        }
        let d = &self.dpsgd;
        if !(d.clip_nu > 0.0) || d.batch_size == 0 || !(d.epochs > 0.0) || !(d.learning_rate > 0.0) {
            return Err(Error::Config("dpsgd settings must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
mechanisms = ["model_sensitivity", "subsample_aggregate"]
epsilons = [0.1, 1.0]

[dataset]
kind = "synth"
n_per_class = 50
classes = 3
dim = 5
separation = 2.0
"#;

    #[test]
    fn defaults_fill_in() {
        let c = SweepConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.trials, 100);
        assert_eq!(c.deltas, vec![0.0]);
        assert_eq!(c.ensembles, vec![256]);
        assert_eq!(c.protocol, PredictionProtocol::BudgetSample);
        assert!(!c.record_timing);
        let again = SweepConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(SweepConfig::from_toml_str(&MINIMAL.replace("[0.1, 1.0]", "[]")).is_err());
        assert!(SweepConfig::from_toml_str(&format!("trials = 0\n{MINIMAL}")).is_err());
        assert!(SweepConfig::from_toml_str(&format!("bogus = 1\n{MINIMAL}")).is_err());
        assert!(SweepConfig::from_toml_str(&MINIMAL.replace("model_sensitivity", "nope")).is_err());
    }
}
