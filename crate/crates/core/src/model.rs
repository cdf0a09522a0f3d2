//! Model variants, configuration and the full parameter vector.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::distributions::GammaPrior;
use crate::error::{CaceError, Result};
use crate::outcome::{OutcomeForm, OutcomeGroup, OutcomeParams, OutcomePriors};
use crate::strata::{
    log_stratum_probs_mlogit, log_stratum_probs_probit, stratum_probs_mlogit, stratum_probs_probit, LogStratumProbs,
    MlogitStratumParams, ProbitStratumParams, StratumProbs, StratumProportions,
};

/// Model variants.
///
/// | variant | stratum model | outcome regressions |
/// |---|---|---|
/// | A  | linked probit | separate slopes |
/// | A* | linked probit | shared slope |
/// | B  | linked probit | no covariate |
/// | C* | multinomial logit | shared slope |
/// | D  | Dirichlet proportions | no covariate |
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelVariant {
    A,
    #[serde(rename = "Astar")]
    AStar,
    B,
    #[serde(rename = "Cstar")]
    CStar,
    D,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StratumForm {
    Probit,
    Mlogit,
    Proportions,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 5] =
        [ModelVariant::A, ModelVariant::AStar, ModelVariant::B, ModelVariant::CStar, ModelVariant::D];

    pub fn stratum_form(self) -> StratumForm {
        match self {
            ModelVariant::A | ModelVariant::AStar | ModelVariant::B => StratumForm::Probit,
            ModelVariant::CStar => StratumForm::Mlogit,
            ModelVariant::D => StratumForm::Proportions,
        }
    }

    pub fn outcome_form(self) -> OutcomeForm {
        match self {
            ModelVariant::A => OutcomeForm::Separate,
            ModelVariant::AStar | ModelVariant::CStar => OutcomeForm::SharedSlope,
            ModelVariant::B | ModelVariant::D => OutcomeForm::InterceptOnly,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelVariant::A => "A",
            ModelVariant::AStar => "Astar",
            ModelVariant::B => "B",
            ModelVariant::CStar => "Cstar",
            ModelVariant::D => "D",
        }
    }

    /// Names of the free scalar parameters, in draw-file column order.
    pub fn scalar_names(self) -> Vec<&'static str> {
        let mut names: Vec<&'static str> = match self.stratum_form() {
            StratumForm::Probit => vec!["beta00", "beta01", "beta10", "beta11"],
            StratumForm::Mlogit => vec!["gamma_n0", "gamma_n1", "gamma_a0", "gamma_a1"],
            StratumForm::Proportions => vec!["pi_c", "pi_n", "pi_a"],
        };
        names.extend(match self.outcome_form() {
            OutcomeForm::Separate => {
                vec!["alpha0_n", "alpha1_n", "alpha0_a", "alpha1_a", "alpha0_c0", "alpha1_c0", "alpha0_c1", "alpha1_c1"]
            }
            OutcomeForm::SharedSlope => vec!["alpha0_n", "alpha0_a", "alpha0_c0", "alpha0_c1", "alpha1"],
            OutcomeForm::InterceptOnly => vec!["alpha0_n", "alpha0_a", "alpha0_c0", "alpha0_c1"],
        });
        names.push("sigma2");
        names
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelVariant {
    type Err = CaceError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" => Ok(ModelVariant::A),
            "Astar" | "A*" => Ok(ModelVariant::AStar),
            "B" => Ok(ModelVariant::B),
            "Cstar" | "C*" => Ok(ModelVariant::CStar),
            "D" => Ok(ModelVariant::D),
            other => Err(CaceError::Config(format!("unknown variant {other:?} (expected A, Astar, B, Cstar, D)"))),
        }
    }
}

/// Burn-in, post-burn-in iterations and thinning interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub burn_in: usize,
    pub kept: usize,
    pub thin: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self { burn_in: 5000, kept: 5000, thin: 10 }
    }
}

impl Schedule {
    pub fn saved_count(&self) -> usize {
        self.kept / self.thin
    }
}

/// How the two gamma hyperparameters are read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaConvention {
    ShapeRate,
    ShapeScale,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    /// Variance of each probit coefficient.
    pub probit_variance: f64,
    /// Variance of each multinomial-logit coefficient.
    pub mlogit_variance: f64,
    /// Centre of the outcome intercepts; the observed outcome mean when absent.
    pub intercept_mean: Option<f64>,
    pub intercept_variance: f64,
    pub slope_variance: f64,
    pub gamma_shape: f64,
    pub gamma_second: f64,
    pub gamma_convention: GammaConvention,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            probit_variance: 5.0,
            mlogit_variance: 5.0,
            intercept_mean: None,
            intercept_variance: 100.0,
            slope_variance: 100.0,
            gamma_shape: 0.01,
            gamma_second: 0.01,
            gamma_convention: GammaConvention::ShapeRate,
        }
    }
}

impl PriorConfig {
    pub fn precision_prior(&self) -> GammaPrior {
        match self.gamma_convention {
            GammaConvention::ShapeRate => GammaPrior::shape_rate(self.gamma_shape, self.gamma_second),
            GammaConvention::ShapeScale => GammaPrior::shape_scale(self.gamma_shape, self.gamma_second),
        }
    }

    /// Outcome priors with the intercept centre resolved against `ds`.
    pub fn outcome_priors(&self, ds: &Dataset) -> OutcomePriors {
        OutcomePriors {
            intercept_mean: self.intercept_mean.or_else(|| ds.observed_y_mean()).unwrap_or(0.0),
            intercept_variance: self.intercept_variance,
            slope_mean: 0.0,
            slope_variance: self.slope_variance,
            precision: self.precision_prior(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: ModelVariant,
    pub priors: PriorConfig,
    pub schedule: Schedule,
    pub n_chains: usize,
    pub seed: u64,
    /// Draw labels of missing-outcome patients from the stratum model alone
    /// instead of conditioning on their current imputed outcome.
    pub marginal_missing_y: bool,
    pub psrf_threshold: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: ModelVariant::A,
            priors: PriorConfig::default(),
            schedule: Schedule::default(),
            n_chains: 3,
            seed: 20_110_401,
            marginal_missing_y: false,
            psrf_threshold: 1.06,
        }
    }
}

impl ModelConfig {
    pub fn with_variant(variant: ModelVariant) -> Self {
        Self { variant, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 {
            return Err(CaceError::Config("n_chains must be at least 1".into()));
        }
        if self.schedule.thin == 0 {
            return Err(CaceError::Config("schedule.thin must be positive".into()));
        }
        let p = &self.priors;
        for (name, v) in [
            ("priors.probit_variance", p.probit_variance),
            ("priors.mlogit_variance", p.mlogit_variance),
            ("priors.intercept_variance", p.intercept_variance),
            ("priors.slope_variance", p.slope_variance),
            ("priors.gamma_shape", p.gamma_shape),
            ("priors.gamma_second", p.gamma_second),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CaceError::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }
}

/// Parameters of the stratum-membership model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StratumParams {
    Probit(ProbitStratumParams),
    Mlogit(MlogitStratumParams),
    Proportions(StratumProportions),
}

impl StratumParams {
    pub fn probs(&self, x: f64) -> StratumProbs {
        match self {
            StratumParams::Probit(p) => stratum_probs_probit(x, p),
            StratumParams::Mlogit(p) => stratum_probs_mlogit(x, p),
            StratumParams::Proportions(p) => p.probs(),
        }
    }

    pub fn log_probs(&self, x: f64) -> LogStratumProbs {
        match self {
            StratumParams::Probit(p) => log_stratum_probs_probit(x, p),
            StratumParams::Mlogit(p) => log_stratum_probs_mlogit(x, p),
            StratumParams::Proportions(p) => p.log_probs(),
        }
    }
}

/// Full parameter vector at one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParameterState {
    pub stratum: StratumParams,
    pub outcome: OutcomeParams,
}

impl ParameterState {
    /// Free scalars in [`ModelVariant::scalar_names`] order.
    pub fn scalars(&self) -> Vec<f64> {
        let mut v = match &self.stratum {
            StratumParams::Probit(p) => p.beta.to_vec(),
            StratumParams::Mlogit(p) => vec![p.gamma_n[0], p.gamma_n[1], p.gamma_a[0], p.gamma_a[1]],
            StratumParams::Proportions(p) => vec![p.complier, p.never, p.always],
        };
        let o = &self.outcome;
        match o.form {
            OutcomeForm::Separate => {
                for g in OutcomeGroup::ALL {
                    v.push(o.intercept[g.index()]);
                    v.push(o.slope[g.index()]);
                }
            }
            OutcomeForm::SharedSlope => {
                v.extend_from_slice(&o.intercept);
                v.push(o.slope[0]);
            }
            OutcomeForm::InterceptOnly => v.extend_from_slice(&o.intercept),
        }
        v.push(o.sigma2);
        v
    }

    /// Inverse of [`ParameterState::scalars`].
    pub fn from_scalars(variant: ModelVariant, values: &[f64]) -> Result<Self> {
        let expected = variant.scalar_names().len();
        if values.len() != expected {
            return Err(CaceError::Config(format!("variant {variant} has {expected} scalars, got {}", values.len())));
        }
        let (stratum, rest) = match variant.stratum_form() {
            StratumForm::Probit => (
                StratumParams::Probit(ProbitStratumParams::new([values[0], values[1], values[2], values[3]])),
                &values[4..],
            ),
            StratumForm::Mlogit => (
                StratumParams::Mlogit(MlogitStratumParams {
                    gamma_n: [values[0], values[1]],
                    gamma_a: [values[2], values[3]],
                }),
                &values[4..],
            ),
            StratumForm::Proportions => (
                StratumParams::Proportions(StratumProportions {
                    complier: values[0],
                    never: values[1],
                    always: values[2],
                }),
                &values[3..],
            ),
        };
        let form = variant.outcome_form();
        let sigma2 = *rest.last().expect("sigma2 present");
        let outcome = match form {
            OutcomeForm::Separate => {
                let mut a0 = [0.0; 4];
                let mut a1 = [0.0; 4];
                for g in 0..4 {
                    a0[g] = rest[2 * g];
                    a1[g] = rest[2 * g + 1];
                }
                OutcomeParams::new(form, a0, a1, sigma2)
            }
            OutcomeForm::SharedSlope => {
                OutcomeParams::new(form, [rest[0], rest[1], rest[2], rest[3]], [rest[4]; 4], sigma2)
            }
            OutcomeForm::InterceptOnly => {
                OutcomeParams::new(form, [rest[0], rest[1], rest[2], rest[3]], [0.0; 4], sigma2)
            }
        };
        Ok(Self { stratum, outcome })
    }
}
