//! Normal outcome regressions per stratum and arm.
//!
//! Never-takers and always-takers each have one outcome distribution
//! regardless of assignment; compliers have one per arm. All groups share a
//! single variance.

use serde::{Deserialize, Serialize};

use crate::data::Stratum;
use crate::distributions::{
    sample_conjugate_linear_stats, sample_precision_gamma, GammaPrior, LinearSuffStats, NormalLinearPrior, RngStream,
};
use crate::error::Result;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Outcome group: never-taker, always-taker, complier under control,
/// complier under treatment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum OutcomeGroup {
    Never,
    Always,
    Complier0,
    Complier1,
}

impl OutcomeGroup {
    pub const ALL: [OutcomeGroup; 4] =
        [OutcomeGroup::Never, OutcomeGroup::Always, OutcomeGroup::Complier0, OutcomeGroup::Complier1];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            OutcomeGroup::Never => "n",
            OutcomeGroup::Always => "a",
            OutcomeGroup::Complier0 => "c0",
            OutcomeGroup::Complier1 => "c1",
        }
    }
}

/// Group of a patient in stratum `s` under assignment `z`. Noncomplier
/// groups ignore `z`.
pub fn outcome_group(s: Stratum, z: u8) -> OutcomeGroup {
    match s {
        Stratum::NeverTaker => OutcomeGroup::Never,
        Stratum::AlwaysTaker => OutcomeGroup::Always,
        Stratum::Complier if z == 0 => OutcomeGroup::Complier0,
        Stratum::Complier => OutcomeGroup::Complier1,
    }
}

/// How the covariate enters the outcome regressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutcomeForm {
    /// Separate intercept and slope per group.
    Separate,
    /// Separate intercepts, one slope shared by all four groups.
    SharedSlope,
    /// Intercepts only; every slope is zero.
    InterceptOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutcomeParams {
    pub form: OutcomeForm,
    /// `α0` per group, indexed by [`OutcomeGroup::index`].
    pub intercept: [f64; 4],
    /// `α1` per group.
    pub slope: [f64; 4],
    pub sigma2: f64,
}

impl OutcomeParams {
    pub fn new(form: OutcomeForm, intercept: [f64; 4], slope: [f64; 4], sigma2: f64) -> Self {
        let slope = match form {
            OutcomeForm::Separate => slope,
            OutcomeForm::SharedSlope => [slope[0]; 4],
            OutcomeForm::InterceptOnly => [0.0; 4],
        };
        Self { form, intercept, slope, sigma2 }
    }

    pub fn mean(&self, group: OutcomeGroup, x: f64) -> f64 {
        let g = group.index();
        match self.form {
            OutcomeForm::InterceptOnly => self.intercept[g],
            _ => self.intercept[g] + self.slope[g] * x,
        }
    }
}

/// `log N(y; α0 + α1·x, σ²)` for the group.
pub fn outcome_log_density(y: f64, x: f64, group: OutcomeGroup, params: &OutcomeParams) -> f64 {
    let r = y - params.mean(group, x);
    -0.5 * (LN_2PI + params.sigma2.ln()) - r * r / (2.0 * params.sigma2)
}

/// Prior settings for the outcome model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomePriors {
    pub intercept_mean: f64,
    pub intercept_variance: f64,
    pub slope_mean: f64,
    pub slope_variance: f64,
    pub precision: GammaPrior,
}

impl OutcomePriors {
    /// Intercepts centred at `y_center`, variances 100, vague gamma precision.
    pub fn centered_at(y_center: f64) -> Self {
        Self {
            intercept_mean: y_center,
            intercept_variance: 100.0,
            slope_mean: 0.0,
            slope_variance: 100.0,
            precision: GammaPrior::shape_rate(0.01, 0.01),
        }
    }
}

/// Running sums sufficient for a simple regression of y on x.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GroupSums {
    pub n: usize,
    pub sx: f64,
    pub sxx: f64,
    pub sy: f64,
    pub sxy: f64,
    pub syy: f64,
}

impl GroupSums {
    pub fn push(&mut self, x: f64, y: f64) {
        self.n += 1;
        self.sx += x;
        self.sxx += x * x;
        self.sy += y;
        self.sxy += x * y;
        self.syy += y * y;
    }

    /// `Σ (y − a − b·x)²`, clamped at zero against cancellation.
    pub fn residual_ss(&self, a: f64, b: f64) -> f64 {
        let n = self.n as f64;
        let v =
            self.syy - 2.0 * a * self.sy - 2.0 * b * self.sxy + a * a * n + 2.0 * a * b * self.sx + b * b * self.sxx;
        v.max(0.0)
    }
}

/// Complete-data outcomes sorted into the four groups.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GroupedOutcomes {
    pub groups: [GroupSums; 4],
}

impl GroupedOutcomes {
    pub fn push(&mut self, group: OutcomeGroup, x: f64, y: f64) {
        self.groups[group.index()].push(x, y);
    }

    pub fn total(&self) -> usize {
        self.groups.iter().map(|g| g.n).sum()
    }
}

/// Draws the regression coefficients given the current variance, then the
/// shared variance given the new coefficients.
pub fn update_outcome_params(
    data: &GroupedOutcomes,
    current: &OutcomeParams,
    priors: &OutcomePriors,
    rng: &mut RngStream,
) -> Result<OutcomeParams> {
    let sigma2 = current.sigma2;
    let mut intercept = [0.0; 4];
    let mut slope = [0.0; 4];
    match current.form {
        OutcomeForm::Separate => {
            let prior = NormalLinearPrior {
                mean: vec![priors.intercept_mean, priors.slope_mean],
                variance: vec![priors.intercept_variance, priors.slope_variance],
            };
            for (g, sums) in data.groups.iter().enumerate() {
                let mut stats = LinearSuffStats::zeros(2);
                stats.n = sums.n;
                stats.xtx[(0, 0)] = sums.n as f64;
                stats.xtx[(0, 1)] = sums.sx;
                stats.xtx[(1, 0)] = sums.sx;
                stats.xtx[(1, 1)] = sums.sxx;
                stats.xty[0] = sums.sy;
                stats.xty[1] = sums.sxy;
                let draw = sample_conjugate_linear_stats(&stats, sigma2, &prior, rng)?;
                intercept[g] = draw[0];
                slope[g] = draw[1];
            }
        }
        OutcomeForm::SharedSlope => {
            // columns: four group indicators, then x
            let mut stats = LinearSuffStats::zeros(5);
            for (g, sums) in data.groups.iter().enumerate() {
                stats.n += sums.n;
                stats.xtx[(g, g)] = sums.n as f64;
                stats.xtx[(g, 4)] = sums.sx;
                stats.xtx[(4, g)] = sums.sx;
                stats.xtx[(4, 4)] += sums.sxx;
                stats.xty[g] = sums.sy;
                stats.xty[4] += sums.sxy;
            }
            let prior = NormalLinearPrior {
                mean: vec![
                    priors.intercept_mean,
                    priors.intercept_mean,
                    priors.intercept_mean,
                    priors.intercept_mean,
                    priors.slope_mean,
                ],
                variance: vec![
                    priors.intercept_variance,
                    priors.intercept_variance,
                    priors.intercept_variance,
                    priors.intercept_variance,
                    priors.slope_variance,
                ],
            };
            let draw = sample_conjugate_linear_stats(&stats, sigma2, &prior, rng)?;
            intercept.copy_from_slice(&draw[..4]);
            slope = [draw[4]; 4];
        }
        OutcomeForm::InterceptOnly => {
            // independent normal-normal updates
            let prior_prec = 1.0 / priors.intercept_variance;
            for (g, sums) in data.groups.iter().enumerate() {
                let prec = prior_prec + sums.n as f64 / sigma2;
                let mean = (priors.intercept_mean * prior_prec + sums.sy / sigma2) / prec;
                intercept[g] = mean + rng.standard_normal() / prec.sqrt();
            }
        }
    }
    let residual_ss: f64 = data.groups.iter().enumerate().map(|(g, s)| s.residual_ss(intercept[g], slope[g])).sum();
    let precision =
        sample_precision_gamma(residual_ss, data.total(), priors.precision.shape, priors.precision.rate, rng);
    let sigma2 = (1.0 / precision).clamp(f64::MIN_POSITIVE, f64::MAX);
    Ok(OutcomeParams { form: current.form, intercept, slope, sigma2 })
}

/// Draw for a missing observed-arm outcome under the patient's current group.
pub fn impute_missing_observed_outcome(
    group: OutcomeGroup,
    x: f64,
    params: &OutcomeParams,
    rng: &mut RngStream,
) -> f64 {
    params.mean(group, x) + params.sigma2.sqrt() * rng.standard_normal()
}

/// Draw of a complier's outcome under the arm they were not assigned to.
pub fn impute_complier_counterfactual(z_observed: u8, x: f64, params: &OutcomeParams, rng: &mut RngStream) -> f64 {
    let group = if z_observed == 0 { OutcomeGroup::Complier1 } else { OutcomeGroup::Complier0 };
    impute_missing_observed_outcome(group, x, params, rng)
}
