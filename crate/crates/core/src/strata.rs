//! Models for principal-stratum membership given the covariate.
//!
//! Three forms are supported: the linked probit pair with latent utilities,
//! a multinomial logit with the complier stratum as reference category, and
//! covariate-free stratum proportions with a Dirichlet prior.

use crate::data::Stratum;
use crate::distributions::{
    log_standard_normal_cdf, sample_conjugate_linear_stats, sample_dirichlet, sample_truncated_normal_clamped,
    standard_normal_cdf, LinearSuffStats, NormalLinearPrior, RngStream, TruncationSide,
};
use crate::error::Result;

/// Probabilities of the three strata at one covariate value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StratumProbs {
    pub never: f64,
    pub complier: f64,
    pub always: f64,
}

impl StratumProbs {
    pub fn get(&self, s: Stratum) -> f64 {
        match s {
            Stratum::Complier => self.complier,
            Stratum::NeverTaker => self.never,
            Stratum::AlwaysTaker => self.always,
        }
    }
}

/// Natural logs of the stratum probabilities; finite wherever the linear
/// scores are finite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogStratumProbs {
    pub never: f64,
    pub complier: f64,
    pub always: f64,
}

impl LogStratumProbs {
    pub fn get(&self, s: Stratum) -> f64 {
        match s {
            Stratum::Complier => self.complier,
            Stratum::NeverTaker => self.never,
            Stratum::AlwaysTaker => self.always,
        }
    }
}

/// Coefficients `(β00, β01, β10, β11)` of the linked probit pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbitStratumParams {
    pub beta: [f64; 4],
}

impl ProbitStratumParams {
    pub fn new(beta: [f64; 4]) -> Self {
        Self { beta }
    }

    /// Linear score of the never-taker equation.
    pub fn never_score(&self, x: f64) -> f64 {
        self.beta[0] + self.beta[1] * x
    }

    /// Linear score of the complier equation.
    pub fn complier_score(&self, x: f64) -> f64 {
        self.beta[2] + self.beta[3] * x
    }
}

/// `Ψn = 1 − Φ(β00 + β01x)`, `Ψc = (1 − Ψn)(1 − Φ(β10 + β11x))`, `Ψa` as residual.
pub fn stratum_probs_probit(x: f64, params: &ProbitStratumParams) -> StratumProbs {
    let not_never = standard_normal_cdf(params.never_score(x));
    let never = 1.0 - not_never;
    let complier = not_never * (1.0 - standard_normal_cdf(params.complier_score(x)));
    let always = (1.0 - never - complier).max(0.0);
    StratumProbs { never, complier, always }
}

pub fn log_stratum_probs_probit(x: f64, params: &ProbitStratumParams) -> LogStratumProbs {
    let e0 = params.never_score(x);
    let e1 = params.complier_score(x);
    let log_not_never = log_standard_normal_cdf(e0);
    LogStratumProbs {
        never: log_standard_normal_cdf(-e0),
        complier: log_not_never + log_standard_normal_cdf(-e1),
        always: log_not_never + log_standard_normal_cdf(e1),
    }
}

/// Multinomial-logit coefficients `(intercept, slope)` for the never-taker
/// and always-taker scores; compliers are the zero-score reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlogitStratumParams {
    pub gamma_n: [f64; 2],
    pub gamma_a: [f64; 2],
}

impl MlogitStratumParams {
    pub fn zero() -> Self {
        Self { gamma_n: [0.0; 2], gamma_a: [0.0; 2] }
    }

    fn scores(&self, x: f64) -> (f64, f64) {
        (self.gamma_n[0] + self.gamma_n[1] * x, self.gamma_a[0] + self.gamma_a[1] * x)
    }
}

pub fn log_stratum_probs_mlogit(x: f64, params: &MlogitStratumParams) -> LogStratumProbs {
    let (sn, sa) = params.scores(x);
    let m = sn.max(sa).max(0.0);
    let lse = m + ((sn - m).exp() + (-m).exp() + (sa - m).exp()).ln();
    LogStratumProbs { never: sn - lse, complier: -lse, always: sa - lse }
}

/// Softmax over `(score_n, 0, score_a)`, stabilized by max subtraction.
pub fn stratum_probs_mlogit(x: f64, params: &MlogitStratumParams) -> StratumProbs {
    let (sn, sa) = params.scores(x);
    let m = sn.max(sa).max(0.0);
    let (wn, wc, wa) = ((sn - m).exp(), (-m).exp(), (sa - m).exp());
    let total = wn + wc + wa;
    StratumProbs { never: wn / total, complier: wc / total, always: wa / total }
}

/// Covariate-free population shares of the strata.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StratumProportions {
    pub complier: f64,
    pub never: f64,
    pub always: f64,
}

impl StratumProportions {
    pub fn uniform() -> Self {
        Self { complier: 1.0 / 3.0, never: 1.0 / 3.0, always: 1.0 / 3.0 }
    }

    pub fn probs(&self) -> StratumProbs {
        StratumProbs { never: self.never, complier: self.complier, always: self.always }
    }

    pub fn log_probs(&self) -> LogStratumProbs {
        LogStratumProbs { never: self.never.ln(), complier: self.complier.ln(), always: self.always.ln() }
    }
}

/// Stratum counts `(complier, never, always)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StratumCounts {
    pub complier: u64,
    pub never: u64,
    pub always: u64,
}

impl StratumCounts {
    pub fn from_labels<'a>(labels: impl IntoIterator<Item = &'a Stratum>) -> Self {
        let mut c = Self::default();
        for s in labels {
            match s {
                Stratum::Complier => c.complier += 1,
                Stratum::NeverTaker => c.never += 1,
                Stratum::AlwaysTaker => c.always += 1,
            }
        }
        c
    }
}

/// Draw from Dirichlet(1 + n_c, 1 + n_n, 1 + n_a).
pub fn update_proportions(counts: StratumCounts, rng: &mut RngStream) -> StratumProportions {
    let [c, n, a] = sample_dirichlet([counts.complier, counts.never, counts.always], [1.0; 3], rng);
    StratumProportions { complier: c, never: n, always: a }
}

/// Latent probit utilities. `s_c` exists only for patients with `s_n > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentUtilities {
    pub s_n: f64,
    pub s_c: Option<f64>,
}

impl LatentUtilities {
    /// Stratum implied by the sign rules.
    pub fn stratum(&self) -> Stratum {
        match (self.s_n > 0.0, self.s_c) {
            (false, _) => Stratum::NeverTaker,
            (true, Some(sc)) if sc > 0.0 => Stratum::AlwaysTaker,
            (true, _) => Stratum::Complier,
        }
    }
}

/// Draws the utilities consistent with stratum `s` at covariate `x`.
pub fn sample_latent_utilities(
    s: Stratum,
    x: f64,
    params: &ProbitStratumParams,
    rng: &mut RngStream,
) -> LatentUtilities {
    let mean_n = params.never_score(x);
    let s_n = match s {
        Stratum::NeverTaker => sample_truncated_normal_clamped(mean_n, 1.0, 0.0, TruncationSide::Below, rng),
        _ => sample_truncated_normal_clamped(mean_n, 1.0, 0.0, TruncationSide::Above, rng),
    };
    let mean_c = params.complier_score(x);
    let s_c = match s {
        Stratum::NeverTaker => None,
        Stratum::Complier => Some(sample_truncated_normal_clamped(mean_c, 1.0, 0.0, TruncationSide::Below, rng)),
        Stratum::AlwaysTaker => Some(sample_truncated_normal_clamped(mean_c, 1.0, 0.0, TruncationSide::Above, rng)),
    };
    LatentUtilities { s_n, s_c }
}

/// Default N(0, 5) prior on each probit coefficient pair.
pub fn default_probit_prior() -> NormalLinearPrior {
    NormalLinearPrior { mean: vec![0.0, 0.0], variance: vec![5.0, 5.0] }
}

/// Conditional draw of β given utilities: the never-taker equation regresses
/// `s_n` on `(1, x)` over everyone, then the complier equation regresses
/// `s_c` over patients where it exists. Unit noise variance.
pub fn update_probit_beta(
    utilities: &[LatentUtilities],
    xs: &[f64],
    prior: &NormalLinearPrior,
    rng: &mut RngStream,
) -> Result<ProbitStratumParams> {
    assert_eq!(utilities.len(), xs.len());
    let mut never_eq = LinearSuffStats::zeros(2);
    let mut complier_eq = LinearSuffStats::zeros(2);
    for (u, &x) in utilities.iter().zip(xs) {
        never_eq.push(&[1.0, x], u.s_n);
        if let Some(sc) = u.s_c {
            complier_eq.push(&[1.0, x], sc);
        }
    }
    let b0 = sample_conjugate_linear_stats(&never_eq, 1.0, prior, rng)?;
    let b1 = sample_conjugate_linear_stats(&complier_eq, 1.0, prior, rng)?;
    Ok(ProbitStratumParams::new([b0[0], b0[1], b1[0], b1[1]]))
}

/// Adaptive random-walk proposal for the two multinomial-logit blocks.
///
/// Each block proposes `current + scale · L · ε` with `L Lᵀ` the inverse of
/// the average `(1, x)(1, x)ᵀ`, so intercept and slope move in the
/// direction the likelihood allows. Scales adapt while `adapting` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct MlogitProposal {
    pub scale: [f64; 2],
    shape: [[f64; 2]; 2],
    adapting: bool,
    accepted: [u32; 2],
    proposed: [u32; 2],
    pub total_accepted: [u64; 2],
    pub total_proposed: [u64; 2],
}

const ADAPT_BATCH: u32 = 50;
const TARGET_ACCEPT_LOW: f64 = 0.3;
const TARGET_ACCEPT_HIGH: f64 = 0.5;

impl MlogitProposal {
    /// Proposal shaped by the covariate values; identity shape when empty.
    pub fn for_covariates(xs: &[f64]) -> Self {
        let n = xs.len();
        let shape = if n == 0 {
            [[1.0, 0.0], [0.0, 1.0]]
        } else {
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
            // inverse of [[1, m], [m, m² + v]] is [[1 + m²/v, -m/v], [-m/v, 1/v]];
            // Cholesky of that inverse
            let v = var.max(1e-6);
            let l11 = (1.0 + mean * mean / v).sqrt();
            let l21 = (-mean / v) / l11;
            let l22 = (1.0 / v - l21 * l21).max(0.0).sqrt();
            [[l11, 0.0], [l21, l22]]
        };
        let s = 2.4 / (2.0 * (0.2 * n as f64).max(1.0)).sqrt();
        Self {
            scale: [s, s],
            shape,
            adapting: true,
            accepted: [0; 2],
            proposed: [0; 2],
            total_accepted: [0; 2],
            total_proposed: [0; 2],
        }
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = [scale, scale];
        self
    }

    pub fn freeze(&mut self) {
        self.adapting = false;
    }

    pub fn is_adapting(&self) -> bool {
        self.adapting
    }

    fn propose(&self, block: usize, current: [f64; 2], rng: &mut RngStream) -> [f64; 2] {
        let (e0, e1) = (rng.standard_normal(), rng.standard_normal());
        let l = self.shape;
        let s = self.scale[block];
        [current[0] + s * l[0][0] * e0, current[1] + s * (l[1][0] * e0 + l[1][1] * e1)]
    }

    fn record(&mut self, block: usize, accepted: bool) {
        self.proposed[block] += 1;
        self.total_proposed[block] += 1;
        if accepted {
            self.accepted[block] += 1;
            self.total_accepted[block] += 1;
        }
        if self.adapting && self.proposed[block] >= ADAPT_BATCH {
            let rate = self.accepted[block] as f64 / self.proposed[block] as f64;
            if rate < TARGET_ACCEPT_LOW {
                self.scale[block] *= 0.8;
            } else if rate > TARGET_ACCEPT_HIGH {
                self.scale[block] *= 1.25;
            }
            self.accepted[block] = 0;
            self.proposed[block] = 0;
        }
    }

    pub fn acceptance_rate(&self, block: usize) -> Option<f64> {
        (self.total_proposed[block] > 0).then(|| self.total_accepted[block] as f64 / self.total_proposed[block] as f64)
    }
}

fn mlogit_log_likelihood(params: &MlogitStratumParams, labels: &[Stratum], xs: &[f64]) -> f64 {
    labels.iter().zip(xs).map(|(&s, &x)| log_stratum_probs_mlogit(x, params).get(s)).sum()
}

fn normal_log_prior(v: [f64; 2], scale: f64) -> f64 {
    -(v[0] * v[0] + v[1] * v[1]) / (2.0 * scale * scale)
}

/// One Metropolis-within-Gibbs sweep over the never-taker block then the
/// always-taker block, each with an independent N(0, prior_scale²) prior.
pub fn update_mlogit_gamma(
    current: &MlogitStratumParams,
    labels: &[Stratum],
    xs: &[f64],
    prior_scale: f64,
    proposal: &mut MlogitProposal,
    rng: &mut RngStream,
) -> MlogitStratumParams {
    let mut state = *current;
    let mut current_ll = mlogit_log_likelihood(&state, labels, xs);
    for block in 0..2 {
        let old = if block == 0 { state.gamma_n } else { state.gamma_a };
        let new = proposal.propose(block, old, rng);
        let mut candidate = state;
        if block == 0 {
            candidate.gamma_n = new;
        } else {
            candidate.gamma_a = new;
        }
        let cand_ll = mlogit_log_likelihood(&candidate, labels, xs);
        let log_ratio = cand_ll - current_ll + normal_log_prior(new, prior_scale) - normal_log_prior(old, prior_scale);
        let u = rng.open_unit();
        let accept = new != old && log_ratio.is_finite() && u.ln() < log_ratio;
        if accept {
            state = candidate;
            current_ll = cand_ll;
        }
        proposal.record(block, accept);
    }
    state
}
