//! Data-augmentation Gibbs sampler.
//!
//! One sweep draws, in order: stratum labels of the mixture patients, missing
//! observed-arm outcomes, complier counterfactual outcomes, the stratum-model
//! parameters and the outcome-model parameters, then records the CACE of the
//! completed data.

use rayon::prelude::*;

use crate::data::{Dataset, ObservedPattern, Stratum};
use crate::distributions::{NormalLinearPrior, RngStream};
use crate::error::{CaceError, Result};
use crate::model::{ModelConfig, ModelVariant, ParameterState, Schedule, StratumForm, StratumParams};
use crate::outcome::{
    impute_complier_counterfactual, impute_missing_observed_outcome, outcome_group, outcome_log_density,
    update_outcome_params, GroupedOutcomes, OutcomeGroup, OutcomeParams, OutcomePriors,
};
use crate::strata::{
    sample_latent_utilities, update_mlogit_gamma, update_probit_beta, update_proportions, LatentUtilities,
    MlogitProposal, MlogitStratumParams, ProbitStratumParams, StratumCounts, StratumProportions,
};

/// Probability that a patient with `Z = D = z` is a complier given θ.
///
/// With `y` absent the outcome densities drop out and only the stratum model
/// is used.
pub fn complier_probability(x: f64, y: Option<f64>, z: u8, theta: &ParameterState) -> f64 {
    let lp = theta.stratum.log_probs(x);
    let (other, other_group) = if z == 0 { (lp.never, OutcomeGroup::Never) } else { (lp.always, OutcomeGroup::Always) };
    let complier_group = if z == 0 { OutcomeGroup::Complier0 } else { OutcomeGroup::Complier1 };
    let (mut lc, mut lt) = (lp.complier, other);
    if let Some(y) = y {
        lc += outcome_log_density(y, x, complier_group, &theta.outcome);
        lt += outcome_log_density(y, x, other_group, &theta.outcome);
    }
    if lc == f64::NEG_INFINITY && lt == f64::NEG_INFINITY {
        // both terms vanish: fall back to the stratum model alone
        let (pc, pt) = (lp.complier.exp(), other.exp());
        return if pc + pt > 0.0 { pc / (pc + pt) } else { 0.5 };
    }
    // logistic of the log-odds
    let d = lc - lt;
    if d >= 0.0 {
        1.0 / (1.0 + (-d).exp())
    } else {
        let e = d.exp();
        e / (1.0 + e)
    }
}

/// Per-patient latent state at one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct StratumState {
    pub labels: Vec<Stratum>,
    /// Probit utilities (probit variants only).
    pub utilities: Vec<Option<LatentUtilities>>,
    /// Observed-arm outcome: the observed value or the current imputation.
    pub y_complete: Vec<f64>,
    /// Outcome under the other arm, for current compliers, with the group it
    /// was drawn from.
    pub counterfactual: Vec<Option<(OutcomeGroup, f64)>>,
}

impl StratumState {
    pub fn n_compliers(&self) -> usize {
        self.labels.iter().filter(|s| **s == Stratum::Complier).count()
    }
}

/// Redraws labels of mixture patients; known patterns keep their stratum.
pub fn sample_stratum_memberships(
    ds: &Dataset,
    state: &mut StratumState,
    theta: &ParameterState,
    marginal_missing_y: bool,
    rng: &mut RngStream,
) {
    for (i, r) in ds.records().iter().enumerate() {
        let pattern = ds.pattern(i);
        if !pattern.is_mixture() {
            state.labels[i] = pattern.noncomplier_stratum();
            continue;
        }
        let y = match r.y_obs {
            Some(y) => Some(y),
            None if marginal_missing_y => None,
            None => Some(state.y_complete[i]),
        };
        let p = complier_probability(r.x, y, r.z, theta);
        state.labels[i] = if rng.bernoulli(p) { Stratum::Complier } else { pattern.noncomplier_stratum() };
    }
}

/// Mean of `Y(1) − Y(0)` over current compliers; `None` with no compliers.
pub fn compute_cace(ds: &Dataset, state: &StratumState) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, r) in ds.records().iter().enumerate() {
        if state.labels[i] != Stratum::Complier {
            continue;
        }
        let (_, cf) = state.counterfactual[i].expect("complier has a counterfactual draw");
        let observed = state.y_complete[i];
        sum += if r.z == 1 { observed - cf } else { cf - observed };
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Fixed-length bitset of per-patient complier indicators.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComplierSet {
    words: Vec<u64>,
    len: usize,
}

impl ComplierSet {
    pub fn from_labels(labels: &[Stratum]) -> Self {
        let mut words = vec![0u64; labels.len().div_ceil(64)];
        for (i, s) in labels.iter().enumerate() {
            if *s == Stratum::Complier {
                words[i / 64] |= 1 << (i % 64);
            }
        }
        Self { words, len: labels.len() }
    }

    pub fn contains(&self, i: usize) -> bool {
        i < self.len && self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// One saved iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedDraw {
    /// Post-burn-in iteration number, 1-based.
    pub iteration: usize,
    pub params: ParameterState,
    pub cace: Option<f64>,
    pub n_compliers: usize,
    pub compliers: ComplierSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub index: usize,
    pub seed: u64,
    pub variant: ModelVariant,
    pub schedule: Schedule,
    pub draws: Vec<SavedDraw>,
    /// Acceptance rates of the two multinomial-logit blocks after burn-in.
    pub mlogit_acceptance: Option<[f64; 2]>,
}

impl Chain {
    pub fn undefined_cace_count(&self) -> usize {
        self.draws.iter().filter(|d| d.cace.is_none()).count()
    }

    pub fn scalar_trace(&self, k: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d.params.scalars()[k]).collect()
    }
}

/// Progress notification emitted once per sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProgressEvent {
    pub chain: usize,
    /// Sweep number counted from the start of burn-in, 1-based.
    pub iteration: usize,
    pub total: usize,
    pub n_compliers: usize,
}

/// Sampler for one chain.
pub struct GibbsSampler<'a> {
    ds: &'a Dataset,
    variant: ModelVariant,
    marginal_missing_y: bool,
    xs: Vec<f64>,
    probit_prior: NormalLinearPrior,
    mlogit_scale: f64,
    outcome_priors: OutcomePriors,
    mlogit_proposal: MlogitProposal,
    pub state: StratumState,
    pub theta: ParameterState,
    rng: RngStream,
    fresh: bool,
}

impl<'a> GibbsSampler<'a> {
    /// Initial state for chain `chain_index`: mixture labels Bernoulli(0.5),
    /// stratum intercepts at their prior means shifted by one prior SD and
    /// outcome intercepts at the observed mean shifted by one observed SD,
    /// with sign alternating by chain. Slopes start at their prior means and
    /// the variance at the observed outcome variance.
    ///
    /// Slopes are not shifted: one prior SD on an unstandardized covariate
    /// pushes every probit score far into a tail, which leaves a chain stuck
    /// with a single stratum. The first sweep keeps the initial labels and
    /// starts from the parameter updates, so no complier group starts empty.
    /// An empty complier group draws its coefficients from the vague prior
    /// and then attracts no patients again.
    pub fn new(ds: &'a Dataset, config: &ModelConfig, chain_index: usize) -> Self {
        let mut rng = RngStream::new(config.seed, chain_index as u64);
        let variant = config.variant;
        let sign = if chain_index % 2 == 0 { 1.0 } else { -1.0 };
        let outcome_priors = config.priors.outcome_priors(ds);
        let xs: Vec<f64> = ds.records().iter().map(|r| r.x).collect();

        let probit_sd = config.priors.probit_variance.sqrt();
        let mlogit_sd = config.priors.mlogit_variance.sqrt();
        let stratum = match variant.stratum_form() {
            StratumForm::Probit => {
                StratumParams::Probit(ProbitStratumParams::new([sign * probit_sd, 0.0, sign * probit_sd, 0.0]))
            }
            StratumForm::Mlogit => StratumParams::Mlogit(MlogitStratumParams {
                gamma_n: [sign * mlogit_sd, 0.0],
                gamma_a: [sign * mlogit_sd, 0.0],
            }),
            StratumForm::Proportions => StratumParams::Proportions(StratumProportions::uniform()),
        };
        let sigma2 = ds.observed_y_variance().filter(|v| *v > 0.0).unwrap_or(1.0);
        let intercept = outcome_priors.intercept_mean + sign * sigma2.sqrt();
        let slope = outcome_priors.slope_mean;
        let outcome = OutcomeParams::new(variant.outcome_form(), [intercept; 4], [slope; 4], sigma2);
        let theta = ParameterState { stratum, outcome };

        let n = ds.len();
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let p = ds.pattern(i);
            labels.push(if p.is_mixture() && rng.bernoulli(0.5) { Stratum::Complier } else { p.noncomplier_stratum() });
        }
        let mut y_complete = Vec::with_capacity(n);
        for (i, r) in ds.records().iter().enumerate() {
            y_complete.push(match r.y_obs {
                Some(y) => y,
                None => impute_missing_observed_outcome(outcome_group(labels[i], r.z), r.x, &outcome, &mut rng),
            });
        }
        let state = StratumState { labels, utilities: vec![None; n], y_complete, counterfactual: vec![None; n] };

        Self {
            ds,
            variant,
            marginal_missing_y: config.marginal_missing_y,
            mlogit_proposal: MlogitProposal::for_covariates(&xs),
            xs,
            probit_prior: NormalLinearPrior::new(vec![0.0, 0.0], vec![config.priors.probit_variance; 2])
                .expect("validated prior variance"),
            mlogit_scale: mlogit_sd,
            outcome_priors,
            state,
            theta,
            rng,
            fresh: true,
        }
    }

    pub fn variant(&self) -> ModelVariant {
        self.variant
    }

    pub fn freeze_adaptation(&mut self) {
        self.mlogit_proposal.freeze();
    }

    pub fn mlogit_proposal(&self) -> &MlogitProposal {
        &self.mlogit_proposal
    }

    /// One full sweep. Returns the iteration's CACE (absent with no
    /// compliers). On error names the failing block.
    pub fn iterate(&mut self) -> std::result::Result<Option<f64>, (&'static str, CaceError)> {
        let ds = self.ds;
        let rng = &mut self.rng;
        let state = &mut self.state;

        if !std::mem::take(&mut self.fresh) {
            sample_stratum_memberships(ds, state, &self.theta, self.marginal_missing_y, rng);
        }

        for (i, r) in ds.records().iter().enumerate() {
            if r.y_obs.is_none() {
                let g = outcome_group(state.labels[i], r.z);
                state.y_complete[i] = impute_missing_observed_outcome(g, r.x, &self.theta.outcome, rng);
            }
        }

        for (i, r) in ds.records().iter().enumerate() {
            state.counterfactual[i] = (state.labels[i] == Stratum::Complier).then(|| {
                let group = if r.z == 0 { OutcomeGroup::Complier1 } else { OutcomeGroup::Complier0 };
                (group, impute_complier_counterfactual(r.z, r.x, &self.theta.outcome, rng))
            });
        }

        self.theta.stratum = match self.theta.stratum {
            StratumParams::Probit(beta) => {
                let mut utils = Vec::with_capacity(ds.len());
                for (i, &x) in self.xs.iter().enumerate() {
                    let u = sample_latent_utilities(state.labels[i], x, &beta, rng);
                    state.utilities[i] = Some(u);
                    utils.push(u);
                }
                let next =
                    update_probit_beta(&utils, &self.xs, &self.probit_prior, rng).map_err(|e| ("probit_beta", e))?;
                StratumParams::Probit(next)
            }
            StratumParams::Mlogit(current) => StratumParams::Mlogit(update_mlogit_gamma(
                &current,
                &state.labels,
                &self.xs,
                self.mlogit_scale,
                &mut self.mlogit_proposal,
                rng,
            )),
            StratumParams::Proportions(_) => {
                StratumParams::Proportions(update_proportions(StratumCounts::from_labels(&state.labels), rng))
            }
        };

        let mut grouped = GroupedOutcomes::default();
        for (i, r) in ds.records().iter().enumerate() {
            grouped.push(outcome_group(state.labels[i], r.z), r.x, state.y_complete[i]);
        }
        self.theta.outcome = update_outcome_params(&grouped, &self.theta.outcome, &self.outcome_priors, rng)
            .map_err(|e| ("outcome", e))?;

        Ok(compute_cace(ds, state))
    }
}

/// Runs one chain with a progress callback.
pub fn run_chain_with_progress(
    ds: &Dataset,
    config: &ModelConfig,
    chain_index: usize,
    progress: &mut dyn FnMut(ProgressEvent),
) -> Result<Chain> {
    config.validate()?;
    let schedule = config.schedule;
    let total = schedule.burn_in + schedule.kept;
    let mut sampler = GibbsSampler::new(ds, config, chain_index);
    let mut draws = Vec::with_capacity(schedule.saved_count());
    for sweep in 1..=total {
        if sweep == schedule.burn_in + 1 {
            sampler.freeze_adaptation();
        }
        let cace = sampler.iterate().map_err(|(block, source)| CaceError::ChainAborted {
            chain: chain_index,
            iteration: sweep,
            block,
            source: Box::new(source),
        })?;
        let n_c = sampler.state.n_compliers();
        progress(ProgressEvent { chain: chain_index, iteration: sweep, total, n_compliers: n_c });
        if sweep > schedule.burn_in {
            let t = sweep - schedule.burn_in;
            if t % schedule.thin == 0 {
                draws.push(SavedDraw {
                    iteration: t,
                    params: sampler.theta,
                    cace,
                    n_compliers: n_c,
                    compliers: ComplierSet::from_labels(&sampler.state.labels),
                });
            }
        }
    }
    let mlogit_acceptance = (config.variant.stratum_form() == StratumForm::Mlogit).then(|| {
        let p = sampler.mlogit_proposal();
        [p.acceptance_rate(0).unwrap_or(0.0), p.acceptance_rate(1).unwrap_or(0.0)]
    });
    Ok(Chain { index: chain_index, seed: config.seed, variant: config.variant, schedule, draws, mlogit_acceptance })
}

pub fn run_chain(ds: &Dataset, config: &ModelConfig, chain_index: usize) -> Result<Chain> {
    run_chain_with_progress(ds, config, chain_index, &mut |_| {})
}

/// Chains of one model fit, in chain-index order, plus any chain failures.
#[derive(Debug, Clone)]
pub struct ModelRun {
    pub chains: Vec<Chain>,
    pub failures: Vec<(usize, CaceError)>,
}

impl ModelRun {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn total_draws(&self) -> usize {
        self.chains.iter().map(|c| c.draws.len()).sum()
    }

    /// Pooled CACE draws, undefined iterations dropped.
    pub fn cace_draws(&self) -> Vec<f64> {
        self.chains.iter().flat_map(|c| c.draws.iter().filter_map(|d| d.cace)).collect()
    }
}

/// Runs `config.n_chains` chains on independent streams, concurrently when a
/// thread pool is available. Output order never depends on scheduling.
pub fn run_model(ds: &Dataset, config: &ModelConfig) -> Result<ModelRun> {
    config.validate()?;
    let results: Vec<(usize, Result<Chain>)> =
        (0..config.n_chains).into_par_iter().map(|k| (k, run_chain(ds, config, k))).collect();
    let mut chains = Vec::new();
    let mut failures = Vec::new();
    for (k, r) in results {
        match r {
            Ok(c) => chains.push(c),
            Err(e) => failures.push((k, e)),
        }
    }
    Ok(ModelRun { chains, failures })
}

/// Per-patient posterior complier probability averaged over saved draws
/// (Rao-Blackwellized). Known patterns give 0; missing outcomes use the
/// stratum model alone.
pub fn posterior_complier_probabilities(ds: &Dataset, chains: &[Chain]) -> Vec<f64> {
    let draws: Vec<&SavedDraw> = chains.iter().flat_map(|c| &c.draws).collect();
    ds.records()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            if !ds.pattern(i).is_mixture() || draws.is_empty() {
                return 0.0;
            }
            draws.iter().map(|d| complier_probability(r.x, r.y_obs, r.z, &d.params)).sum::<f64>() / draws.len() as f64
        })
        .collect()
}

/// Per-patient fraction of saved draws labelled complier.
pub fn complier_label_frequencies(ds: &Dataset, chains: &[Chain]) -> Vec<f64> {
    let total: usize = chains.iter().map(|c| c.draws.len()).sum();
    (0..ds.len())
        .map(|i| {
            if total == 0 {
                return 0.0;
            }
            let hits = chains.iter().flat_map(|c| &c.draws).filter(|d| d.compliers.contains(i)).count();
            hits as f64 / total as f64
        })
        .collect()
}

/// True when every label is compatible with its observed pattern.
pub fn labels_respect_patterns(patterns: &[ObservedPattern], labels: &[Stratum]) -> bool {
    patterns.iter().zip(labels).all(|(p, s)| p.allowed_strata().contains(s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PatientRecord;
    use crate::outcome::OutcomeForm;
    use crate::strata::StratumProportions;

    fn theta_d(props: StratumProportions, intercept: [f64; 4], sigma2: f64) -> ParameterState {
        ParameterState {
            stratum: StratumParams::Proportions(props),
            outcome: OutcomeParams::new(OutcomeForm::InterceptOnly, intercept, [0.0; 4], sigma2),
        }
    }

    fn small_dataset() -> Dataset {
        Dataset::new(vec![
            PatientRecord::new("1", 0, 0, Some(44.0), 12.0),
            PatientRecord::new("2", 0, 0, None, 14.0),
            PatientRecord::new("3", 0, 1, Some(40.0), 15.0),
            PatientRecord::new("4", 1, 1, Some(47.0), 11.0),
            PatientRecord::new("5", 1, 1, Some(39.0), 13.0),
            PatientRecord::new("6", 1, 0, None, 10.0),
            PatientRecord::new("7", 1, 0, Some(41.0), 12.5),
            PatientRecord::new("8", 0, 0, Some(43.0), 13.5),
        ])
        .unwrap()
    }

    #[test]
    fn complier_probability_symmetric_case() {
        let t = theta_d(StratumProportions { complier: 0.3, never: 0.3, always: 0.4 }, [40.0; 4], 100.0);
        assert!((complier_probability(10.0, Some(45.0), 0, &t) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn complier_probability_zero_prior_mass() {
        let t = theta_d(StratumProportions { complier: 0.0, never: 0.6, always: 0.4 }, [40.0, 41.0, 30.0, 50.0], 4.0);
        for y in [-100.0, 30.0, 45.0, 1e3] {
            assert_eq!(complier_probability(1.0, Some(y), 0, &t), 0.0);
            assert_eq!(complier_probability(1.0, Some(y), 1, &t), 0.0);
        }
    }

    #[test]
    fn complier_probability_density_ratio_oracle() {
        // Ψc = 0.25, Ψn = 0.5; control complier mean 45, never-taker mean 40
        let t = theta_d(StratumProportions { complier: 0.25, never: 0.5, always: 0.25 }, [40.0, 0.0, 45.0, 0.0], 100.0);
        let phi = |u: f64| (-0.5 * u * u).exp();
        let oracle = 0.25 * phi(0.0) / (0.25 * phi(0.0) + 0.5 * phi(0.5));
        assert!((oracle - 0.36166).abs() < 1e-4);
        assert!((complier_probability(7.0, Some(45.0), 0, &t) - oracle).abs() < 1e-12);
    }

    #[test]
    fn complier_probability_extreme_outcomes_stay_finite() {
        let t = theta_d(StratumProportions { complier: 0.3, never: 0.4, always: 0.3 }, [0.0, 0.0, 1e6, 0.0], 1e-6);
        let p = complier_probability(0.0, Some(-1e8), 0, &t);
        assert!((0.0..=1.0).contains(&p));
        let marginal = complier_probability(0.0, None, 0, &t);
        assert!((marginal - 0.3 / 0.7).abs() < 1e-12);
    }

    #[test]
    fn cace_arithmetic() {
        let ds = Dataset::new(vec![
            PatientRecord::new("a", 0, 0, Some(10.0), 1.0),
            PatientRecord::new("b", 1, 1, Some(20.0), 1.0),
            PatientRecord::new("c", 1, 0, Some(5.0), 1.0),
        ])
        .unwrap();
        let mut state = StratumState {
            labels: vec![Stratum::Complier, Stratum::Complier, Stratum::NeverTaker],
            utilities: vec![None; 3],
            y_complete: vec![10.0, 20.0, 5.0],
            counterfactual: vec![Some((OutcomeGroup::Complier1, 12.0)), Some((OutcomeGroup::Complier0, 16.0)), None],
        };
        assert_eq!(compute_cace(&ds, &state), Some(3.0));
        state.counterfactual = vec![Some((OutcomeGroup::Complier1, 10.0)), Some((OutcomeGroup::Complier0, 20.0)), None];
        assert_eq!(compute_cace(&ds, &state), Some(0.0));
        state.labels = vec![Stratum::NeverTaker, Stratum::AlwaysTaker, Stratum::NeverTaker];
        assert_eq!(compute_cace(&ds, &state), None);
    }

    #[test]
    fn known_patterns_only_keep_labels() {
        let ds = Dataset::new(vec![
            PatientRecord::new("a", 0, 1, Some(10.0), 1.0),
            PatientRecord::new("b", 1, 0, Some(20.0), 2.0),
            PatientRecord::new("c", 1, 0, Some(21.0), 3.0),
        ])
        .unwrap();
        let mut cfg = ModelConfig::with_variant(ModelVariant::A);
        cfg.schedule = Schedule { burn_in: 20, kept: 50, thin: 1 };
        let mut s = GibbsSampler::new(&ds, &cfg, 0);
        for _ in 0..70 {
            s.iterate().unwrap();
            assert_eq!(s.state.labels, vec![Stratum::AlwaysTaker, Stratum::NeverTaker, Stratum::NeverTaker]);
        }
    }

    #[test]
    fn forced_treated_arm_compliers() {
        let ds = small_dataset();
        let theta = ParameterState {
            // Φ(−40) ≈ 0: almost no always-takers
            stratum: StratumParams::Probit(ProbitStratumParams::new([5.0, 0.0, -40.0, 0.0])),
            outcome: OutcomeParams::new(OutcomeForm::InterceptOnly, [40.0; 4], [0.0; 4], 25.0),
        };
        let mut state = GibbsSampler::new(&ds, &ModelConfig::default(), 0).state;
        let mut rng = RngStream::new(3, 0);
        sample_stratum_memberships(&ds, &mut state, &theta, false, &mut rng);
        for (i, p) in ds.patterns().iter().enumerate() {
            if *p == ObservedPattern::MixtureTreatedArm {
                assert_eq!(state.labels[i], Stratum::Complier);
            }
        }
    }

    #[test]
    fn label_frequencies_match_bernoulli_probability() {
        let ds = small_dataset();
        let theta =
            theta_d(StratumProportions { complier: 0.4, never: 0.35, always: 0.25 }, [40.0, 42.0, 45.0, 41.0], 30.0);
        let mut state = GibbsSampler::new(&ds, &ModelConfig::with_variant(ModelVariant::D), 0).state;
        let mut rng = RngStream::new(4, 0);
        let n = 10_000;
        let mut hits = 0;
        for _ in 0..n {
            sample_stratum_memberships(&ds, &mut state, &theta, false, &mut rng);
            if state.labels[0] == Stratum::Complier {
                hits += 1;
            }
        }
        let p = complier_probability(12.0, Some(44.0), 0, &theta);
        let f = hits as f64 / n as f64;
        assert!((f - p).abs() < 3.0 * (p * (1.0 - p) / n as f64).sqrt(), "{f} vs {p}");
    }

    #[test]
    fn sweep_is_deterministic_and_monotone() {
        let ds = small_dataset();
        for variant in ModelVariant::ALL {
            let cfg = ModelConfig::with_variant(variant);
            let mut a = GibbsSampler::new(&ds, &cfg, 1);
            let mut b = GibbsSampler::new(&ds, &cfg, 1);
            for _ in 0..200 {
                let ca = a.iterate().unwrap();
                let cb = b.iterate().unwrap();
                assert_eq!(ca, cb);
                assert_eq!(a.theta, b.theta);
                assert_eq!(a.state, b.state);
                assert!(labels_respect_patterns(ds.patterns(), &a.state.labels));
                for (i, r) in ds.records().iter().enumerate() {
                    match (a.state.labels[i], a.state.counterfactual[i]) {
                        (Stratum::Complier, Some((g, _))) => {
                            let expected = if r.z == 0 { OutcomeGroup::Complier1 } else { OutcomeGroup::Complier0 };
                            assert_eq!(g, expected);
                        }
                        (Stratum::Complier, None) => panic!("complier without counterfactual"),
                        (_, cf) => assert!(cf.is_none()),
                    }
                }
            }
        }
    }

    #[test]
    fn run_chain_schedule_and_determinism() {
        let ds = small_dataset();
        let mut cfg = ModelConfig::with_variant(ModelVariant::B);
        cfg.schedule = Schedule { burn_in: 30, kept: 100, thin: 10 };
        let c1 = run_chain(&ds, &cfg, 0).unwrap();
        let c2 = run_chain(&ds, &cfg, 0).unwrap();
        assert_eq!(c1.draws.len(), 10);
        assert_eq!(c1, c2);
        assert_eq!(c1.draws.last().unwrap().iteration, 100);

        cfg.schedule.kept = 0;
        let empty = run_chain(&ds, &cfg, 2).unwrap();
        assert!(empty.draws.is_empty());
        assert_eq!(empty.index, 2);
        assert_eq!(empty.variant, ModelVariant::B);
    }

    #[test]
    fn run_model_matches_run_chain() {
        let ds = small_dataset();
        let mut cfg = ModelConfig::with_variant(ModelVariant::AStar);
        cfg.schedule = Schedule { burn_in: 20, kept: 40, thin: 2 };
        cfg.n_chains = 1;
        let run = run_model(&ds, &cfg).unwrap();
        assert_eq!(run.chains.len(), 1);
        assert_eq!(run.chains[0], run_chain(&ds, &cfg, 0).unwrap());

        cfg.n_chains = 3;
        let par = run_model(&ds, &cfg).unwrap();
        let seq: Vec<Chain> = (0..3).map(|k| run_chain(&ds, &cfg, k).unwrap()).collect();
        assert_eq!(par.chains, seq);
        assert_eq!(par.total_draws(), 60);
    }

    #[test]
    fn progress_events_cover_every_sweep() {
        let ds = small_dataset();
        let mut cfg = ModelConfig::with_variant(ModelVariant::D);
        cfg.schedule = Schedule { burn_in: 5, kept: 10, thin: 5 };
        let mut seen = Vec::new();
        run_chain_with_progress(&ds, &cfg, 0, &mut |e| seen.push(e.iteration)).unwrap();
        assert_eq!(seen, (1..=15).collect::<Vec<_>>());
    }

    #[test]
    fn complier_set_bits() {
        let labels: Vec<Stratum> =
            (0..130).map(|i| if i % 3 == 0 { Stratum::Complier } else { Stratum::NeverTaker }).collect();
        let set = ComplierSet::from_labels(&labels);
        for i in 0..130 {
            assert_eq!(set.contains(i), i % 3 == 0);
        }
        assert!(!set.contains(500));
    }
}
