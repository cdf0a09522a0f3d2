//! Data-generating processes, the Monte Carlo bias harness and an exact
//! small-instance posterior used as a test oracle.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::data::{Dataset, ObservedPattern, PatientRecord, Stratum};
use crate::diagnostics::{summarize_posterior, Scalar};
use crate::distributions::{standard_normal_cdf, RngStream};
use crate::error::{CaceError, Result};
use crate::gibbs::run_model;
use crate::model::{ModelConfig, ModelVariant, PriorConfig};
use crate::strata::{stratum_probs_probit, ProbitStratumParams};

/// Law of the covariate: normal, truncated to `[lo, hi]`, optionally rounded
/// to the nearest integer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct XLaw {
    pub mean: f64,
    pub sd: f64,
    pub lo: f64,
    pub hi: f64,
    pub rounded: bool,
}

impl Default for XLaw {
    fn default() -> Self {
        Self { mean: 12.8, sd: 2.7, lo: 0.0, hi: 25.0, rounded: true }
    }
}

impl XLaw {
    fn validate(&self) -> Result<()> {
        if !(self.sd >= 0.0 && self.lo <= self.hi && self.mean.is_finite()) {
            return Err(CaceError::Config("x_law needs sd >= 0 and lo <= hi".into()));
        }
        if self.sd > 0.0 && self.mass() < 1e-9 {
            return Err(CaceError::Config("x_law truncation interval has negligible mass".into()));
        }
        Ok(())
    }

    fn mass(&self) -> f64 {
        standard_normal_cdf((self.hi - self.mean) / self.sd) - standard_normal_cdf((self.lo - self.mean) / self.sd)
    }

    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        let x = if self.sd == 0.0 {
            self.mean.clamp(self.lo, self.hi)
        } else {
            loop {
                let v = rng.normal(self.mean, self.sd);
                if (self.lo..=self.hi).contains(&v) {
                    break v;
                }
            }
        };
        if self.rounded {
            x.round()
        } else {
            x
        }
    }

    /// Support points and probabilities: exact for the rounded law, a
    /// Simpson rule on the truncated density otherwise.
    pub fn nodes(&self) -> Vec<(f64, f64)> {
        if self.sd == 0.0 {
            let x = self.mean.clamp(self.lo, self.hi);
            return vec![(if self.rounded { x.round() } else { x }, 1.0)];
        }
        let cdf = |t: f64| standard_normal_cdf((t - self.mean) / self.sd);
        let mass = self.mass();
        if self.rounded {
            let first = self.lo.round() as i64;
            let last = self.hi.round() as i64;
            (first..=last)
                .map(|k| {
                    let a = (k as f64 - 0.5).max(self.lo);
                    let b = (k as f64 + 0.5).min(self.hi);
                    (k as f64, ((cdf(b) - cdf(a)) / mass).max(0.0))
                })
                .filter(|(_, w)| *w > 0.0)
                .collect()
        } else {
            let panels = 4000;
            let h = (self.hi - self.lo) / panels as f64;
            (0..=panels)
                .map(|i| {
                    let x = self.lo + h * i as f64;
                    let c = if i == 0 || i == panels {
                        1.0
                    } else if i % 2 == 1 {
                        4.0
                    } else {
                        2.0
                    };
                    let u = (x - self.mean) / self.sd;
                    let dens = (-0.5 * u * u).exp() / (self.sd * (2.0 * std::f64::consts::PI).sqrt()) / mass;
                    (x, c * h / 3.0 * dens)
                })
                .collect()
        }
    }
}

/// Settings of the simulated trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgpConfig {
    pub n: usize,
    /// Common probit slope of both stratum equations on centred x. Positive
    /// values make high x predict always-taking and low x never-taking.
    pub stratum_slope: f64,
    /// Probit intercepts `(never-vs-rest, complier-vs-always)` at the centre
    /// of the covariate law.
    pub stratum_base: [f64; 2],
    pub corr_xy: f64,
    pub true_cace: f64,
    pub x_law: XLaw,
    pub assignment_prob: f64,
    /// Marginal SD of the outcome.
    pub sigma_y: f64,
    pub outcome_mean: f64,
    /// Probability that an outcome is missing, independent of everything.
    pub missing_prob: f64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            n: 500,
            stratum_slope: 0.3,
            stratum_base: [0.6, -0.6],
            corr_xy: 0.0,
            true_cace: 0.0,
            x_law: XLaw::default(),
            assignment_prob: 0.5,
            sigma_y: 1.0,
            outcome_mean: 0.0,
            missing_prob: 0.0,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(CaceError::Config("dgp.n must be at least 1".into()));
        }
        if !(self.corr_xy.abs() < 1.0) {
            return Err(CaceError::Config(format!("dgp.corr_xy must lie in (-1, 1), got {}", self.corr_xy)));
        }
        if !(self.sigma_y > 0.0 && self.sigma_y.is_finite()) {
            return Err(CaceError::Config("dgp.sigma_y must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.assignment_prob) {
            return Err(CaceError::Config("dgp.assignment_prob must lie in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.missing_prob) {
            return Err(CaceError::Config("dgp.missing_prob must lie in [0, 1)".into()));
        }
        self.x_law.validate()
    }

    /// Stratum-model coefficients on the raw covariate scale.
    pub fn stratum_params(&self) -> ProbitStratumParams {
        let c = self.x_law.mean;
        let s = self.stratum_slope;
        ProbitStratumParams::new([self.stratum_base[0] - s * c, s, self.stratum_base[1] - s * c, s])
    }

    /// Outcome slope on x and residual SD that hit `corr_xy` and `sigma_y`
    /// in the population.
    pub fn calibrate(&self) -> Result<OutcomeCalibration> {
        self.validate()?;
        let beta = self.stratum_params();
        let nodes = self.x_law.nodes();
        let ex: f64 = nodes.iter().map(|(x, w)| x * w).sum();
        let var_x: f64 = nodes.iter().map(|(x, w)| (x - ex) * (x - ex) * w).sum();
        // c1 indicator: complier assigned to treatment
        let p: f64 =
            nodes.iter().map(|(x, w)| w * stratum_probs_probit(*x, &beta).complier).sum::<f64>() * self.assignment_prob;
        let q: f64 = nodes
            .iter()
            .map(|(x, w)| w * (x - ex) * stratum_probs_probit(*x, &beta).complier * self.assignment_prob)
            .sum();
        let (rho, sy, tau) = (self.corr_xy, self.sigma_y, self.true_cace);
        if var_x <= 0.0 {
            if rho != 0.0 {
                return Err(CaceError::Calibration { target: rho, reason: "covariate has zero variance".into() });
            }
        }
        let slope = if var_x > 0.0 { (rho * var_x.sqrt() * sy - tau * q) / var_x } else { 0.0 };
        let resid_var = sy * sy - slope * slope * var_x - tau * tau * p * (1.0 - p) - 2.0 * slope * tau * q;
        if !(resid_var > 0.0) {
            return Err(CaceError::Calibration {
                target: rho,
                reason: format!("residual variance would be {resid_var:.4e}; raise sigma_y"),
            });
        }
        Ok(OutcomeCalibration { x_mean: ex, slope, noise_sd: resid_var.sqrt() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OutcomeCalibration {
    pub x_mean: f64,
    pub slope: f64,
    pub noise_sd: f64,
}

/// Generating truth, kept apart from the dataset handed to the fitters.
#[derive(Debug, Clone, PartialEq)]
pub struct SealedTruth {
    strata: Vec<Stratum>,
    true_cace: f64,
    calibration: OutcomeCalibration,
}

impl SealedTruth {
    pub fn strata(&self) -> &[Stratum] {
        &self.strata
    }

    pub fn true_cace(&self) -> f64 {
        self.true_cace
    }

    pub fn calibration(&self) -> OutcomeCalibration {
        self.calibration
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub dataset: Dataset,
    pub truth: SealedTruth,
}

/// Draws one simulated trial.
pub fn generate_dataset(cfg: &DgpConfig, rng: &mut RngStream) -> Result<SimulatedData> {
    let cal = cfg.calibrate()?;
    let beta = cfg.stratum_params();
    let mut records = Vec::with_capacity(cfg.n);
    let mut strata = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let x = cfg.x_law.sample(rng);
        let probs = stratum_probs_probit(x, &beta);
        let u = rng.open_unit();
        let s = if u < probs.never {
            Stratum::NeverTaker
        } else if u < probs.never + probs.complier {
            Stratum::Complier
        } else {
            Stratum::AlwaysTaker
        };
        let z = u8::from(rng.bernoulli(cfg.assignment_prob));
        let d = match s {
            Stratum::NeverTaker => 0,
            Stratum::AlwaysTaker => 1,
            Stratum::Complier => z,
        };
        let shift = if s == Stratum::Complier && z == 1 { cfg.true_cace } else { 0.0 };
        let y = cfg.outcome_mean + cal.slope * (x - cal.x_mean) + shift + cal.noise_sd * rng.standard_normal();
        let y_obs = (!rng.bernoulli(cfg.missing_prob)).then_some(y);
        records.push(PatientRecord::new(format!("{}", i + 1), z, d, y_obs, x));
        strata.push(s);
    }
    Ok(SimulatedData {
        dataset: Dataset::new(records)?,
        truth: SealedTruth { strata, true_cace: cfg.true_cace, calibration: cal },
    })
}

/// Pattern counts and moments of the oral-surgery summary table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Table1Row {
    pub pattern: ObservedPattern,
    pub n: usize,
    pub x_mean: f64,
    pub x_sd: f64,
    pub y_mean: f64,
    pub y_sd: f64,
    pub missing: usize,
}

pub const TABLE1: [Table1Row; 4] = [
    Table1Row {
        pattern: ObservedPattern::MixtureControlArm,
        n: 53,
        x_mean: 12.8,
        x_sd: 2.7,
        y_mean: 42.8,
        y_sd: 12.1,
        missing: 25,
    },
    Table1Row {
        pattern: ObservedPattern::KnownAlwaysTaker,
        n: 9,
        x_mean: 14.0,
        x_sd: 2.0,
        y_mean: 42.8,
        y_sd: 11.9,
        missing: 5,
    },
    Table1Row {
        pattern: ObservedPattern::MixtureTreatedArm,
        n: 40,
        x_mean: 13.2,
        x_sd: 2.3,
        y_mean: 44.5,
        y_sd: 12.1,
        missing: 19,
    },
    Table1Row {
        pattern: ObservedPattern::KnownNeverTaker,
        n: 40,
        x_mean: 12.2,
        x_sd: 3.0,
        y_mean: 41.7,
        y_sd: 9.3,
        missing: 18,
    },
];

fn pattern_zd(p: ObservedPattern) -> (u8, u8) {
    match p {
        ObservedPattern::MixtureControlArm => (0, 0),
        ObservedPattern::KnownAlwaysTaker => (0, 1),
        ObservedPattern::MixtureTreatedArm => (1, 1),
        ObservedPattern::KnownNeverTaker => (1, 0),
    }
}

/// Normal draws shifted and scaled to an exact sample mean and SD.
fn exact_moments(n: usize, mean: f64, sd: f64, rng: &mut RngStream) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
    if n < 2 {
        return vec![mean; n];
    }
    let m = raw.iter().sum::<f64>() / n as f64;
    let s = (raw.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64).sqrt();
    raw.iter().map(|v| mean + sd * (v - m) / s).collect()
}

/// Synthetic dataset matching the table's pattern counts and covariate
/// moments exactly. With `with_missing`, each pattern drops the table's
/// share of outcomes (48.4% and 46.2% of the two arms); observed outcomes
/// then match the table's outcome moments.
pub fn table1_fixture(rng: &mut RngStream, with_missing: bool) -> Dataset {
    let mut records = Vec::new();
    for row in TABLE1 {
        let (z, d) = pattern_zd(row.pattern);
        let xs = exact_moments(row.n, row.x_mean, row.x_sd, rng);
        let missing = if with_missing { row.missing } else { 0 };
        let mut is_missing = vec![false; row.n];
        for i in index::sample(rng, row.n, missing) {
            is_missing[i] = true;
        }
        let ys = exact_moments(row.n - missing, row.y_mean, row.y_sd, rng);
        let mut ys = ys.into_iter();
        for (i, x) in xs.into_iter().enumerate() {
            let y = if is_missing[i] { None } else { ys.next() };
            let id = format!("{}{}-{}", z, d, i + 1);
            records.push(PatientRecord::new(id, z, d, y, x));
        }
    }
    Dataset::new(records).expect("both arms populated")
}

/// Mixing of a master seed with cell and replicate indices (splitmix64).
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    path.iter().fold(mix(master), |acc, &k| mix(acc ^ mix(k)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub corr_grid: Vec<f64>,
    pub variants: Vec<ModelVariant>,
    pub reps: usize,
    pub master_seed: u64,
    pub dgp: DgpConfig,
    pub model: ModelConfig,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            corr_grid: vec![-0.6, -0.3, 0.0, 0.3, 0.6],
            variants: vec![ModelVariant::A, ModelVariant::B],
            reps: 50,
            master_seed: 20_110_401,
            dgp: DgpConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(CaceError::Config("reps must be at least 1".into()));
        }
        if self.corr_grid.is_empty() || self.variants.is_empty() {
            return Err(CaceError::Config("corr_grid and variants must be nonempty".into()));
        }
        for &c in &self.corr_grid {
            DgpConfig { corr_xy: c, ..self.dgp }.validate()?;
        }
        self.model.validate()
    }

    pub fn data_seed(&self, corr_index: usize, rep: usize) -> u64 {
        derive_seed(self.master_seed, &[corr_index as u64, rep as u64, 0])
    }

    pub fn fit_seed(&self, corr_index: usize, rep: usize) -> u64 {
        derive_seed(self.master_seed, &[corr_index as u64, rep as u64, 1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateResult {
    pub rep: usize,
    pub data_seed: u64,
    pub fit_seed: u64,
    pub mean: f64,
    pub sd: f64,
    pub lo: f64,
    pub hi: f64,
    pub undefined: usize,
    pub error: Option<String>,
}

impl ReplicateResult {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }

    pub fn excludes_zero(&self) -> bool {
        self.ok() && (self.lo > 0.0 || self.hi < 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McCell {
    pub corr_xy: f64,
    pub variant: ModelVariant,
    pub replicates: Vec<ReplicateResult>,
}

impl McCell {
    fn successful(&self) -> impl Iterator<Item = &ReplicateResult> {
        self.replicates.iter().filter(|r| r.ok())
    }

    pub fn reps_ok(&self) -> usize {
        self.successful().count()
    }

    pub fn is_partial(&self) -> bool {
        self.reps_ok() < self.replicates.len()
    }

    fn average(&self, f: impl Fn(&ReplicateResult) -> f64) -> f64 {
        let n = self.reps_ok();
        if n == 0 {
            return f64::NAN;
        }
        self.successful().map(f).sum::<f64>() / n as f64
    }

    pub fn mean_cace(&self) -> f64 {
        self.average(|r| r.mean)
    }

    pub fn mean_lo(&self) -> f64 {
        self.average(|r| r.lo)
    }

    pub fn mean_hi(&self) -> f64 {
        self.average(|r| r.hi)
    }

    /// Share of successful replicates whose 95% interval excludes zero.
    pub fn exclusion_rate(&self) -> f64 {
        self.average(|r| f64::from(u8::from(r.excludes_zero())))
    }

    /// Monte Carlo standard error of `mean_cace`.
    pub fn mean_cace_se(&self) -> f64 {
        let n = self.reps_ok();
        if n < 2 {
            return f64::NAN;
        }
        let m = self.mean_cace();
        let v = self.successful().map(|r| (r.mean - m) * (r.mean - m)).sum::<f64>() / (n - 1) as f64;
        (v / n as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McResult {
    pub outcome_sd: f64,
    pub cells: Vec<McCell>,
}

impl McResult {
    pub fn cell(&self, corr_xy: f64, variant: ModelVariant) -> Option<&McCell> {
        self.cells.iter().find(|c| c.corr_xy == corr_xy && c.variant == variant)
    }
}

/// Fits one replicate; failures are reported in the result, not raised.
fn fit_replicate(cfg: &McConfig, corr_index: usize, rep: usize, variant: ModelVariant) -> ReplicateResult {
    let data_seed = cfg.data_seed(corr_index, rep);
    let fit_seed = cfg.fit_seed(corr_index, rep);
    let mut out = ReplicateResult {
        rep,
        data_seed,
        fit_seed,
        mean: f64::NAN,
        sd: f64::NAN,
        lo: f64::NAN,
        hi: f64::NAN,
        undefined: 0,
        error: None,
    };
    let dgp = DgpConfig { corr_xy: cfg.corr_grid[corr_index], ..cfg.dgp };
    let sim = match generate_dataset(&dgp, &mut RngStream::new(data_seed, 0)) {
        Ok(s) => s,
        Err(e) => {
            out.error = Some(e.to_string());
            return out;
        }
    };
    let model = ModelConfig { variant, seed: fit_seed, ..cfg.model.clone() };
    let result = run_model(&sim.dataset, &model).and_then(|run| {
        if let Some((_, e)) = run.failures.first() {
            return Err(e.clone());
        }
        summarize_posterior(&run.chains, Scalar::Cace)
    });
    match result {
        Ok(s) => {
            out.mean = s.mean;
            out.sd = s.sd;
            out.lo = s.q025;
            out.hi = s.q975;
            out.undefined = s.undefined.unwrap_or(0);
        }
        Err(e) => out.error = Some(e.to_string()),
    }
    out
}

/// Runs every (correlation, variant) cell. Each replicate dataset is shared
/// by all variants in its row of the grid.
pub fn run_monte_carlo(cfg: &McConfig) -> Result<McResult> {
    cfg.validate()?;
    let jobs: Vec<(usize, usize, usize)> = (0..cfg.corr_grid.len())
        .flat_map(|ci| (0..cfg.variants.len()).flat_map(move |vi| (0..cfg.reps).map(move |r| (ci, vi, r))))
        .collect();
    let results: Vec<ReplicateResult> =
        jobs.par_iter().map(|&(ci, vi, r)| fit_replicate(cfg, ci, r, cfg.variants[vi])).collect();
    let mut results = results.into_iter();
    let mut cells = Vec::new();
    for &corr_xy in &cfg.corr_grid {
        for &variant in &cfg.variants {
            let replicates = results.by_ref().take(cfg.reps).collect();
            cells.push(McCell { corr_xy, variant, replicates });
        }
    }
    Ok(McResult { outcome_sd: cfg.dgp.sigma_y, cells })
}

/// Grid over `u = ln τ` for integrating out the outcome precision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    /// Half-width of the grid around `−ln var(y)`.
    pub half_width: f64,
    pub points: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self { half_width: 30.0, points: 12_001 }
    }
}

pub const BRUTE_FORCE_LIMIT: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct BruteForcePosterior {
    /// Posterior complier probability per patient (0 for known patterns).
    pub complier_prob: Vec<f64>,
    /// Posterior mean CACE given at least one complier.
    pub cace_mean: Option<f64>,
    pub prob_no_compliers: f64,
    pub configurations: usize,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `ln ∫ Π N(y_i | α, 1/τ) N(α | m0, v0) dα` from the group size, the sum
/// of outcomes and the sum of squared deviations from `m0`.
fn group_log_marginal(ng: usize, sy: f64, ss: f64, m0: f64, v0: f64, tau: f64) -> f64 {
    if ng == 0 {
        return 0.0;
    }
    let ngf = ng as f64;
    let dev = sy - ngf * m0;
    let denom = 1.0 + ngf * v0 * tau;
    -0.5 * ngf * (2.0 * std::f64::consts::PI).ln() + 0.5 * ngf * tau.ln()
        - 0.5 * denom.ln()
        - 0.5 * tau * (ss - v0 * tau * dev * dev / denom)
}

/// Exact posterior under the covariate-free proportions model with
/// intercept-only outcomes, by enumerating every labelling of the mixture
/// patients. Proportions and group means are integrated analytically; the
/// precision by trapezoid quadrature on its log.
pub fn brute_force_posterior(ds: &Dataset, priors: &PriorConfig, quad: &QuadratureSpec) -> Result<BruteForcePosterior> {
    if ds.records().iter().any(|r| r.y_obs.is_none()) {
        return Err(CaceError::Config("exact posterior needs complete outcomes".into()));
    }
    let mixtures: Vec<usize> = (0..ds.len()).filter(|&i| ds.pattern(i).is_mixture()).collect();
    if mixtures.len() > BRUTE_FORCE_LIMIT {
        return Err(CaceError::TooLarge { mixtures: mixtures.len(), limit: BRUTE_FORCE_LIMIT });
    }
    let op = priors.outcome_priors(ds);
    let (m0, v0) = (op.intercept_mean, op.intercept_variance);
    let (a0, b0) = (op.precision.shape, op.precision.rate);
    let var_y = ds.observed_y_variance().filter(|v| *v > 0.0).unwrap_or(1.0);
    let centre = -var_y.ln();
    let us: Vec<f64> = (0..quad.points)
        .map(|j| centre - quad.half_width + 2.0 * quad.half_width * j as f64 / (quad.points - 1) as f64)
        .collect();
    let du = 2.0 * quad.half_width / (quad.points - 1) as f64;
    let log_prior: Vec<f64> = us
        .iter()
        .enumerate()
        .map(|(j, &u)| {
            let trap = if j == 0 || j + 1 == us.len() { 0.5f64.ln() } else { 0.0 };
            a0 * b0.ln() - ln_gamma(a0) + a0 * u - b0 * u.exp() + trap + du.ln()
        })
        .collect();

    let n = ds.len();
    let mut labels: Vec<Stratum> = ds.patterns().iter().map(|p| p.noncomplier_stratum()).collect();
    let configs = 1usize << mixtures.len();
    let mut log_post = Vec::with_capacity(configs);
    let mut cace_given = Vec::with_capacity(configs);
    let mut has_compliers = Vec::with_capacity(configs);
    for mask in 0..configs {
        for (bit, &i) in mixtures.iter().enumerate() {
            labels[i] = if mask >> bit & 1 == 1 { Stratum::Complier } else { ds.pattern(i).noncomplier_stratum() };
        }
        // (n, Σy, Σ(y − m0)²) per outcome group
        let mut stats = [(0usize, 0.0f64, 0.0f64); 4];
        let mut counts = [0usize; 3];
        for (i, r) in ds.records().iter().enumerate() {
            let g = crate::outcome::outcome_group(labels[i], r.z).index();
            let y = r.y_obs.expect("complete outcomes");
            stats[g].0 += 1;
            stats[g].1 += y;
            stats[g].2 += (y - m0) * (y - m0);
            counts[match labels[i] {
                Stratum::Complier => 0,
                Stratum::NeverTaker => 1,
                Stratum::AlwaysTaker => 2,
            }] += 1;
        }
        let log_dm =
            ln_gamma(3.0) + counts.iter().map(|&c| ln_gamma(1.0 + c as f64)).sum::<f64>() - ln_gamma(3.0 + n as f64);
        // log p(y, u | labels) on the grid
        let terms: Vec<f64> = us
            .iter()
            .zip(&log_prior)
            .map(|(&u, &lp)| {
                let tau = u.exp();
                let ll: f64 = stats.iter().map(|&(ng, sy, ss)| group_log_marginal(ng, sy, ss, m0, v0, tau)).sum();
                lp + ll
            })
            .collect();
        let log_marg = log_sum_exp(&terms);
        log_post.push(log_dm + log_marg);

        let n_c = counts[0];
        has_compliers.push(n_c > 0);
        if n_c == 0 {
            cace_given.push(0.0);
            continue;
        }
        // E[CACE | labels, y], averaging the conditional posterior means of
        // the complier intercepts over p(τ | labels, y)
        let mut acc = 0.0;
        for (&u, &t) in us.iter().zip(&terms) {
            let w = (t - log_marg).exp();
            if w == 0.0 {
                continue;
            }
            let tau = u.exp();
            let mean_of = |g: usize| {
                let (ng, sy, _) = stats[g];
                (m0 / v0 + tau * sy) / (1.0 / v0 + tau * ng as f64)
            };
            let (mu0, mu1) = (mean_of(2), mean_of(3));
            let mut diff = 0.0;
            for (i, r) in ds.records().iter().enumerate() {
                if labels[i] == Stratum::Complier {
                    let y = r.y_obs.expect("complete outcomes");
                    diff += if r.z == 1 { y - mu0 } else { mu1 - y };
                }
            }
            acc += w * diff / n_c as f64;
        }
        cace_given.push(acc);
    }
    let norm = log_sum_exp(&log_post);
    let probs: Vec<f64> = log_post.iter().map(|l| (l - norm).exp()).collect();
    let mut complier_prob = vec![0.0; n];
    for (mask, p) in probs.iter().enumerate() {
        for (bit, &i) in mixtures.iter().enumerate() {
            if mask >> bit & 1 == 1 {
                complier_prob[i] += p;
            }
        }
    }
    let p_some: f64 = probs.iter().zip(&has_compliers).filter(|(_, h)| **h).map(|(p, _)| p).sum();
    let cace_mean = (p_some > 0.0).then(|| {
        probs.iter().zip(&cace_given).zip(&has_compliers).filter(|(_, h)| **h).map(|((p, c), _)| p * c).sum::<f64>()
            / p_some
    });
    Ok(BruteForcePosterior { complier_prob, cace_mean, prob_no_compliers: 1.0 - p_some, configurations: configs })
}
