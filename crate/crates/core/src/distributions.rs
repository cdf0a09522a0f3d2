//! Random streams and the sampling primitives used by the Gibbs sampler.
//!
//! All randomness flows through [`RngStream`], a ChaCha20 generator keyed by
//! a 64-bit seed and a stream id. The generator and the `rand`/`rand_distr`
//! versions are pinned in the crate manifest so saved draws are reproducible
//! across runs.

use libm::erfc;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};
use statrs::function::erf::erfc_inv;

use crate::error::{CaceError, Result};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standardized bound beyond which a one-sided truncation has no usable mass.
pub const DEGENERATE_TRUNCATION_BOUND: f64 = 37.0;
/// Standardized bound above which the exponential-proposal sampler is used.
pub const TAIL_SWITCH_BOUND: f64 = 5.0;
/// Offset used when a degenerate truncation is pinned at its boundary.
pub const TRUNCATION_CLAMP_OFFSET: f64 = 1e-8;
/// Largest tolerated condition number of a posterior precision matrix.
pub const MAX_POSTERIOR_CONDITION: f64 = 1e12;

/// Seeded, reproducible random source. One stream per chain.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha20Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(self)
    }

    pub fn normal(&mut self, mean: f64, sd: f64) -> f64 {
        mean + sd * self.standard_normal()
    }

    /// Uniform on the open interval (0, 1).
    pub fn open_unit(&mut self) -> f64 {
        loop {
            let u: f64 = self.random();
            if u > 0.0 {
                return u;
            }
        }
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.random::<f64>() < p
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Standard normal CDF.
pub fn standard_normal_cdf(t: f64) -> f64 {
    0.5 * erfc(-t / SQRT_2)
}

/// Standard normal density.
pub fn standard_normal_pdf(t: f64) -> f64 {
    (-0.5 * t * t - LN_SQRT_2PI).exp()
}

/// `ln Φ(t)`, accurate in both tails.
pub fn log_standard_normal_cdf(t: f64) -> f64 {
    if t > 0.0 {
        (-0.5 * erfc(t / SQRT_2)).ln_1p()
    } else if t > -DEGENERATE_TRUNCATION_BOUND {
        (0.5 * erfc(-t / SQRT_2)).ln()
    } else {
        // Mills-ratio asymptotic series
        let t2 = t * t;
        let series = 1.0 - 1.0 / t2 + 3.0 / (t2 * t2) - 15.0 / (t2 * t2 * t2);
        -0.5 * t2 - (-t).ln() - LN_SQRT_2PI + series.ln()
    }
}

/// Inverse of the standard normal CDF for `p` in (0, 1).
pub fn standard_normal_quantile(p: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * p)
}

/// Side of the bound the truncated draw must fall on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TruncationSide {
    /// Strictly greater than the bound.
    Above,
    /// Less than or equal to the bound.
    Below,
}

/// Draws from N(mean, sd²) conditioned on one side of `bound`.
///
/// Inverse-CDF in the body, Robert's exponential-proposal rejection sampler
/// once the standardized bound passes [`TAIL_SWITCH_BOUND`]. Fails when the
/// standardized bound exceeds [`DEGENERATE_TRUNCATION_BOUND`] into the tail.
pub fn sample_truncated_normal(
    mean: f64,
    sd: f64,
    bound: f64,
    side: TruncationSide,
    rng: &mut RngStream,
) -> Result<f64> {
    debug_assert!(sd > 0.0);
    let alpha = (bound - mean) / sd;
    // reflect so the problem is always W ~ N(0,1) | W > a
    let (a, sign) = match side {
        TruncationSide::Above => (alpha, 1.0),
        TruncationSide::Below => (-alpha, -1.0),
    };
    if a > DEGENERATE_TRUNCATION_BOUND || a.is_nan() {
        return Err(CaceError::DegenerateTruncation { standardized_bound: alpha });
    }
    let w = if a > TAIL_SWITCH_BOUND {
        upper_tail_exponential(a, rng)
    } else {
        let upper_mass = standard_normal_cdf(-a);
        let p = rng.open_unit() * upper_mass;
        -standard_normal_quantile(p)
    };
    let x = mean + sign * sd * w;
    Ok(match side {
        TruncationSide::Above if x <= bound => bound.next_up(),
        TruncationSide::Below if x > bound => bound,
        _ => x,
    })
}

/// As [`sample_truncated_normal`], but a degenerate region pins the draw at
/// `bound ± TRUNCATION_CLAMP_OFFSET` on the requested side.
pub fn sample_truncated_normal_clamped(
    mean: f64,
    sd: f64,
    bound: f64,
    side: TruncationSide,
    rng: &mut RngStream,
) -> f64 {
    match sample_truncated_normal(mean, sd, bound, side, rng) {
        Ok(v) => v,
        Err(_) => match side {
            TruncationSide::Above => bound + TRUNCATION_CLAMP_OFFSET,
            TruncationSide::Below => bound - TRUNCATION_CLAMP_OFFSET,
        },
    }
}

fn upper_tail_exponential(a: f64, rng: &mut RngStream) -> f64 {
    let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let e: f64 = Exp1.sample(rng);
        let w = a + e / lambda;
        let log_accept = -0.5 * (w - lambda) * (w - lambda);
        if rng.open_unit().ln() <= log_accept {
            return w;
        }
    }
}

/// Independent normal prior on regression coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalLinearPrior {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl NormalLinearPrior {
    pub fn new(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        if mean.len() != variance.len() {
            return Err(CaceError::Config("prior mean and variance lengths differ".into()));
        }
        if variance.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(CaceError::Config("prior variances must be positive and finite".into()));
        }
        Ok(Self { mean, variance })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Sufficient statistics `XᵀX`, `Xᵀy` of a linear regression.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSuffStats {
    pub xtx: DMatrix<f64>,
    pub xty: DVector<f64>,
    pub n: usize,
}

impl LinearSuffStats {
    pub fn zeros(dim: usize) -> Self {
        Self { xtx: DMatrix::zeros(dim, dim), xty: DVector::zeros(dim), n: 0 }
    }

    pub fn push(&mut self, row: &[f64], y: f64) {
        let p = self.xty.len();
        debug_assert_eq!(row.len(), p);
        for i in 0..p {
            self.xty[i] += row[i] * y;
            for j in 0..p {
                self.xtx[(i, j)] += row[i] * row[j];
            }
        }
        self.n += 1;
    }

    pub fn from_rows<'a>(rows: impl IntoIterator<Item = &'a [f64]>, y: &[f64], dim: usize) -> Self {
        let mut s = Self::zeros(dim);
        for (row, &yi) in rows.into_iter().zip(y) {
            s.push(row, yi);
        }
        s
    }
}

/// One draw from the Gaussian posterior of regression coefficients with known
/// noise variance and an independent normal prior. With no rows this is a
/// prior draw.
pub fn sample_conjugate_linear(
    y: &[f64],
    design: &[Vec<f64>],
    noise_variance: f64,
    prior: &NormalLinearPrior,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    assert_eq!(design.len(), y.len(), "design rows must match observations");
    let stats = LinearSuffStats::from_rows(design.iter().map(|r| r.as_slice()), y, prior.dim());
    sample_conjugate_linear_stats(&stats, noise_variance, prior, rng)
}

/// Posterior mean and covariance for the same model; used by tests and the
/// brute-force oracle.
pub fn conjugate_linear_moments(
    stats: &LinearSuffStats,
    noise_variance: f64,
    prior: &NormalLinearPrior,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (chol, mean) = posterior_factor(stats, noise_variance, prior)?;
    Ok((mean, chol.inverse()))
}

pub fn sample_conjugate_linear_stats(
    stats: &LinearSuffStats,
    noise_variance: f64,
    prior: &NormalLinearPrior,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    let p = prior.dim();
    let (chol, mean) = posterior_factor(stats, noise_variance, prior)?;
    // precision = L Lᵀ, so mean + L⁻ᵀ ε has covariance precision⁻¹
    let eps = DVector::from_fn(p, |_, _| rng.standard_normal());
    let l = chol.l();
    let offset = l.transpose().solve_upper_triangular(&eps).expect("Cholesky factor has a positive diagonal");
    Ok((mean + offset).iter().copied().collect())
}

fn posterior_factor(
    stats: &LinearSuffStats,
    noise_variance: f64,
    prior: &NormalLinearPrior,
) -> Result<(nalgebra::Cholesky<f64, nalgebra::Dyn>, DVector<f64>)> {
    let p = prior.dim();
    let inv_noise = 1.0 / noise_variance;
    let mut precision = &stats.xtx * inv_noise;
    let mut rhs = &stats.xty * inv_noise;
    for i in 0..p {
        precision[(i, i)] += 1.0 / prior.variance[i];
        rhs[i] += prior.mean[i] / prior.variance[i];
    }
    let condition = condition_number(&precision);
    if !(condition <= MAX_POSTERIOR_CONDITION) {
        return Err(CaceError::SingularPosterior { condition });
    }
    let chol = nalgebra::Cholesky::new(precision).ok_or(CaceError::SingularPosterior { condition: f64::INFINITY })?;
    let mean = chol.solve(&rhs);
    Ok((chol, mean))
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 {
        return if m[(0, 0)] > 0.0 && m[(0, 0)].is_finite() { 1.0 } else { f64::INFINITY };
    }
    let eig = m.clone().symmetric_eigenvalues();
    let max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    if min <= 0.0 || !min.is_finite() || !max.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Gamma prior on a precision, shape-rate parameterization.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPrior {
    pub fn shape_rate(shape: f64, rate: f64) -> Self {
        Self { shape, rate }
    }

    pub fn shape_scale(shape: f64, scale: f64) -> Self {
        Self { shape, rate: 1.0 / scale }
    }
}

/// Draws a precision from Gamma(shape0 + n/2, rate0 + residual_ss/2).
pub fn sample_precision_gamma(residual_ss: f64, n: usize, shape0: f64, rate0: f64, rng: &mut RngStream) -> f64 {
    let shape = shape0 + 0.5 * n as f64;
    let rate = rate0 + 0.5 * residual_ss;
    (sample_log_gamma(shape, rng) - rate.ln()).exp()
}

/// `ln G` for G ~ Gamma(shape, 1), stable for small shapes.
fn sample_log_gamma(shape: f64, rng: &mut RngStream) -> f64 {
    if shape >= 1.0 {
        let g: f64 = Gamma::new(shape, 1.0).expect("positive shape").sample(rng);
        g.ln()
    } else {
        // G(shape) = G(shape + 1) · U^(1/shape)
        let g: f64 = Gamma::new(shape + 1.0, 1.0).expect("positive shape").sample(rng);
        g.ln() + rng.open_unit().ln() / shape
    }
}

/// Draw from Dirichlet(concentration + counts), normalized in log space so
/// every component stays strictly positive.
pub fn sample_dirichlet(counts: [u64; 3], concentration: [f64; 3], rng: &mut RngStream) -> [f64; 3] {
    let mut logs = [0.0; 3];
    for k in 0..3 {
        logs[k] = sample_log_gamma(concentration[k] + counts[k] as f64, rng);
    }
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights = logs.map(|l| (l - max).exp());
    let total: f64 = weights.iter().sum();
    weights.map(|w| w / total)
}
