//! Convergence checks and posterior-predictive complier diagnostics.

use serde::Serialize;

use crate::data::{Dataset, ObservedPattern};
use crate::error::{CaceError, Result};
use crate::gibbs::{complier_probability, Chain};

pub const DEFAULT_PSRF_THRESHOLD: f64 = 1.06;
pub const DEFAULT_GRID_SIZE: usize = 101;
const MIN_PSRF_DRAWS: usize = 10;

/// Potential scale-reduction factor of equal-length chains, without the
/// degrees-of-freedom correction.
pub fn compute_psrf(chains: &[Vec<f64>]) -> Result<f64> {
    let m = chains.len();
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if m < 2 || n < MIN_PSRF_DRAWS || chains.iter().any(|c| c.len() != n) {
        return Err(CaceError::InsufficientDraws { chains: m, min_len: n });
    }
    let nf = n as f64;
    let means: Vec<f64> = chains.iter().map(|c| c.iter().sum::<f64>() / nf).collect();
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (nf - 1.0))
        .sum::<f64>()
        / m as f64;
    let grand = means.iter().sum::<f64>() / m as f64;
    let b = nf * means.iter().map(|mu| (mu - grand) * (mu - grand)).sum::<f64>() / (m as f64 - 1.0);
    if w == 0.0 {
        return Ok(if b > 0.0 { f64::INFINITY } else { 1.0 });
    }
    Ok((((nf - 1.0) / nf * w + b / nf) / w).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsrfEntry {
    pub parameter: String,
    pub psrf: f64,
    pub exceeds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsrfReport {
    pub threshold: f64,
    pub entries: Vec<PsrfEntry>,
}

impl PsrfReport {
    pub fn converged(&self) -> bool {
        self.entries.iter().all(|e| !e.exceeds)
    }
}

/// PSRF of every scalar parameter and of the CACE. The CACE trace drops
/// undefined iterations and is truncated to the shortest chain; it is
/// omitted when that leaves fewer than ten draws.
pub fn psrf_report(chains: &[Chain], threshold: f64) -> Result<PsrfReport> {
    let first = chains.first().ok_or(CaceError::InsufficientDraws { chains: 0, min_len: 0 })?;
    let names = first.variant.scalar_names();
    let mut entries = Vec::with_capacity(names.len() + 1);
    for (k, name) in names.iter().enumerate() {
        let traces: Vec<Vec<f64>> = chains.iter().map(|c| c.scalar_trace(k)).collect();
        let psrf = compute_psrf(&traces)?;
        entries.push(PsrfEntry { parameter: (*name).to_string(), psrf, exceeds: !(psrf <= threshold) });
    }
    let mut cace: Vec<Vec<f64>> = chains.iter().map(|c| c.draws.iter().filter_map(|d| d.cace).collect()).collect();
    let len = cace.iter().map(Vec::len).min().unwrap_or(0);
    cace.iter_mut().for_each(|c| c.truncate(len));
    if let Ok(psrf) = compute_psrf(&cace) {
        entries.push(PsrfEntry { parameter: "cace".into(), psrf, exceeds: !(psrf <= threshold) });
    }
    Ok(PsrfReport { threshold, entries })
}

/// Empirical quantile by linear interpolation between order statistics
/// (`h = (n − 1)·p`). `sorted` must be ascending and nonempty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPoint {
    pub x: f64,
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplierProbGrid {
    pub z: u8,
    pub y_eval: f64,
    pub points: Vec<GridPoint>,
}

/// Equally spaced points over `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Pointwise posterior mean and 95% band of the complier probability.
pub fn complier_prob_grid(chains: &[Chain], z: u8, y_eval: f64, x_grid: &[f64]) -> Result<ComplierProbGrid> {
    let thetas: Vec<_> = chains.iter().flat_map(|c| c.draws.iter().map(|d| d.params)).collect();
    if thetas.is_empty() {
        return Err(CaceError::NoDraws);
    }
    let points = x_grid
        .iter()
        .map(|&x| {
            let mut vals: Vec<f64> = thetas.iter().map(|t| complier_probability(x, Some(y_eval), z, t)).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            vals.sort_by(f64::total_cmp);
            GridPoint { x, mean, lo: quantile_sorted(&vals, 0.025), hi: quantile_sorted(&vals, 0.975) }
        })
        .collect();
    Ok(ComplierProbGrid { z, y_eval, points })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub shading: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShadedHistogram {
    pub z: u8,
    pub y_eval: f64,
    pub bins: Vec<HistogramBin>,
}

impl ShadedHistogram {
    pub fn midpoints(&self) -> Vec<f64> {
        self.bins.iter().map(|b| 0.5 * (b.lo + b.hi)).collect()
    }
}

/// Sturges' rule: `⌈log2 n⌉ + 1` bins.
pub fn sturges_bins(n: usize) -> usize {
    if n <= 1 {
        return 1;
    }
    (n as f64).log2().ceil() as usize + 1
}

fn pattern_for_arm(z: u8) -> ObservedPattern {
    if z == 0 {
        ObservedPattern::MixtureControlArm
    } else {
        ObservedPattern::MixtureTreatedArm
    }
}

/// Observed mean outcome in pattern `(z, z)`.
pub fn pattern_mean_outcome(ds: &Dataset, z: u8) -> Option<f64> {
    let pattern = pattern_for_arm(z);
    let ys: Vec<f64> =
        ds.records().iter().zip(ds.patterns()).filter(|(_, p)| **p == pattern).filter_map(|(r, _)| r.y_obs).collect();
    (!ys.is_empty()).then(|| ys.iter().sum::<f64>() / ys.len() as f64)
}

/// Histogram of x in pattern `(z, z)` shaded by the grid mean complier
/// probability at each bin midpoint. `n_bins` defaults to Sturges' rule and
/// `y_eval` to the pattern's observed mean outcome.
pub fn shaded_histogram(
    chains: &[Chain],
    ds: &Dataset,
    z: u8,
    n_bins: Option<usize>,
    y_eval: Option<f64>,
) -> Result<ShadedHistogram> {
    let pattern = pattern_for_arm(z);
    let xs: Vec<f64> =
        ds.records().iter().zip(ds.patterns()).filter(|(_, p)| **p == pattern).map(|(r, _)| r.x).collect();
    if xs.is_empty() {
        return Err(CaceError::EmptyPattern { arm: z });
    }
    let y_eval = match y_eval.or_else(|| pattern_mean_outcome(ds, z)) {
        Some(y) => y,
        // no observed outcome in the pattern: fall back to the overall mean
        None => ds.observed_y_mean().ok_or(CaceError::EmptyPattern { arm: z })?,
    };
    let k = n_bins.unwrap_or_else(|| sturges_bins(xs.len())).max(1);
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / k as f64;
    let edges: Vec<f64> = (0..=k).map(|i| if i == k { hi } else { lo + width * i as f64 }).collect();
    let mut counts = vec![0usize; k];
    for &x in &xs {
        let idx = if width > 0.0 { (((x - lo) / width) as usize).min(k - 1) } else { 0 };
        counts[idx] += 1;
    }
    let mids: Vec<f64> = edges.windows(2).map(|e| 0.5 * (e[0] + e[1])).collect();
    let grid = complier_prob_grid(chains, z, y_eval, &mids)?;
    let bins = (0..k)
        .map(|i| HistogramBin { lo: edges[i], hi: edges[i + 1], count: counts[i], shading: grid.points[i].mean })
        .collect();
    Ok(ShadedHistogram { z, y_eval, bins })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosteriorSummary {
    pub parameter: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
    pub n_draws: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub undefined: Option<usize>,
}

/// Mean, SD (n − 1 denominator) and 2.5%/97.5% quantiles of pooled draws.
pub fn summarize_values(parameter: &str, values: &[f64]) -> Result<PosteriorSummary> {
    if values.is_empty() {
        return Err(CaceError::NoDraws);
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd =
        if n > 1 { (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(PosteriorSummary {
        parameter: parameter.to_string(),
        mean,
        sd,
        q025: quantile_sorted(&sorted, 0.025),
        q975: quantile_sorted(&sorted, 0.975),
        n_draws: n,
        undefined: None,
    })
}

/// Which scalar to summarize.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scalar {
    Parameter(usize),
    Cace,
}

pub fn summarize_posterior(chains: &[Chain], which: Scalar) -> Result<PosteriorSummary> {
    let first = chains.first().ok_or(CaceError::NoDraws)?;
    match which {
        Scalar::Parameter(k) => {
            let names = first.variant.scalar_names();
            let name = names.get(k).ok_or_else(|| CaceError::Config(format!("no scalar parameter {k}")))?;
            let values: Vec<f64> = chains.iter().flat_map(|c| c.scalar_trace(k)).collect();
            summarize_values(name, &values)
        }
        Scalar::Cace => {
            let values: Vec<f64> = chains.iter().flat_map(|c| c.draws.iter().filter_map(|d| d.cace)).collect();
            let undefined: usize = chains.iter().map(Chain::undefined_cace_count).sum();
            if values.is_empty() {
                return Err(if undefined > 0 { CaceError::AllUndefined } else { CaceError::NoDraws });
            }
            let mut s = summarize_values("cace", &values)?;
            s.undefined = Some(undefined);
            Ok(s)
        }
    }
}

/// Summaries of every scalar parameter followed by the CACE.
pub fn summarize_all(chains: &[Chain]) -> Result<Vec<PosteriorSummary>> {
    let first = chains.first().ok_or(CaceError::NoDraws)?;
    let mut out: Vec<PosteriorSummary> = (0..first.variant.scalar_names().len())
        .map(|k| summarize_posterior(chains, Scalar::Parameter(k)))
        .collect::<Result<_>>()?;
    out.push(summarize_posterior(chains, Scalar::Cace)?);
    Ok(out)
}

/// Table-style row: mean, SD, 2.5%, 97.5%.
pub fn format_summary_row(s: &PosteriorSummary, decimals: usize) -> String {
    format!("{} | {:.d$} | {:.d$} | {:.d$} | {:.d$}", s.parameter, s.mean, s.sd, s.q025, s.q975, d = decimals)
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut r = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties. `None` when either
/// side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PatientRecord;
    use crate::distributions::RngStream;
    use crate::gibbs::{ComplierSet, SavedDraw};
    use crate::model::{ModelVariant, ParameterState, Schedule, StratumParams};
    use crate::outcome::{OutcomeForm, OutcomeParams};
    use crate::strata::{ProbitStratumParams, StratumProportions};

    fn chain_of(thetas: Vec<ParameterState>, variant: ModelVariant, cace: Vec<Option<f64>>) -> Chain {
        let draws = thetas
            .into_iter()
            .zip(cace)
            .enumerate()
            .map(|(i, (params, cace))| SavedDraw {
                iteration: i + 1,
                params,
                cace,
                n_compliers: usize::from(cace.is_some()),
                compliers: ComplierSet::from_labels(&[]),
            })
            .collect();
        Chain { index: 0, seed: 0, variant, schedule: Schedule::default(), draws, mlogit_acceptance: None }
    }

    fn d_theta(c: f64, n: f64) -> ParameterState {
        ParameterState {
            stratum: StratumParams::Proportions(StratumProportions { complier: c, never: n, always: 1.0 - c - n }),
            outcome: OutcomeParams::new(OutcomeForm::InterceptOnly, [40.0, 42.0, 44.0, 46.0], [0.0; 4], 25.0),
        }
    }

    #[test]
    fn psrf_identical_chains() {
        let c: Vec<f64> = (0..50).map(|i| (i as f64 * 0.7).sin()).collect();
        let r = compute_psrf(&[c.clone(), c]).unwrap();
        assert!((r - (49.0f64 / 50.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn psrf_degenerate_cases() {
        assert_eq!(compute_psrf(&[vec![0.0; 20], vec![10.0; 20]]).unwrap(), f64::INFINITY);
        assert_eq!(compute_psrf(&[vec![3.0; 20], vec![3.0; 20]]).unwrap(), 1.0);
        assert!(matches!(compute_psrf(&[vec![1.0; 20]]), Err(CaceError::InsufficientDraws { .. })));
        assert!(matches!(compute_psrf(&[vec![1.0; 9], vec![1.0; 9]]), Err(CaceError::InsufficientDraws { .. })));
        assert!(compute_psrf(&[vec![1.0; 12], vec![1.0; 11]]).is_err());
    }

    #[test]
    fn psrf_hand_computed() {
        // chain means 0 and 1, within variances 1 and 1 (n = 10)
        let a: Vec<f64> = (0..10).map(|i| if i % 2 == 0 { -1.0 } else { 1.0 }).collect();
        let b: Vec<f64> = a.iter().map(|v| v + 1.0).collect();
        let w: f64 = 10.0 / 9.0;
        let bb = 10.0 * 0.5;
        let oracle = ((0.9 * w + bb / 10.0) / w).sqrt();
        assert!((compute_psrf(&[a, b]).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn psrf_affine_invariant() {
        let mut rng = RngStream::new(11, 0);
        let chains: Vec<Vec<f64>> =
            (0..3).map(|k| (0..40).map(|_| rng.normal(k as f64 * 0.3, 1.0)).collect()).collect();
        let base = compute_psrf(&chains).unwrap();
        let moved: Vec<Vec<f64>> = chains.iter().map(|c| c.iter().map(|v| -3.5 * v + 100.0).collect()).collect();
        assert!((compute_psrf(&moved).unwrap() - base).abs() < 1e-10);
    }

    #[test]
    fn quantiles_of_one_to_thousand() {
        let v: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert!((quantile_sorted(&v, 0.025) - 25.975).abs() < 1e-9);
        assert!((quantile_sorted(&v, 0.975) - 975.025).abs() < 1e-9);
        assert_eq!(quantile_sorted(&[4.0], 0.3), 4.0);
    }

    #[test]
    fn summary_of_constant_draws() {
        let s = summarize_values("v", &[2.5; 30]).unwrap();
        assert_eq!((s.mean, s.sd, s.q025, s.q975), (2.5, 0.0, 2.5, 2.5));
        assert!(matches!(summarize_values("v", &[]), Err(CaceError::NoDraws)));
    }

    #[test]
    fn summary_row_shape() {
        let s = PosteriorSummary {
            parameter: "cace".into(),
            mean: 2.65,
            sd: 7.3,
            q025: -8.9,
            q975: 20.9,
            n_draws: 1500,
            undefined: Some(0),
        };
        assert_eq!(format_summary_row(&s, 2), "cace | 2.65 | 7.30 | -8.90 | 20.90");
    }

    #[test]
    fn cace_summary_handles_undefined() {
        let t = d_theta(0.3, 0.4);
        let c = chain_of(vec![t; 4], ModelVariant::D, vec![Some(1.0), None, Some(3.0), None]);
        let s = summarize_posterior(std::slice::from_ref(&c), Scalar::Cace).unwrap();
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.undefined, Some(2));
        let none = chain_of(vec![t; 3], ModelVariant::D, vec![None; 3]);
        assert_eq!(summarize_posterior(&[none], Scalar::Cace), Err(CaceError::AllUndefined));
    }

    #[test]
    fn summaries_invariant_to_chain_order() {
        let a = chain_of(vec![d_theta(0.2, 0.3), d_theta(0.4, 0.3)], ModelVariant::D, vec![Some(1.0), Some(2.0)]);
        let b = chain_of(vec![d_theta(0.5, 0.1), d_theta(0.1, 0.6)], ModelVariant::D, vec![Some(-4.0), Some(7.0)]);
        let ab = summarize_all(&[a.clone(), b.clone()]).unwrap();
        let ba = summarize_all(&[b, a]).unwrap();
        for (x, y) in ab.iter().zip(&ba) {
            assert!((x.mean - y.mean).abs() < 1e-12);
            assert!((x.sd - y.sd).abs() < 1e-12);
            assert_eq!((x.q025, x.q975), (y.q025, y.q975));
        }
    }

    #[test]
    fn grid_definition_and_degenerate_bands() {
        let thetas = vec![d_theta(0.2, 0.3), d_theta(0.4, 0.3), d_theta(0.3, 0.5)];
        let c = chain_of(thetas.clone(), ModelVariant::D, vec![Some(0.0); 3]);
        let g = complier_prob_grid(std::slice::from_ref(&c), 0, 43.0, &[5.0]).unwrap();
        let direct = thetas.iter().map(|t| complier_probability(5.0, Some(43.0), 0, t)).sum::<f64>() / 3.0;
        assert!((g.points[0].mean - direct).abs() < 1e-12);

        let same = chain_of(vec![thetas[0]; 5], ModelVariant::D, vec![Some(0.0); 5]);
        let g = complier_prob_grid(&[same], 1, 40.0, &linspace(0.0, 25.0, 11)).unwrap();
        for p in &g.points {
            assert!((p.lo - p.mean).abs() < 1e-15 && (p.hi - p.mean).abs() < 1e-15);
        }
    }

    #[test]
    fn grid_without_always_takers_is_one() {
        let theta = ParameterState {
            stratum: StratumParams::Probit(ProbitStratumParams::new([5.0, 0.0, -40.0, 0.0])),
            outcome: OutcomeParams::new(OutcomeForm::Separate, [40.0; 4], [0.1; 4], 25.0),
        };
        let c = chain_of(vec![theta; 3], ModelVariant::A, vec![Some(0.0); 3]);
        let g = complier_prob_grid(&[c], 1, 45.0, &linspace(0.0, 25.0, 101)).unwrap();
        assert_eq!(g.points.len(), 101);
        assert!(g.points.iter().all(|p| p.mean > 1.0 - 1e-9));
    }

    fn hist_dataset() -> Dataset {
        let mut rows = Vec::new();
        for i in 0..17 {
            rows.push(PatientRecord::new(format!("c{i}"), 0, 0, Some(40.0 + i as f64), 5.0 + i as f64));
            rows.push(PatientRecord::new(format!("t{i}"), 1, 1, Some(42.0), 8.0 + 0.5 * i as f64));
        }
        rows.push(PatientRecord::new("n", 1, 0, Some(41.0), 3.0));
        Dataset::new(rows).unwrap()
    }

    #[test]
    fn histogram_partition_and_shading() {
        let ds = hist_dataset();
        let c = chain_of(vec![d_theta(0.2, 0.3), d_theta(0.4, 0.3)], ModelVariant::D, vec![Some(0.0); 2]);
        let h = shaded_histogram(std::slice::from_ref(&c), &ds, 0, None, None).unwrap();
        assert_eq!(h.bins.len(), sturges_bins(17));
        assert_eq!(h.bins.iter().map(|b| b.count).sum::<usize>(), 17);
        assert_eq!(h.y_eval, 48.0);
        let g = complier_prob_grid(std::slice::from_ref(&c), 0, 48.0, &h.midpoints()).unwrap();
        for (b, p) in h.bins.iter().zip(&g.points) {
            assert_eq!(b.shading, p.mean);
            assert!((0.0..=1.0).contains(&b.shading));
        }

        let one = shaded_histogram(std::slice::from_ref(&c), &ds, 1, Some(1), None).unwrap();
        let mid = 0.5 * (8.0 + 16.0);
        let g = complier_prob_grid(&[c], 1, 42.0, &[mid]).unwrap();
        assert_eq!(one.bins[0].shading, g.points[0].mean);
        assert_eq!(one.bins[0].count, 17);
    }

    #[test]
    fn histogram_empty_pattern() {
        let ds = Dataset::new(vec![
            PatientRecord::new("a", 0, 0, Some(1.0), 1.0),
            PatientRecord::new("b", 1, 0, Some(1.0), 1.0),
        ])
        .unwrap();
        let c = chain_of(vec![d_theta(0.3, 0.3)], ModelVariant::D, vec![Some(0.0)]);
        assert_eq!(shaded_histogram(&[c], &ds, 1, None, None), Err(CaceError::EmptyPattern { arm: 1 }));
    }

    #[test]
    fn spearman_values() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0, 4.0], &[10.0, 20.0, 30.0, 45.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0]), None);
        // ties: ranks (1.5, 1.5, 3) vs (1, 2, 3)
        let r = spearman(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((r - 1.5 / 3.0f64.sqrt()).abs() < 1e-12);
    }
}
