//! Acceptance criteria. Each criterion prints one `criterion N ... PASS|FAIL`
//! line with the measured quantities. Runs without the libtest harness so
//! the lines show up in plain `cargo test` output; pass substrings of
//! criterion names as arguments to run a subset.
//!
//! The bias study fits 500 models. By default each fit uses one chain with
//! 2000 burn-in and 4000 kept sweeps thinned by 4; set
//! `CACE_MC_SCHEDULE=full` for three chains on the default 5000/5000/10
//! schedule (about an hour on one core).

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use cace_core::data::{summarize_dataset, Dataset, PatientRecord};
use cace_core::diagnostics::{compute_psrf, psrf_report, shaded_histogram, spearman, summarize_all};
use cace_core::distributions::{
    sample_conjugate_linear, sample_dirichlet, sample_precision_gamma, sample_truncated_normal, standard_normal_cdf,
    standard_normal_pdf, NormalLinearPrior, RngStream, TruncationSide,
};
use cace_core::gibbs::{complier_label_frequencies, posterior_complier_probabilities, run_model};
use cace_core::io::write_draws_csv;
use cace_core::model::{ModelConfig, ModelVariant, PriorConfig, Schedule};
use cace_core::simulation::{
    brute_force_posterior, generate_dataset, run_monte_carlo, table1_fixture, DgpConfig, McConfig, QuadratureSpec,
    TABLE1,
};

fn report(n: u32, name: &str, pass: bool, detail: &str) {
    println!("criterion {n} [{name}]: {} | {detail}", if pass { "PASS" } else { "FAIL" });
}

fn mc_model() -> ModelConfig {
    let mut m = ModelConfig::default();
    if std::env::var("CACE_MC_SCHEDULE").as_deref() != Ok("full") {
        m.n_chains = 1;
        m.schedule = Schedule { burn_in: 2000, kept: 4000, thin: 4 };
    }
    m
}

fn criterion_1_bias_grows_with_outcome_correlation_under_unadjusted_model() {
    let start = Instant::now();
    let cfg = McConfig { model: mc_model(), ..McConfig::default() };
    assert_eq!(cfg.reps, 50);
    assert_eq!(cfg.dgp.n, 500);
    let res = run_monte_carlo(&cfg).unwrap();
    let sd = res.outcome_sd;
    for c in &res.cells {
        println!(
            "  corr {:+.1} model {:<2} mean {:+.4} (se {:.4}) interval [{:+.3}, {:+.3}] excludes 0 in {:.0}% of {} fits",
            c.corr_xy,
            c.variant.as_str(),
            c.mean_cace(),
            c.mean_cace_se(),
            c.mean_lo(),
            c.mean_hi(),
            100.0 * c.exclusion_rate(),
            c.reps_ok()
        );
    }
    let b = |r: f64| res.cell(r, ModelVariant::B).unwrap();
    let a = |r: f64| res.cell(r, ModelVariant::A).unwrap();

    // (a) along each side of the grid, |bias| must not shrink as |corr| grows
    let mut violations = Vec::new();
    for side in [[0.0, 0.3, 0.6], [0.0, -0.3, -0.6]] {
        for w in side.windows(2) {
            let drop = b(w[0]).mean_cace().abs() - b(w[1]).mean_cace().abs();
            if drop > 0.0 {
                violations.push(drop / sd);
            }
        }
    }
    let pass_a = violations.len() <= 1 && violations.iter().all(|v| *v <= 0.1);
    // (b) interval exclusion of zero at |corr| = 0.6
    let rates: Vec<(f64, f64)> = [-0.6, 0.6].iter().map(|&r| (b(r).exclusion_rate(), a(r).exclusion_rate())).collect();
    let pass_b = rates.iter().all(|(rb, ra)| *rb >= 0.4 && *ra <= 0.1);
    // (c) adjusted model stays near zero
    let worst_a = cfg.corr_grid.iter().map(|&r| a(r).mean_cace().abs() / sd).fold(0.0, f64::max);
    let pass_c = worst_a <= 0.15 && cfg.corr_grid.iter().all(|&r| a(r).reps_ok() > 0);
    let failed: usize = res.cells.iter().map(|c| c.replicates.len() - c.reps_ok()).sum();

    report(
        1,
        "bias reproduction",
        pass_a && pass_b && pass_c,
        &format!(
            "(a) monotone, violations {violations:?}: {}; (b) exclusion B/A at -0.6 {:.2}/{:.2}, at +0.6 {:.2}/{:.2}: {}; \
             (c) max |A bias| {worst_a:.3} SD: {}; failed fits {failed}; {:.0}s",
            pass_a,
            rates[0].0,
            rates[0].1,
            rates[1].0,
            rates[1].1,
            pass_b,
            pass_c,
            start.elapsed().as_secs_f64()
        ),
    );
    assert!(pass_a && pass_b && pass_c);
}

fn criterion_2_shading_runs_in_opposite_directions() {
    let sim =
        generate_dataset(&DgpConfig { corr_xy: 0.3, ..DgpConfig::default() }, &mut RngStream::new(2011, 0)).unwrap();
    let run = run_model(&sim.dataset, &ModelConfig::with_variant(ModelVariant::A)).unwrap();
    assert!(run.is_complete());
    let mut rho = [0.0; 2];
    for z in 0..2u8 {
        let h = shaded_histogram(&run.chains, &sim.dataset, z, None, None).unwrap();
        let shading: Vec<f64> = h.bins.iter().map(|b| b.shading).collect();
        rho[z as usize] = spearman(&h.midpoints(), &shading).unwrap_or(0.0);
        println!(
            "  z={z}: {} bins, shading {:?}",
            h.bins.len(),
            shading.iter().map(|s| (s * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        );
    }
    let pass = rho[0] >= 0.5 && rho[1] <= -0.5;
    report(2, "shading direction", pass, &format!("spearman z=0 {:+.3}, z=1 {:+.3}", rho[0], rho[1]));
    assert!(pass);
}

fn tiny_fixtures() -> Vec<Dataset> {
    let make = |rows: [(u8, u8, f64); 6]| {
        Dataset::new(
            rows.iter()
                .enumerate()
                .map(|(i, &(z, d, y))| PatientRecord::new(format!("{}", i + 1), z, d, Some(y), 10.0 + i as f64))
                .collect(),
        )
        .unwrap()
    };
    vec![
        make([(0, 0, 44.0), (0, 0, 31.0), (0, 1, 40.0), (1, 1, 52.0), (1, 1, 47.0), (1, 0, 38.0)]),
        make([(0, 0, 2.5), (0, 0, 2.0), (0, 0, -1.0), (1, 1, 1.5), (1, 0, -0.5), (1, 0, 0.0)]),
        make([(0, 0, 10.0), (0, 1, 12.0), (1, 1, 9.0), (1, 1, 15.0), (1, 1, 11.0), (1, 0, 8.0)]),
    ]
}

fn criterion_3_gibbs_matches_exact_posterior_on_tiny_fixtures() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for (k, ds) in tiny_fixtures().iter().enumerate() {
        let exact = brute_force_posterior(ds, &PriorConfig::default(), &QuadratureSpec::default()).unwrap();
        let run = run_model(ds, &ModelConfig::with_variant(ModelVariant::D)).unwrap();
        assert_eq!(run.total_draws(), 1500);
        let rb = posterior_complier_probabilities(ds, &run.chains);
        let freq = complier_label_frequencies(ds, &run.chains);
        for i in 0..ds.len() {
            let tv = (rb[i] - exact.complier_prob[i]).abs();
            worst = worst.max(tv);
            println!(
                "  fixture {k} patient {}: exact {:.4} sampled {:.4} (label frequency {:.4}) tv {:.4}",
                i + 1,
                exact.complier_prob[i],
                rb[i],
                freq[i],
                tv
            );
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst < 0.02 && secs <= 300.0;
    report(3, "exact-posterior agreement", pass, &format!("max per-patient tv {worst:.4}; {secs:.1}s"));
    assert!(pass);
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn criterion_4_distribution_primitives() {
    let start = Instant::now();
    let mut checks: Vec<(&str, bool)> = Vec::new();
    let mut rng = RngStream::new(404, 0);

    // truncated normal: half-normal mean and inverse Mills ratio
    let half: Vec<f64> = (0..100_000)
        .map(|_| sample_truncated_normal(0.0, 1.0, 0.0, TruncationSide::Above, &mut rng).unwrap())
        .collect();
    let (m, se) = mean_se(&half);
    checks.push((
        "half-normal mean",
        half.iter().all(|x| *x > 0.0) && (m - (2.0 / std::f64::consts::PI).sqrt()).abs() < 3.0 * se,
    ));
    let tail: Vec<f64> = (0..100_000)
        .map(|_| sample_truncated_normal(0.0, 1.0, 2.0, TruncationSide::Above, &mut rng).unwrap())
        .collect();
    let mills = standard_normal_pdf(2.0) / (1.0 - standard_normal_cdf(2.0));
    let (m, se) = mean_se(&tail);
    checks.push(("inverse Mills mean", (mills - 2.3732).abs() < 1e-4 && (m - mills).abs() < 3.0 * se));

    // conjugate linear: empty likelihood gives the prior; flat prior gives ȳ
    let prior = NormalLinearPrior::new(vec![0.0, 0.0], vec![100.0, 100.0]).unwrap();
    let draws: Vec<Vec<f64>> =
        (0..10_000).map(|_| sample_conjugate_linear(&[], &[], 1.0, &prior, &mut rng).unwrap()).collect();
    let ok = (0..2).all(|j| {
        let v: Vec<f64> = draws.iter().map(|d| d[j]).collect();
        let (m, se) = mean_se(&v);
        let var = v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
        m.abs() < 3.0 * se && (var - 100.0).abs() < 4.0 * 100.0 * (2.0 / v.len() as f64).sqrt()
    });
    checks.push(("conjugate prior draw", ok));
    let y: Vec<f64> = (0..100).map(|i| 3.0 + if i % 2 == 0 { 0.5 } else { -0.5 }).collect();
    let design: Vec<Vec<f64>> = vec![vec![1.0]; 100];
    let flat = NormalLinearPrior::new(vec![0.0], vec![1e8]).unwrap();
    let post: Vec<f64> =
        (0..10_000).map(|_| sample_conjugate_linear(&y, &design, 1.0, &flat, &mut rng).unwrap()[0]).collect();
    let (m, _) = mean_se(&post);
    checks.push(("conjugate flat-prior mean", (m - 3.0).abs() < 3.0 * 0.1));

    // precision gamma
    let g: Vec<f64> = (0..100_000).map(|_| sample_precision_gamma(4.0, 2, 2.0, 2.0, &mut rng)).collect();
    let (m, se) = mean_se(&g);
    checks.push(("gamma(3,4) mean", (m - 0.75).abs() < 3.0 * se));
    let prior_g: Vec<f64> = (0..100_000).map(|_| sample_precision_gamma(0.0, 0, 0.01, 0.01, &mut rng)).collect();
    let (m, se) = mean_se(&prior_g);
    checks.push(("gamma prior mean", (m - 1.0).abs() < 4.0 * se));
    let resid: f64 = (0..10_000).map(|_| rng.standard_normal().powi(2)).sum();
    let big: Vec<f64> = (0..1000).map(|_| sample_precision_gamma(resid, 10_000, 0.01, 0.01, &mut rng)).collect();
    let (m, _) = mean_se(&big);
    checks.push(("gamma consistency", (m - 1.0).abs() < 0.05));

    // Dirichlet
    let sym: Vec<[f64; 3]> = (0..100_000).map(|_| sample_dirichlet([0, 0, 0], [1.0; 3], &mut rng)).collect();
    let ok =
        (0..3).all(|j| {
            let v: Vec<f64> = sym.iter().map(|d| d[j]).collect();
            let (m, se) = mean_se(&v);
            (m - 1.0 / 3.0).abs() < 3.0 * se
        }) && sym.iter().all(|d| d.iter().all(|p| *p > 0.0 && *p < 1.0) && (d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    checks.push(("dirichlet symmetric", ok));
    let skew: Vec<f64> = (0..100_000).map(|_| sample_dirichlet([100, 0, 0], [1.0; 3], &mut rng)[0]).collect();
    let (m, se) = mean_se(&skew);
    checks.push(("dirichlet (101,1,1) mean", (m - 101.0 / 103.0).abs() < 3.0 * se));

    let secs = start.elapsed().as_secs_f64();
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let pass = failed.is_empty() && secs <= 300.0;
    report(4, "distribution primitives", pass, &format!("{} checks, failed {failed:?}; {secs:.1}s", checks.len()));
    assert!(pass);
}

fn criterion_5_psrf_fidelity() {
    let mut inside = 0;
    let trials = 100;
    for t in 0..trials {
        let mut rng = RngStream::new(5000 + t, 0);
        let chains: Vec<Vec<f64>> = (0..3).map(|_| (0..500).map(|_| rng.normal(2.0, 1.5)).collect()).collect();
        let r = compute_psrf(&chains).unwrap();
        if (0.99..=1.05).contains(&r) {
            inside += 1;
        }
    }
    let mut rng = RngStream::new(55, 0);
    let separated: Vec<Vec<f64>> =
        (0..3).map(|k| (0..500).map(|_| rng.normal(3.0 * k as f64, 1.0)).collect()).collect();
    let sep = compute_psrf(&separated).unwrap();
    let pass = inside as f64 / trials as f64 >= 0.99 && sep > 1.06;
    report(
        5,
        "psrf fidelity",
        pass,
        &format!("iid trials in [0.99, 1.05]: {inside}/{trials}; separated chains {sep:.3}"),
    );
    assert!(pass);
}

fn draws_bytes(ds: &Dataset, cfg: &ModelConfig, threads: usize) -> Vec<u8> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    let run = pool.install(|| run_model(ds, cfg)).unwrap();
    assert!(run.is_complete());
    assert_eq!(run.total_draws(), 1500);
    let mut buf = Vec::new();
    write_draws_csv(&mut buf, &run.chains).unwrap();
    buf
}

fn criterion_6_schedule_and_reproducibility() {
    let sim = generate_dataset(
        &DgpConfig { n: 200, corr_xy: 0.3, missing_prob: 0.2, ..DgpConfig::default() },
        &mut RngStream::new(6, 0),
    )
    .unwrap();
    let cfg = ModelConfig::default();
    let run = run_model(&sim.dataset, &cfg).unwrap();
    let pooled = run.total_draws();
    let per_chain: Vec<usize> = run.chains.iter().map(|c| c.draws.len()).collect();
    let one = draws_bytes(&sim.dataset, &cfg, 1);
    let again = draws_bytes(&sim.dataset, &cfg, 1);
    let many = draws_bytes(&sim.dataset, &cfg, 4);
    let rows = one.iter().filter(|b| **b == b'\n').count() - 1;
    let pass = pooled == 1500 && per_chain == vec![500; 3] && rows == 1500 && one == again && one == many;
    report(
        6,
        "schedule and reproducibility",
        pass,
        &format!(
            "pooled draws {pooled}, per chain {per_chain:?}, csv rows {rows}; rerun identical {}; 1 vs 4 threads identical {}",
            one == again,
            one == many
        ),
    );
    assert!(pass);
}

fn criterion_7_table_fixtures() {
    let mut rng = RngStream::new(7, 0);
    let complete = table1_fixture(&mut rng, false);
    let mut csv = Vec::new();
    complete.write_csv(&mut csv).unwrap();
    let ingested = Dataset::from_csv_reader(csv.as_slice()).unwrap();
    let summary = summarize_dataset(&ingested);
    let mut counts_ok = true;
    let mut worst_dev = 0.0f64;
    for (row, s) in TABLE1.iter().zip(&summary) {
        counts_ok &= s.pattern == row.pattern && s.n == row.n;
        worst_dev = worst_dev.max((s.x.mean.unwrap() - row.x_mean).abs()).max((s.x.sd.unwrap() - row.x_sd).abs());
    }
    let counts: Vec<usize> = summary.iter().map(|s| s.n).collect();

    let shaped = table1_fixture(&mut rng, true);
    let missing = [
        shaped.missing_in_arm(0) as f64 / shaped.arm_size(0) as f64,
        shaped.missing_in_arm(1) as f64 / shaped.arm_size(1) as f64,
    ];
    let mut variants_ok = Vec::new();
    for v in ModelVariant::ALL {
        let run = run_model(&shaped, &ModelConfig::with_variant(v)).unwrap();
        let finite = run.is_complete()
            && summarize_all(&run.chains)
                .map(|all| all.iter().all(|s| [s.mean, s.sd, s.q025, s.q975].iter().all(|x| x.is_finite())))
                .unwrap_or(false);
        let cace = summarize_all(&run.chains).ok().and_then(|a| a.last().cloned());
        let psrf = psrf_report(&run.chains, cfg_threshold()).ok();
        println!(
            "  model {:<5} complete {} cace {} max psrf {}",
            v.as_str(),
            run.is_complete(),
            cace.map(|c| format!("{:.3} ({:.3}) [{:.3}, {:.3}]", c.mean, c.sd, c.q025, c.q975)).unwrap_or("-".into()),
            psrf.map(|p| format!("{:.3}", p.entries.iter().map(|e| e.psrf).fold(0.0, f64::max))).unwrap_or("-".into())
        );
        variants_ok.push((v, finite));
    }
    let all_finite = variants_ok.iter().all(|(_, f)| *f);
    let pass = counts_ok
        && worst_dev < 1e-9
        && all_finite
        && (missing[0] - 0.484).abs() < 0.001
        && (missing[1] - 0.4625).abs() < 0.001;
    report(
        7,
        "table fixtures",
        pass,
        &format!(
            "counts {counts:?}, max moment deviation {worst_dev:.1e}; missing {:.1}%/{:.1}%; all variants finite {all_finite}",
            100.0 * missing[0],
            100.0 * missing[1]
        ),
    );
    assert!(pass);
}

fn cfg_threshold() -> f64 {
    ModelConfig::default().psrf_threshold
}

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, fn()); 7] = [
        ("criterion_1_bias_grows_with_outcome_correlation_under_unadjusted_model", criterion_1_bias_grows_with_outcome_correlation_under_unadjusted_model as fn()),
        ("criterion_2_shading_runs_in_opposite_directions", criterion_2_shading_runs_in_opposite_directions as fn()),
        ("criterion_3_gibbs_matches_exact_posterior_on_tiny_fixtures", criterion_3_gibbs_matches_exact_posterior_on_tiny_fixtures as fn()),
        ("criterion_4_distribution_primitives", criterion_4_distribution_primitives as fn()),
        ("criterion_5_psrf_fidelity", criterion_5_psrf_fidelity as fn()),
        ("criterion_6_schedule_and_reproducibility", criterion_6_schedule_and_reproducibility as fn()),
        ("criterion_7_table_fixtures", criterion_7_table_fixtures as fn()),
    ];
    let mut failed = Vec::new();
    for (name, f) in criteria {
        if !filters.is_empty() && !filters.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        println!("running {name}");
        if panic::catch_unwind(AssertUnwindSafe(f)).is_err() {
            failed.push(name);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all selected criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed {failed:?}");
        ExitCode::FAILURE
    }
}
