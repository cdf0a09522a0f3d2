use std::fs;
use std::path::{Path, PathBuf};

use cace_core::data::Dataset;
use cace_core::diagnostics::{
    complier_prob_grid, linspace, pattern_mean_outcome, psrf_report, shaded_histogram, summarize_posterior,
    PosteriorSummary, PsrfReport, Scalar, DEFAULT_GRID_SIZE, DEFAULT_PSRF_THRESHOLD,
};
use cace_core::gibbs::run_model;
use cace_core::io::{
    read_draws_csv, write_draws_csv, write_grid_csv, write_histogram_csv, write_mc_csv, write_mc_replicates_csv,
    write_psrf_csv,
};
use cace_core::model::{ModelConfig, ModelVariant};
use cace_core::simulation::{run_monte_carlo, McConfig};
use cace_core::CaceError;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::manifest::{sha256_hex, write_output, FileDigest, RunManifest, SeedRecord, MANIFEST_FILE};

pub const DIAGNOSE_MANIFEST_FILE: &str = "diagnose_manifest.json";

/// Contents of the `--config` file. Every field is optional and falls back
/// to the defaults of the model and the simulation study.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub simulation: McConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Input(format!("config {}: {e}", path.display())))
    }
}

/// Command-line settings that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub chains: Option<usize>,
    pub variant: Option<ModelVariant>,
    pub marginal_missing_y: bool,
}

impl Overrides {
    fn apply(&self, m: &mut ModelConfig) {
        if let Some(s) = self.seed {
            m.seed = s;
        }
        if let Some(c) = self.chains {
            m.n_chains = c;
        }
        if let Some(v) = self.variant {
            m.variant = v;
        }
        if self.marginal_missing_y {
            m.marginal_missing_y = true;
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<serde_json::Value, CliError> {
    serde_json::to_value(v).map_err(|e| CliError::Internal(e.to_string()))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::write(dir, e))
}

fn load_dataset(path: &Path) -> Result<(Dataset, FileDigest), CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::read(path, e))?;
    let ds = Dataset::from_csv_reader(bytes.as_slice())?;
    log::info!("{}: {} patients", path.display(), ds.len());
    Ok((ds, FileDigest { path: path.display().to_string(), sha256: sha256_hex(&bytes) }))
}

#[derive(Debug, Serialize)]
struct ChainFailure {
    chain: usize,
    error: String,
}

#[derive(Debug, Serialize)]
struct FitSummary {
    variant: ModelVariant,
    chains: usize,
    pooled_draws: usize,
    failures: Vec<ChainFailure>,
    parameters: Vec<PosteriorSummary>,
    cace: Option<PosteriorSummary>,
    cace_error: Option<String>,
    psrf: Option<PsrfReport>,
}

pub fn cmd_fit(dataset: &Path, config: Option<&Path>, out: &Path, ov: &Overrides) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(config)?.model;
    ov.apply(&mut cfg);
    cfg.validate().map_err(|e| CliError::Input(format!("model config: {e}")))?;
    let (ds, digest) = load_dataset(dataset)?;
    log::info!(
        "fitting model {} with {} chains ({} burn-in, {} kept, thin {})",
        cfg.variant,
        cfg.n_chains,
        cfg.schedule.burn_in,
        cfg.schedule.kept,
        cfg.schedule.thin
    );
    let run = run_model(&ds, &cfg)?;
    create_dir(out)?;

    let mut manifest = RunManifest::new("fit", to_json(&cfg)?);
    manifest.dataset = Some(digest);
    manifest.seeds.push(SeedRecord { label: "master".into(), seed: cfg.seed });
    for c in &run.chains {
        manifest.seeds.push(SeedRecord { label: format!("chain {}", c.index), seed: c.seed });
    }

    let mut buf = Vec::new();
    write_draws_csv(&mut buf, &run.chains)?;
    write_output(out, "draws.csv", &buf, &mut manifest)?;

    let failures: Vec<ChainFailure> =
        run.failures.iter().map(|(k, e)| ChainFailure { chain: *k, error: e.to_string() }).collect();
    for f in &failures {
        log::warn!("chain {} failed: {}", f.chain, f.error);
    }
    let mut parameters = Vec::new();
    if !run.chains.is_empty() {
        for k in 0..cfg.variant.scalar_names().len() {
            parameters.push(summarize_posterior(&run.chains, Scalar::Parameter(k))?);
        }
    }
    let (cace, cace_error) = match summarize_posterior(&run.chains, Scalar::Cace) {
        Ok(s) => (Some(s), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let psrf = match psrf_report(&run.chains, cfg.psrf_threshold) {
        Ok(r) => {
            for e in r.entries.iter().filter(|e| e.exceeds) {
                log::warn!("psrf of {} is {:.3}, above {}", e.parameter, e.psrf, r.threshold);
            }
            Some(r)
        }
        Err(e) => {
            log::warn!("psrf not computed: {e}");
            None
        }
    };
    if let Some(c) = &cace {
        log::info!("cace {:.4} (sd {:.4}, 95% [{:.4}, {:.4}])", c.mean, c.sd, c.q025, c.q975);
    }
    let summary = FitSummary {
        variant: cfg.variant,
        chains: cfg.n_chains,
        pooled_draws: run.total_draws(),
        failures,
        parameters,
        cace,
        cace_error,
        psrf,
    };
    let mut text = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Internal(e.to_string()))?;
    text.push('\n');
    write_output(out, "summary.json", text.as_bytes(), &mut manifest)?;
    manifest.finish(out)?;

    if !run.is_complete() {
        return Err(CliError::Partial(format!(
            "{} of {} chains failed; outputs hold the remaining chains",
            run.failures.len(),
            cfg.n_chains
        )));
    }
    if summary.cace.is_none() {
        return Err(CliError::Core(CaceError::AllUndefined));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct DiagnoseArgs {
    pub draws: PathBuf,
    pub dataset: PathBuf,
    pub out: PathBuf,
    /// Defaults to `manifest.json` next to the draws file.
    pub manifest: Option<PathBuf>,
    pub arms: Vec<u8>,
    pub y_eval: Option<f64>,
    pub bins: Option<usize>,
    pub grid_size: usize,
    pub threshold: f64,
}

impl Default for DiagnoseArgs {
    fn default() -> Self {
        Self {
            draws: PathBuf::new(),
            dataset: PathBuf::new(),
            out: PathBuf::new(),
            manifest: None,
            arms: vec![0, 1],
            y_eval: None,
            bins: None,
            grid_size: DEFAULT_GRID_SIZE,
            threshold: DEFAULT_PSRF_THRESHOLD,
        }
    }
}

fn check_digest(what: &str, expected: &str, actual: &str) -> Result<(), CliError> {
    if expected != actual {
        return Err(CliError::DigestMismatch {
            what: what.to_string(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        });
    }
    Ok(())
}

pub fn cmd_diagnose(args: &DiagnoseArgs) -> Result<(), CliError> {
    if args.grid_size == 0 {
        return Err(CliError::Input("grid size must be positive".into()));
    }
    let draws_bytes = fs::read(&args.draws).map_err(|e| CliError::read(&args.draws, e))?;
    let (ds, ds_digest) = load_dataset(&args.dataset)?;

    let manifest_path = match &args.manifest {
        Some(p) => Some(p.clone()),
        None => {
            let p = args.draws.parent().unwrap_or(Path::new(".")).join(MANIFEST_FILE);
            p.exists().then_some(p)
        }
    };
    match &manifest_path {
        Some(p) => {
            let fit = RunManifest::read(p)?;
            if let Some(d) = &fit.dataset {
                check_digest("dataset", &d.sha256, &ds_digest.sha256)?;
            }
            let name = args.draws.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            if let Some(d) = fit.output(&name) {
                check_digest("draws", &d.sha256, &sha256_hex(&draws_bytes))?;
            }
            log::info!("digests match {}", p.display());
        }
        None => log::warn!("no manifest next to {}; digests not checked", args.draws.display()),
    }

    let chains = read_draws_csv(draws_bytes.as_slice())?;
    if chains.is_empty() {
        return Err(CliError::Core(CaceError::NoDraws));
    }
    create_dir(&args.out)?;
    let mut manifest = RunManifest::new(
        "diagnose",
        serde_json::json!({
            "draws": args.draws.display().to_string(),
            "draws_sha256": sha256_hex(&draws_bytes),
            "arms": args.arms,
            "y_eval": args.y_eval,
            "bins": args.bins,
            "grid_size": args.grid_size,
            "psrf_threshold": args.threshold,
        }),
    );
    manifest.dataset = Some(ds_digest);

    let (lo, hi) = ds.x_range();
    let grid_x = linspace(lo, hi, args.grid_size);
    let mut arm_errors = Vec::new();
    for &z in &args.arms {
        let y_eval = args.y_eval.or_else(|| pattern_mean_outcome(&ds, z)).or_else(|| ds.observed_y_mean());
        let Some(y_eval) = y_eval else {
            arm_errors.push(format!("z={z}: no observed outcome to evaluate at"));
            continue;
        };
        let grid = complier_prob_grid(&chains, z, y_eval, &grid_x)?;
        let mut buf = Vec::new();
        write_grid_csv(&mut buf, &grid)?;
        write_output(&args.out, &format!("complier_grid_z{z}.csv"), &buf, &mut manifest)?;
        match shaded_histogram(&chains, &ds, z, args.bins, args.y_eval) {
            Ok(h) => {
                let mut buf = Vec::new();
                write_histogram_csv(&mut buf, &h)?;
                write_output(&args.out, &format!("shaded_hist_z{z}.csv"), &buf, &mut manifest)?;
            }
            Err(e @ CaceError::EmptyPattern { .. }) => {
                log::warn!("z={z}: {e}");
                arm_errors.push(format!("z={z}: {e}"));
            }
            Err(e) => return Err(e.into()),
        }
    }

    let report = psrf_report(&chains, args.threshold).unwrap_or_else(|e| {
        log::warn!("psrf not computed: {e}");
        PsrfReport { threshold: args.threshold, entries: Vec::new() }
    });
    let mut buf = Vec::new();
    write_psrf_csv(&mut buf, &report)?;
    write_output(&args.out, "psrf.csv", &buf, &mut manifest)?;
    let out = args.out.clone();
    manifest.finish_as(&out, DIAGNOSE_MANIFEST_FILE)?;

    if !arm_errors.is_empty() {
        return Err(CliError::Partial(arm_errors.join("; ")));
    }
    Ok(())
}

pub fn cmd_simulate(config: Option<&Path>, out: &Path, ov: &Overrides) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(config)?.simulation;
    if let Some(s) = ov.seed {
        cfg.master_seed = s;
    }
    if let Some(v) = ov.variant {
        cfg.variants = vec![v];
    }
    let model_only = Overrides { seed: None, ..ov.clone() };
    model_only.apply(&mut cfg.model);
    cfg.validate().map_err(|e| CliError::Input(format!("simulation config: {e}")))?;
    log::info!(
        "simulating {} correlations x {} variants x {} replicates of n={}",
        cfg.corr_grid.len(),
        cfg.variants.len(),
        cfg.reps,
        cfg.dgp.n
    );
    let result = run_monte_carlo(&cfg)?;
    create_dir(out)?;

    let mut manifest = RunManifest::new("simulate", to_json(&cfg)?);
    manifest.seeds.push(SeedRecord { label: "master".into(), seed: cfg.master_seed });
    for (ci, corr) in cfg.corr_grid.iter().enumerate() {
        for rep in 0..cfg.reps {
            manifest
                .seeds
                .push(SeedRecord { label: format!("data corr={corr} rep={rep}"), seed: cfg.data_seed(ci, rep) });
            manifest
                .seeds
                .push(SeedRecord { label: format!("fit corr={corr} rep={rep}"), seed: cfg.fit_seed(ci, rep) });
        }
    }
    let mut buf = Vec::new();
    write_mc_csv(&mut buf, &result)?;
    write_output(out, "mc_results.csv", &buf, &mut manifest)?;
    let mut buf = Vec::new();
    write_mc_replicates_csv(&mut buf, &result)?;
    write_output(out, "mc_replicates.csv", &buf, &mut manifest)?;
    manifest.finish(out)?;

    for c in &result.cells {
        log::info!(
            "corr {:+.1} model {}: mean cace {:+.4}, zero excluded in {:.0}% of fits",
            c.corr_xy,
            c.variant,
            c.mean_cace(),
            100.0 * c.exclusion_rate()
        );
    }
    let failed: usize = result.cells.iter().map(|c| c.replicates.len() - c.reps_ok()).sum();
    if failed > 0 {
        return Err(CliError::Partial(format!("{failed} replicate fits failed; see mc_replicates.csv")));
    }
    Ok(())
}
