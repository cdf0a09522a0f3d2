//! CSV renderings of draws, diagnostics and Monte Carlo results. Reals use 17
//! significant digits so reruns can be compared byte for byte.

use std::io::{Read, Write};

use crate::diagnostics::{ComplierProbGrid, PsrfReport, ShadedHistogram};
use crate::error::{CaceError, Result};
use crate::gibbs::{Chain, ComplierSet, SavedDraw};
use crate::model::{ModelVariant, ParameterState, Schedule};
use crate::simulation::McResult;

/// Scientific notation with 17 significant digits.
pub fn format_full(v: f64) -> String {
    format!("{v:.16e}")
}

fn io_err(e: std::io::Error) -> CaceError {
    CaceError::Config(format!("write failed: {e}"))
}

fn csv_err(e: csv::Error) -> CaceError {
    CaceError::Config(format!("csv: {e}"))
}

/// One row per saved draw: chain, iteration, every scalar, cace, n_c.
/// An undefined CACE is written as an empty field.
pub fn write_draws_csv<W: Write>(w: W, chains: &[Chain]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let Some(first) = chains.first() else {
        return out.flush().map_err(io_err);
    };
    let mut header = vec!["chain".to_string(), "iteration".to_string()];
    header.extend(first.variant.scalar_names().iter().map(|s| s.to_string()));
    header.push("cace".into());
    header.push("n_c".into());
    out.write_record(&header).map_err(csv_err)?;
    for c in chains {
        for d in &c.draws {
            let mut row = vec![c.index.to_string(), d.iteration.to_string()];
            row.extend(d.params.scalars().into_iter().map(format_full));
            row.push(d.cace.map(format_full).unwrap_or_default());
            row.push(d.n_compliers.to_string());
            out.write_record(&row).map_err(csv_err)?;
        }
    }
    out.flush().map_err(io_err)
}

/// Reads a draws file back into chains. The variant is recognised from the
/// parameter columns; complier indicators are not stored and come back empty.
pub fn read_draws_csv<R: Read>(r: R) -> Result<Vec<Chain>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if header.len() < 4 || header[0] != "chain" || header[1] != "iteration" {
        return Err(CaceError::Parse { row: 1, message: "draws header must start with chain,iteration".into() });
    }
    let params = &header[2..header.len() - 2];
    let variant = ModelVariant::ALL
        .into_iter()
        .find(|v| v.scalar_names().into_iter().eq(params.iter().map(String::as_str)))
        .ok_or_else(|| CaceError::Parse { row: 1, message: "parameter columns match no model variant".into() })?;
    let mut chains: Vec<Chain> = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 2;
        let rec = rec.map_err(|e| CaceError::Parse { row, message: e.to_string() })?;
        let num = |i: usize| -> Result<f64> {
            rec[i].parse::<f64>().map_err(|_| CaceError::Parse { row, message: format!("bad number {:?}", &rec[i]) })
        };
        let int = |i: usize| -> Result<usize> {
            rec[i].parse::<usize>().map_err(|_| CaceError::Parse { row, message: format!("bad integer {:?}", &rec[i]) })
        };
        let chain = int(0)?;
        let iteration = int(1)?;
        let values: Vec<f64> = (2..2 + params.len()).map(num).collect::<Result<_>>()?;
        let cace_field = &rec[2 + params.len()];
        let cace = if cace_field.is_empty() { None } else { Some(num(2 + params.len())?) };
        let n_compliers = int(3 + params.len())?;
        let params = ParameterState::from_scalars(variant, &values)?;
        if chains.last().map(|c| c.index) != Some(chain) {
            if chains.iter().any(|c| c.index == chain) {
                return Err(CaceError::Parse { row, message: format!("rows of chain {chain} are not contiguous") });
            }
            chains.push(Chain {
                index: chain,
                seed: 0,
                variant,
                schedule: Schedule { burn_in: 0, kept: 0, thin: 1 },
                draws: Vec::new(),
                mlogit_acceptance: None,
            });
        }
        let c = chains.last_mut().expect("pushed above");
        c.draws.push(SavedDraw { iteration, params, cace, n_compliers, compliers: ComplierSet::from_labels(&[]) });
        c.schedule.kept = c.draws.len();
    }
    Ok(chains)
}

pub fn write_grid_csv<W: Write>(w: W, grid: &ComplierProbGrid) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["x", "mean", "lo", "hi"]).map_err(csv_err)?;
    for p in &grid.points {
        out.write_record([p.x, p.mean, p.lo, p.hi].map(format_full)).map_err(csv_err)?;
    }
    out.flush().map_err(io_err)
}

pub fn write_histogram_csv<W: Write>(w: W, hist: &ShadedHistogram) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["bin_lo", "bin_hi", "count", "shading"]).map_err(csv_err)?;
    for b in &hist.bins {
        out.write_record([format_full(b.lo), format_full(b.hi), b.count.to_string(), format_full(b.shading)])
            .map_err(csv_err)?;
    }
    out.flush().map_err(io_err)
}

pub fn write_psrf_csv<W: Write>(w: W, report: &PsrfReport) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["parameter", "psrf", "exceeds_threshold"]).map_err(csv_err)?;
    for e in &report.entries {
        out.write_record([e.parameter.clone(), format_full(e.psrf), e.exceeds.to_string()]).map_err(csv_err)?;
    }
    out.flush().map_err(io_err)
}

/// One row per (correlation, variant) cell, averaged over replicates.
pub fn write_mc_csv<W: Write>(w: W, result: &McResult) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "corr_xy",
        "variant",
        "mean_cace",
        "lo",
        "hi",
        "reps",
        "reps_ok",
        "mean_cace_se",
        "exclusion_rate",
    ])
    .map_err(csv_err)?;
    for c in &result.cells {
        out.write_record([
            format_full(c.corr_xy),
            c.variant.as_str().to_string(),
            format_full(c.mean_cace()),
            format_full(c.mean_lo()),
            format_full(c.mean_hi()),
            c.replicates.len().to_string(),
            c.reps_ok().to_string(),
            format_full(c.mean_cace_se()),
            format_full(c.exclusion_rate()),
        ])
        .map_err(csv_err)?;
    }
    out.flush().map_err(io_err)
}

/// One row per replicate fit.
pub fn write_mc_replicates_csv<W: Write>(w: W, result: &McResult) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "corr_xy",
        "variant",
        "rep",
        "data_seed",
        "fit_seed",
        "mean",
        "sd",
        "lo",
        "hi",
        "undefined",
        "error",
    ])
    .map_err(csv_err)?;
    for c in &result.cells {
        for r in &c.replicates {
            out.write_record([
                format_full(c.corr_xy),
                c.variant.as_str().to_string(),
                r.rep.to_string(),
                r.data_seed.to_string(),
                r.fit_seed.to_string(),
                format_full(r.mean),
                format_full(r.sd),
                format_full(r.lo),
                format_full(r.hi),
                r.undefined.to_string(),
                r.error.clone().unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
    }
    out.flush().map_err(io_err)
}
