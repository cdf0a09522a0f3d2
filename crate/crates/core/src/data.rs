//! Trial records, observed assignment/receipt patterns and dataset ingestion.
//!
//! Under monotonicity a patient whose received treatment differs from the
//! assigned one reveals their principal stratum, while patients who received
//! the assigned treatment form a two-component mixture.

use std::io::Read;
use std::path::Path;

use serde::Serialize;

use crate::error::{CaceError, Result};

/// Principal stratum. Defiers are excluded by monotonicity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Stratum {
    Complier,
    NeverTaker,
    AlwaysTaker,
}

impl Stratum {
    pub const ALL: [Stratum; 3] = [Stratum::Complier, Stratum::NeverTaker, Stratum::AlwaysTaker];

    pub fn code(self) -> char {
        match self {
            Stratum::Complier => 'c',
            Stratum::NeverTaker => 'n',
            Stratum::AlwaysTaker => 'a',
        }
    }
}

/// One trial participant.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub id: String,
    /// Assignment: 0 = control, 1 = active.
    pub z: u8,
    /// Treatment actually received.
    pub d_obs: u8,
    pub y_obs: Option<f64>,
    pub x: f64,
}

impl PatientRecord {
    pub fn new(id: impl Into<String>, z: u8, d_obs: u8, y_obs: Option<f64>, x: f64) -> Self {
        Self { id: id.into(), z, d_obs, y_obs, x }
    }

    pub fn pattern(&self) -> ObservedPattern {
        classify_observed_pattern(self.z, self.d_obs)
    }
}

/// Observed (assignment, receipt) pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum ObservedPattern {
    /// z = 1, d = 0.
    KnownNeverTaker,
    /// z = 0, d = 1.
    KnownAlwaysTaker,
    /// z = 0, d = 0: complier or never-taker.
    MixtureControlArm,
    /// z = 1, d = 1: complier or always-taker.
    MixtureTreatedArm,
}

impl ObservedPattern {
    pub const ALL: [ObservedPattern; 4] = [
        ObservedPattern::MixtureControlArm,
        ObservedPattern::KnownAlwaysTaker,
        ObservedPattern::MixtureTreatedArm,
        ObservedPattern::KnownNeverTaker,
    ];

    pub fn index(self) -> usize {
        match self {
            ObservedPattern::MixtureControlArm => 0,
            ObservedPattern::KnownAlwaysTaker => 1,
            ObservedPattern::MixtureTreatedArm => 2,
            ObservedPattern::KnownNeverTaker => 3,
        }
    }

    pub fn is_mixture(self) -> bool {
        matches!(self, ObservedPattern::MixtureControlArm | ObservedPattern::MixtureTreatedArm)
    }

    /// Strata compatible with the pattern.
    pub fn allowed_strata(self) -> &'static [Stratum] {
        match self {
            ObservedPattern::KnownNeverTaker => &[Stratum::NeverTaker],
            ObservedPattern::KnownAlwaysTaker => &[Stratum::AlwaysTaker],
            ObservedPattern::MixtureControlArm => &[Stratum::Complier, Stratum::NeverTaker],
            ObservedPattern::MixtureTreatedArm => &[Stratum::Complier, Stratum::AlwaysTaker],
        }
    }

    /// The noncomplier stratum mixed with compliers (or the known stratum).
    pub fn noncomplier_stratum(self) -> Stratum {
        match self {
            ObservedPattern::KnownNeverTaker | ObservedPattern::MixtureControlArm => Stratum::NeverTaker,
            ObservedPattern::KnownAlwaysTaker | ObservedPattern::MixtureTreatedArm => Stratum::AlwaysTaker,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ObservedPattern::KnownNeverTaker => "known_never_taker",
            ObservedPattern::KnownAlwaysTaker => "known_always_taker",
            ObservedPattern::MixtureControlArm => "mixture_control_arm",
            ObservedPattern::MixtureTreatedArm => "mixture_treated_arm",
        }
    }
}

/// Maps an observed (z, d_obs) pair to its pattern. Inputs other than 0/1
/// are treated as 1.
pub fn classify_observed_pattern(z: u8, d_obs: u8) -> ObservedPattern {
    match (z != 0, d_obs != 0) {
        (false, false) => ObservedPattern::MixtureControlArm,
        (false, true) => ObservedPattern::KnownAlwaysTaker,
        (true, true) => ObservedPattern::MixtureTreatedArm,
        (true, false) => ObservedPattern::KnownNeverTaker,
    }
}

/// Validated trial data. Record order is preserved and used for indexing.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<PatientRecord>,
    patterns: Vec<ObservedPattern>,
    group_counts: [usize; 4],
    missing_by_arm: [usize; 2],
    missing_by_pattern: [usize; 4],
}

impl Dataset {
    pub fn new(records: Vec<PatientRecord>) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            validate_record(r, i + 1)?;
        }
        let mut arm_seen = [false; 2];
        let mut group_counts = [0usize; 4];
        let mut missing_by_arm = [0usize; 2];
        let mut missing_by_pattern = [0usize; 4];
        let patterns: Vec<ObservedPattern> = records.iter().map(|r| r.pattern()).collect();
        for (r, p) in records.iter().zip(&patterns) {
            arm_seen[r.z as usize] = true;
            group_counts[p.index()] += 1;
            if r.y_obs.is_none() {
                missing_by_arm[r.z as usize] += 1;
                missing_by_pattern[p.index()] += 1;
            }
        }
        for arm in 0..2u8 {
            if !arm_seen[arm as usize] {
                return Err(CaceError::EmptyArm { arm });
            }
        }
        Ok(Self { records, patterns, group_counts, missing_by_arm, missing_by_pattern })
    }

    /// Reads the `id,z,d_obs,y_obs,x` CSV layout. An empty `y_obs` cell is a
    /// missing outcome. Row numbers in errors count data rows from 1.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| CaceError::Parse { row: 0, message: e.to_string() })?.clone();
        let expected = ["id", "z", "d_obs", "y_obs", "x"];
        if headers.len() != expected.len() || headers.iter().zip(expected).any(|(h, e)| h != e) {
            return Err(CaceError::Parse {
                row: 0,
                message: format!("expected header id,z,d_obs,y_obs,x, found {:?}", headers.iter().collect::<Vec<_>>()),
            });
        }
        let mut records = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let row_no = i + 1;
            let row = row.map_err(|e| CaceError::Parse { row: row_no, message: e.to_string() })?;
            if row.len() != 5 {
                return Err(CaceError::Parse {
                    row: row_no,
                    message: format!("expected 5 fields, found {}", row.len()),
                });
            }
            let z = parse_binary(&row[1], "z", row_no)?;
            let d_obs = parse_binary(&row[2], "d_obs", row_no)?;
            let y_obs = if row[3].is_empty() { None } else { Some(parse_real(&row[3], "y_obs", row_no)?) };
            if row[4].is_empty() {
                return Err(CaceError::Validation { row: row_no, message: "covariate x is missing".into() });
            }
            let x = parse_real(&row[4], "x", row_no)?;
            let rec = PatientRecord::new(&row[0], z, d_obs, y_obs, x);
            validate_record(&rec, row_no)?;
            records.push(rec);
        }
        Self::new(records)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)
            .map_err(|e| CaceError::Parse { row: 0, message: format!("{}: {e}", path.display()) })?;
        Self::from_csv_reader(std::io::BufReader::new(file))
    }

    /// Writes the dataset in the ingestion layout.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["id", "z", "d_obs", "y_obs", "x"])?;
        for r in &self.records {
            let y = r.y_obs.map(format_real).unwrap_or_default();
            w.write_record([r.id.clone(), r.z.to_string(), r.d_obs.to_string(), y, format_real(r.x)])?;
        }
        w.flush()
    }

    pub fn records(&self) -> &[PatientRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn pattern(&self, i: usize) -> ObservedPattern {
        self.patterns[i]
    }

    pub fn patterns(&self) -> &[ObservedPattern] {
        &self.patterns
    }

    pub fn group_count(&self, pattern: ObservedPattern) -> usize {
        self.group_counts[pattern.index()]
    }

    pub fn missing_in_arm(&self, z: u8) -> usize {
        self.missing_by_arm[(z != 0) as usize]
    }

    pub fn missing_in_pattern(&self, pattern: ObservedPattern) -> usize {
        self.missing_by_pattern[pattern.index()]
    }

    pub fn arm_size(&self, z: u8) -> usize {
        self.records.iter().filter(|r| r.z == z).count()
    }

    pub fn mixture_count(&self) -> usize {
        self.patterns.iter().filter(|p| p.is_mixture()).count()
    }

    /// Mean of non-missing outcomes, if any.
    pub fn observed_y_mean(&self) -> Option<f64> {
        mean(self.records.iter().filter_map(|r| r.y_obs))
    }

    /// Sample variance (n - 1) of non-missing outcomes.
    pub fn observed_y_variance(&self) -> Option<f64> {
        std_dev(self.records.iter().filter_map(|r| r.y_obs)).map(|s| s * s)
    }

    pub fn x_range(&self) -> (f64, f64) {
        self.records.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.x), hi.max(r.x)))
    }
}

fn validate_record(r: &PatientRecord, row: usize) -> Result<()> {
    if r.z > 1 {
        return Err(CaceError::Validation { row, message: format!("z must be 0 or 1, found {}", r.z) });
    }
    if r.d_obs > 1 {
        return Err(CaceError::Validation { row, message: format!("d_obs must be 0 or 1, found {}", r.d_obs) });
    }
    if !r.x.is_finite() {
        return Err(CaceError::Validation { row, message: format!("x must be finite, found {}", r.x) });
    }
    if let Some(y) = r.y_obs {
        if !y.is_finite() {
            return Err(CaceError::Validation { row, message: format!("y_obs must be finite, found {y}") });
        }
    }
    Ok(())
}

fn parse_binary(field: &str, name: &str, row: usize) -> Result<u8> {
    let v: i64 = field
        .parse()
        .map_err(|_| CaceError::Parse { row, message: format!("{name}: cannot parse {field:?} as an integer") })?;
    match v {
        0 | 1 => Ok(v as u8),
        _ => Err(CaceError::Validation { row, message: format!("{name} must be 0 or 1, found {v}") }),
    }
}

fn parse_real(field: &str, name: &str, row: usize) -> Result<f64> {
    field
        .parse::<f64>()
        .map_err(|_| CaceError::Parse { row, message: format!("{name}: cannot parse {field:?} as a number") })
}

/// Shortest round-trip decimal rendering.
pub(crate) fn format_real(v: f64) -> String {
    format!("{v}")
}

/// Mean and SD of one variable in one pattern. `sd` is absent for fewer than
/// two values; `mean` is absent when there are none.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentSummary {
    pub n: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
}

impl MomentSummary {
    fn from_values(values: &[f64]) -> Self {
        Self { n: values.len(), mean: mean(values.iter().copied()), sd: std_dev(values.iter().copied()) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatternSummary {
    pub pattern: ObservedPattern,
    pub n: usize,
    pub x: MomentSummary,
    pub y: MomentSummary,
}

/// Per-pattern covariate and outcome summaries, in Table-1 row order.
pub fn summarize_dataset(ds: &Dataset) -> Vec<PatternSummary> {
    ObservedPattern::ALL
        .iter()
        .map(|&pattern| {
            let (xs, ys): (Vec<f64>, Vec<Option<f64>>) = ds
                .records
                .iter()
                .zip(&ds.patterns)
                .filter(|(_, p)| **p == pattern)
                .map(|(r, _)| (r.x, r.y_obs))
                .unzip();
            let ys: Vec<f64> = ys.into_iter().flatten().collect();
            PatternSummary {
                pattern,
                n: xs.len(),
                x: MomentSummary::from_values(&xs),
                y: MomentSummary::from_values(&ys),
            }
        })
        .collect()
}

pub(crate) fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (n, s) = values.into_iter().fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    (n > 0).then(|| s / n as f64)
}

pub(crate) fn std_dev(values: impl IntoIterator<Item = f64> + Clone) -> Option<f64> {
    let m = mean(values.clone())?;
    let (n, ss) = values.into_iter().fold((0usize, 0.0), |(n, ss), v| (n + 1, ss + (v - m) * (v - m)));
    (n >= 2).then(|| (ss / (n - 1) as f64).sqrt())
}
