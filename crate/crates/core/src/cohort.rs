//! Cohort data model, CSV ingestion, and synthetic cohort generators.
//!
//! The on-disk format is a long-format CSV, one row per (individual,
//! step): `id,step,t_days,<feature...>,<event...>,label_day,censored,
//! last_obs_day`. Event-flag columns are told apart from feature columns
//! either by an explicit schema config or, by default, by an `ev_` name
//! prefix. Timestamps are days since the anchoring event (day 0);
//! repeated same-day steps are allowed, decreasing timestamps are not.

use crate::numkit::Rng;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("empty cohort: {0}")]
    Empty(String),
    #[error("missing column `{0}` in header")]
    MissingColumn(String),
    #[error("row {row}: {msg}")]
    Row { row: usize, msg: String },
    #[error("individual `{id}`: {msg}")]
    Individual { id: String, msg: String },
    #[error("schema config: {0}")]
    Schema(String),
}

/// One individual's observed sequence plus its outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub id: String,
    /// Days since anchor, non-decreasing, one per step.
    pub times: Vec<f64>,
    /// Feature rows, one per step.
    pub features: Vec<Vec<f64>>,
    /// Event flags, one row per step, aligned with `event_names`.
    pub events: Vec<Vec<bool>>,
    /// Event onset day; for censored individuals this is only a marker
    /// (ground truth in synthetic cohorts, unknown in real ones).
    pub label_day: f64,
    pub censored: bool,
    pub last_obs_day: f64,
}

impl Individual {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Step index of the `rank`-th (1-based) occurrence of event column
    /// `event_idx`, if any.
    pub fn occurrence_step(&self, event_idx: usize, rank: usize) -> Option<usize> {
        debug_assert!(rank >= 1);
        let mut seen = 0;
        for (step, flags) in self.events.iter().enumerate() {
            if flags[event_idx] {
                seen += 1;
                if seen == rank {
                    return Some(step);
                }
            }
        }
        None
    }
}

/// A batch of individuals with shared feature and event schemas.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortBatch {
    pub feature_names: Vec<String>,
    pub event_names: Vec<String>,
    pub individuals: Vec<Individual>,
}

impl CohortBatch {
    pub fn n(&self) -> usize {
        self.individuals.len()
    }

    pub fn event_index(&self, name: &str) -> Option<usize> {
        self.event_names.iter().position(|e| e == name)
    }

    pub fn validate(&self) -> Result<(), CohortError> {
        if self.individuals.is_empty() {
            return Err(CohortError::Empty("no individuals".into()));
        }
        for ind in &self.individuals {
            let fail = |msg: String| CohortError::Individual {
                id: ind.id.clone(),
                msg,
            };
            if ind.times.is_empty() {
                return Err(fail("empty sequence".into()));
            }
            if ind.features.len() != ind.times.len() || ind.events.len() != ind.times.len() {
                return Err(fail("feature/event rows do not match step count".into()));
            }
            for w in ind.times.windows(2) {
                if w[1] < w[0] {
                    return Err(fail(format!("timestamps decrease: {} -> {}", w[0], w[1])));
                }
            }
            for row in &ind.features {
                if row.len() != self.feature_names.len() {
                    return Err(fail("feature row width mismatch".into()));
                }
                if !row.iter().all(|v| v.is_finite()) {
                    return Err(fail("non-finite feature".into()));
                }
            }
            for row in &ind.events {
                if row.len() != self.event_names.len() {
                    return Err(fail("event row width mismatch".into()));
                }
            }
            if !ind.censored && ind.label_day > ind.last_obs_day {
                return Err(fail(format!(
                    "uncensored label {} beyond last observation {}",
                    ind.label_day, ind.last_obs_day
                )));
            }
        }
        Ok(())
    }
}

/// Maps logical roles to CSV column names. `features`/`events` left as
/// `None` means: events are the `ev_`-prefixed columns, features are the
/// remaining non-role columns.
#[derive(Debug, Clone)]
pub struct SchemaConfig {
    pub id: String,
    pub step: String,
    pub time: String,
    pub label: String,
    pub censored: String,
    pub last_obs: String,
    pub features: Option<Vec<String>>,
    pub events: Option<Vec<String>>,
}

impl Default for SchemaConfig {
    fn default() -> Self {
        SchemaConfig {
            id: "id".into(),
            step: "step".into(),
            time: "t_days".into(),
            label: "label_day".into(),
            censored: "censored".into(),
            last_obs: "last_obs_day".into(),
            features: None,
            events: None,
        }
    }
}

impl SchemaConfig {
    /// Parses a flat `key=value` file; unknown keys are rejected.
    /// `features` and `events` take comma-separated column lists.
    pub fn from_kv(text: &str) -> Result<Self, CohortError> {
        let mut cfg = SchemaConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CohortError::Schema(format!("line {}: expected key=value", lineno + 1)))?;
            let value = value.trim();
            match key.trim() {
                "id" => cfg.id = value.into(),
                "step" => cfg.step = value.into(),
                "time" => cfg.time = value.into(),
                "label" => cfg.label = value.into(),
                "censored" => cfg.censored = value.into(),
                "last_obs" => cfg.last_obs = value.into(),
                "features" => {
                    cfg.features = Some(value.split(',').map(|s| s.trim().to_string()).collect())
                }
                "events" => {
                    cfg.events = Some(
                        value
                            .split(',')
                            .map(|s| s.trim().to_string())
                            .filter(|s| !s.is_empty())
                            .collect(),
                    )
                }
                other => {
                    return Err(CohortError::Schema(format!("unknown key `{other}`")));
                }
            }
        }
        Ok(cfg)
    }
}

fn split_csv_line(line: &str) -> Vec<String> {
    line.split(',').map(|s| s.trim().to_string()).collect()
}

fn parse_f64(s: &str, row: usize, col: &str) -> Result<f64, CohortError> {
    s.parse::<f64>().map_err(|_| CohortError::Row {
        row,
        msg: format!("cannot parse `{s}` as number in column `{col}`"),
    })
}

/// Loads a long-format cohort CSV. Rows are grouped by id (order of first
/// appearance), sorted by step, and checked against the invariants:
/// consecutive unique steps, non-decreasing timestamps, constant outcome
/// columns per individual. No standardization happens here; evaluation
/// protocols standardize with statistics from their own training split.
pub fn load_cohort_csv(path: &Path, schema: &SchemaConfig) -> Result<CohortBatch, CohortError> {
    let text = std::fs::read_to_string(path).map_err(|e| CohortError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    load_cohort_str(&text, schema)
}

pub fn load_cohort_str(text: &str, schema: &SchemaConfig) -> Result<CohortBatch, CohortError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| CohortError::Empty("file has no header".into()))?;
    let cols = split_csv_line(header);
    let col_idx = |name: &str| -> Result<usize, CohortError> {
        cols.iter()
            .position(|c| c == name)
            .ok_or_else(|| CohortError::MissingColumn(name.into()))
    };
    let id_i = col_idx(&schema.id)?;
    let step_i = col_idx(&schema.step)?;
    let time_i = col_idx(&schema.time)?;
    let label_i = col_idx(&schema.label)?;
    let cens_i = col_idx(&schema.censored)?;
    let last_i = col_idx(&schema.last_obs)?;
    let role_cols = [id_i, step_i, time_i, label_i, cens_i, last_i];

    let event_names: Vec<String> = match &schema.events {
        Some(list) => list.clone(),
        None => cols
            .iter()
            .enumerate()
            .filter(|(i, c)| !role_cols.contains(i) && c.starts_with("ev_"))
            .map(|(_, c)| c.clone())
            .collect(),
    };
    let feature_names: Vec<String> = match &schema.features {
        Some(list) => list.clone(),
        None => cols
            .iter()
            .enumerate()
            .filter(|(i, c)| !role_cols.contains(i) && !event_names.contains(c))
            .map(|(_, c)| c.clone())
            .collect(),
    };
    let feature_idx: Vec<usize> = feature_names
        .iter()
        .map(|n| col_idx(n))
        .collect::<Result<_, _>>()?;
    let event_idx: Vec<usize> = event_names
        .iter()
        .map(|n| col_idx(n))
        .collect::<Result<_, _>>()?;

    struct RawRow {
        step: usize,
        time: f64,
        features: Vec<f64>,
        events: Vec<bool>,
        label: f64,
        censored: bool,
        last_obs: f64,
        row_no: usize,
    }

    let mut order: Vec<String> = Vec::new();
    let mut by_id: BTreeMap<String, Vec<RawRow>> = BTreeMap::new();
    let mut n_rows = 0usize;
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let row_no = lineno + 1;
        let fields = split_csv_line(line);
        if fields.len() != cols.len() {
            return Err(CohortError::Row {
                row: row_no,
                msg: format!("expected {} fields, got {}", cols.len(), fields.len()),
            });
        }
        let id = fields[id_i].clone();
        let step = fields[step_i].parse::<usize>().map_err(|_| CohortError::Row {
            row: row_no,
            msg: format!("bad step `{}`", fields[step_i]),
        })?;
        let censored = match fields[cens_i].as_str() {
            "0" => false,
            "1" => true,
            other => {
                return Err(CohortError::Row {
                    row: row_no,
                    msg: format!("censored must be 0 or 1, got `{other}`"),
                })
            }
        };
        let row = RawRow {
            step,
            time: parse_f64(&fields[time_i], row_no, &schema.time)?,
            features: feature_idx
                .iter()
                .map(|&i| parse_f64(&fields[i], row_no, &cols[i]))
                .collect::<Result<_, _>>()?,
            events: event_idx
                .iter()
                .map(|&i| match fields[i].as_str() {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    other => Err(CohortError::Row {
                        row: row_no,
                        msg: format!("event flag must be 0 or 1, got `{other}`"),
                    }),
                })
                .collect::<Result<_, _>>()?,
            label: parse_f64(&fields[label_i], row_no, &schema.label)?,
            censored,
            last_obs: parse_f64(&fields[last_i], row_no, &schema.last_obs)?,
            row_no,
        };
        if !by_id.contains_key(&id) {
            order.push(id.clone());
        }
        by_id.entry(id).or_default().push(row);
        n_rows += 1;
    }
    if n_rows == 0 {
        return Err(CohortError::Empty("no data rows".into()));
    }

    let mut individuals = Vec::with_capacity(order.len());
    for id in order {
        let mut rows = by_id.remove(&id).unwrap();
        rows.sort_by_key(|r| r.step);
        for w in rows.windows(2) {
            if w[0].step == w[1].step {
                return Err(CohortError::Row {
                    row: w[1].row_no,
                    msg: format!("duplicate (id={id}, step={})", w[1].step),
                });
            }
        }
        for w in rows.windows(2) {
            if w[1].time < w[0].time {
                return Err(CohortError::Row {
                    row: w[1].row_no,
                    msg: format!("non-monotone timestamps for id={id}"),
                });
            }
        }
        let first = &rows[0];
        let (label, censored, last_obs) = (first.label, first.censored, first.last_obs);
        for r in &rows {
            if r.label != label || r.censored != censored || r.last_obs != last_obs {
                return Err(CohortError::Row {
                    row: r.row_no,
                    msg: format!("outcome columns vary within id={id}"),
                });
            }
        }
        individuals.push(Individual {
            id,
            times: rows.iter().map(|r| r.time).collect(),
            features: rows.iter().map(|r| r.features.clone()).collect(),
            events: rows.iter().map(|r| r.events.clone()).collect(),
            label_day: label,
            censored,
            last_obs_day: last_obs,
        });
    }
    let cohort = CohortBatch {
        feature_names,
        event_names,
        individuals,
    };
    cohort.validate()?;
    Ok(cohort)
}

/// Serializes a cohort in the long-format schema. Floats use Rust's
/// shortest round-trip representation, so write -> read is lossless.
pub fn cohort_to_csv(cohort: &CohortBatch) -> String {
    let mut out = String::new();
    out.push_str("id,step,t_days");
    for f in &cohort.feature_names {
        let _ = write!(out, ",{f}");
    }
    for e in &cohort.event_names {
        let _ = write!(out, ",{e}");
    }
    out.push_str(",label_day,censored,last_obs_day\n");
    for ind in &cohort.individuals {
        for step in 0..ind.len() {
            let _ = write!(out, "{},{},{}", ind.id, step, ind.times[step]);
            for v in &ind.features[step] {
                let _ = write!(out, ",{v}");
            }
            for &b in &ind.events[step] {
                let _ = write!(out, ",{}", if b { 1 } else { 0 });
            }
            let _ = writeln!(
                out,
                ",{},{},{}",
                ind.label_day,
                if ind.censored { 1 } else { 0 },
                ind.last_obs_day
            );
        }
    }
    out
}

pub fn write_cohort_csv(cohort: &CohortBatch, path: &Path) -> Result<(), CohortError> {
    std::fs::write(path, cohort_to_csv(cohort)).map_err(|e| CohortError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Per-feature mean/std computed over a subset of individuals (all steps).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Computes standardization statistics over the listed individuals only.
/// Callers evaluating a protocol must pass the training split here and
/// apply the result to both splits.
pub fn feature_stats(cohort: &CohortBatch, indices: &[usize]) -> FeatureStats {
    let p = cohort.feature_names.len();
    let mut mean = vec![0.0; p];
    let mut count = 0usize;
    for &i in indices {
        for row in &cohort.individuals[i].features {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
            count += 1;
        }
    }
    let count = count.max(1) as f64;
    for m in &mut mean {
        *m /= count;
    }
    let mut var = vec![0.0; p];
    for &i in indices {
        for row in &cohort.individuals[i].features {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
    }
    let std = var
        .iter()
        .map(|s| (s / count).sqrt())
        .map(|s| if s < 1e-12 { 1.0 } else { s })
        .collect();
    FeatureStats { mean, std }
}

/// Returns a copy of the cohort with z-scored features.
pub fn standardize(cohort: &CohortBatch, stats: &FeatureStats) -> CohortBatch {
    let mut out = cohort.clone();
    for ind in &mut out.individuals {
        for row in &mut ind.features {
            for ((v, m), s) in row.iter_mut().zip(&stats.mean).zip(&stats.std) {
                *v = (*v - m) / s;
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Survival tables
// ---------------------------------------------------------------------------

/// One survival-analysis record: static covariates, follow-up duration,
/// and whether the event was observed (1) or censored (0).
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalRecord {
    pub covariates: Vec<f64>,
    pub duration: f64,
    pub event: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalTable {
    pub covariate_names: Vec<String>,
    pub records: Vec<SurvivalRecord>,
    /// Rows dropped for non-positive duration.
    pub rejected_rows: usize,
}

impl SurvivalTable {
    pub fn censoring_fraction(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        let censored = self.records.iter().filter(|r| !r.event).count();
        censored as f64 / self.records.len() as f64
    }
}

/// Loads a flat survival CSV: `duration,event,<covariate...>`. Rows with
/// non-positive duration are rejected and counted, not fatal.
pub fn load_survival_table(path: &Path) -> Result<SurvivalTable, CohortError> {
    let text = std::fs::read_to_string(path).map_err(|e| CohortError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    load_survival_str(&text)
}

pub fn load_survival_str(text: &str) -> Result<SurvivalTable, CohortError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| CohortError::Empty("file has no header".into()))?;
    let cols = split_csv_line(header);
    let dur_i = cols
        .iter()
        .position(|c| c == "duration")
        .ok_or_else(|| CohortError::MissingColumn("duration".into()))?;
    let ev_i = cols
        .iter()
        .position(|c| c == "event")
        .ok_or_else(|| CohortError::MissingColumn("event".into()))?;
    let cov_idx: Vec<usize> = (0..cols.len()).filter(|i| *i != dur_i && *i != ev_i).collect();
    let covariate_names = cov_idx.iter().map(|&i| cols[i].clone()).collect();

    let mut records = Vec::new();
    let mut rejected = 0usize;
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let row_no = lineno + 1;
        let fields = split_csv_line(line);
        if fields.len() != cols.len() {
            return Err(CohortError::Row {
                row: row_no,
                msg: format!("expected {} fields, got {}", cols.len(), fields.len()),
            });
        }
        let duration = parse_f64(&fields[dur_i], row_no, "duration")?;
        let event = match fields[ev_i].as_str() {
            "0" => false,
            "1" => true,
            other => {
                return Err(CohortError::Row {
                    row: row_no,
                    msg: format!("event must be 0 or 1, got `{other}`"),
                })
            }
        };
        if duration <= 0.0 {
            rejected += 1;
            continue;
        }
        let covariates = cov_idx
            .iter()
            .map(|&i| parse_f64(&fields[i], row_no, &cols[i]))
            .collect::<Result<_, _>>()?;
        records.push(SurvivalRecord {
            covariates,
            duration,
            event,
        });
    }
    if records.is_empty() {
        return Err(CohortError::Empty("no usable survival records".into()));
    }
    Ok(SurvivalTable {
        covariate_names,
        records,
        rejected_rows: rejected,
    })
}

pub fn survival_to_csv(table: &SurvivalTable) -> String {
    let mut out = String::from("duration,event");
    for c in &table.covariate_names {
        let _ = write!(out, ",{c}");
    }
    out.push('\n');
    for r in &table.records {
        let _ = write!(out, "{},{}", r.duration, if r.event { 1 } else { 0 });
        for v in &r.covariates {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn write_survival_csv(table: &SurvivalTable, path: &Path) -> Result<(), CohortError> {
    std::fs::write(path, survival_to_csv(table)).map_err(|e| CohortError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

// ---------------------------------------------------------------------------
// Time-warp regression cohort
// ---------------------------------------------------------------------------

/// Configuration for the time-warp regression cohort generator.
#[derive(Debug, Clone)]
pub struct WarpCohortConfig {
    pub n: usize,
    pub steps: usize,
    pub seed: u64,
    /// Half-width of the per-individual warp exponent: gamma_j is drawn
    /// uniformly in [-warp_strength, +warp_strength] and the individual's
    /// clock runs at rate exp(gamma_j).
    pub warp_strength: f64,
    /// Observation noise std on every feature channel.
    pub noise: f64,
    /// Fraction of individuals whose follow-up is cut before the event.
    pub censor_fraction: f64,
}

impl WarpCohortConfig {
    pub fn new(n: usize, steps: usize, seed: u64, warp_strength: f64) -> Self {
        WarpCohortConfig {
            n,
            steps,
            seed,
            warp_strength,
            noise: 0.25,
            censor_fraction: 0.0,
        }
    }
}

/// Ground truth stored alongside a generated warp cohort.
#[derive(Debug, Clone)]
pub struct WarpGroundTruth {
    /// Per-individual warp exponent gamma_j (clock rate exp(gamma_j)).
    pub gamma: Vec<f64>,
    /// Latent progression level whose crossing defines the event.
    pub threshold: f64,
    /// Latent time of the crossing (shared across the cohort).
    pub latent_event_time: f64,
    /// Frequencies/phases of the two oscillatory channels.
    pub omega: [f64; 2],
    pub phase: [f64; 2],
}

/// Monotone latent progression curve shared by the whole cohort.
pub fn progression_curve(s: f64) -> f64 {
    s + (0.3 / 0.9) * (0.9 * s).sin()
}

const LATENT_SCAN_STEP: f64 = 1e-3;

/// Generates a cohort that observes one shared latent dynamic under
/// per-individual exponential time warps.
///
/// Individual j with warp exponent gamma_j sits at latent position
/// `s = exp(gamma_j) * t` at absolute day t. Features are the progression
/// curve plus two oscillatory channels (pace carries the warp signal) and
/// one pure-noise distractor. The label is the absolute day at which the
/// latent progression crosses a shared threshold, located by a dense
/// grid scan so an independent scan reproduces it exactly.
pub fn gen_warp_cohort(cfg: &WarpCohortConfig) -> (CohortBatch, WarpGroundTruth) {
    assert!(cfg.n >= 1 && cfg.steps >= 2, "warp cohort needs n >= 1, steps >= 2");
    let mut rng = Rng::from_seed(cfg.seed);
    let omega = [rng.range(0.35, 0.55), rng.range(0.6, 0.9)];
    let phase = [rng.range(0.0, std::f64::consts::TAU), rng.range(0.0, std::f64::consts::TAU)];

    // Observation grid shared by every individual (so the grid itself
    // carries no individual signal): one step per day with mild jitter.
    let mut times = Vec::with_capacity(cfg.steps);
    let mut t = 0.0;
    for i in 0..cfg.steps {
        times.push(t);
        let jitter = rng.range(0.7, 1.3);
        t += jitter;
        let _ = i;
    }
    let t_max = *times.last().unwrap();

    // Threshold crossing at 60% of the slowest individual's latent reach,
    // so every label lands inside the observation window.
    let slow_rate = (-cfg.warp_strength).exp();
    let latent_event_time = 0.6 * slow_rate * t_max;
    let threshold = progression_curve(latent_event_time);

    // Dense-grid scan for the crossing: first grid point at or past the
    // threshold. The label is this latent day mapped through the warp.
    let mut k = 0usize;
    let s_cross = loop {
        let s = k as f64 * LATENT_SCAN_STEP;
        if progression_curve(s) >= threshold {
            break s;
        }
        k += 1;
    };

    let mut gammas = Vec::with_capacity(cfg.n);
    let mut individuals = Vec::with_capacity(cfg.n);
    for j in 0..cfg.n {
        let gamma = if cfg.warp_strength == 0.0 {
            0.0
        } else {
            rng.range(-cfg.warp_strength, cfg.warp_strength)
        };
        let rate = gamma.exp();
        gammas.push(gamma);
        let label_day = s_cross / rate;

        let mut features = Vec::with_capacity(cfg.steps);
        for &ti in &times {
            let s = rate * ti;
            let row = vec![
                progression_curve(s) + cfg.noise * rng.normal(),
                (omega[0] * s + phase[0]).sin() + cfg.noise * rng.normal(),
                (omega[1] * s + phase[1]).cos() + cfg.noise * rng.normal(),
                rng.normal(),
            ];
            features.push(row);
        }
        individuals.push(Individual {
            id: format!("w{j:04}"),
            times: times.clone(),
            features,
            events: vec![vec![]; cfg.steps],
            label_day,
            censored: false,
            last_obs_day: t_max,
        });
    }

    // Censoring: cut the chosen individuals' follow-up before their label.
    let n_censor = (cfg.censor_fraction * cfg.n as f64).round() as usize;
    if n_censor > 0 {
        let mut order: Vec<usize> = (0..cfg.n).collect();
        rng.shuffle(&mut order);
        for &j in order.iter().take(n_censor) {
            let ind = &mut individuals[j];
            let cut_day = ind.label_day * rng.range(0.4, 0.9);
            let keep = ind.times.iter().filter(|&&t| t < cut_day).count().max(2);
            ind.times.truncate(keep);
            ind.features.truncate(keep);
            ind.events.truncate(keep);
            ind.censored = true;
            ind.last_obs_day = *ind.times.last().unwrap();
        }
    }

    let cohort = CohortBatch {
        feature_names: vec![
            "progression".into(),
            "osc_slow".into(),
            "osc_fast".into(),
            "distractor".into(),
        ],
        event_names: vec![],
        individuals,
    };
    let truth = WarpGroundTruth {
        gamma: gammas,
        threshold,
        latent_event_time: s_cross,
        omega,
        phase,
    };
    (cohort, truth)
}

// ---------------------------------------------------------------------------
// Planted-trajectory event cohort
// ---------------------------------------------------------------------------

/// Configuration for the planted-trajectory event cohort generator.
#[derive(Debug, Clone)]
pub struct EventCohortConfig {
    pub n: usize,
    /// Candidate event ids; planted ones must be listed here too.
    pub candidates: Vec<String>,
    /// Events planted in this order with aligned relative timing.
    pub planted_path: Vec<String>,
    /// Two planted events that share the same timing target with the
    /// order randomized per individual (a planted Markov blanket).
    pub order_free_pair: Option<(String, String)>,
    /// Scales the timing jitter of planted events; 0 disables it.
    pub noise: f64,
    pub seed: u64,
}

/// Ground truth stored alongside a generated event cohort.
#[derive(Debug, Clone)]
pub struct EventGroundTruth {
    /// Constant per-step scaling coefficient of each individual.
    pub gamma: Vec<f64>,
    /// Log-tau targets of each planted event, path order.
    pub log_tau_targets: Vec<f64>,
    /// Fraction of non-conforming (outlier-timed) individuals per planted
    /// event, path order.
    pub outlier_fractions: Vec<f64>,
    pub steps: usize,
}

const EVENT_STEPS: usize = 60;

/// Generates a cohort with a planted significant-event trajectory.
///
/// Each individual has a constant per-step coefficient gamma_j in
/// [0.05, 0.15], so the relative timestamp of step k is
/// `exp(-(k+1) gamma_j)`. Planted event m targets a shared log-tau value
/// c_m: conforming individuals place it at the step closest to
/// `c_m / gamma_j` (tight alignment on the relative timeline), while a
/// small outlier fraction places it uniformly at random (dispersed).
/// Outlier fractions grow along the path, so attention decreases along it
/// and the greedy expansion has a unique argmax. Non-planted candidates
/// fire at uniform steps for almost everyone and stay diffuse.
pub fn gen_event_cohort(cfg: &EventCohortConfig) -> (CohortBatch, EventGroundTruth) {
    assert!(cfg.n >= 2, "event cohort needs n >= 2");
    for e in &cfg.planted_path {
        assert!(cfg.candidates.contains(e), "planted event {e} not in candidates");
    }
    if let Some((a, b)) = &cfg.order_free_pair {
        assert!(cfg.planted_path.contains(a) && cfg.planted_path.contains(b));
    }
    let mut rng = Rng::from_seed(cfg.seed);
    let steps = EVENT_STEPS;
    let m = cfg.planted_path.len();

    // Log-tau targets spaced 0.8 apart starting at 0.8; outlier share
    // grows along the path: 2%, 7%, 12%, ... so attention (roughly the
    // inverse outlier fraction) strictly decreases along it.
    let log_tau_targets: Vec<f64> = (0..m).map(|i| 0.8 * (i + 1) as f64).collect();
    let outlier_fractions: Vec<f64> = (0..m).map(|i| 0.02 + 0.05 * i as f64).collect();
    let pair_idx = cfg.order_free_pair.as_ref().map(|(a, b)| {
        (
            cfg.planted_path.iter().position(|e| e == a).unwrap(),
            cfg.planted_path.iter().position(|e| e == b).unwrap(),
        )
    });
    // Exact outlier counts per event (membership shuffled): attention is
    // roughly inversely proportional to the realized count, so fixing the
    // count keeps the planted ordering stable across seeds. The pair's
    // second member reuses the first member's flags.
    let outlier_flags: Vec<Vec<bool>> = outlier_fractions
        .iter()
        .enumerate()
        .map(|(idx, &p)| {
            let src = match pair_idx {
                Some((ia, ib)) if idx == ib => ia,
                _ => idx,
            };
            let m_out =
                ((outlier_fractions[src] * cfg.noise.min(1.0)) * cfg.n as f64).round() as usize;
            let mut flags = vec![false; cfg.n];
            for f in flags.iter_mut().take(m_out) {
                *f = true;
            }
            rng.shuffle(&mut flags);
            flags
        })
        .collect();
    // The pair shares membership exactly.
    let outlier_flags: Vec<Vec<bool>> = {
        let mut of = outlier_flags;
        if let Some((ia, ib)) = pair_idx {
            of[ib] = of[ia].clone();
        }
        of
    };

    let mut gammas = Vec::with_capacity(cfg.n);
    let mut individuals = Vec::with_capacity(cfg.n);
    for j in 0..cfg.n {
        let gamma = rng.range(0.07, 0.15);
        gammas.push(gamma);
        // Step whose log-tau is closest to target c: (k+1) gamma ~ c.
        let step_for = |c: f64| -> usize {
            let k = (c / gamma).round() as isize - 1;
            k.clamp(0, steps as isize - 1) as usize
        };
        let uniform_noise_step =
            |rng: &mut Rng| -> usize { (steps / 5) + rng.below(steps - 2 * (steps / 5)) };
        // Outliers sit at a fixed log-tau distance from their event's
        // core, symmetric in sign. The offset shape is then identical
        // across planted events up to the core scale (kurtosis is scale
        // invariant), so attention ordering is governed by the outlier
        // fractions alone.
        let outlier_step_for = |c: f64, rng: &mut Rng| -> usize {
            let u = rng.range(0.55, 0.65);
            let sign = if rng.bernoulli(0.5) { 1.0 } else { -1.0 };
            let k = ((c + sign * u) / gamma).round() as isize - 1;
            k.clamp(0, steps as isize - 1) as usize
        };

        let mut event_steps: Vec<usize> = Vec::with_capacity(cfg.candidates.len());
        let mut conforming = true;
        // Planted events, with the order-free pair handled jointly so the
        // two tau collections stay element-coupled.
        let mut planted_steps = vec![0usize; m];
        let pair_shared: Option<(usize, f64, bool)> = pair_idx.map(|(ia, _)| {
            let outlier_step = outlier_step_for(log_tau_targets[ia], &mut rng);
            let eps = rng.range(0.0, 0.06) * cfg.noise;
            let swap = rng.bernoulli(0.5);
            (outlier_step, eps, swap)
        });
        for (idx, &c) in log_tau_targets.iter().enumerate() {
            let in_pair = pair_idx
                .map(|(ia, ib)| idx == ia || idx == ib)
                .unwrap_or(false);
            let is_outlier = outlier_flags[idx][j];
            if in_pair {
                let (ia, _) = pair_idx.unwrap();
                let (outlier_step, eps, swap) = pair_shared.unwrap();
                let base_c = log_tau_targets[ia];
                if is_outlier {
                    planted_steps[idx] = outlier_step;
                    conforming = false;
                } else {
                    let first = idx == pair_idx.unwrap().0;
                    let sign = if first == swap { 1.0 } else { -1.0 };
                    planted_steps[idx] = step_for(base_c + sign * eps);
                }
            } else if is_outlier {
                planted_steps[idx] = outlier_step_for(c, &mut rng);
                conforming = false;
            } else {
                let jitter = 0.01 * cfg.noise * rng.normal();
                planted_steps[idx] = step_for(c + jitter);
            }
        }
        // Candidates: planted ones at their steps, the rest diffuse.
        for cand in &cfg.candidates {
            if let Some(pi) = cfg.planted_path.iter().position(|e| e == cand) {
                event_steps.push(planted_steps[pi]);
            } else {
                // 95% occurrence at a dispersed step; the missing 5%
                // exercise the exclusion counting.
                if rng.bernoulli(0.95) {
                    event_steps.push(uniform_noise_step(&mut rng));
                } else {
                    event_steps.push(usize::MAX);
                }
            }
        }

        let times: Vec<f64> = (0..steps).map(|k| k as f64).collect();
        let mut events = vec![vec![false; cfg.candidates.len()]; steps];
        for (ei, &st) in event_steps.iter().enumerate() {
            if st != usize::MAX {
                events[st][ei] = true;
            }
        }
        let features: Vec<Vec<f64>> = (0..steps).map(|_| vec![rng.normal()]).collect();
        // Conforming individuals carry the positive label; the event day
        // is the day of the last planted event.
        let last_planted_day = *planted_steps.iter().max().unwrap_or(&0) as f64;
        individuals.push(Individual {
            id: format!("e{j:04}"),
            times,
            features,
            events,
            label_day: if conforming { last_planted_day } else { steps as f64 },
            censored: !conforming,
            last_obs_day: (steps - 1) as f64,
        });
    }

    let cohort = CohortBatch {
        feature_names: vec!["background".into()],
        event_names: cfg.candidates.iter().map(|c| format!("ev_{c}")).collect(),
        individuals,
    };
    let truth = EventGroundTruth {
        gamma: gammas,
        log_tau_targets,
        outlier_fractions,
        steps,
    };
    (cohort, truth)
}

// ---------------------------------------------------------------------------
// Survival benchmark stand-ins
// ---------------------------------------------------------------------------

/// Shapes for generated survival benchmarks. The two presets mirror the
/// row counts, covariate counts, censoring levels, and duration
/// resolution of the eponymous public datasets; hazards are synthetic
/// (linear for the SUPPORT shape, linear plus interactions for the
/// METABRIC shape, which is what lets nonlinear models pull ahead there).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurvivalPreset {
    SupportLike,
    MetabricLike,
}

impl SurvivalPreset {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "support-like" | "support" => Some(SurvivalPreset::SupportLike),
            "metabric-like" | "metabric" => Some(SurvivalPreset::MetabricLike),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SurvivalPreset::SupportLike => "support-like",
            SurvivalPreset::MetabricLike => "metabric-like",
        }
    }
}

/// Generates a survival table with the given preset shape. Durations are
/// exponential with a log-linear (plus, for the METABRIC shape,
/// log-nonlinear) hazard, rounded to the dataset's native resolution so
/// tied durations occur, and censored by an independent follow-up cutoff.
pub fn gen_survival_table(preset: SurvivalPreset, seed: u64) -> SurvivalTable {
    let mut rng = Rng::from_seed(seed);
    match preset {
        SurvivalPreset::SupportLike => {
            let n = 9105;
            let p = 14;
            // Linear log-hazard, weights shaped so a proportional-hazards
            // fit lands near the 0.60 concordance regime.
            let beta: Vec<f64> = vec![
                0.32, -0.24, 0.18, 0.12, -0.10, 0.08, 0.0, 0.0, 0.15, -0.06, 0.0, 0.05, -0.04,
                0.03,
            ];
            gen_survival_rows(&mut rng, n, p, &beta, 0.0, 2.55, 1.0, "x")
        }
        SurvivalPreset::MetabricLike => {
            let n = 1980;
            let p = 9;
            let beta: Vec<f64> = vec![0.28, -0.22, 0.16, 0.10, 0.0, 0.08, -0.05, 0.0, 0.04];
            gen_survival_rows(&mut rng, n, p, &beta, 0.55, 1.8, 1.0, "m")
        }
    }
}

fn gen_survival_rows(
    rng: &mut Rng,
    n: usize,
    p: usize,
    beta: &[f64],
    nonlinear_scale: f64,
    censor_scale: f64,
    round_to: f64,
    prefix: &str,
) -> SurvivalTable {
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        // Half the covariates continuous, half binary, like typical
        // clinical tables.
        let covariates: Vec<f64> = (0..p)
            .map(|k| {
                if k % 2 == 0 {
                    rng.normal()
                } else if rng.bernoulli(0.4) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let mut lp: f64 = covariates.iter().zip(beta).map(|(x, b)| x * b).sum();
        if nonlinear_scale > 0.0 {
            lp += nonlinear_scale
                * (covariates[0] * covariates[2] + 0.7 * (covariates[4] * 1.2).tanh()
                    - 0.6 * covariates[0].abs());
        }
        let hazard = lp.exp();
        let t_event = rng.exponential() / hazard;
        let t_censor = censor_scale * rng.exponential();
        let (duration, event) = if t_event <= t_censor {
            (t_event, true)
        } else {
            (t_censor, false)
        };
        // Round to native resolution; keep at least one unit.
        let duration = ((duration * 30.0 / round_to).ceil() * round_to).max(1.0);
        records.push(SurvivalRecord {
            covariates,
            duration,
            event,
        });
    }
    SurvivalTable {
        covariate_names: (0..p).map(|k| format!("{prefix}{k}")).collect(),
        records,
        rejected_rows: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_cohort() -> CohortBatch {
        CohortBatch {
            feature_names: vec!["f0".into(), "f1".into()],
            event_names: vec!["ev_a".into()],
            individuals: vec![
                Individual {
                    id: "p1".into(),
                    times: vec![0.0, 3.0, 7.5],
                    features: vec![vec![1.0, 2.0], vec![1.5, 2.5], vec![2.0, 3.0]],
                    events: vec![vec![false], vec![true], vec![false]],
                    label_day: 5.0,
                    censored: false,
                    last_obs_day: 7.5,
                },
                Individual {
                    id: "p2".into(),
                    times: vec![0.0, 1.0],
                    features: vec![vec![-1.0, 0.0], vec![-2.0, 0.5]],
                    events: vec![vec![true], vec![true]],
                    label_day: 9.0,
                    censored: true,
                    last_obs_day: 1.0,
                },
            ],
        }
    }

    #[test]
    fn roundtrip_is_lossless() {
        let cohort = toy_cohort();
        let csv = cohort_to_csv(&cohort);
        let back = load_cohort_str(&csv, &SchemaConfig::default()).unwrap();
        assert_eq!(cohort, back);
    }

    #[test]
    fn golden_two_individual_fixture() {
        let csv = "id,step,t_days,f0,ev_a,label_day,censored,last_obs_day\n\
                   a,0,0,1.5,0,4,0,6\n\
                   a,1,2,2.5,1,4,0,6\n\
                   b,0,0,-1,1,8,1,3\n";
        let cohort = load_cohort_str(csv, &SchemaConfig::default()).unwrap();
        assert_eq!(cohort.feature_names, vec!["f0"]);
        assert_eq!(cohort.event_names, vec!["ev_a"]);
        assert_eq!(cohort.n(), 2);
        assert_eq!(cohort.individuals[0].times, vec![0.0, 2.0]);
        assert!(cohort.individuals[0].events[1][0]);
        assert!(cohort.individuals[1].censored);
    }

    #[test]
    fn empty_file_errors() {
        assert!(matches!(
            load_cohort_str("", &SchemaConfig::default()),
            Err(CohortError::Empty(_))
        ));
        let only_header = "id,step,t_days,f0,label_day,censored,last_obs_day\n";
        assert!(matches!(
            load_cohort_str(only_header, &SchemaConfig::default()),
            Err(CohortError::Empty(_))
        ));
    }

    #[test]
    fn missing_column_errors() {
        let csv = "id,step,f0,label_day,censored,last_obs_day\na,0,1,2,0,3\n";
        assert!(matches!(
            load_cohort_str(csv, &SchemaConfig::default()),
            Err(CohortError::MissingColumn(c)) if c == "t_days"
        ));
    }

    #[test]
    fn duplicate_step_errors_with_row() {
        let csv = "id,step,t_days,f0,label_day,censored,last_obs_day\n\
                   a,0,0,1,4,0,6\na,0,1,2,4,0,6\n";
        match load_cohort_str(csv, &SchemaConfig::default()) {
            Err(CohortError::Row { row, msg }) => {
                assert_eq!(row, 3);
                assert!(msg.contains("duplicate"));
            }
            other => panic!("expected duplicate-step error, got {other:?}"),
        }
    }

    #[test]
    fn non_monotone_timestamps_error() {
        let csv = "id,step,t_days,f0,label_day,censored,last_obs_day\n\
                   a,0,5,1,4,0,6\na,1,2,2,4,0,6\n";
        assert!(matches!(
            load_cohort_str(csv, &SchemaConfig::default()),
            Err(CohortError::Row { .. })
        ));
    }

    #[test]
    fn schema_kv_overrides_roles() {
        let cfg = SchemaConfig::from_kv(
            "id=patient\ntime=day\nfeatures=height,weight\nevents=chemo\n",
        )
        .unwrap();
        assert_eq!(cfg.id, "patient");
        assert_eq!(cfg.time, "day");
        assert_eq!(cfg.features.as_deref(), Some(&["height".to_string(), "weight".into()][..]));
        let csv = "patient,step,day,height,weight,chemo,label_day,censored,last_obs_day\n\
                   a,0,0,170,60,1,4,0,6\n";
        let cohort = load_cohort_str(csv, &cfg).unwrap();
        assert_eq!(cohort.event_names, vec!["chemo"]);
        assert_eq!(cohort.feature_names.len(), 2);
    }

    #[test]
    fn schema_kv_rejects_unknown_key() {
        assert!(SchemaConfig::from_kv("bogus=1\n").is_err());
    }

    #[test]
    fn standardization_uses_given_split_only() {
        let (cohort, _) = gen_warp_cohort(&WarpCohortConfig::new(40, 10, 3, 0.4));
        let train: Vec<usize> = (0..20).collect();
        let test: Vec<usize> = (20..40).collect();
        let tr_stats = feature_stats(&cohort, &train);
        let te_stats = feature_stats(&cohort, &test);
        assert_ne!(tr_stats, te_stats, "splits should differ statistically");
        let std_cohort = standardize(&cohort, &tr_stats);
        // Training features are centered under their own stats...
        let re_stats = feature_stats(&std_cohort, &train);
        for m in &re_stats.mean {
            assert!(m.abs() < 1e-9);
        }
        // ...while the test split, standardized with training stats, is not.
        let te_after = feature_stats(&std_cohort, &test);
        assert!(te_after.mean.iter().any(|m| m.abs() > 1e-6));
    }

    #[test]
    fn warp_cohort_deterministic_and_valid() {
        let cfg = WarpCohortConfig::new(30, 20, 11, 0.5);
        let (a, ta) = gen_warp_cohort(&cfg);
        let (b, tb) = gen_warp_cohort(&cfg);
        assert_eq!(a, b);
        assert_eq!(ta.gamma, tb.gamma);
        a.validate().unwrap();
    }

    #[test]
    fn warp_zero_strength_gives_identical_labels() {
        let (cohort, truth) = gen_warp_cohort(&WarpCohortConfig::new(10, 15, 7, 0.0));
        let first = cohort.individuals[0].label_day;
        for ind in &cohort.individuals {
            assert_eq!(ind.label_day, first);
        }
        assert!(truth.gamma.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn warp_label_matches_independent_scan() {
        let (cohort, truth) = gen_warp_cohort(&WarpCohortConfig::new(25, 30, 13, 0.5));
        // Independent linear scan over the same dense latent grid.
        let mut k = 0usize;
        let s_cross = loop {
            let s = k as f64 * 1e-3;
            if progression_curve(s) >= truth.threshold {
                break s;
            }
            k += 1;
        };
        assert_eq!(s_cross, truth.latent_event_time);
        for (ind, g) in cohort.individuals.iter().zip(&truth.gamma) {
            let expect = s_cross / g.exp();
            assert!((ind.label_day - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn warp_censoring_fraction_respected() {
        let mut cfg = WarpCohortConfig::new(50, 25, 17, 0.5);
        cfg.censor_fraction = 0.2;
        let (cohort, _) = gen_warp_cohort(&cfg);
        cohort.validate().unwrap();
        let censored = cohort.individuals.iter().filter(|i| i.censored).count();
        assert_eq!(censored, 10);
        for ind in &cohort.individuals {
            if ind.censored {
                assert!(ind.last_obs_day < ind.label_day);
            }
        }
    }

    #[test]
    fn event_cohort_deterministic_and_valid() {
        let cfg = EventCohortConfig {
            n: 50,
            candidates: vec!["A".into(), "B".into(), "C".into(), "N1".into()],
            planted_path: vec!["A".into(), "B".into(), "C".into()],
            order_free_pair: None,
            noise: 1.0,
            seed: 5,
        };
        let (a, _) = gen_event_cohort(&cfg);
        let (b, _) = gen_event_cohort(&cfg);
        assert_eq!(a, b);
        a.validate().unwrap();
        assert_eq!(a.event_names, vec!["ev_A", "ev_B", "ev_C", "ev_N1"]);
    }

    #[test]
    fn event_cohort_plants_ordered_path() {
        let cfg = EventCohortConfig {
            n: 80,
            candidates: vec!["A".into(), "B".into(), "C".into()],
            planted_path: vec!["A".into(), "B".into(), "C".into()],
            order_free_pair: None,
            noise: 0.0, // no outliers: everyone conforms
            seed: 9,
        };
        let (cohort, _) = gen_event_cohort(&cfg);
        for ind in &cohort.individuals {
            let a = ind.occurrence_step(0, 1).unwrap();
            let b = ind.occurrence_step(1, 1).unwrap();
            let c = ind.occurrence_step(2, 1).unwrap();
            assert!(a < b && b < c, "planted order violated: {a} {b} {c}");
        }
    }

    #[test]
    fn event_cohort_order_free_pair_randomizes_order() {
        let cfg = EventCohortConfig {
            n: 200,
            candidates: vec!["A".into(), "B".into(), "C".into()],
            planted_path: vec!["A".into(), "B".into(), "C".into()],
            order_free_pair: Some(("B".into(), "C".into())),
            noise: 1.0,
            seed: 4,
        };
        let (cohort, _) = gen_event_cohort(&cfg);
        let mut b_first = 0;
        let mut c_first = 0;
        for ind in &cohort.individuals {
            let b = ind.occurrence_step(1, 1).unwrap();
            let c = ind.occurrence_step(2, 1).unwrap();
            if b < c {
                b_first += 1;
            } else if c < b {
                c_first += 1;
            }
        }
        assert!(b_first > 20 && c_first > 20, "order not randomized: {b_first} vs {c_first}");
    }

    #[test]
    fn survival_csv_roundtrip_and_rejection() {
        let table = gen_survival_table(SurvivalPreset::MetabricLike, 1);
        let csv = survival_to_csv(&table);
        let back = load_survival_str(&csv).unwrap();
        assert_eq!(table.records.len(), back.records.len());
        assert_eq!(table.records[0], back.records[0]);

        let bad = "duration,event,x0\n-1,1,0.5\n3,0,0.2\n";
        let t = load_survival_str(bad).unwrap();
        assert_eq!(t.rejected_rows, 1);
        assert_eq!(t.records.len(), 1);
    }

    #[test]
    fn survival_toy_fixture_parses() {
        let csv = "duration,event,age,stage\n10,1,0.5,1\n20,0,-0.2,0\n5,1,1.1,1\n8,0,0.0,0\n30,1,-1.0,1\n";
        let t = load_survival_str(csv).unwrap();
        assert_eq!(t.records.len(), 5);
        assert_eq!(t.covariate_names, vec!["age", "stage"]);
        assert!((t.censoring_fraction() - 0.4).abs() < 1e-12);
        assert!(t.records[0].event && !t.records[1].event);
        assert_eq!(t.records[2].covariates, vec![1.1, 1.0]);
    }

    #[test]
    #[ignore]
    fn scan_survival_censoring() {
        for scale in [1.5, 2.0, 2.4, 2.8, 3.2] {
            let mut rng = Rng::from_seed(2);
            let beta: Vec<f64> = vec![
                0.32, -0.24, 0.18, 0.12, -0.10, 0.08, 0.0, 0.0, 0.15, -0.06, 0.0, 0.05, -0.04,
                0.03,
            ];
            let t = gen_survival_rows(&mut rng, 9105, 14, &beta, 0.0, scale, 1.0, "x");
            println!("support scale {scale}: censoring {:.3}", t.censoring_fraction());
        }
        for scale in [2.0, 2.6, 3.2, 4.0] {
            let mut rng = Rng::from_seed(2);
            let beta: Vec<f64> = vec![0.28, -0.22, 0.16, 0.10, 0.0, 0.08, -0.05, 0.0, 0.04];
            let t = gen_survival_rows(&mut rng, 1980, 9, &beta, 0.55, scale, 1.0, "m");
            println!("metabric scale {scale}: censoring {:.3}", t.censoring_fraction());
        }
    }

    #[test]
    fn survival_presets_have_reference_shapes() {
        let s = gen_survival_table(SurvivalPreset::SupportLike, 2);
        assert_eq!(s.records.len(), 9105);
        assert_eq!(s.covariate_names.len(), 14);
        let frac = s.censoring_fraction();
        assert!((0.2..0.4).contains(&frac), "support-like censoring {frac}");

        let m = gen_survival_table(SurvivalPreset::MetabricLike, 2);
        assert_eq!(m.records.len(), 1980);
        assert_eq!(m.covariate_names.len(), 9);
        // Tied durations must exist (day rounding).
        let mut durs: Vec<u64> = m.records.iter().map(|r| r.duration as u64).collect();
        durs.sort_unstable();
        let ties = durs.windows(2).filter(|w| w[0] == w[1]).count();
        assert!(ties > 0, "expected tied durations");
    }
}
