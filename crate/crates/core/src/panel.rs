//! Irregular longitudinal panels on a discrete time grid.
//!
//! A [`PanelDataset`] is a validated cohort of [`SubjectPath`]s. Each subject
//! carries a baseline treatment, baseline covariates, a censoring time and an
//! ordered list of visits; between visits the endogenous covariates are
//! carried forward from the most recent visit.
//!
//! Times are stored as `f64` but every visit time is snapped onto the grid
//! during validation, so the integer cell index `round(t / dt)` is exact.
//! Cell 0 is cohort entry. A subject is at risk in cell `k >= 1` while
//! `k * dt <= censor_time`.

use std::collections::HashSet;

use thiserror::Error;

/// Relative tolerance (in units of `dt`) for snapping times onto the grid.
pub const GRID_SNAP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PanelError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("no subject records supplied")]
    EmptyRecords,
    #[error("a dataset needs at least 2 subjects, got {0}")]
    TooFewSubjects(usize),
    #[error("duplicate subject id `{0}`")]
    DuplicateId(String),
    #[error("subject `{id}`: visit times are not strictly increasing at visit {index}")]
    NonMonotoneVisits { id: String, index: usize },
    #[error("subject `{id}`: time {time} is not on the grid (dt = {dt}){}", row_suffix(*.row))]
    OffGridTime {
        id: String,
        time: f64,
        dt: f64,
        row: Option<usize>,
    },
    #[error("treatment arm {arm} has no subjects")]
    EmptyTreatmentArm { arm: u8 },
    #[error("subject `{id}`: expected {expected} {what} values, found {found}")]
    RaggedCovariates {
        id: String,
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("subject `{id}`: censoring time {time} outside (0, tau]")]
    BadCensorTime { id: String, time: f64 },
    #[error("subject `{id}`: visit at {time} falls outside [0, censor_time]")]
    VisitOutsideFollowUp { id: String, time: f64 },
    #[error("subject `{id}`: no time-0 visit and no initial covariates")]
    MissingBaselineVisit { id: String },
    #[error("subject `{id}`: non-finite value in {what}")]
    NonFinite { id: String, what: &'static str },
    #[error("subject `{id}`: no covariate observation at or before t = {time}")]
    NoPriorObservation { id: String, time: f64 },
    #[error("expected {expected} names for {what} columns, found {found}")]
    NameCount {
        what: &'static str,
        expected: usize,
        found: usize,
    },
}

fn row_suffix(row: Option<usize>) -> String {
    match row {
        Some(r) => format!(" (row {r})"),
        None => String::new(),
    }
}

/// Discrete time grid `0, dt, 2dt, ..., tau`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub dt: f64,
    pub tau: f64,
}

impl GridSpec {
    pub fn new(dt: f64, tau: f64) -> Result<Self, PanelError> {
        let grid = GridSpec { dt, tau };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<(), PanelError> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(PanelError::InvalidGrid(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(PanelError::InvalidGrid(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        let ratio = self.tau / self.dt;
        if (ratio - ratio.round()).abs() > GRID_SNAP_TOL * ratio.max(1.0) || ratio.round() < 1.0 {
            return Err(PanelError::InvalidGrid(format!(
                "tau = {} is not an integer multiple of dt = {}",
                self.tau, self.dt
            )));
        }
        Ok(())
    }

    /// Number of cells after entry, `round(tau / dt)`.
    pub fn n_cells(&self) -> u32 {
        (self.tau / self.dt).round() as u32
    }

    /// Grid time of cell `k`.
    pub fn time_of(&self, cell: u32) -> f64 {
        cell as f64 * self.dt
    }

    /// Cell index of an on-grid time, or `None` when `t` is off the grid by
    /// more than `GRID_SNAP_TOL * dt`.
    pub fn cell_of(&self, t: f64) -> Option<u32> {
        if !t.is_finite() || t < -GRID_SNAP_TOL * self.dt {
            return None;
        }
        let k = (t / self.dt).round();
        if (t - k * self.dt).abs() <= GRID_SNAP_TOL * self.dt {
            Some(k as u32)
        } else {
            None
        }
    }

    /// Last cell `k` with `k * dt <= censor_time`, capped at `n_cells`.
    pub fn last_at_risk_cell(&self, censor_time: f64) -> u32 {
        let k = ((censor_time + GRID_SNAP_TOL * self.dt) / self.dt).floor();
        (k.max(0.0) as u32).min(self.n_cells())
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { dt: 0.01, tau: 5.0 }
    }
}

/// One monitoring time: the outcome observed and the endogenous covariates
/// measured (updated) at that visit.
#[derive(Debug, Clone, PartialEq)]
pub struct VisitRecord {
    pub time: f64,
    pub outcome: f64,
    pub covariates: Vec<f64>,
}

impl VisitRecord {
    pub fn new(time: f64, outcome: f64, covariates: Vec<f64>) -> Self {
        VisitRecord {
            time,
            outcome,
            covariates,
        }
    }
}

/// Simulation-only internals attached to simulated subjects.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DgmTruth {
    pub replicate: u64,
    pub subject_index: u64,
    /// Mediator value that entered each visit's outcome (the value in force
    /// just before the visit), aligned with `visits`.
    pub outcome_mediator: Vec<f64>,
    /// Cells whose visit probability had to be clipped at 1.
    pub clipped_cells: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectPath {
    pub id: String,
    pub treatment: bool,
    pub baseline: Vec<f64>,
    pub censor_time: f64,
    pub visits: Vec<VisitRecord>,
    /// Covariates in force from entry when there is no time-0 visit.
    pub initial_covariates: Option<Vec<f64>>,
    pub truth: Option<DgmTruth>,
}

/// Absolute slack for time comparisons between on-grid values.
fn time_eps(t: f64) -> f64 {
    1e-12 * t.abs().max(1.0)
}

impl SubjectPath {
    pub fn new(id: impl Into<String>, treatment: bool, baseline: Vec<f64>, censor_time: f64) -> Self {
        SubjectPath {
            id: id.into(),
            treatment,
            baseline,
            censor_time,
            visits: Vec::new(),
            initial_covariates: None,
            truth: None,
        }
    }

    pub fn with_visit(mut self, time: f64, outcome: f64, covariates: Vec<f64>) -> Self {
        self.visits.push(VisitRecord::new(time, outcome, covariates));
        self
    }

    pub fn treatment_value(&self) -> f64 {
        if self.treatment {
            1.0
        } else {
            0.0
        }
    }

    /// Index of the latest visit at or before `t`.
    fn latest_visit_at_or_before(&self, t: f64) -> Option<usize> {
        let eps = time_eps(t);
        self.visits.iter().rposition(|v| v.time <= t + eps)
    }

    /// Time since the latest visit at or before `t`; time since entry when no
    /// visit has occurred yet. A visit at `t` resets the gap to 0.
    pub fn gap_time(&self, t: f64) -> f64 {
        match self.latest_visit_at_or_before(t) {
            Some(i) => (t - self.visits[i].time).max(0.0),
            None => t,
        }
    }

    /// Covariates carried forward from the latest visit at or before `t`.
    pub fn locf_covariates(&self, t: f64) -> Result<&[f64], PanelError> {
        match self.latest_visit_at_or_before(t) {
            Some(i) => Ok(&self.visits[i].covariates),
            None => self
                .initial_covariates
                .as_deref()
                .ok_or_else(|| PanelError::NoPriorObservation {
                    id: self.id.clone(),
                    time: t,
                }),
        }
    }

    /// `censor_time >= t`.
    pub fn at_risk(&self, t: f64) -> bool {
        self.censor_time + time_eps(t) >= t
    }

    /// Visits after entry (`time > 0`).
    pub fn post_baseline_visits(&self) -> impl Iterator<Item = &VisitRecord> {
        self.visits.iter().filter(|v| v.time > 0.0)
    }
}

/// Cell-level view of a validated subject.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SubjectCells {
    /// Grid cell of each visit, aligned with `SubjectPath::visits`.
    pub visit_cells: Vec<u32>,
    pub last_at_risk: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    grid: GridSpec,
    subjects: Vec<SubjectPath>,
    covariate_names: Vec<String>,
    baseline_names: Vec<String>,
    cells: Vec<SubjectCells>,
}

/// Validate `records` against `grid`, snapping visit times onto the grid.
pub fn build_dataset(records: Vec<SubjectPath>, grid: GridSpec) -> Result<PanelDataset, PanelError> {
    PanelDataset::build(records, grid)
}

impl PanelDataset {
    pub fn build(mut records: Vec<SubjectPath>, grid: GridSpec) -> Result<Self, PanelError> {
        grid.validate()?;
        if records.is_empty() {
            return Err(PanelError::EmptyRecords);
        }
        let n_z = records
            .iter()
            .find_map(|s| {
                s.visits
                    .first()
                    .map(|v| v.covariates.len())
                    .or_else(|| s.initial_covariates.as_ref().map(Vec::len))
            })
            .unwrap_or(0);
        let n_k = records[0].baseline.len();

        let mut seen = HashSet::with_capacity(records.len());
        let mut cells = Vec::with_capacity(records.len());
        for s in records.iter_mut() {
            if !seen.insert(s.id.clone()) {
                return Err(PanelError::DuplicateId(s.id.clone()));
            }
            cells.push(validate_subject(s, &grid, n_z, n_k)?);
        }
        if records.len() < 2 {
            return Err(PanelError::TooFewSubjects(records.len()));
        }
        for arm in [false, true] {
            if !records.iter().any(|s| s.treatment == arm) {
                return Err(PanelError::EmptyTreatmentArm { arm: arm as u8 });
            }
        }
        Ok(PanelDataset {
            grid,
            subjects: records,
            covariate_names: (1..=n_z).map(|j| j.to_string()).collect(),
            baseline_names: (1..=n_k).map(|j| j.to_string()).collect(),
            cells,
        })
    }

    pub fn with_names(mut self, covariate_names: Vec<String>, baseline_names: Vec<String>) -> Result<Self, PanelError> {
        if covariate_names.len() != self.n_covariates() {
            return Err(PanelError::NameCount {
                what: "covariate",
                expected: self.n_covariates(),
                found: covariate_names.len(),
            });
        }
        if baseline_names.len() != self.n_baseline() {
            return Err(PanelError::NameCount {
                what: "baseline",
                expected: self.n_baseline(),
                found: baseline_names.len(),
            });
        }
        self.covariate_names = covariate_names;
        self.baseline_names = baseline_names;
        Ok(self)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn subjects(&self) -> &[SubjectPath] {
        &self.subjects
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn baseline_names(&self) -> &[String] {
        &self.baseline_names
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn n_baseline(&self) -> usize {
        self.baseline_names.len()
    }

    pub(crate) fn cells(&self, i: usize) -> &SubjectCells {
        &self.cells[i]
    }

    /// Total number of post-baseline visits.
    pub fn n_post_baseline_visits(&self) -> usize {
        self.cells
            .iter()
            .map(|c| c.visit_cells.iter().filter(|&&k| k > 0).count())
            .sum()
    }

    /// Mean post-baseline visit count per subject in each arm `(I=0, I=1)`.
    pub fn mean_visits_by_arm(&self) -> (f64, f64) {
        let mut sum = [0.0; 2];
        let mut count = [0.0; 2];
        for (s, c) in self.subjects.iter().zip(&self.cells) {
            let arm = s.treatment as usize;
            sum[arm] += c.visit_cells.iter().filter(|&&k| k > 0).count() as f64;
            count[arm] += 1.0;
        }
        (sum[0] / count[0], sum[1] / count[1])
    }

    /// Dataset made of the subjects at `indices` (repeats allowed). Repeated
    /// subjects get `#<position>` appended to their id.
    pub fn resample(&self, indices: &[usize]) -> Result<PanelDataset, PanelError> {
        if indices.len() < 2 {
            return Err(PanelError::TooFewSubjects(indices.len()));
        }
        let mut subjects = Vec::with_capacity(indices.len());
        let mut cells = Vec::with_capacity(indices.len());
        for (pos, &i) in indices.iter().enumerate() {
            let mut s = self.subjects[i].clone();
            s.id = format!("{}#{pos}", s.id);
            subjects.push(s);
            cells.push(self.cells[i].clone());
        }
        for arm in [false, true] {
            if !subjects.iter().any(|s| s.treatment == arm) {
                return Err(PanelError::EmptyTreatmentArm { arm: arm as u8 });
            }
        }
        Ok(PanelDataset {
            grid: self.grid,
            subjects,
            covariate_names: self.covariate_names.clone(),
            baseline_names: self.baseline_names.clone(),
            cells,
        })
    }
}

fn validate_subject(s: &mut SubjectPath, grid: &GridSpec, n_z: usize, n_k: usize) -> Result<SubjectCells, PanelError> {
    let sid = s.id.clone();
    let id = || sid.clone();
    if s.baseline.len() != n_k {
        return Err(PanelError::RaggedCovariates {
            id: id(),
            what: "baseline",
            expected: n_k,
            found: s.baseline.len(),
        });
    }
    if s.baseline.iter().any(|x| !x.is_finite()) {
        return Err(PanelError::NonFinite {
            id: id(),
            what: "baseline",
        });
    }
    let tol = GRID_SNAP_TOL * grid.dt;
    if !(s.censor_time.is_finite() && s.censor_time > 0.0 && s.censor_time <= grid.tau + tol) {
        return Err(PanelError::BadCensorTime {
            id: id(),
            time: s.censor_time,
        });
    }
    if let Some(z0) = &s.initial_covariates {
        if z0.len() != n_z {
            return Err(PanelError::RaggedCovariates {
                id: id(),
                what: "covariate",
                expected: n_z,
                found: z0.len(),
            });
        }
    }

    let last_at_risk = grid.last_at_risk_cell(s.censor_time);
    let mut visit_cells = Vec::with_capacity(s.visits.len());
    for (index, v) in s.visits.iter_mut().enumerate() {
        let cell = grid.cell_of(v.time).ok_or_else(|| PanelError::OffGridTime {
            id: s.id.clone(),
            time: v.time,
            dt: grid.dt,
            row: None,
        })?;
        if let Some(&prev) = visit_cells.last() {
            if cell <= prev {
                return Err(PanelError::NonMonotoneVisits {
                    id: s.id.clone(),
                    index,
                });
            }
        }
        if cell > last_at_risk && cell > 0 {
            return Err(PanelError::VisitOutsideFollowUp {
                id: s.id.clone(),
                time: v.time,
            });
        }
        if v.covariates.len() != n_z {
            return Err(PanelError::RaggedCovariates {
                id: s.id.clone(),
                what: "covariate",
                expected: n_z,
                found: v.covariates.len(),
            });
        }
        if !v.outcome.is_finite() || v.covariates.iter().any(|x| !x.is_finite()) {
            return Err(PanelError::NonFinite {
                id: s.id.clone(),
                what: "visit",
            });
        }
        v.time = grid.time_of(cell);
        visit_cells.push(cell);
    }
    if visit_cells.first() != Some(&0) && s.initial_covariates.is_none() {
        return Err(PanelError::MissingBaselineVisit { id: id() });
    }
    Ok(SubjectCells {
        visit_cells,
        last_at_risk,
    })
}
