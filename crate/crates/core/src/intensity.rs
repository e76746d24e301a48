//! Proportional visit-intensity model with a gap-time baseline.
//!
//! The intensity of a visit in cell `s` is `lambda0(B(s)) * exp(x(s)' gamma)`
//! where `B(s)` is the gap since the previous visit and `x(s)` holds the
//! treatment, the covariates carried forward from the previous visit and any
//! selected baseline covariates. `gamma` maximises the Andersen–Gill partial
//! likelihood with Breslow handling of tied events.
//!
//! Rates are expressed per grid cell: `lambda0(b) * exp(x' gamma)` is the
//! probability of a visit in one cell, which is the scale the cumulated
//! weights multiply.
//!
//! Internally every subject's follow-up is cut into sojourns (the stretch
//! between two visits, or between the last visit and censoring). Covariates
//! are constant within a sojourn and the sojourn covers gap indices
//! `1..=len`, so risk-set sums reduce to suffix sums over sojourn ends.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panel::{GridSpec, PanelDataset, SubjectPath};

pub const MAX_NEWTON_ITER: usize = 50;
pub const MAX_HALVINGS: usize = 30;
/// Information matrices with a larger condition number are singular.
pub const MAX_CONDITION: f64 = 1e10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntensityError {
    #[error("no post-baseline visits to fit")]
    NoEvents,
    #[error("information matrix is singular or ill-conditioned (condition number {condition:e})")]
    SingularInformation { condition: f64 },
    #[error("Newton iteration did not converge after {iterations} iterations (gradient norm {gradient_norm:e})")]
    Diverged { iterations: usize, gradient_norm: f64 },
    #[error("invalid intensity specification: {0}")]
    InvalidSpec(String),
    #[error("no baseline rate for gap bucket {bucket} and smoothing is disabled")]
    MissingBucket { bucket: u32 },
}

/// One column of the intensity design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Treatment,
    /// Endogenous covariate column, carried forward.
    Covariate(usize),
    /// Baseline covariate column.
    Baseline(usize),
}

/// Index used to form risk sets in the partial likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RiskScale {
    /// Risk set at an event = all at-risk cells sharing its gap time.
    #[default]
    GapTime,
    /// Risk set at an event = all subjects at risk at the same calendar cell.
    EntryTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensitySpec {
    pub terms: Vec<Term>,
    /// Treatment-only model used by the second stabilizer.
    pub reduced: bool,
    pub risk_scale: RiskScale,
}

impl IntensitySpec {
    /// Treatment plus every endogenous covariate.
    pub fn full(ds: &PanelDataset) -> Self {
        let mut terms = vec![Term::Treatment];
        terms.extend((0..ds.n_covariates()).map(Term::Covariate));
        IntensitySpec {
            terms,
            reduced: false,
            risk_scale: RiskScale::GapTime,
        }
    }

    pub fn reduced() -> Self {
        IntensitySpec {
            terms: vec![Term::Treatment],
            reduced: true,
            risk_scale: RiskScale::GapTime,
        }
    }

    pub fn with_risk_scale(mut self, scale: RiskScale) -> Self {
        self.risk_scale = scale;
        self
    }

    pub fn dim(&self) -> usize {
        self.terms.len()
    }

    pub fn validate(&self, ds: &PanelDataset) -> Result<(), IntensityError> {
        if self.terms.is_empty() {
            return Err(IntensityError::InvalidSpec("no covariates selected".into()));
        }
        if self.reduced && self.terms != [Term::Treatment] {
            return Err(IntensityError::InvalidSpec(
                "a reduced model has the treatment as its only term".into(),
            ));
        }
        for t in &self.terms {
            match *t {
                Term::Covariate(j) if j >= ds.n_covariates() => {
                    return Err(IntensityError::InvalidSpec(format!(
                        "covariate column {j} out of range"
                    )))
                }
                Term::Baseline(j) if j >= ds.n_baseline() => {
                    return Err(IntensityError::InvalidSpec(format!("baseline column {j} out of range")))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Design row for a subject given the covariates in force.
    pub fn design_row(&self, subject: &SubjectPath, covariates: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.terms.iter().map(|t| match *t {
            Term::Treatment => subject.treatment_value(),
            Term::Covariate(j) => covariates[j],
            Term::Baseline(j) => subject.baseline[j],
        }));
    }
}

/// Stretch of follow-up with constant covariates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Sojourn {
    pub subject: u32,
    /// Visit index (into `SubjectPath::visits`) opening the sojourn, or
    /// `None` when it starts from initial covariates.
    pub opened_by: Option<u32>,
    pub start_cell: u32,
    pub len: u32,
    pub event: bool,
}

/// Sojourns of one subject: `(opened_by, start_cell, len, event)`.
pub(crate) fn subject_sojourns(visit_cells: &[u32], last_at_risk: u32) -> Vec<(Option<u32>, u32, u32, bool)> {
    let mut out = Vec::with_capacity(visit_cells.len() + 1);
    let mut opened: Option<u32> = None;
    let mut start = 0u32;
    for (j, &cell) in visit_cells.iter().enumerate() {
        if cell == 0 {
            opened = Some(j as u32);
            continue;
        }
        out.push((opened, start, cell - start, true));
        opened = Some(j as u32);
        start = cell;
    }
    if last_at_risk > start {
        out.push((opened, start, last_at_risk - start, false));
    }
    out
}

/// Sojourn table with a flat design matrix, stride `p`.
#[derive(Debug, Clone)]
pub(crate) struct SojournTable {
    pub p: usize,
    pub sojourns: Vec<Sojourn>,
    pub x: Vec<f64>,
}

impl SojournTable {
    pub fn build(ds: &PanelDataset, spec: &IntensitySpec) -> Self {
        let p = spec.dim();
        let mut sojourns = Vec::new();
        let mut x = Vec::new();
        let mut row = Vec::with_capacity(p);
        for (i, s) in ds.subjects().iter().enumerate() {
            let cells = ds.cells(i);
            for (opened, start, len, event) in subject_sojourns(&cells.visit_cells, cells.last_at_risk) {
                let z: &[f64] = match opened {
                    Some(j) => &s.visits[j as usize].covariates,
                    None => s.initial_covariates.as_deref().unwrap_or(&[]),
                };
                spec.design_row(s, z, &mut row);
                x.extend_from_slice(&row);
                sojourns.push(Sojourn {
                    subject: i as u32,
                    opened_by: opened,
                    start_cell: start,
                    len,
                    event,
                });
            }
        }
        SojournTable { p, sojourns, x }
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.x[k * self.p..(k + 1) * self.p]
    }

    pub fn n_events(&self) -> usize {
        self.sojourns.iter().filter(|s| s.event).count()
    }

    /// `(first, last)` risk index of a sojourn on the given scale.
    fn span(&self, k: usize, scale: RiskScale) -> (usize, usize) {
        let s = &self.sojourns[k];
        match scale {
            RiskScale::GapTime => (1, s.len as usize),
            RiskScale::EntryTime => (s.start_cell as usize + 1, (s.start_cell + s.len) as usize),
        }
    }

    fn max_index(&self, scale: RiskScale) -> usize {
        (0..self.sojourns.len())
            .map(|k| self.span(k, scale).1)
            .max()
            .unwrap_or(0)
    }
}

/// Log partial likelihood with gradient and Hessian (row-major `p x p`).
#[derive(Debug, Clone, PartialEq)]
pub struct PartialLikelihood {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: Vec<f64>,
}

fn evaluate(table: &SojournTable, scale: RiskScale, gamma: &[f64]) -> PartialLikelihood {
    let p = table.p;
    let stride = 1 + p + p * p;
    let n_idx = table.max_index(scale) + 2;
    let mut end_acc = vec![0.0; n_idx * stride];
    let mut first_acc = vec![0.0; n_idx * stride];
    let mut ev_count = vec![0u32; n_idx];
    let mut ev_x = vec![0.0; n_idx * p];
    let mut value = 0.0;

    for k in 0..table.sojourns.len() {
        let x = table.row(k);
        let eta: f64 = x.iter().zip(gamma).map(|(a, b)| a * b).sum();
        let w = eta.exp();
        let (first, last) = table.span(k, scale);
        let add = |acc: &mut [f64], idx: usize| {
            let a = &mut acc[idx * stride..(idx + 1) * stride];
            a[0] += w;
            for r in 0..p {
                a[1 + r] += w * x[r];
                for c in 0..p {
                    a[1 + p + r * p + c] += w * x[r] * x[c];
                }
            }
        };
        add(&mut end_acc, last);
        if scale == RiskScale::EntryTime {
            add(&mut first_acc, first);
        }
        if table.sojourns[k].event {
            ev_count[last] += 1;
            value += eta;
            for r in 0..p {
                ev_x[last * p + r] += x[r];
            }
        }
    }

    let mut gradient = vec![0.0; p];
    let mut hessian = vec![0.0; p * p];
    let mut suffix_end = vec![0.0; stride];
    let mut suffix_first = vec![0.0; stride];
    let mut risk = vec![0.0; stride];
    for idx in (1..n_idx).rev() {
        for (s, a) in suffix_end.iter_mut().zip(&end_acc[idx * stride..(idx + 1) * stride]) {
            *s += a;
        }
        let d = ev_count[idx];
        if d > 0 {
            for ((r, e), f) in risk.iter_mut().zip(&suffix_end).zip(&suffix_first) {
                *r = e - f;
            }
            let d = d as f64;
            let s0 = risk[0];
            value -= d * s0.ln();
            for r in 0..p {
                let mr = risk[1 + r] / s0;
                gradient[r] += ev_x[idx * p + r] - d * mr;
                for c in 0..p {
                    let mc = risk[1 + c] / s0;
                    hessian[r * p + c] -= d * (risk[1 + p + r * p + c] / s0 - mr * mc);
                }
            }
        }
        for (s, a) in suffix_first
            .iter_mut()
            .zip(&first_acc[idx * stride..(idx + 1) * stride])
        {
            *s += a;
        }
    }
    PartialLikelihood {
        value,
        gradient,
        hessian,
    }
}

/// Log partial likelihood, its gradient and Hessian at `gamma`.
pub fn partial_loglik_and_derivatives(
    ds: &PanelDataset,
    spec: &IntensitySpec,
    gamma: &[f64],
) -> Result<PartialLikelihood, IntensityError> {
    spec.validate(ds)?;
    if gamma.len() != spec.dim() || gamma.iter().any(|g| !g.is_finite()) {
        return Err(IntensityError::InvalidSpec(
            "gamma must be finite with one entry per term".into(),
        ));
    }
    let table = SojournTable::build(ds, spec);
    Ok(evaluate(&table, spec.risk_scale, gamma))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BaselineMode {
    /// Events over the summed relative risk of all at-risk cells with gap `b`.
    #[default]
    RiskSet,
    /// Events over the summed relative risk of the event cells with gap `b`.
    EventWeightedLiteral,
}

/// Gap-indexed baseline rates per grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineTable {
    pub mode: BaselineMode,
    pub dt: f64,
    /// Nearest-populated-bucket lookup for empty buckets.
    pub smoothing: bool,
    rates: Vec<Option<f64>>,
    filled: Vec<f64>,
}

impl BaselineTable {
    /// Table from per-bucket rates (index = gap in cells; index 0 unused).
    pub fn from_rates(mode: BaselineMode, dt: f64, rates: Vec<Option<f64>>) -> Self {
        let filled = fill_nearest(&rates);
        BaselineTable {
            mode,
            dt,
            smoothing: true,
            rates,
            filled,
        }
    }

    /// Populated buckets as `(gap in cells, rate per cell)`.
    pub fn entries(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.rates
            .iter()
            .enumerate()
            .filter_map(|(b, r)| r.map(|r| (b as u32, r)))
    }

    pub fn n_populated(&self) -> usize {
        self.rates.iter().filter(|r| r.is_some()).count()
    }

    /// Rate of a populated bucket.
    pub fn get(&self, bucket: u32) -> Option<f64> {
        self.rates.get(bucket as usize).copied().flatten()
    }

    /// Per-cell rate for gap `bucket`; empty buckets take the nearest
    /// populated bucket (ties go to the smaller gap).
    pub fn lookup(&self, bucket: u32) -> Result<f64, IntensityError> {
        if let Some(r) = self.get(bucket) {
            return Ok(r);
        }
        if !self.smoothing || self.filled.is_empty() {
            return Err(IntensityError::MissingBucket { bucket });
        }
        let i = (bucket as usize).min(self.filled.len() - 1);
        Ok(self.filled[i])
    }

    /// Rate per unit of time, `lookup(b) / dt`.
    pub fn rate_per_time(&self, bucket: u32) -> Result<f64, IntensityError> {
        Ok(self.lookup(bucket)? / self.dt)
    }

    /// Copy with every rate multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let rates = self.rates.iter().map(|r| r.map(|v| v * c)).collect();
        BaselineTable {
            smoothing: self.smoothing,
            ..BaselineTable::from_rates(self.mode, self.dt, rates)
        }
    }
}

fn fill_nearest(rates: &[Option<f64>]) -> Vec<f64> {
    let populated: Vec<usize> = rates.iter().enumerate().filter_map(|(i, r)| r.map(|_| i)).collect();
    if populated.is_empty() {
        return Vec::new();
    }
    let mut filled = Vec::with_capacity(rates.len());
    let mut next = 0usize;
    for i in 0..rates.len() {
        while next < populated.len() && populated[next] < i {
            next += 1;
        }
        let hi = populated.get(next).copied();
        let lo = if next > 0 { Some(populated[next - 1]) } else { None };
        let pick = match (lo, hi) {
            (Some(l), Some(h)) => {
                if h - i < i - l {
                    h
                } else {
                    l
                }
            }
            (Some(l), None) => l,
            (None, Some(h)) => h,
            (None, None) => unreachable!(),
        };
        filled.push(rates[pick].unwrap());
    }
    filled
}

fn baseline_from_table(
    table: &SojournTable,
    gamma: &[f64],
    mode: BaselineMode,
    dt: f64,
) -> Result<BaselineTable, IntensityError> {
    let n_idx = table.max_index(RiskScale::GapTime) + 1;
    let mut ends = vec![0.0; n_idx + 1];
    let mut event_w = vec![0.0; n_idx + 1];
    let mut events = vec![0u32; n_idx + 1];
    for k in 0..table.sojourns.len() {
        let eta: f64 = table.row(k).iter().zip(gamma).map(|(a, b)| a * b).sum();
        let w = eta.exp();
        let len = table.sojourns[k].len as usize;
        ends[len] += w;
        if table.sojourns[k].event {
            events[len] += 1;
            event_w[len] += w;
        }
    }
    if events.iter().all(|&e| e == 0) {
        return Err(IntensityError::NoEvents);
    }
    let mut rates = vec![None; n_idx + 1];
    let mut at_risk = 0.0;
    for b in (1..=n_idx).rev() {
        at_risk += ends[b];
        if events[b] > 0 {
            let denom = match mode {
                BaselineMode::RiskSet => at_risk,
                BaselineMode::EventWeightedLiteral => event_w[b],
            };
            rates[b] = Some(events[b] as f64 / denom);
        }
    }
    Ok(BaselineTable::from_rates(mode, dt, rates))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntensityFit {
    pub coefficients: Vec<f64>,
    pub spec: IntensitySpec,
    /// Risk-set baseline at the fitted coefficients.
    pub baseline: BaselineTable,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub loglik: f64,
    /// Observed information, row-major.
    pub information: Vec<f64>,
    pub n_events: usize,
}

impl IntensityFit {
    pub fn linear_predictor(&self, subject: &SubjectPath, covariates: &[f64]) -> f64 {
        let mut row = Vec::with_capacity(self.spec.dim());
        self.spec.design_row(subject, covariates, &mut row);
        row.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum()
    }

    pub fn with_baseline(mut self, baseline: BaselineTable) -> Self {
        self.baseline = baseline;
        self
    }

    /// Standard errors from the inverse observed information.
    pub fn standard_errors(&self) -> Option<Vec<f64>> {
        let p = self.spec.dim();
        let info = DMatrix::from_row_slice(p, p, &self.information);
        let inv = info.cholesky()?.inverse();
        Some((0..p).map(|i| inv[(i, i)].sqrt()).collect())
    }
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigen().eigenvalues;
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Maximise the log partial likelihood by Newton–Raphson from zero with step
/// halving. Converged when the gradient max-norm drops below
/// `1e-9 * max(1, n_events)`.
pub fn fit_partial_likelihood(ds: &PanelDataset, spec: &IntensitySpec) -> Result<IntensityFit, IntensityError> {
    spec.validate(ds)?;
    let table = SojournTable::build(ds, spec);
    fit_table(&table, spec, ds.grid())
}

pub(crate) fn fit_table(
    table: &SojournTable,
    spec: &IntensitySpec,
    grid: &GridSpec,
) -> Result<IntensityFit, IntensityError> {
    let n_events = table.n_events();
    if n_events == 0 {
        return Err(IntensityError::NoEvents);
    }
    let p = table.p;
    let tol = 1e-9 * (n_events as f64).max(1.0);
    let mut gamma = vec![0.0; p];
    let mut cur = evaluate(table, spec.risk_scale, &gamma);
    let mut iterations = 0;
    loop {
        let gnorm = max_abs(&cur.gradient);
        if gnorm < tol {
            break;
        }
        if iterations >= MAX_NEWTON_ITER {
            return Err(IntensityError::Diverged {
                iterations,
                gradient_norm: gnorm,
            });
        }
        iterations += 1;
        let info = -DMatrix::from_row_slice(p, p, &cur.hessian);
        let cond = condition_number(&info);
        if cond > MAX_CONDITION {
            return Err(IntensityError::SingularInformation { condition: cond });
        }
        let step = info
            .cholesky()
            .ok_or(IntensityError::SingularInformation { condition: cond })?
            .solve(&DVector::from_column_slice(&cur.gradient));
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let cand: Vec<f64> = gamma.iter().zip(step.iter()).map(|(g, s)| g + scale * s).collect();
            let next = evaluate(table, spec.risk_scale, &cand);
            if next.value.is_finite() && next.value >= cur.value - 1e-12 * cur.value.abs() {
                accepted = Some((cand, next));
                break;
            }
            scale *= 0.5;
        }
        match accepted {
            Some((g, next)) => {
                gamma = g;
                cur = next;
            }
            None => {
                return Err(IntensityError::Diverged {
                    iterations,
                    gradient_norm: gnorm,
                })
            }
        }
    }
    let baseline = baseline_from_table(table, &gamma, BaselineMode::RiskSet, grid.dt)?;
    let information = cur.hessian.iter().map(|h| -h).collect();
    Ok(IntensityFit {
        coefficients: gamma,
        spec: spec.clone(),
        baseline,
        iterations,
        gradient_norm: max_abs(&cur.gradient),
        loglik: cur.value,
        information,
        n_events,
    })
}

/// Breslow-type gap-indexed baseline at the fitted coefficients.
pub fn breslow_baseline(
    ds: &PanelDataset,
    fit: &IntensityFit,
    mode: BaselineMode,
) -> Result<BaselineTable, IntensityError> {
    let table = SojournTable::build(ds, &fit.spec);
    baseline_from_table(&table, &fit.coefficients, mode, ds.grid().dt)
}

/// Gap (in cells) and covariates governing the visit intensity in cell
/// `cell`: measured from the latest visit strictly before the cell.
pub fn intensity_state<'a>(subject: &'a SubjectPath, grid: &GridSpec, cell: u32) -> Option<(u32, &'a [f64])> {
    let prior = subject
        .visits
        .iter()
        .rev()
        .find(|v| grid.cell_of(v.time).is_some_and(|c| c < cell));
    match prior {
        Some(v) => Some((cell - grid.cell_of(v.time)?, &v.covariates)),
        None => subject.initial_covariates.as_deref().map(|z| (cell, z)),
    }
}

/// Fitted per-cell visit intensity `lambda0(B) * exp(x' gamma)` for the cell
/// ending at `t`, using the gap and covariates in force just before `t`.
pub fn point_intensity(
    fit: &IntensityFit,
    subject: &SubjectPath,
    grid: &GridSpec,
    t: f64,
) -> Result<f64, IntensityError> {
    let cell = grid
        .cell_of(t)
        .filter(|&c| c > 0)
        .ok_or_else(|| IntensityError::InvalidSpec(format!("t = {t} is not a positive grid time")))?;
    let (gap, z) = intensity_state(subject, grid, cell).ok_or_else(|| {
        IntensityError::InvalidSpec(format!("subject `{}` has no covariates before t = {t}", subject.id))
    })?;
    Ok(fit.baseline.lookup(gap)? * fit.linear_predictor(subject, z).exp())
}
