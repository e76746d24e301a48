//! Cumulated monitoring-path weights.
//!
//! For a subject observed at visit time `t`, the unstabilized weight is the
//! fitted probability of the whole monitoring path on `(0, t]`: the product
//! over grid cells of `p(s)` where a visit happened and `1 - p(s)` where none
//! did. The stabilized weights divide each factor by the same factor built
//! from a stabilizer rate `q(s)`:
//!
//! - `sw1`: `q(s) = lambda01(B(s))`, the gap-time baseline alone;
//! - `sw2`: `q(s) = lambda02(B(s)) * exp(delta * I)` from the treatment-only fit.
//!
//! Products are accumulated as sums of logs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::intensity::{intensity_state, BaselineTable, IntensityError, IntensityFit};
use crate::panel::{GridSpec, SubjectPath};
use crate::stats::quantile_sorted;

/// Fitted probabilities are capped here under [`ProbabilityPolicy::Clip`].
pub const PROBABILITY_CEILING: f64 = 1.0 - 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ProbabilityPolicy {
    /// Cap per-cell probabilities at [`PROBABILITY_CEILING`] and count the caps.
    #[default]
    Clip,
    /// Fail on the first per-cell probability at or above one.
    Strict,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WeightError {
    #[error("fitted visit probability {value} >= 1 for subject `{id}` at t = {time}")]
    ProbabilityOverflow { id: String, time: f64, value: f64 },
    #[error(transparent)]
    Intensity(#[from] IntensityError),
    #[error("subject `{id}` has a visit with no covariates in force before it")]
    NoState { id: String },
    #[error("no weight rows to truncate")]
    Empty,
    #[error("invalid truncation percentiles ({lower}, {upper})")]
    BadPercentiles { lower: f64, upper: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WeightKind {
    Usw,
    Sw1,
    Sw2,
}

impl WeightKind {
    pub const ALL: [WeightKind; 3] = [WeightKind::Usw, WeightKind::Sw1, WeightKind::Sw2];

    fn index(self) -> usize {
        self as usize
    }
}

/// Weights at one post-baseline visit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightRow {
    pub time: f64,
    /// Gap since the previous visit, measured just before this one.
    pub gap: f64,
    pub outcome: f64,
    pub usw: f64,
    pub sw1: f64,
    pub sw2: f64,
    /// Fitted per-cell visit probability at the visit.
    pub point_intensity: f64,
    pub ipt: f64,
}

impl WeightRow {
    pub fn get(&self, kind: WeightKind) -> f64 {
        match kind {
            WeightKind::Usw => self.usw,
            WeightKind::Sw1 => self.sw1,
            WeightKind::Sw2 => self.sw2,
        }
    }

    fn set(&mut self, kind: WeightKind, v: f64) {
        match kind {
            WeightKind::Usw => self.usw = v,
            WeightKind::Sw1 => self.sw1 = v,
            WeightKind::Sw2 => self.sw2 = v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSeries {
    pub id: String,
    pub treatment: bool,
    pub rows: Vec<WeightRow>,
    /// Truncation bounds applied, indexed like [`WeightKind::ALL`].
    pub bounds: [Option<(f64, f64)>; 3],
    /// Grid cells whose probability was capped.
    pub clipped: u32,
}

impl WeightSeries {
    pub fn bounds(&self, kind: WeightKind) -> Option<(f64, f64)> {
        self.bounds[kind.index()]
    }
}

/// Inputs shared by every subject of a dataset.
#[derive(Debug, Clone, Copy)]
pub struct WeightModels<'a> {
    pub full: &'a IntensityFit,
    pub reduced: &'a IntensityFit,
    pub stab1: &'a BaselineTable,
    pub stab2: &'a BaselineTable,
    pub policy: ProbabilityPolicy,
}

impl WeightModels<'_> {
    fn cap(&self, value: f64, subject: &SubjectPath, time: f64, clipped: &mut u32) -> Result<f64, WeightError> {
        if value < PROBABILITY_CEILING {
            return Ok(value);
        }
        match self.policy {
            ProbabilityPolicy::Clip => {
                *clipped += 1;
                Ok(PROBABILITY_CEILING)
            }
            ProbabilityPolicy::Strict => Err(WeightError::ProbabilityOverflow {
                id: subject.id.clone(),
                time,
                value,
            }),
        }
    }
}

/// Cumulated weights at each post-baseline visit of `subject`. `ipt` is the
/// subject's treatment weight, stored on every row.
pub fn cumulate_weights(
    subject: &SubjectPath,
    grid: &GridSpec,
    models: &WeightModels<'_>,
    ipt: f64,
) -> Result<WeightSeries, WeightError> {
    let mut rows = Vec::new();
    let mut log = [0.0f64; 3];
    let mut clipped = 0u32;
    for visit in subject.post_baseline_visits() {
        let cell = match grid.cell_of(visit.time) {
            Some(c) => c,
            None => continue,
        };
        let (gap, z) =
            intensity_state(subject, grid, cell).ok_or_else(|| WeightError::NoState { id: subject.id.clone() })?;
        let start = cell - gap;
        let rel_full = models.full.linear_predictor(subject, z).exp();
        let rel_reduced = models.reduced.linear_predictor(subject, z).exp();
        let mut point = f64::NAN;
        for b in 1..=gap {
            let time = grid.time_of(start + b);
            let p = models.cap(models.full.baseline.lookup(b)? * rel_full, subject, time, &mut clipped)?;
            let q1 = models.cap(models.stab1.lookup(b)?, subject, time, &mut clipped)?;
            let q2 = models.cap(models.stab2.lookup(b)? * rel_reduced, subject, time, &mut clipped)?;
            if b == gap {
                let lp = p.ln();
                log[0] += lp;
                log[1] += lp - q1.ln();
                log[2] += lp - q2.ln();
                point = p;
            } else {
                let lp = (-p).ln_1p();
                log[0] += lp;
                log[1] += lp - (-q1).ln_1p();
                log[2] += lp - (-q2).ln_1p();
            }
        }
        rows.push(WeightRow {
            time: visit.time,
            gap: gap as f64 * grid.dt,
            outcome: visit.outcome,
            usw: log[0].exp(),
            sw1: log[1].exp(),
            sw2: log[2].exp(),
            point_intensity: point,
            ipt,
        });
    }
    Ok(WeightSeries {
        id: subject.id.clone(),
        treatment: subject.treatment,
        rows,
        bounds: [None; 3],
        clipped,
    })
}

/// Winsorise one weight kind at pooled type-7 percentiles over every visit
/// row of `series`. Returns the applied bounds.
pub fn truncate_weights_in_place(
    series: &mut [WeightSeries],
    kind: WeightKind,
    lower_pct: f64,
    upper_pct: f64,
) -> Result<(f64, f64), WeightError> {
    if !(0.0..=100.0).contains(&lower_pct) || !(0.0..=100.0).contains(&upper_pct) || lower_pct > upper_pct {
        return Err(WeightError::BadPercentiles {
            lower: lower_pct,
            upper: upper_pct,
        });
    }
    let mut pooled: Vec<f64> = series.iter().flat_map(|s| s.rows.iter().map(|r| r.get(kind))).collect();
    if pooled.is_empty() {
        return Err(WeightError::Empty);
    }
    pooled.sort_by(f64::total_cmp);
    let lo = quantile_sorted(&pooled, lower_pct / 100.0);
    let hi = quantile_sorted(&pooled, upper_pct / 100.0);
    for s in series.iter_mut() {
        for r in &mut s.rows {
            r.set(kind, r.get(kind).clamp(lo, hi));
        }
        s.bounds[kind.index()] = Some((lo, hi));
    }
    Ok((lo, hi))
}

pub fn truncate_weights(
    series: &[WeightSeries],
    kind: WeightKind,
    lower_pct: f64,
    upper_pct: f64,
) -> Result<Vec<WeightSeries>, WeightError> {
    let mut out = series.to_vec();
    truncate_weights_in_place(&mut out, kind, lower_pct, upper_pct)?;
    Ok(out)
}
