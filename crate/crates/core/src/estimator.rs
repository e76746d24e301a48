//! Weighted estimating equation for the marginal treatment effect.
//!
//! With the counting process picking out visit rows, the estimating equation
//! reduces to weighted least squares of the outcome on `[S(t) | I]`, where
//! `S(t)` is an intercept plus an optional natural cubic spline in the gap
//! time, and each row is weighted by `1 / (ipt * monitoring weight)`.
//!
//! The natural spline uses the truncated-power form: with knots
//! `xi_1 < ... < xi_K`, the columns are `1`, `x` and `d_k(x) - d_{K-1}(x)` for
//! `k = 1..K-2`, where `d_k(x) = ((x - xi_k)+^3 - (x - xi_K)+^3) / (xi_K - xi_k)`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dgm::derived_stream;
use crate::intensity::{
    breslow_baseline, fit_partial_likelihood, BaselineMode, IntensityError, IntensitySpec, RiskScale,
};
use crate::panel::{PanelDataset, PanelError};
use crate::stats::{quantile_sorted, variance};
use crate::treatment::{fit_logistic, ipt_weight, TreatmentError};
use crate::weights::{
    cumulate_weights, truncate_weights_in_place, ProbabilityPolicy, WeightError, WeightKind, WeightModels, WeightSeries,
};

/// Relative size of an `R` diagonal entry below which the design is rank deficient.
const RANK_TOL: f64 = 1e-10;
/// Largest share of bootstrap resamples allowed to fail.
pub const MAX_BOOT_FAILURE: f64 = 0.05;
const BOOT_DOMAIN: u64 = 0xb007;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error(transparent)]
    Treatment(#[from] TreatmentError),
    #[error(transparent)]
    Intensity(#[from] IntensityError),
    #[error(transparent)]
    Weight(#[from] WeightError),
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error("spline basis needs at least {needed} distinct gap values, found {found}")]
    DegenerateGaps { needed: usize, found: usize },
    #[error("weighted design is rank deficient")]
    RankDeficient,
    #[error("{rows} visit rows for {cols} design columns")]
    TooFewRows { rows: usize, cols: usize },
    #[error("combined row weight must be positive and finite (row {row}: {value})")]
    BadWeight { row: usize, value: f64 },
    #[error("{failed} of {total} bootstrap resamples failed")]
    BootstrapFailures { failed: usize, total: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BasisKind {
    Constant,
    #[default]
    CubicSplineGap,
}

/// Time axis the spline is built on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BasisAxis {
    /// Time since the previous visit.
    #[default]
    Gap,
    /// Time since entry.
    Entry,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisSpec {
    pub kind: BasisKind,
    pub n_interior_knots: usize,
    pub axis: BasisAxis,
}

impl Default for BasisSpec {
    fn default() -> Self {
        BasisSpec {
            kind: BasisKind::CubicSplineGap,
            n_interior_knots: 3,
            axis: BasisAxis::Gap,
        }
    }
}

impl BasisSpec {
    pub fn constant() -> Self {
        BasisSpec {
            kind: BasisKind::Constant,
            ..Default::default()
        }
    }
}

/// Boundary knots at the extremes, interior knots at equally spaced
/// quantiles (25/50/75 % for three).
pub fn spline_knots(values: &[f64], n_interior: usize) -> Result<Vec<f64>, EstimatorError> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    let needed = n_interior + 2;
    if distinct.len() < needed {
        return Err(EstimatorError::DegenerateGaps {
            needed,
            found: distinct.len(),
        });
    }
    let mut knots = Vec::with_capacity(needed);
    knots.push(sorted[0]);
    for j in 1..=n_interior {
        knots.push(quantile_sorted(&sorted, j as f64 / (n_interior + 1) as f64));
    }
    knots.push(sorted[sorted.len() - 1]);
    if knots.windows(2).any(|w| w[0] >= w[1]) {
        return Err(EstimatorError::DegenerateGaps {
            needed,
            found: distinct.len(),
        });
    }
    Ok(knots)
}

/// Natural cubic spline basis row at `x` (intercept first).
pub fn natural_spline_row(x: f64, knots: &[f64], out: &mut Vec<f64>) {
    let k = knots.len();
    let last = knots[k - 1];
    let d = |j: usize| {
        let a = (x - knots[j]).max(0.0).powi(3);
        let b = (x - last).max(0.0).powi(3);
        (a - b) / (last - knots[j])
    };
    out.push(1.0);
    out.push(x);
    if k >= 3 {
        let dk = d(k - 2);
        for j in 0..k - 2 {
            out.push(d(j) - dk);
        }
    }
}

/// Design columns for `values`: a single intercept, or the natural spline
/// basis with knots from [`spline_knots`]. Returns the matrix and the knots.
pub fn spline_basis(values: &[f64], spec: &BasisSpec) -> Result<(DMatrix<f64>, Vec<f64>), EstimatorError> {
    match spec.kind {
        BasisKind::Constant => Ok((DMatrix::from_element(values.len(), 1, 1.0), Vec::new())),
        BasisKind::CubicSplineGap => {
            let knots = spline_knots(values, spec.n_interior_knots)?;
            let cols = knots.len();
            let mut data = Vec::with_capacity(values.len() * cols);
            for &x in values {
                natural_spline_row(x, &knots, &mut data);
            }
            Ok((DMatrix::from_row_slice(values.len(), cols, &data), knots))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EstimatorKind {
    #[serde(rename = "LS")]
    Ls,
    #[serde(rename = "IPT")]
    Ipt,
    #[serde(rename = "IH")]
    Ih,
    #[serde(rename = "USW")]
    Usw,
    #[serde(rename = "SW1")]
    Sw1,
    #[serde(rename = "SW2")]
    Sw2,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 6] = [
        EstimatorKind::Ls,
        EstimatorKind::Ipt,
        EstimatorKind::Ih,
        EstimatorKind::Usw,
        EstimatorKind::Sw1,
        EstimatorKind::Sw2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Ls => "LS",
            EstimatorKind::Ipt => "IPT",
            EstimatorKind::Ih => "IH",
            EstimatorKind::Usw => "USW",
            EstimatorKind::Sw1 => "SW1",
            EstimatorKind::Sw2 => "SW2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Visit-row design shared by the six estimators.
#[derive(Debug, Clone)]
pub struct VisitDesign {
    /// `[S | I]`, treatment last.
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub knots: Vec<f64>,
    /// Index of each row's subject within the series list.
    pub cluster: Vec<usize>,
    rows: Vec<crate::weights::WeightRow>,
}

impl VisitDesign {
    pub fn build(series: &[WeightSeries], basis: &BasisSpec) -> Result<Self, EstimatorError> {
        let mut rows = Vec::new();
        let mut cluster = Vec::new();
        let mut arm = Vec::new();
        for (i, s) in series.iter().enumerate() {
            for r in &s.rows {
                rows.push(*r);
                cluster.push(i);
                arm.push(if s.treatment { 1.0 } else { 0.0 });
            }
        }
        let axis: Vec<f64> = rows
            .iter()
            .map(|r| match basis.axis {
                BasisAxis::Gap => r.gap,
                BasisAxis::Entry => r.time,
            })
            .collect();
        let (s, knots) = spline_basis(&axis, basis)?;
        let n = rows.len();
        let p = s.ncols() + 1;
        if n < p {
            return Err(EstimatorError::TooFewRows { rows: n, cols: p });
        }
        let x = DMatrix::from_fn(n, p, |i, j| if j + 1 == p { arm[i] } else { s[(i, j)] });
        let y = DVector::from_iterator(n, rows.iter().map(|r| r.outcome));
        Ok(VisitDesign {
            x,
            y,
            knots,
            cluster,
            rows,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Regression weights `1 / (ipt * monitoring weight)` for `kind`.
    pub fn row_weights(&self, kind: EstimatorKind) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| {
                let combined = match kind {
                    EstimatorKind::Ls => 1.0,
                    EstimatorKind::Ipt => r.ipt,
                    EstimatorKind::Ih => r.ipt * r.point_intensity,
                    EstimatorKind::Usw => r.ipt * r.usw,
                    EstimatorKind::Sw1 => r.ipt * r.sw1,
                    EstimatorKind::Sw2 => r.ipt * r.sw2,
                };
                1.0 / combined
            })
            .collect()
    }
}

/// Weighted least squares by Householder QR of `sqrt(w) X`.
pub fn weighted_least_squares(x: &DMatrix<f64>, y: &DVector<f64>, w: &[f64]) -> Result<DVector<f64>, EstimatorError> {
    let (n, p) = x.shape();
    if n < p {
        return Err(EstimatorError::TooFewRows { rows: n, cols: p });
    }
    if let Some((row, &value)) = w.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
        return Err(EstimatorError::BadWeight { row, value });
    }
    let sw: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let xw = DMatrix::from_fn(n, p, |i, j| x[(i, j)] * sw[i]);
    let yw = DVector::from_fn(n, |i, _| y[i] * sw[i]);
    let qr = xw.qr();
    let r = qr.r();
    let scale = (0..p).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..p).any(|i| r[(i, i)].abs() <= RANK_TOL * scale) || scale == 0.0 {
        return Err(EstimatorError::RankDeficient);
    }
    let qty = qr.q().transpose() * yw;
    r.solve_upper_triangular(&qty).ok_or(EstimatorError::RankDeficient)
}

/// Effect estimate and the remaining basis coefficients for one estimator.
pub fn solve_weighted_ee(design: &VisitDesign, kind: EstimatorKind) -> Result<(f64, Vec<f64>), EstimatorError> {
    let beta = weighted_least_squares(&design.x, &design.y, &design.row_weights(kind))?;
    let p = beta.len();
    Ok((beta[p - 1], beta.rows(0, p - 1).iter().copied().collect()))
}

/// Cluster-robust sandwich variance of the treatment coefficient, treating
/// the weights as fixed. Scores are summed within subject.
pub fn robust_variance(design: &VisitDesign, kind: EstimatorKind) -> Result<f64, EstimatorError> {
    let w = design.row_weights(kind);
    let beta = weighted_least_squares(&design.x, &design.y, &w)?;
    Ok(sandwich(&design.x, &design.y, &w, &design.cluster, &beta)?[(beta.len() - 1, beta.len() - 1)])
}

/// Full sandwich covariance `A^-1 M A^-1` with `A = X'WX` and `M` the sum of
/// outer products of per-cluster scores.
pub fn sandwich(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &[f64],
    cluster: &[usize],
    beta: &DVector<f64>,
) -> Result<DMatrix<f64>, EstimatorError> {
    let (n, p) = x.shape();
    let resid = y - x * beta;
    let mut bread = DMatrix::zeros(p, p);
    let n_clusters = cluster.iter().copied().max().map_or(0, |m| m + 1);
    let mut scores = DMatrix::zeros(n_clusters, p);
    for i in 0..n {
        let row = x.row(i);
        bread += w[i] * row.transpose() * row;
        let mut s = scores.row_mut(cluster[i]);
        s += (w[i] * resid[i]) * row;
    }
    let meat = scores.transpose() * &scores;
    let inv = bread.cholesky().ok_or(EstimatorError::RankDeficient)?.inverse();
    Ok(&inv * meat * &inv)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSettings {
    pub basis: BasisSpec,
    /// Winsorisation percentiles for the cumulated weights; `None` disables.
    pub truncation: Option<(f64, f64)>,
    /// Baseline estimator used for the weight numerators and stabilizers.
    pub baseline_mode: BaselineMode,
    pub risk_scale: RiskScale,
    pub probability_policy: ProbabilityPolicy,
    pub stabilized_ipt: bool,
    /// Baseline columns in the propensity model; `None` uses all of them.
    pub treatment_columns: Option<Vec<usize>>,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        EstimatorSettings {
            basis: BasisSpec::default(),
            truncation: Some((2.5, 97.5)),
            baseline_mode: BaselineMode::RiskSet,
            risk_scale: RiskScale::GapTime,
            probability_policy: ProbabilityPolicy::Clip,
            stabilized_ipt: false,
            treatment_columns: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub estimator: EstimatorKind,
    pub estimate: f64,
    pub basis_coefs: Vec<f64>,
    pub robust_var: f64,
    pub bootstrap_var: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub clipped_cells: u64,
    /// `(lower, upper)` truncation bounds for usw, sw1, sw2.
    pub bounds: Vec<(WeightKind, f64, f64)>,
    pub min_propensity: f64,
    pub max_propensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorResult {
    pub estimates: Vec<Estimate>,
    pub n_visit_rows: usize,
    pub n_subjects: usize,
    /// Full intensity model coefficients (treatment, then covariates).
    pub intensity_coefs: Vec<f64>,
    /// Treatment coefficient of the reduced intensity model.
    pub reduced_coefs: Vec<f64>,
    pub treatment_coefs: Vec<f64>,
    pub knots: Vec<f64>,
    pub weights: WeightSummary,
}

impl EstimatorResult {
    pub fn get(&self, kind: EstimatorKind) -> Option<&Estimate> {
        self.estimates.iter().find(|e| e.estimator == kind)
    }

    pub fn estimate(&self, kind: EstimatorKind) -> f64 {
        self.get(kind).map_or(f64::NAN, |e| e.estimate)
    }
}

/// Nuisance fits and weights for a dataset.
#[derive(Debug, Clone)]
pub struct FittedWeights {
    pub series: Vec<WeightSeries>,
    pub intensity_coefs: Vec<f64>,
    pub reduced_coefs: Vec<f64>,
    pub treatment: crate::treatment::TreatmentFit,
    pub clipped_cells: u64,
}

/// Fit the propensity and intensity models and cumulate the weights
/// (truncated per `settings`).
pub fn fit_weights(ds: &PanelDataset, settings: &EstimatorSettings) -> Result<FittedWeights, EstimatorError> {
    let columns: Vec<usize> = settings
        .treatment_columns
        .clone()
        .unwrap_or_else(|| (0..ds.n_baseline()).collect());
    let treatment = fit_logistic(ds, &columns)?;
    let full_spec = IntensitySpec::full(ds).with_risk_scale(settings.risk_scale);
    let reduced_spec = IntensitySpec::reduced().with_risk_scale(settings.risk_scale);
    let mut full = fit_partial_likelihood(ds, &full_spec)?;
    let reduced = fit_partial_likelihood(ds, &reduced_spec)?;
    let (stab1, stab2) = if settings.baseline_mode == BaselineMode::RiskSet {
        (full.baseline.clone(), reduced.baseline.clone())
    } else {
        let numer = breslow_baseline(ds, &full, settings.baseline_mode)?;
        full = full.with_baseline(numer);
        (
            full.baseline.clone(),
            breslow_baseline(ds, &reduced, settings.baseline_mode)?,
        )
    };
    let models = WeightModels {
        full: &full,
        reduced: &reduced,
        stab1: &stab1,
        stab2: &stab2,
        policy: settings.probability_policy,
    };
    let mut series = ds
        .subjects()
        .iter()
        .map(|s| {
            cumulate_weights(
                s,
                ds.grid(),
                &models,
                ipt_weight(&treatment, s, settings.stabilized_ipt),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    if let Some((lo, hi)) = settings.truncation {
        for kind in WeightKind::ALL {
            truncate_weights_in_place(&mut series, kind, lo, hi)?;
        }
    }
    let clipped_cells = series.iter().map(|s| s.clipped as u64).sum();
    Ok(FittedWeights {
        series,
        intensity_coefs: full.coefficients,
        reduced_coefs: reduced.coefficients,
        treatment,
        clipped_cells,
    })
}

/// Full two-step pipeline: nuisance fits, weights, then the six estimators.
pub fn estimate_all(ds: &PanelDataset, settings: &EstimatorSettings) -> Result<EstimatorResult, EstimatorError> {
    let fitted = fit_weights(ds, settings)?;
    estimate_from_weights(ds, &fitted, settings)
}

pub fn estimate_from_weights(
    ds: &PanelDataset,
    fitted: &FittedWeights,
    settings: &EstimatorSettings,
) -> Result<EstimatorResult, EstimatorError> {
    let design = VisitDesign::build(&fitted.series, &settings.basis)?;
    let mut estimates = Vec::with_capacity(6);
    for kind in EstimatorKind::ALL {
        let w = design.row_weights(kind);
        let beta = weighted_least_squares(&design.x, &design.y, &w)?;
        let p = beta.len();
        let cov = sandwich(&design.x, &design.y, &w, &design.cluster, &beta)?;
        estimates.push(Estimate {
            estimator: kind,
            estimate: beta[p - 1],
            basis_coefs: beta.rows(0, p - 1).iter().copied().collect(),
            robust_var: cov[(p - 1, p - 1)],
            bootstrap_var: None,
        });
    }
    let props: Vec<f64> = ds.subjects().iter().map(|s| fitted.treatment.propensity(s)).collect();
    let bounds = WeightKind::ALL
        .iter()
        .filter_map(|&k| fitted.series.first()?.bounds(k).map(|(lo, hi)| (k, lo, hi)))
        .collect();
    Ok(EstimatorResult {
        estimates,
        n_visit_rows: design.n_rows(),
        n_subjects: ds.len(),
        intensity_coefs: fitted.intensity_coefs.clone(),
        reduced_coefs: fitted.reduced_coefs.clone(),
        treatment_coefs: fitted.treatment.coefficients.clone(),
        knots: design.knots.clone(),
        weights: WeightSummary {
            clipped_cells: fitted.clipped_cells,
            bounds,
            min_propensity: props.iter().cloned().fold(f64::INFINITY, f64::min),
            max_propensity: props.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// Variance per estimator, in [`EstimatorKind::ALL`] order.
    pub variances: Vec<(EstimatorKind, f64)>,
    pub n_boot: usize,
    pub n_failed: usize,
}

impl BootstrapResult {
    pub fn variance(&self, kind: EstimatorKind) -> f64 {
        self.variances
            .iter()
            .find(|(k, _)| *k == kind)
            .map_or(f64::NAN, |(_, v)| *v)
    }
}

fn one_resample(ds: &PanelDataset, settings: &EstimatorSettings, seed: u64, b: usize) -> Option<[f64; 6]> {
    use rand::Rng;
    let mut rng = derived_stream(seed, BOOT_DOMAIN, b as u64);
    let n = ds.len();
    let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    let sample = ds.resample(&idx).ok()?;
    let res = estimate_all(&sample, settings).ok()?;
    let mut out = [0.0; 6];
    for (o, k) in out.iter_mut().zip(EstimatorKind::ALL) {
        *o = res.estimate(k);
    }
    Some(out)
}

/// Nonparametric bootstrap over subjects, refitting every nuisance model in
/// each resample. Deterministic in `seed` regardless of thread count.
pub fn bootstrap_variance(
    ds: &PanelDataset,
    settings: &EstimatorSettings,
    n_boot: usize,
    seed: u64,
) -> Result<BootstrapResult, EstimatorError> {
    #[cfg(feature = "parallel")]
    let draws: Vec<Option<[f64; 6]>> = {
        use rayon::prelude::*;
        (0..n_boot)
            .into_par_iter()
            .map(|b| one_resample(ds, settings, seed, b))
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let draws: Vec<Option<[f64; 6]>> = (0..n_boot).map(|b| one_resample(ds, settings, seed, b)).collect();

    let ok: Vec<[f64; 6]> = draws.iter().flatten().copied().collect();
    let n_failed = n_boot - ok.len();
    if n_failed as f64 > MAX_BOOT_FAILURE * n_boot as f64 || ok.len() < 2 {
        return Err(EstimatorError::BootstrapFailures {
            failed: n_failed,
            total: n_boot,
        });
    }
    let variances = EstimatorKind::ALL
        .iter()
        .enumerate()
        .map(|(j, &k)| (k, variance(&ok.iter().map(|d| d[j]).collect::<Vec<_>>())))
        .collect();
    Ok(BootstrapResult {
        variances,
        n_boot,
        n_failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_column_count_and_linear_tail() {
        let knots = [0.0, 1.0, 2.0, 3.0, 4.0];
        let mut row = Vec::new();
        natural_spline_row(2.5, &knots, &mut row);
        assert_eq!(row.len(), 5);
        assert_eq!(&row[..2], &[1.0, 2.5]);
        // beyond the last knot every column is linear in x
        let eval = |x: f64| {
            let mut r = Vec::new();
            natural_spline_row(x, &knots, &mut r);
            r
        };
        let (a, b, c) = (eval(5.0), eval(6.0), eval(7.0));
        for j in 0..5 {
            assert!((a[j] - 2.0 * b[j] + c[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn knots_at_quartiles() {
        let v: Vec<f64> = (1..=9).map(f64::from).collect();
        assert_eq!(spline_knots(&v, 3).unwrap(), vec![1.0, 3.0, 5.0, 7.0, 9.0]);
        assert!(matches!(
            spline_knots(&[1.0, 1.0, 2.0, 2.0], 3),
            Err(EstimatorError::DegenerateGaps { needed: 5, found: 2 })
        ));
    }

    #[test]
    fn ols_on_binary_regressor() {
        let x = DMatrix::from_fn(6, 2, |i, j| if j == 0 { 1.0 } else { (i % 2) as f64 });
        let y = DVector::from_fn(6, |i, _| 2.0 * (i % 2) as f64);
        let b = weighted_least_squares(&x, &y, &[1.0; 6]).unwrap();
        assert!((b[1] - 2.0).abs() < 1e-14 && b[0].abs() < 1e-14);
    }

    #[test]
    fn rank_deficiency_detected() {
        let x = DMatrix::from_fn(5, 2, |_, _| 1.0);
        let y = DVector::from_element(5, 1.0);
        assert_eq!(
            weighted_least_squares(&x, &y, &[1.0; 5]).unwrap_err(),
            EstimatorError::RankDeficient
        );
        assert!(matches!(
            weighted_least_squares(&x, &y, &[1.0, 0.0, 1.0, 1.0, 1.0]),
            Err(EstimatorError::BadWeight { row: 1, .. })
        ));
    }

    #[test]
    fn estimator_names_round_trip() {
        for k in EstimatorKind::ALL {
            assert_eq!(EstimatorKind::parse(k.name()), Some(k));
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.name()));
        }
    }
}
