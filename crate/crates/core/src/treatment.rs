//! Baseline propensity model and inverse-probability-of-treatment weights.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::panel::{PanelDataset, SubjectPath};

/// Coefficient norm beyond which the fit is treated as separated.
pub const SEPARATION_NORM: f64 = 50.0;
const MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TreatmentError {
    #[error("treatment is (quasi-)separated by the baseline covariates (coefficient norm {norm:.1})")]
    Separation { norm: f64 },
    #[error("logistic design matrix is singular")]
    SingularDesign,
    #[error("baseline column {0} out of range")]
    BadColumn(usize),
    #[error("logistic fit did not converge in {0} iterations")]
    NoConvergence(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreatmentFit {
    /// Intercept first, then one coefficient per selected baseline column.
    pub coefficients: Vec<f64>,
    pub columns: Vec<usize>,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// Marginal share of treated subjects, used by stabilized weights.
    pub treated_share: f64,
}

impl TreatmentFit {
    pub fn propensity(&self, subject: &SubjectPath) -> f64 {
        let eta = self.coefficients[0]
            + self
                .columns
                .iter()
                .zip(&self.coefficients[1..])
                .map(|(&j, b)| subject.baseline[j] * b)
                .sum::<f64>();
        1.0 / (1.0 + (-eta).exp())
    }
}

fn design(ds: &PanelDataset, columns: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
    let n = ds.len();
    let p = columns.len() + 1;
    let x = DMatrix::from_fn(n, p, |i, c| {
        if c == 0 {
            1.0
        } else {
            ds.subjects()[i].baseline[columns[c - 1]]
        }
    });
    let y = DVector::from_fn(n, |i, _| ds.subjects()[i].treatment_value());
    (x, y)
}

/// Logistic regression of treatment on `(1, K[columns])` by Newton–Raphson.
pub fn fit_logistic(ds: &PanelDataset, columns: &[usize]) -> Result<TreatmentFit, TreatmentError> {
    if let Some(&j) = columns.iter().find(|&&j| j >= ds.n_baseline()) {
        return Err(TreatmentError::BadColumn(j));
    }
    let (x, y) = design(ds, columns);
    let n = x.nrows();
    let p = x.ncols();
    let tol = 1e-9 * n as f64;
    let mut beta = DVector::zeros(p);
    let mut iterations = 0;
    loop {
        let eta = &x * &beta;
        let mu = eta.map(|e| 1.0 / (1.0 + (-e).exp()));
        let grad = x.transpose() * (&y - &mu);
        let gnorm = grad.amax();
        if gnorm < tol {
            let norm = beta.norm();
            if norm > SEPARATION_NORM {
                return Err(TreatmentError::Separation { norm });
            }
            let treated_share = y.sum() / n as f64;
            return Ok(TreatmentFit {
                coefficients: beta.iter().copied().collect(),
                columns: columns.to_vec(),
                iterations,
                gradient_norm: gnorm,
                treated_share,
            });
        }
        if iterations >= MAX_ITER {
            return Err(TreatmentError::NoConvergence(iterations));
        }
        let norm = beta.norm();
        if norm > SEPARATION_NORM {
            return Err(TreatmentError::Separation { norm });
        }
        iterations += 1;
        let w = mu.map(|m| m * (1.0 - m));
        let mut xtwx = DMatrix::zeros(p, p);
        for i in 0..n {
            let row = x.row(i);
            xtwx += w[i] * row.transpose() * row;
        }
        let step = xtwx.cholesky().ok_or(TreatmentError::SingularDesign)?.solve(&grad);
        beta += step;
    }
}

/// Probability of the treatment actually received; the estimators divide by
/// it. With `stabilized`, the weight is divided by the marginal probability
/// of that arm instead.
pub fn ipt_weight(fit: &TreatmentFit, subject: &SubjectPath, stabilized: bool) -> f64 {
    let p = fit.propensity(subject);
    let (w, marginal) = if subject.treatment {
        (p, fit.treated_share)
    } else {
        (1.0 - p, 1.0 - fit.treated_share)
    };
    if stabilized {
        w / marginal
    } else {
        w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PositivityReport {
    pub min_propensity: f64,
    pub max_propensity: f64,
    pub eps: f64,
    /// Subjects with propensity outside `[eps, 1 - eps]`.
    pub flagged: usize,
    pub flagged_ids: Vec<String>,
    /// Quantiles (0, 1, 5, 25, 50, 75, 95, 99, 100 %) of the inverse weights.
    pub inverse_weight_quantiles: Vec<(f64, f64)>,
}

pub const DIAGNOSTIC_QUANTILES: [f64; 9] = [0.0, 1.0, 5.0, 25.0, 50.0, 75.0, 95.0, 99.0, 100.0];

pub fn positivity_diagnostics(fit: &TreatmentFit, ds: &PanelDataset, eps: f64) -> PositivityReport {
    let props: Vec<f64> = ds.subjects().iter().map(|s| fit.propensity(s)).collect();
    let flagged_ids: Vec<String> = ds
        .subjects()
        .iter()
        .zip(&props)
        .filter(|(_, &p)| p < eps || p > 1.0 - eps)
        .map(|(s, _)| s.id.clone())
        .collect();
    let mut inv: Vec<f64> = ds.subjects().iter().map(|s| 1.0 / ipt_weight(fit, s, false)).collect();
    inv.sort_by(f64::total_cmp);
    PositivityReport {
        min_propensity: props.iter().cloned().fold(f64::INFINITY, f64::min),
        max_propensity: props.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        eps,
        flagged: flagged_ids.len(),
        flagged_ids,
        inverse_weight_quantiles: DIAGNOSTIC_QUANTILES
            .iter()
            .map(|&q| (q, crate::stats::quantile_sorted(&inv, q / 100.0)))
            .collect(),
    }
}
