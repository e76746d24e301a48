//! wasm-bindgen exports for the static page in `www/`.
//!
//! Every export returns a JSON string; the page parses it with `JSON.parse`.

use iivw::dgm::{simulate_dataset, DgmConfig};
use iivw::estimator::{estimate_from_weights, fit_weights, EstimatorSettings};
use iivw::panel::PanelDataset;
use serde::Serialize;
use wasm_bindgen::prelude::wasm_bindgen;
use wasm_bindgen::JsValue;

#[derive(Serialize)]
struct PathView {
    id: String,
    treated: bool,
    censor_time: f64,
    visit_times: Vec<f64>,
    /// `[time, weight]` at each post-baseline visit.
    sw2: Vec<[f64; 2]>,
}

#[derive(Serialize)]
struct Simulation {
    mean_visits: [f64; 2],
    paths: Vec<PathView>,
}

#[derive(Serialize)]
struct EstimateView {
    name: &'static str,
    estimate: f64,
    se: f64,
}

#[derive(Serialize)]
struct Estimates {
    truth: f64,
    intensity_coefs: Vec<f64>,
    estimates: Vec<EstimateView>,
}

#[derive(Serialize)]
struct VisitCurve {
    gap: Vec<f64>,
    control: Vec<f64>,
    treated: Vec<f64>,
}

fn config(gamma_z: f64, gamma_i: f64, n_subjects: usize, seed: u64) -> DgmConfig {
    let mut cfg = DgmConfig::default().with_gamma(gamma_i, gamma_z);
    cfg.n_subjects = n_subjects;
    cfg.master_seed = seed;
    cfg
}

fn simulate(cfg: &DgmConfig) -> Result<PanelDataset, JsValue> {
    simulate_dataset(cfg, 0).map_err(|e| JsValue::from_str(&e.to_string()))
}

fn to_json<T: Serialize>(value: &T) -> Result<String, JsValue> {
    serde_json::to_string(value).map_err(|e| JsValue::from_str(&e.to_string()))
}

/// Simulate one dataset and return the first `n_paths` subjects' visit
/// times with their cumulated SW2 weights.
#[wasm_bindgen]
pub fn simulate_paths(
    gamma_z: f64,
    gamma_i: f64,
    n_subjects: usize,
    n_paths: usize,
    seed: u64,
) -> Result<String, JsValue> {
    let cfg = config(gamma_z, gamma_i, n_subjects, seed);
    let ds = simulate(&cfg)?;
    let fitted = fit_weights(&ds, &EstimatorSettings::default()).map_err(|e| JsValue::from_str(&e.to_string()))?;
    let (a0, a1) = ds.mean_visits_by_arm();
    let paths = ds
        .subjects()
        .iter()
        .zip(&fitted.series)
        .take(n_paths)
        .map(|(s, w)| PathView {
            id: s.id.clone(),
            treated: s.treatment,
            censor_time: s.censor_time,
            visit_times: s.visits.iter().map(|v| v.time).collect(),
            sw2: w.rows.iter().map(|r| [r.time, r.sw2]).collect(),
        })
        .collect();
    to_json(&Simulation {
        mean_visits: [a0, a1],
        paths,
    })
}

/// Fit all six estimators to one simulated dataset.
#[wasm_bindgen]
pub fn estimate(gamma_z: f64, gamma_i: f64, n_subjects: usize, seed: u64) -> Result<String, JsValue> {
    let cfg = config(gamma_z, gamma_i, n_subjects, seed);
    let ds = simulate(&cfg)?;
    let settings = EstimatorSettings::default();
    let result = fit_weights(&ds, &settings)
        .and_then(|fitted| estimate_from_weights(&ds, &fitted, &settings))
        .map_err(|e| JsValue::from_str(&e.to_string()))?;
    let estimates = result
        .estimates
        .iter()
        .map(|e| EstimateView {
            name: e.estimator.name(),
            estimate: e.estimate,
            se: e.robust_var.sqrt(),
        })
        .collect();
    to_json(&Estimates {
        truth: cfg.true_effect(),
        intensity_coefs: result.intensity_coefs,
        estimates,
    })
}

/// True per-cell visit probability against gap time for both arms, with
/// the mediator held at `mediator`.
#[wasm_bindgen]
pub fn visit_curve(gamma_z: f64, gamma_i: f64, mediator: f64) -> Result<String, JsValue> {
    let cfg = config(gamma_z, gamma_i, 1, 0);
    let n = cfg.grid.n_cells();
    let gap: Vec<f64> = (1..=n).map(|k| cfg.grid.time_of(k)).collect();
    let curve = |treated| {
        gap.iter()
            .map(|&g| cfg.visit_probability(g, treated, mediator))
            .collect()
    };
    to_json(&VisitCurve {
        control: curve(false),
        treated: curve(true),
        gap,
    })
}
