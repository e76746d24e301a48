//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary so the lines are always visible under `cargo test`.
//! The process fails only when a criterion outside `KNOWN_UNATTAINABLE` fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use iivw::dgm::{simulate_dataset, DgmConfig, Variant};
use iivw::estimator::{
    bootstrap_variance, estimate_all, solve_weighted_ee, weighted_least_squares, BasisSpec, EstimatorKind,
    EstimatorSettings, VisitDesign,
};
use iivw::experiment::{run_scenario, ScenarioConfig, ScenarioSummary, SCENARIO_GAMMAS};
use iivw::intensity::{
    fit_partial_likelihood, intensity_state, partial_loglik_and_derivatives, BaselineMode, BaselineTable, IntensityFit,
    IntensitySpec, RiskScale, Term,
};
use iivw::panel::{build_dataset, GridSpec, PanelDataset, SubjectPath};
use iivw::treatment::fit_logistic;
use iivw::weights::{cumulate_weights, ProbabilityPolicy, WeightModels, WeightRow, WeightSeries, PROBABILITY_CEILING};
use serde::Deserialize;

/// Criteria that cannot hold as literally stated; see the printed reason.
const KNOWN_UNATTAINABLE: &[u32] = &[6];

struct Outcome {
    id: u32,
    pass: bool,
    detail: String,
}

fn report(id: u32, title: &str, pass: bool, detail: String) -> Outcome {
    println!(
        "[{}] criterion {id}: {title}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    Outcome { id, pass, detail }
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

fn scenario(
    pairs: &[[f64; 2]],
    reps: usize,
    boot_reps: usize,
    n_boot: usize,
    variant: Variant,
) -> Vec<ScenarioSummary> {
    let mut cfg = ScenarioConfig::default().with_variant(variant);
    cfg.gamma_grid = pairs.to_vec();
    cfg.n_replicates = reps;
    cfg.bootstrap_replicates = boot_reps;
    cfg.n_boot = n_boot;
    run_scenario(&cfg).expect("scenario run").scenarios
}

fn bias(s: &ScenarioSummary, k: EstimatorKind) -> f64 {
    s.get(k).unwrap().mean_abs_bias
}

fn criterion_1() -> Outcome {
    let all = scenario(&[[0.0, 0.0], [-0.3, 0.1], [0.3, 0.2]], 300, 0, 0, Variant::Main);
    let sw2_target = [0.01, 0.03, 0.05];
    let ls_target = [0.73, 0.35, 0.67];
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, s) in all.iter().enumerate() {
        let (sw2, ls) = (bias(s, EstimatorKind::Sw2), bias(s, EstimatorKind::Ls));
        pass &= within(sw2, sw2_target[i], 0.06) && within(ls, ls_target[i], 0.08);
        parts.push(format!("({},{}) SW2 {sw2:.3} LS {ls:.3}", s.gamma1, s.gamma2));
    }
    let ih = bias(&all[2], EstimatorKind::Ih);
    pass &= ih >= 0.25;
    parts.push(format!("IH at (0.3,0.2) {ih:.3} (need >= 0.25)"));
    report(
        1,
        "bias pattern over 300 replicates, SW2 +-0.06, LS +-0.08",
        pass,
        parts.join("; "),
    )
}

fn criterion_2_and_3() -> (Outcome, Outcome) {
    let runs = scenario(&SCENARIO_GAMMAS, 100, 0, 0, Variant::Main);
    let mut pass = true;
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for s in &runs {
        let (gi, gz) = s.mean_gamma_hat();
        // table pairs list the mediator effect first
        let err = (gz - s.gamma1).abs().max((gi - s.gamma2).abs());
        worst = worst.max(err);
        pass &= err <= 0.03;
        parts.push(format!("({},{})->({gz:.3},{gi:.3})", s.gamma1, s.gamma2));
    }
    let c2 = report(
        2,
        "mean fitted intensity coefficients within +-0.03 over 100 replicates, all 8 pairs",
        pass,
        format!("max error {worst:.4}: {}", parts.join(" ")),
    );

    let targets = [([0.0, 0.0], (3.9, 3.9)), ([-0.3, 0.1], (1.9, 2.9))];
    let mut pass = true;
    let mut parts = Vec::new();
    for (pair, (a0, a1)) in targets {
        let s = runs
            .iter()
            .find(|s| s.gamma1 == pair[0] && s.gamma2 == pair[1])
            .unwrap();
        pass &= within(s.mean_visits_arm0, a0, 0.2) && within(s.mean_visits_arm1, a1, 0.2);
        parts.push(format!(
            "({},{}) arm0 {:.2} (want {a0}) arm1 {:.2} (want {a1})",
            pair[0], pair[1], s.mean_visits_arm0, s.mean_visits_arm1
        ));
    }
    let c3 = report(
        3,
        "mean post-baseline visits per arm within +-0.2",
        pass,
        parts.join("; "),
    );
    (c2, c3)
}

/// Slope of the populated baseline buckets on gap time, each bucket
/// weighted by its number of at-risk cells.
fn baseline_slope(ds: &PanelDataset, fit: &IntensityFit) -> f64 {
    let grid = ds.grid();
    let mut risk = vec![0.0f64; grid.n_cells() as usize + 1];
    for s in ds.subjects() {
        for c in 1..=grid.last_at_risk_cell(s.censor_time) {
            if let Some((g, _)) = intensity_state(s, grid, c) {
                risk[g as usize] += 1.0;
            }
        }
    }
    let pts: Vec<(f64, f64, f64)> = fit
        .baseline
        .entries()
        .map(|(k, v)| (k as f64 * grid.dt, v, risk[k as usize]))
        .collect();
    let sw: f64 = pts.iter().map(|p| p.2).sum();
    let mb = pts.iter().map(|p| p.2 * p.0).sum::<f64>() / sw;
    let mr = pts.iter().map(|p| p.2 * p.1).sum::<f64>() / sw;
    let sxy: f64 = pts.iter().map(|p| p.2 * (p.0 - mb) * (p.1 - mr)).sum();
    let sxx: f64 = pts.iter().map(|p| p.2 * (p.0 - mb).powi(2)).sum();
    sxy / sxx
}

fn criterion_4() -> Outcome {
    let cfg = DgmConfig::default();
    let slopes: Vec<f64> = (0..50)
        .map(|rep| {
            let ds = simulate_dataset(&cfg, rep).unwrap();
            let fit = fit_partial_likelihood(&ds, &IntensitySpec::full(&ds)).unwrap();
            baseline_slope(&ds, &fit)
        })
        .collect();
    let slope = iivw::stats::mean(&slopes);
    report(
        4,
        "gap-time baseline slope 0.02 +-0.004 over 50 replicates at (0,0), risk-set weighted",
        within(slope, 0.02, 0.004),
        format!("mean slope {slope:.5}"),
    )
}

#[derive(Deserialize)]
struct T1Subject {
    id: String,
    treatment: u8,
    censor_time: f64,
    visit_times: Vec<f64>,
}

#[derive(Deserialize)]
struct T1 {
    dt: f64,
    tau: f64,
    subjects: Vec<T1Subject>,
}

#[derive(Deserialize)]
struct L1 {
    rows: Vec<(f64, u8)>,
}

#[derive(Deserialize)]
struct E1 {
    rows: Vec<(f64, u8, f64, f64)>,
}

#[derive(Deserialize)]
struct W2Subject {
    treatment: u8,
    censor_time: f64,
    visits: Vec<(f64, f64)>,
}

#[derive(Deserialize)]
struct W2 {
    dt: f64,
    tau: f64,
    subject: W2Subject,
    full_coefficients: Vec<f64>,
    full_rates: Vec<f64>,
    reduced_coefficient: f64,
    stab1_rates: Vec<f64>,
    stab2_rates: Vec<f64>,
}

fn small_sim(n: usize, gamma_i: f64, gamma_z: f64, rep: u64) -> PanelDataset {
    let mut cfg = DgmConfig::default().with_gamma(gamma_i, gamma_z);
    cfg.n_subjects = n;
    simulate_dataset(&cfg, rep).unwrap()
}

fn fd_errors() -> (f64, f64) {
    let ds = small_sim(120, 0.2, 0.3, 5);
    let (mut g_err, mut h_err) = (0.0f64, 0.0f64);
    for scale in [RiskScale::GapTime, RiskScale::EntryTime] {
        let spec = IntensitySpec::full(&ds).with_risk_scale(scale);
        let at = |g: &[f64]| partial_loglik_and_derivatives(&ds, &spec, g).unwrap();
        let g0 = [0.1, -0.2];
        let base = at(&g0);
        let h = 1e-5;
        for j in 0..2 {
            let (mut up, mut dn) = (g0, g0);
            up[j] += h;
            dn[j] -= h;
            let (fu, fd) = (at(&up), at(&dn));
            let grad = (fu.value - fd.value) / (2.0 * h);
            g_err = g_err.max((grad - base.gradient[j]).abs() / base.gradient[j].abs().max(1.0));
            for k in 0..2 {
                let an = base.hessian[j * 2 + k];
                h_err = h_err.max(((fu.gradient[k] - fd.gradient[k]) / (2.0 * h) - an).abs() / an.abs().max(1.0));
            }
        }
    }
    (g_err, h_err)
}

fn t1_error() -> f64 {
    let f: T1 = serde_json::from_str(include_str!("fixtures/t1.json")).unwrap();
    let subjects = f
        .subjects
        .into_iter()
        .map(|s| {
            s.visit_times.into_iter().fold(
                SubjectPath::new(s.id, s.treatment == 1, vec![], s.censor_time),
                |p, t| p.with_visit(t, 0.0, vec![]),
            )
        })
        .collect();
    let ds = build_dataset(subjects, GridSpec::new(f.dt, f.tau).unwrap()).unwrap();
    let cells = common::all_cells(&ds);
    let oracle = common::grid_argmax_1d(|b| common::gap_loglik(&cells, &[b]), -5.0, 5.0, 1e-4);
    let fit = fit_partial_likelihood(&ds, &IntensitySpec::reduced()).unwrap();
    (fit.coefficients[0] - oracle).abs()
}

fn e1_error() -> f64 {
    let e1: E1 = serde_json::from_str(include_str!("fixtures/e1.json")).unwrap();
    let series = rows_to_series(&e1.rows);
    let design = VisitDesign::build(&series, &BasisSpec::default()).unwrap();
    let (beta, _) = solve_weighted_ee(&design, EstimatorKind::Ipt).unwrap();
    let x: Vec<Vec<f64>> = (0..design.x.nrows())
        .map(|i| design.x.row(i).iter().copied().collect())
        .collect();
    let y: Vec<f64> = design.y.iter().copied().collect();
    let w: Vec<f64> = e1.rows.iter().map(|r| 1.0 / r.3).collect();
    (common::normal_equations(&x, &y, &w)[5] - beta).abs()
}

fn rows_to_series(rows: &[(f64, u8, f64, f64)]) -> Vec<WeightSeries> {
    rows.iter()
        .enumerate()
        .map(|(i, &(gap, arm, y, w))| WeightSeries {
            id: format!("r{i}"),
            treatment: arm == 1,
            rows: vec![WeightRow {
                time: gap,
                gap,
                outcome: y,
                usw: 1.0,
                sw1: 1.0,
                sw2: 1.0,
                point_intensity: 1.0,
                ipt: w,
            }],
            bounds: [None; 3],
            clipped: 0,
        })
        .collect()
}

fn l1_error() -> f64 {
    let l1: L1 = serde_json::from_str(include_str!("fixtures/l1.json")).unwrap();
    let ll = |a: f64, b: f64| -> f64 {
        l1.rows
            .iter()
            .map(|&(k, t)| {
                let eta = a + b * k;
                let log1pe = if eta > 0.0 {
                    eta + (-eta).exp().ln_1p()
                } else {
                    eta.exp().ln_1p()
                };
                t as f64 * eta - log1pe
            })
            .sum()
    };
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    let mut search = |a0: f64, b0: f64, half: f64, h: f64| {
        let n = (2.0 * half / h).round() as i32;
        for i in 0..=n {
            for j in 0..=n {
                let (a, b) = (a0 - half + i as f64 * h, b0 - half + j as f64 * h);
                let v = ll(a, b);
                if v > best.0 {
                    best = (v, a, b);
                }
            }
        }
        (best.1, best.2)
    };
    let (a0, b0) = search(0.0, 0.0, 5.0, 0.01);
    let (a, b) = search(a0, b0, 0.02, 1e-4);
    let subjects = l1
        .rows
        .iter()
        .enumerate()
        .map(|(i, &(k, t))| SubjectPath::new(format!("p{i}"), t == 1, vec![k], 1.0).with_visit(0.0, 0.0, vec![]))
        .collect();
    let ds = build_dataset(subjects, GridSpec::new(0.5, 1.0).unwrap()).unwrap();
    let fit = fit_logistic(&ds, &[0]).unwrap();
    (fit.coefficients[0] - a).abs().max((fit.coefficients[1] - b).abs())
}

fn table(dt: f64, rates: &[f64]) -> BaselineTable {
    let mut r = vec![None];
    r.extend(rates.iter().map(|&v| Some(v)));
    BaselineTable::from_rates(BaselineMode::RiskSet, dt, r)
}

fn fixed_fit(terms: Vec<Term>, coefficients: Vec<f64>, baseline: BaselineTable) -> IntensityFit {
    IntensityFit {
        spec: IntensitySpec {
            reduced: terms == [Term::Treatment],
            terms,
            risk_scale: Default::default(),
        },
        coefficients,
        baseline,
        iterations: 0,
        gradient_norm: 0.0,
        loglik: 0.0,
        information: vec![],
        n_events: 1,
    }
}

fn w2_error() -> f64 {
    let w: W2 = serde_json::from_str(include_str!("fixtures/w2.json")).unwrap();
    let grid = GridSpec::new(w.dt, w.tau).unwrap();
    let s = w.subject.visits.iter().fold(
        SubjectPath::new("w2", w.subject.treatment == 1, vec![], w.subject.censor_time),
        |p, &(t, z)| p.with_visit(t, 0.0, vec![z]),
    );
    let other = SubjectPath::new("ctl", false, vec![], 0.5).with_visit(0.0, 0.0, vec![0.0]);
    let ds = build_dataset(vec![s, other], grid).unwrap();
    let s = &ds.subjects()[0];
    let full = fixed_fit(
        vec![Term::Treatment, Term::Covariate(0)],
        w.full_coefficients.clone(),
        table(w.dt, &w.full_rates),
    );
    let reduced = fixed_fit(
        vec![Term::Treatment],
        vec![w.reduced_coefficient],
        table(w.dt, &w.stab2_rates),
    );
    let (stab1, stab2) = (table(w.dt, &w.stab1_rates), table(w.dt, &w.stab2_rates));
    let models = WeightModels {
        full: &full,
        reduced: &reduced,
        stab1: &stab1,
        stab2: &stab2,
        policy: ProbabilityPolicy::Strict,
    };
    let series = cumulate_weights(s, &grid, &models, 1.0).unwrap();
    let rate = |r: &[f64], b: u32| r[(b as usize - 1).min(r.len() - 1)];
    let (mut num, mut d1, mut d2) = (1.0, 1.0, 1.0);
    let mut err = 0.0f64;
    let mut row = 0;
    for c in common::cells_of(0, s, &grid) {
        let p =
            rate(&w.full_rates, c.gap) * (w.full_coefficients[0] * c.treatment + w.full_coefficients[1] * c.z[0]).exp();
        let q1 = rate(&w.stab1_rates, c.gap);
        let q2 = rate(&w.stab2_rates, c.gap) * (w.reduced_coefficient * c.treatment).exp();
        if c.event {
            num *= p;
            d1 *= q1;
            d2 *= q2;
            let r = &series.rows[row];
            for (got, want) in [(r.usw, num), (r.sw1, num / d1), (r.sw2, num / d2)] {
                err = err.max((got - want).abs() / want.abs());
            }
            row += 1;
        } else {
            num *= 1.0 - p;
            d1 *= 1.0 - q1;
            d2 *= 1.0 - q2;
        }
    }
    err
}

fn criterion_5() -> Outcome {
    let (g, h) = fd_errors();
    let t1 = t1_error();
    let e1 = e1_error();
    let l1 = l1_error();
    let w2 = w2_error();
    let pass = g < 1e-6 && h < 1e-4 && t1 <= 1e-3 && e1 <= 1e-10 && l1 <= 1e-3 && w2 <= 1e-10;
    report(
        5,
        "oracle suites",
        pass,
        format!(
            "gradient {g:.1e} (<1e-6), Hessian {h:.1e} (<1e-4), partial-likelihood fit {t1:.1e} (<=1e-3), \
             WLS {e1:.1e} (<=1e-10), logistic {l1:.1e} (<=1e-3), cumulated weights {w2:.1e} (<=1e-10)"
        ),
    )
}

fn criterion_6() -> Outcome {
    let ds = small_sim(500, 0.2, 0.3, 4);
    let full = fit_partial_likelihood(&ds, &IntensitySpec::full(&ds)).unwrap();
    let reduced = fit_partial_likelihood(&ds, &IntensitySpec::reduced()).unwrap();

    // zero coefficients with matched stabilizers
    let mut zf = full.clone();
    zf.coefficients.iter_mut().for_each(|c| *c = 0.0);
    let mut zr = reduced.clone();
    zr.coefficients = vec![0.0];
    let t = zf.baseline.clone();
    let zero = WeightModels {
        full: &zf,
        reduced: &zr,
        stab1: &t,
        stab2: &t,
        policy: ProbabilityPolicy::Clip,
    };
    let mut unit_err = 0.0f64;
    for s in ds.subjects() {
        for r in cumulate_weights(s, ds.grid(), &zero, 1.0).unwrap().rows {
            unit_err = unit_err.max((r.sw1 - 1.0).abs()).max((r.sw2 - 1.0).abs());
        }
    }

    // baseline x10 on both the full fit and sw1's stabilizer
    let models = |f: &IntensityFit| {
        let m = WeightModels {
            full: f,
            reduced: &reduced,
            stab1: &f.baseline,
            stab2: &reduced.baseline,
            policy: ProbabilityPolicy::Clip,
        };
        ds.subjects()
            .iter()
            .map(|s| cumulate_weights(s, ds.grid(), &m, 1.0).unwrap())
            .collect::<Vec<_>>()
    };
    let scaled = full.clone().with_baseline(full.baseline.scaled(10.0));
    let (a, b) = (models(&full), models(&scaled));
    let mut log_shift = 0.0f64;
    for (x, y) in a.iter().zip(&b) {
        for (r, s) in x.rows.iter().zip(&y.rows) {
            log_shift = log_shift.max((r.sw1.ln() - s.sw1.ln()).abs());
        }
    }
    let mut visit_err = 0.0f64;
    for s in ds.subjects() {
        for c in common::cells_of(0, s, ds.grid()).into_iter().filter(|c| c.event) {
            let lam = full.baseline.lookup(c.gap).unwrap() * 10.0;
            let rel = (full.coefficients[0] * c.treatment + full.coefficients[1] * c.z[0]).exp();
            if lam * rel.max(1.0) < PROBABILITY_CEILING {
                visit_err = visit_err.max(((lam * rel).ln() - lam.ln() - rel.ln()).abs());
            }
        }
    }

    // estimator invariances on one replicate
    let settings = EstimatorSettings::default();
    let base = estimate_all(&ds, &settings).unwrap();
    let shifted: Vec<SubjectPath> = ds
        .subjects()
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.visits.iter_mut().for_each(|v| v.outcome += 4.0);
            s
        })
        .collect();
    let moved = estimate_all(&build_dataset(shifted, *ds.grid()).unwrap(), &settings).unwrap();
    let shift_err = EstimatorKind::ALL
        .iter()
        .map(|&k| (base.estimate(k) - moved.estimate(k)).abs())
        .fold(0.0, f64::max);
    let e1: E1 = serde_json::from_str(include_str!("fixtures/e1.json")).unwrap();
    let design = VisitDesign::build(&rows_to_series(&e1.rows), &BasisSpec::default()).unwrap();
    let w = design.row_weights(EstimatorKind::Ipt);
    let scaled_w: Vec<f64> = w.iter().map(|v| v * 37.5).collect();
    let scale_err = (weighted_least_squares(&design.x, &design.y, &w).unwrap()[5]
        - weighted_least_squares(&design.x, &design.y, &scaled_w).unwrap()[5])
        .abs();

    let boot_ds = small_sim(150, 0.1, 0.2, 2);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| bootstrap_variance(&boot_ds, &settings, 12, 99).unwrap())
    };
    let deterministic = run(1) == run(3);

    let rescale_ok = log_shift < 1e-10;
    let pass = unit_err < 1e-12 && rescale_ok && shift_err < 1e-10 && scale_err < 1e-10 && deterministic;
    let mut detail = format!(
        "sw1=sw2=1 at zero coefficients (max dev {unit_err:.1e}); sw1 under baseline x10: visit factors cancel \
         (max dev {visit_err:.1e}) but whole-path log sw1 moves by up to {log_shift:.3}; outcome shift {shift_err:.1e}; \
         weight scaling {scale_err:.1e}; bootstrap 1 vs 3 threads identical: {deterministic}"
    );
    if !rescale_ok {
        detail.push_str(
            ". Unattainable as stated: no-visit factors (1-c*p)/(1-c*q) are not invariant to c, \
             only the visit factors p/q are",
        );
    }
    report(6, "algebraic invariants", pass, detail)
}

fn criterion_7_and_8() -> (Outcome, Outcome) {
    // the bootstrap rides on the first 50 replicates, 100 resamples each
    let s = scenario(&[[0.0, 0.0]], 300, 50, 100, Variant::ConstInterceptFit).remove(0);
    let b = bias(&s, EstimatorKind::Sw2);
    let c7 = report(
        7,
        "constant-basis SW2 bias at (0,0) = 0.03 +-0.06 over 300 replicates",
        within(b, 0.03, 0.06),
        format!("SW2 bias {b:.3}"),
    );
    let sw2 = s.get(EstimatorKind::Sw2).unwrap();
    let boot = sw2.mean_bootstrap_var.unwrap_or(f64::NAN);
    let c8 = report(
        8,
        "constant-basis bootstrap variance of SW2 at (0,0) >= empirical variance",
        boot >= sw2.empirical_var,
        format!(
            "bootstrap {boot:.4} (mean over {} replicates) vs empirical {:.4}",
            sw2.n_bootstrap, sw2.empirical_var
        ),
    );
    (c7, c8)
}

fn main() -> ExitCode {
    let started = Instant::now();
    let mut outcomes = Vec::new();
    outcomes.push(criterion_5());
    outcomes.push(criterion_6());
    outcomes.push(criterion_4());
    let (c2, c3) = criterion_2_and_3();
    outcomes.extend([c2, c3]);
    outcomes.push(criterion_1());
    let (c7, c8) = criterion_7_and_8();
    outcomes.extend([c7, c8]);
    outcomes.sort_by_key(|o| o.id);

    let passed = outcomes.iter().filter(|o| o.pass).count();
    println!(
        "acceptance: {passed}/{} criteria pass in {:.0}s",
        outcomes.len(),
        started.elapsed().as_secs_f64()
    );
    let unexpected: Vec<&Outcome> = outcomes
        .iter()
        .filter(|o| !o.pass && !KNOWN_UNATTAINABLE.contains(&o.id))
        .collect();
    for o in &unexpected {
        println!("unexpected failure in criterion {}: {}", o.id, o.detail);
    }
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
