use iivw::dgm::{simulate_dataset, DgmConfig};
use iivw::estimator::{estimate_all, EstimatorSettings};
use iivw::experiment::{run_scenario, ScenarioConfig};
use iivw::io::{emit_report, export_csv, ingest_csv, write_summary_text, Report, ReportFormat, SUMMARY_CSV_HEADER};

#[test]
fn simulated_dataset_round_trips_bit_for_bit() {
    let mut cfg = DgmConfig::default().with_gamma(0.2, -0.2);
    cfg.n_subjects = 60;
    let ds = simulate_dataset(&cfg, 7).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("panel.csv");
    export_csv(&ds, &path).unwrap();
    let back = ingest_csv(&path, *ds.grid()).unwrap();
    assert_eq!(back.len(), ds.len());
    assert_eq!(back.covariate_names(), ds.covariate_names());
    assert_eq!(back.baseline_names(), ds.baseline_names());
    for (a, b) in ds.subjects().iter().zip(back.subjects()) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.treatment, b.treatment);
        assert_eq!(a.censor_time.to_bits(), b.censor_time.to_bits());
        assert!(a
            .baseline
            .iter()
            .zip(&b.baseline)
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(a.visits.len(), b.visits.len());
        for (v, w) in a.visits.iter().zip(&b.visits) {
            assert_eq!(v.time.to_bits(), w.time.to_bits());
            assert_eq!(v.outcome.to_bits(), w.outcome.to_bits());
            assert!(v
                .covariates
                .iter()
                .zip(&w.covariates)
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
    let s = EstimatorSettings::default();
    assert_eq!(
        estimate_all(&ds, &s).unwrap().estimates,
        estimate_all(&back, &s).unwrap().estimates
    );
}

#[test]
fn reports_are_byte_stable() {
    let mut c = ScenarioConfig::default();
    c.gamma_grid = vec![[0.0, 0.0]];
    c.n_replicates = 3;
    c.n_boot = 0;
    c.dgm.n_subjects = 120;
    let summary = run_scenario(&c).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for format in [ReportFormat::Csv, ReportFormat::Text, ReportFormat::Jsonl] {
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        emit_report(Report::Summary(&summary), format, &a).unwrap();
        emit_report(Report::Summary(&summary), format, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }
    let csv_path = dir.path().join("s.csv");
    emit_report(Report::Summary(&summary), ReportFormat::Csv, &csv_path).unwrap();
    let text = std::fs::read_to_string(&csv_path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], SUMMARY_CSV_HEADER);
    assert_eq!(lines.len(), 7);
    assert!(lines[1].starts_with("0,0,LS,"));

    let mut buf = Vec::new();
    write_summary_text(&summary, &mut buf).unwrap();
    let table = String::from_utf8(buf).unwrap();
    let row = table.lines().nth(2).unwrap();
    let numeric = row
        .split_whitespace()
        .skip(2)
        .filter(|t| t.parse::<f64>().is_ok() || *t == "NA")
        .count();
    assert_eq!(numeric, 12, "{table}");

    let missing = dir.path().join("nope").join("x.csv");
    let err = emit_report(Report::Summary(&summary), ReportFormat::Csv, &missing).unwrap_err();
    assert_eq!(err.exit_code(), 4);
    assert!(err.to_string().contains("x.csv"));
}

#[test]
fn scenario_summary_independent_of_worker_count() {
    let mut c = ScenarioConfig::default();
    c.gamma_grid = vec![[0.3, 0.2]];
    c.n_replicates = 4;
    c.n_boot = 4;
    c.bootstrap_replicates = 1;
    c.dgm.n_subjects = 120;
    c.workers = 1;
    let one = run_scenario(&c).unwrap();
    c.workers = 3;
    let three = run_scenario(&c).unwrap();
    assert_eq!(one, three);
    let sw2 = one.scenarios[0].get(iivw::EstimatorKind::Sw2).unwrap();
    assert_eq!(sw2.n_bootstrap, 1);
    assert!(sw2.mean_bootstrap_var.unwrap() > 0.0);
}
