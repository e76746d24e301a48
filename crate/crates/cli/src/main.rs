use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use iivw::dgm::{simulate_dataset, Variant};
use iivw::estimator::{bootstrap_variance, estimate_from_weights, fit_weights, EstimatorKind};
use iivw::experiment::{run_scenario, ScenarioConfig};
use iivw::io::{export_csv, ingest_csv, write_bootstrap_csv, write_report, write_weights_csv, Report, ReportFormat};
use iivw::treatment::positivity_diagnostics;
use iivw::Error;

#[derive(Parser)]
#[command(
    name = "iivw",
    version,
    about = "Inverse-intensity-of-visit weighted marginal effects"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML scenario config; every field is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output file (directory for `simulate`); stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Simulation variant preset.
    #[arg(long, global = true, value_parser = parse_variant)]
    variant: Option<Variant>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Text,
    Jsonl,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ReportFormat::Csv,
            Format::Text => ReportFormat::Text,
            Format::Jsonl => ReportFormat::Jsonl,
        }
    }
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    Variant::parse(s).ok_or_else(|| {
        let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
        format!("unknown variant `{s}` (expected one of {})", names.join(", "))
    })
}

fn parse_pair(s: &str) -> Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts[..] {
        [a, b] => Ok([
            a.parse().map_err(|e| format!("`{a}`: {e}"))?,
            b.parse().map_err(|e| format!("`{b}`: {e}"))?,
        ]),
        _ => Err(format!("expected two comma-separated numbers, got `{s}`")),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write simulated replicate datasets as CSV files.
    Simulate {
        /// Mediator and treatment visit-intensity effects, e.g. `-0.3,0.1`.
        #[arg(long, allow_hyphen_values = true, value_parser = parse_pair)]
        gamma: Option<[f64; 2]>,
        #[arg(long, default_value_t = 1)]
        replicates: u64,
        #[arg(long)]
        subjects: Option<usize>,
    },
    /// Fit every estimator to one dataset.
    Estimate {
        input: PathBuf,
        /// Also compute bootstrap variances with this many resamples.
        #[arg(long)]
        n_boot: Option<usize>,
    },
    /// Run the Monte Carlo scenario grid and print the summary table.
    #[command(name = "replicate-table1")]
    ReplicateTable1 {
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        n_boot: Option<usize>,
        /// Replicates that also get a bootstrap variance.
        #[arg(long)]
        bootstrap_replicates: Option<usize>,
    },
    /// Subject-level bootstrap variances for one dataset.
    Bootstrap {
        input: PathBuf,
        #[arg(long)]
        n_boot: Option<usize>,
    },
    /// Per-visit weights and propensity positivity report for one dataset.
    Diagnostics {
        input: PathBuf,
        /// Where to write the per-visit weights CSV.
        #[arg(long)]
        weights_out: Option<PathBuf>,
    },
}

fn load_config(g: &Global) -> Result<ScenarioConfig, Error> {
    let mut cfg = match &g.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            ScenarioConfig::from_toml(&text).map_err(|message| Error::Config {
                path: path.display().to_string(),
                message,
            })?
        }
        None => ScenarioConfig::default(),
    };
    if let Some(v) = g.variant {
        cfg = cfg.with_variant(v);
    }
    if let Some(s) = g.seed {
        cfg.dgm.master_seed = s;
    }
    if let Some(w) = g.workers {
        cfg.workers = w;
    }
    Ok(cfg)
}

fn with_output<F>(out: Option<&Path>, f: F) -> Result<(), Error>
where
    F: FnOnce(&mut dyn Write) -> io::Result<()>,
{
    match out {
        Some(path) => {
            let mut file = io::BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
            f(&mut file).and_then(|_| file.flush()).map_err(|e| Error::io(path, e))
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            f(&mut lock).map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let g = &cli.global;
    let cfg = load_config(g)?;
    if cfg.workers > 0 {
        // the pool may already exist when embedded; the size is only a hint
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build_global();
    }
    let format: ReportFormat = g.format.into();
    let grid = cfg.dgm.grid;
    match cli.command {
        Command::Simulate {
            gamma,
            replicates,
            subjects,
        } => {
            let pair = gamma.unwrap_or_else(|| cfg.gamma_grid.first().copied().unwrap_or([0.0, 0.0]));
            let mut dgm = cfg.dgm_for(pair);
            if let Some(n) = subjects {
                dgm.n_subjects = n;
            }
            let dir = g.out.clone().unwrap_or_else(|| PathBuf::from("."));
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for r in 0..replicates {
                let ds = simulate_dataset(&dgm, r)?;
                let path = dir.join(format!("replicate_{r:04}.csv"));
                export_csv(&ds, &path)?;
                let (a0, a1) = ds.mean_visits_by_arm();
                eprintln!(
                    "{}: {} subjects, mean visits {a0:.2} / {a1:.2}",
                    path.display(),
                    ds.len()
                );
            }
        }
        Command::Estimate { input, n_boot } => {
            let ds = ingest_csv(&input, grid)?;
            let fitted = fit_weights(&ds, &cfg.estimator)?;
            let mut result = estimate_from_weights(&ds, &fitted, &cfg.estimator)?;
            if let Some(b) = n_boot.filter(|&b| b > 0) {
                let boot = bootstrap_variance(&ds, &cfg.estimator, b, cfg.dgm.master_seed)?;
                for e in &mut result.estimates {
                    e.bootstrap_var = Some(boot.variance(e.estimator));
                }
            }
            with_output(g.out.as_deref(), |w| write_report(Report::Result(&result), format, w))?;
        }
        Command::ReplicateTable1 {
            replicates,
            n_boot,
            bootstrap_replicates,
        } => {
            let mut cfg = cfg;
            if let Some(r) = replicates {
                cfg.n_replicates = r;
            }
            if let Some(b) = n_boot {
                cfg.n_boot = b;
            }
            if let Some(b) = bootstrap_replicates {
                cfg.bootstrap_replicates = b;
            }
            let started = Instant::now();
            let summary = run_scenario(&cfg)?;
            for s in &summary.scenarios {
                for f in &s.failures {
                    eprintln!(
                        "({}, {}) replicate {} failed: {}",
                        s.gamma1, s.gamma2, f.replicate, f.message
                    );
                }
            }
            eprintln!(
                "{} scenarios x {} replicates in {:.1}s",
                summary.scenarios.len(),
                cfg.n_replicates,
                started.elapsed().as_secs_f64()
            );
            if let Some(p) = &cfg.output.summary_csv {
                iivw::io::emit_report(Report::Summary(&summary), ReportFormat::Csv, p)?;
            }
            if let Some(p) = &cfg.output.summary_text {
                iivw::io::emit_report(Report::Summary(&summary), ReportFormat::Text, p)?;
            }
            with_output(g.out.as_deref(), |w| write_report(Report::Summary(&summary), format, w))?;
        }
        Command::Bootstrap { input, n_boot } => {
            let ds = ingest_csv(&input, grid)?;
            let boot = bootstrap_variance(&ds, &cfg.estimator, n_boot.unwrap_or(cfg.n_boot), cfg.dgm.master_seed)?;
            with_output(g.out.as_deref(), |w| match format {
                ReportFormat::Csv => write_bootstrap_csv(&boot, w),
                ReportFormat::Jsonl => {
                    serde_json::to_writer(&mut *w, &boot)?;
                    writeln!(w)
                }
                ReportFormat::Text => {
                    writeln!(w, "{:<10}{:>14}", "estimator", "bootstrap var")?;
                    for k in EstimatorKind::ALL {
                        writeln!(w, "{:<10}{:>14.5}", k.name(), boot.variance(k))?;
                    }
                    writeln!(w, "resamples: {} ({} failed)", boot.n_boot, boot.n_failed)
                }
            })?;
        }
        Command::Diagnostics { input, weights_out } => {
            let ds = ingest_csv(&input, grid)?;
            let fitted = fit_weights(&ds, &cfg.estimator)?;
            let report = positivity_diagnostics(&fitted.treatment, &ds, 0.01);
            if let Some(path) = &weights_out {
                with_output(Some(path), |w| write_weights_csv(&fitted.series, w))?;
            }
            with_output(g.out.as_deref(), |w| match format {
                ReportFormat::Text => {
                    writeln!(
                        w,
                        "propensity range: [{:.4}, {:.4}]",
                        report.min_propensity, report.max_propensity
                    )?;
                    writeln!(
                        w,
                        "outside [{}, {}]: {} subjects",
                        report.eps,
                        1.0 - report.eps,
                        report.flagged
                    )?;
                    writeln!(w, "inverse treatment weight quantiles:")?;
                    for (q, v) in &report.inverse_weight_quantiles {
                        writeln!(w, "  {q:>5}%  {v:.4}")?;
                    }
                    writeln!(w, "intensity coefficients: {:?}", fitted.intensity_coefs)?;
                    writeln!(w, "clipped probability cells: {}", fitted.clipped_cells)?;
                    for (kind, lo, hi) in fitted
                        .series
                        .first()
                        .map(|s| {
                            iivw::weights::WeightKind::ALL
                                .iter()
                                .filter_map(|&k| s.bounds(k).map(|(lo, hi)| (k, lo, hi)))
                                .collect::<Vec<_>>()
                        })
                        .unwrap_or_default()
                    {
                        writeln!(w, "{kind:?} truncated to [{lo:.4}, {hi:.4}]")?;
                    }
                    Ok(())
                }
                ReportFormat::Csv => write_weights_csv(&fitted.series, w),
                ReportFormat::Jsonl => {
                    serde_json::to_writer(&mut *w, &report)?;
                    writeln!(w)
                }
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
