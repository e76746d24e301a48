//! Monte Carlo replication harness.
//!
//! Each scenario is one `(gamma1, gamma2)` pair in the table's labelling,
//! where `gamma1` multiplies the mediator and `gamma2` the treatment in the
//! visit intensity.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dgm::{derived_stream, simulate_dataset, DgmConfig, DgmError, Variant};
use crate::estimator::{bootstrap_variance, estimate_all, BasisSpec, EstimatorError, EstimatorKind, EstimatorSettings};
use crate::stats::{mean, variance};

/// The eight scenarios of the main simulation table.
pub const SCENARIO_GAMMAS: [[f64; 2]; 8] = [
    [-0.3, 0.1],
    [-0.2, 0.2],
    [-0.1, 0.2],
    [-0.1, -0.3],
    [0.0, 0.0],
    [0.1, -0.3],
    [0.2, -0.2],
    [0.3, 0.2],
];

/// Largest share of replicates allowed to fail before a scenario aborts.
pub const MAX_REPLICATE_FAILURE: f64 = 0.02;
const BOOT_SEED_DOMAIN: u64 = 0x5eed_b007;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExperimentError {
    #[error("invalid scenario config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Dgm(#[from] DgmError),
    #[error("scenario ({gamma1}, {gamma2}): {failed} of {total} replicates failed; first: replicate {first_index}: {first_message}")]
    TooManyFailures {
        gamma1: f64,
        gamma2: f64,
        failed: usize,
        total: usize,
        first_index: u64,
        first_message: String,
    },
    #[error("could not build worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    pub summary_csv: Option<String>,
    pub summary_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub dgm: DgmConfig,
    /// `(gamma1, gamma2)` pairs: mediator effect first, treatment effect second.
    pub gamma_grid: Vec<[f64; 2]>,
    pub n_replicates: usize,
    pub n_boot: usize,
    /// Bootstrap variance is computed on this many leading replicates.
    pub bootstrap_replicates: usize,
    pub estimator: EstimatorSettings,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub output: OutputPaths,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            dgm: DgmConfig::default(),
            gamma_grid: SCENARIO_GAMMAS.to_vec(),
            n_replicates: 1000,
            n_boot: 200,
            bootstrap_replicates: 100,
            estimator: EstimatorSettings::default(),
            workers: 0,
            output: OutputPaths::default(),
        }
    }
}

impl ScenarioConfig {
    /// Parse a TOML config. Any variant named in `[dgm]` has its presets
    /// applied on top of the parsed values.
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        let variant = cfg.dgm.variant;
        let cfg = cfg.with_variant(variant);
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.dgm = self.dgm.with_variant(variant);
        if variant == Variant::ConstInterceptFit {
            self.estimator.basis = BasisSpec::constant();
        }
        self
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.dgm.validate()?;
        if self.n_replicates == 0 {
            return Err(ExperimentError::Invalid("n_replicates must be at least 1".into()));
        }
        if let Some(g) = self.gamma_grid.iter().find(|g| !g.iter().all(|v| v.is_finite())) {
            return Err(ExperimentError::Invalid(format!("non-finite gamma pair {g:?}")));
        }
        if self.n_boot == 1 {
            return Err(ExperimentError::Invalid("n_boot must be 0 or at least 2".into()));
        }
        if let Some((lo, hi)) = self.estimator.truncation {
            if !(0.0..=100.0).contains(&lo) || !(0.0..=100.0).contains(&hi) || lo > hi {
                return Err(ExperimentError::Invalid(format!("truncation percentiles ({lo}, {hi})")));
            }
        }
        Ok(())
    }

    /// Simulation config for one `(gamma1, gamma2)` pair.
    pub fn dgm_for(&self, pair: [f64; 2]) -> DgmConfig {
        self.dgm.clone().with_gamma(pair[1], pair[0])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub replicate: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: EstimatorKind,
    pub mean_estimate: f64,
    /// `|mean(estimate) - truth|`.
    pub mean_abs_bias: f64,
    /// `mean(|estimate - truth|)`.
    pub mean_abs_error: f64,
    pub empirical_var: f64,
    pub mean_bootstrap_var: Option<f64>,
    pub n_bootstrap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub gamma1: f64,
    pub gamma2: f64,
    pub n_replicates: usize,
    pub n_failed: usize,
    pub failures: Vec<ReplicateFailure>,
    /// Mean fitted intensity coefficients: treatment first, then covariates.
    pub mean_intensity_coefs: Vec<f64>,
    pub mean_visits_arm0: f64,
    pub mean_visits_arm1: f64,
    pub mean_clipped_cells: f64,
    pub estimators: Vec<EstimatorSummary>,
}

impl ScenarioSummary {
    pub fn get(&self, kind: EstimatorKind) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|e| e.estimator == kind)
    }

    /// Mean fitted `(gamma_i, gamma_z)`.
    pub fn mean_gamma_hat(&self) -> (f64, f64) {
        let c = &self.mean_intensity_coefs;
        (
            c.first().copied().unwrap_or(f64::NAN),
            c.get(1).copied().unwrap_or(f64::NAN),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ReplicationSummary {
    pub scenarios: Vec<ScenarioSummary>,
}

#[derive(Debug, Clone)]
struct ReplicateOutcome {
    estimates: [f64; 6],
    boot: Option<[f64; 6]>,
    intensity: Vec<f64>,
    visits: (f64, f64),
    clipped: u64,
}

fn run_replicate(
    config: &ScenarioConfig,
    dgm: &DgmConfig,
    scenario: usize,
    replicate: u64,
) -> Result<ReplicateOutcome, String> {
    let ds = simulate_dataset(dgm, replicate).map_err(|e| e.to_string())?;
    let res = estimate_all(&ds, &config.estimator).map_err(|e| e.to_string())?;
    let mut estimates = [0.0; 6];
    for (e, k) in estimates.iter_mut().zip(EstimatorKind::ALL) {
        *e = res.estimate(k);
    }
    let boot = if config.n_boot >= 2 && (replicate as usize) < config.bootstrap_replicates {
        use rand::RngCore;
        let seed = derived_stream(dgm.master_seed, BOOT_SEED_DOMAIN + scenario as u64, replicate).next_u64();
        let b = bootstrap_variance(&ds, &config.estimator, config.n_boot, seed)
            .map_err(|e: EstimatorError| e.to_string())?;
        let mut out = [0.0; 6];
        for (o, k) in out.iter_mut().zip(EstimatorKind::ALL) {
            *o = b.variance(k);
        }
        Some(out)
    } else {
        None
    };
    Ok(ReplicateOutcome {
        estimates,
        boot,
        intensity: res.intensity_coefs,
        visits: ds.mean_visits_by_arm(),
        clipped: res.weights.clipped_cells,
    })
}

fn run_pair(config: &ScenarioConfig, scenario: usize, pair: [f64; 2]) -> Result<ScenarioSummary, ExperimentError> {
    let dgm = config.dgm_for(pair);
    let n = config.n_replicates as u64;
    #[cfg(feature = "parallel")]
    let outcomes: Vec<Result<ReplicateOutcome, String>> = {
        use rayon::prelude::*;
        (0..n)
            .into_par_iter()
            .map(|r| run_replicate(config, &dgm, scenario, r))
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let outcomes: Vec<Result<ReplicateOutcome, String>> =
        (0..n).map(|r| run_replicate(config, &dgm, scenario, r)).collect();

    let failures: Vec<ReplicateFailure> = outcomes
        .iter()
        .enumerate()
        .filter_map(|(r, o)| {
            o.as_ref().err().map(|m| ReplicateFailure {
                replicate: r as u64,
                message: m.clone(),
            })
        })
        .collect();
    if failures.len() as f64 > MAX_REPLICATE_FAILURE * n as f64 || failures.len() == outcomes.len() {
        return Err(ExperimentError::TooManyFailures {
            gamma1: pair[0],
            gamma2: pair[1],
            failed: failures.len(),
            total: outcomes.len(),
            first_index: failures[0].replicate,
            first_message: failures[0].message.clone(),
        });
    }
    let ok: Vec<&ReplicateOutcome> = outcomes.iter().flatten().collect();
    let truth = dgm.true_effect();
    let estimators = EstimatorKind::ALL
        .iter()
        .enumerate()
        .map(|(j, &kind)| {
            let est: Vec<f64> = ok.iter().map(|o| o.estimates[j]).collect();
            let boots: Vec<f64> = ok.iter().filter_map(|o| o.boot.map(|b| b[j])).collect();
            let m = mean(&est);
            EstimatorSummary {
                estimator: kind,
                mean_estimate: m,
                mean_abs_bias: (m - truth).abs(),
                mean_abs_error: mean(&est.iter().map(|e| (e - truth).abs()).collect::<Vec<_>>()),
                empirical_var: if est.len() > 1 { variance(&est) } else { 0.0 },
                mean_bootstrap_var: (!boots.is_empty()).then(|| mean(&boots)),
                n_bootstrap: boots.len(),
            }
        })
        .collect();
    let p = ok[0].intensity.len();
    Ok(ScenarioSummary {
        gamma1: pair[0],
        gamma2: pair[1],
        n_replicates: outcomes.len(),
        n_failed: failures.len(),
        failures,
        mean_intensity_coefs: (0..p)
            .map(|j| mean(&ok.iter().map(|o| o.intensity[j]).collect::<Vec<_>>()))
            .collect(),
        mean_visits_arm0: mean(&ok.iter().map(|o| o.visits.0).collect::<Vec<_>>()),
        mean_visits_arm1: mean(&ok.iter().map(|o| o.visits.1).collect::<Vec<_>>()),
        mean_clipped_cells: mean(&ok.iter().map(|o| o.clipped as f64).collect::<Vec<_>>()),
        estimators,
    })
}

/// Simulate and estimate every replicate of every scenario. Results depend
/// only on the config, not on the number of worker threads.
pub fn run_scenario(config: &ScenarioConfig) -> Result<ReplicationSummary, ExperimentError> {
    config.validate()?;
    let run = || -> Result<ReplicationSummary, ExperimentError> {
        let scenarios = config
            .gamma_grid
            .iter()
            .enumerate()
            .map(|(i, &pair)| run_pair(config, i, pair))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ReplicationSummary { scenarios })
    };
    #[cfg(feature = "parallel")]
    if config.workers > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| ExperimentError::Pool(e.to_string()))?;
        return pool.install(run);
    }
    run()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_cover_the_table() {
        let c = ScenarioConfig::default();
        assert_eq!(c.gamma_grid.len(), 8);
        assert_eq!((c.n_replicates, c.n_boot, c.bootstrap_replicates), (1000, 200, 100));
        let d = c.dgm_for([-0.3, 0.1]);
        assert_eq!((d.gamma_z, d.gamma_i), (-0.3, 0.1));
    }

    #[test]
    fn toml_round_trip_and_errors() {
        let c = ScenarioConfig::default();
        assert_eq!(ScenarioConfig::from_toml(&c.to_toml()).unwrap(), c);
        let empty = ScenarioConfig::from_toml("").unwrap();
        assert_eq!(empty, c);
        let err = ScenarioConfig::from_toml("n_replicates = 5\nbogus = 1\n").unwrap_err();
        assert!(err.contains("bogus") && err.contains("line 2"), "{err}");
        assert!(ScenarioConfig::from_toml("n_replicates = 0").is_err());
        let v = ScenarioConfig::from_toml("[dgm]\nvariant = \"CONST_INTERCEPT_FIT\"\n").unwrap();
        assert_eq!(v.estimator.basis, BasisSpec::constant());
        let t = ScenarioConfig::from_toml("[dgm]\nvariant = \"TAU10\"\n").unwrap();
        assert_eq!(t.dgm.grid.tau, 10.0);
    }

    #[test]
    fn tiny_scenario_is_reproducible() {
        let mut c = ScenarioConfig::default();
        c.gamma_grid = vec![[0.0, 0.0]];
        c.n_replicates = 2;
        c.n_boot = 0;
        c.dgm.n_subjects = 150;
        let a = run_scenario(&c).unwrap();
        let b = run_scenario(&c).unwrap();
        assert_eq!(a, b);
        let s = &a.scenarios[0];
        assert_eq!(s.n_replicates, 2);
        assert_eq!(s.n_failed, 0);
        assert!(s
            .estimators
            .iter()
            .all(|e| e.mean_bootstrap_var.is_none() && e.empirical_var >= 0.0));
    }
}
