//! Simulation of longitudinal cohorts whose visit process is driven by an
//! endogenous mediator.
//!
//! Each subject gets three baseline confounders, a confounded binary
//! treatment, a uniform censoring time and a time-0 visit. The grid is then
//! walked cell by cell; in each at-risk cell a visit happens with probability
//!
//! ```text
//! p = min(1, rate_scale * B * exp(gamma_i * I + gamma_z * Z))
//! ```
//!
//! where `B` is the gap since the last visit and `Z` the mediator carried
//! forward from it. On a visit a new mediator value is drawn, the outcome is
//! generated from the gap at the visit instant and the mediator that drove the
//! visit, and the gap is reset.
//!
//! Random streams are derived from `(master_seed, replicate, subject)` so any
//! subject of any replicate can be regenerated in isolation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::panel::{DgmTruth, GridSpec, PanelDataset, PanelError, SubjectPath};

/// Coefficient of the treatment in the outcome equation; the marginal
/// effect every estimator targets.
pub const TRUE_EFFECT: f64 = 1.0;

/// Order of operations at a simulated visit.
pub const VISIT_UPDATE_ORDER: [&str; 3] = ["draw mediator", "draw outcome", "reset gap"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Variant {
    #[default]
    Main,
    /// Main data; the outcome model is fitted with a constant intercept.
    ConstInterceptFit,
    /// Main data with `tau = 10`.
    Tau10,
    /// Mediator mean shifts by 0.2 per previous visit.
    CumvisitZ,
    /// Outcome intercept is the constant 0.02 instead of `0.2 * B`.
    ConstInterceptDgm,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Main,
        Variant::ConstInterceptFit,
        Variant::Tau10,
        Variant::CumvisitZ,
        Variant::ConstInterceptDgm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Main => "MAIN",
            Variant::ConstInterceptFit => "CONST_INTERCEPT_FIT",
            Variant::Tau10 => "TAU10",
            Variant::CumvisitZ => "CUMVISIT_Z",
            Variant::ConstInterceptDgm => "CONST_INTERCEPT_DGM",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        Variant::ALL.into_iter().find(|v| v.name() == norm)
    }
}

/// Normal mediator laws by arm; the mean grows by `cumvisit_slope` per
/// previous visit under [`Variant::CumvisitZ`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MediatorLaw {
    pub treated_mean: f64,
    pub treated_sd: f64,
    pub control_mean: f64,
    pub control_sd: f64,
    pub cumvisit_slope: f64,
}

impl Default for MediatorLaw {
    fn default() -> Self {
        MediatorLaw {
            treated_mean: 2.0,
            treated_sd: 1.0,
            control_mean: 4.0,
            control_sd: 2.0,
            cumvisit_slope: 0.2,
        }
    }
}

impl MediatorLaw {
    /// Analytic mean of the mediator law for an arm after `cum_visits`
    /// previous post-baseline visits.
    pub fn mean(&self, variant: Variant, treated: bool, cum_visits: u32) -> f64 {
        let base = if treated { self.treated_mean } else { self.control_mean };
        match variant {
            Variant::CumvisitZ => base + self.cumvisit_slope * cum_visits as f64,
            _ => base,
        }
    }

    pub fn sd(&self, treated: bool) -> f64 {
        if treated {
            self.treated_sd
        } else {
            self.control_sd
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutcomeCoefs {
    /// Slope on the gap time at the visit.
    pub gap_slope: f64,
    /// Constant intercept.
    pub intercept: f64,
    pub treatment: f64,
    /// Coefficient on the mediator centred at its conditional mean.
    pub mediator: f64,
    pub baseline: [f64; 3],
}

impl Default for OutcomeCoefs {
    fn default() -> Self {
        OutcomeCoefs {
            gap_slope: 0.2,
            intercept: 0.0,
            treatment: TRUE_EFFECT,
            mediator: -0.8,
            baseline: [0.4, 0.05, -0.6],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgmConfig {
    pub n_subjects: usize,
    pub grid: GridSpec,
    /// Log-rate effect of treatment on the visit intensity.
    pub gamma_i: f64,
    /// Log-rate effect of the mediator on the visit intensity.
    pub gamma_z: f64,
    /// Per-cell visit probability per unit of gap time.
    pub baseline_rate_scale: f64,
    /// Intercept, K1, K2, K3 of the treatment logit.
    pub treatment_coefs: [f64; 4],
    pub outcome: OutcomeCoefs,
    pub noise_sd: f64,
    pub mediator: MediatorLaw,
    pub variant: Variant,
    pub master_seed: u64,
}

impl Default for DgmConfig {
    fn default() -> Self {
        DgmConfig {
            n_subjects: 500,
            grid: GridSpec::default(),
            gamma_i: 0.0,
            gamma_z: 0.0,
            baseline_rate_scale: 0.02,
            treatment_coefs: [0.5, 0.8, 0.05, -1.0],
            outcome: OutcomeCoefs::default(),
            noise_sd: 0.5,
            mediator: MediatorLaw::default(),
            variant: Variant::Main,
            master_seed: 20_240_601,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DgmError {
    #[error("invalid simulation config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Panel(#[from] PanelError),
}

impl DgmConfig {
    /// Defaults with the grid and outcome adjusted for `variant`.
    pub fn for_variant(variant: Variant) -> Self {
        DgmConfig::default().with_variant(variant)
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        match variant {
            Variant::Tau10 => self.grid.tau = 10.0,
            Variant::ConstInterceptDgm => {
                self.outcome.gap_slope = 0.0;
                self.outcome.intercept = 0.02;
            }
            _ => {}
        }
        self
    }

    pub fn with_gamma(mut self, gamma_i: f64, gamma_z: f64) -> Self {
        self.gamma_i = gamma_i;
        self.gamma_z = gamma_z;
        self
    }

    pub fn true_effect(&self) -> f64 {
        self.outcome.treatment
    }

    pub fn validate(&self) -> Result<(), DgmError> {
        self.grid.validate()?;
        let finite = [
            self.gamma_i,
            self.gamma_z,
            self.baseline_rate_scale,
            self.noise_sd,
            self.mediator.treated_mean,
            self.mediator.control_mean,
            self.mediator.cumvisit_slope,
        ]
        .iter()
        .chain(&self.treatment_coefs)
        .chain(&self.outcome.baseline)
        .all(|x| x.is_finite());
        if !finite {
            return Err(DgmError::Invalid("non-finite parameter".into()));
        }
        if self.n_subjects < 2 {
            return Err(DgmError::Invalid(format!(
                "n_subjects must be >= 2, got {}",
                self.n_subjects
            )));
        }
        if self.baseline_rate_scale < 0.0 || self.noise_sd < 0.0 {
            return Err(DgmError::Invalid("rate scale and noise sd must be non-negative".into()));
        }
        if !(self.mediator.treated_sd >= 0.0 && self.mediator.control_sd >= 0.0) {
            return Err(DgmError::Invalid("mediator sds must be non-negative".into()));
        }
        Ok(())
    }

    /// Per-cell visit probability before clipping.
    pub fn visit_probability(&self, gap: f64, treated: bool, mediator: f64) -> f64 {
        let lp = self.gamma_i * if treated { 1.0 } else { 0.0 } + self.gamma_z * mediator;
        self.baseline_rate_scale * gap * lp.exp()
    }
}

fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, sd: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    mean + sd * z
}

/// New mediator value drawn at a visit.
pub fn variant_mediator_update<R: Rng + ?Sized>(
    variant: Variant,
    law: &MediatorLaw,
    treated: bool,
    cum_visits: u32,
    rng: &mut R,
) -> f64 {
    normal(rng, law.mean(variant, treated, cum_visits), law.sd(treated))
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Independent stream for one `(seed, replicate, subject)` triple.
pub fn subject_stream(master_seed: u64, replicate: u64, subject: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(master_seed ^ splitmix64(replicate)));
    rng.set_stream(subject);
    rng
}

/// Stream for auxiliary work (bootstrap, etc.) keyed by a domain tag so it
/// never collides with subject streams.
pub fn derived_stream(master_seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(splitmix64(master_seed) ^ domain.rotate_left(17)));
    rng.set_stream(index);
    rng
}

/// Simulate one subject path. The draw order is fixed: K1, K2, K3, treatment,
/// censoring, time-0 mediator and noise, then one uniform per at-risk cell
/// plus mediator and noise draws at each visit.
pub fn simulate_subject<R: Rng + ?Sized>(config: &DgmConfig, id: String, rng: &mut R) -> SubjectPath {
    let grid = config.grid;
    let k1 = normal(rng, 1.0, 1.0);
    let k2 = if rng.random::<f64>() < 0.55 { 1.0 } else { 0.0 };
    let k3 = normal(rng, 0.0, 1.0);
    let [c0, c1, c2, c3] = config.treatment_coefs;
    let treated = rng.random::<f64>() < expit(c0 + c1 * k1 + c2 * k2 + c3 * k3);
    let censor_time = grid.tau / 2.0 + rng.random::<f64>() * (grid.tau / 2.0);

    let out = &config.outcome;
    let i_val = if treated { 1.0 } else { 0.0 };
    let fixed_part =
        out.intercept + out.treatment * i_val + out.baseline[0] * k1 + out.baseline[1] * k2 + out.baseline[2] * k3;

    let law = &config.mediator;
    let mut cum_visits = 0u32;
    let mut z = variant_mediator_update(config.variant, law, treated, 0, rng);
    let mut z_mean = law.mean(config.variant, treated, 0);
    let y0 = fixed_part + out.mediator * (z - z_mean) + normal(rng, 0.0, config.noise_sd);

    let mut subject = SubjectPath::new(id, treated, vec![k1, k2, k3], censor_time).with_visit(0.0, y0, vec![z]);
    let mut truth = DgmTruth {
        outcome_mediator: vec![z],
        ..DgmTruth::default()
    };

    let last = grid.last_at_risk_cell(censor_time);
    let mut gap_cells = 0u32;
    for cell in 1..=last {
        gap_cells += 1;
        let gap = gap_cells as f64 * grid.dt;
        let mut p = config.visit_probability(gap, treated, z);
        if p > 1.0 {
            p = 1.0;
            truth.clipped_cells += 1;
        }
        if rng.random::<f64>() < p {
            let z_new = variant_mediator_update(config.variant, law, treated, cum_visits, rng);
            let y = fixed_part + out.gap_slope * gap + out.mediator * (z - z_mean) + normal(rng, 0.0, config.noise_sd);
            truth.outcome_mediator.push(z);
            subject = subject.with_visit(grid.time_of(cell), y, vec![z_new]);
            z = z_new;
            z_mean = law.mean(config.variant, treated, cum_visits);
            cum_visits += 1;
            gap_cells = 0;
        }
    }
    subject.truth = Some(truth);
    subject
}

/// Simulate replicate `replicate` of the cohort described by `config`.
pub fn simulate_dataset(config: &DgmConfig, replicate: u64) -> Result<PanelDataset, DgmError> {
    config.validate()?;
    let subjects = (0..config.n_subjects as u64)
        .map(|j| {
            let mut rng = subject_stream(config.master_seed, replicate, j);
            let mut s = simulate_subject(config, format!("r{replicate}s{j}"), &mut rng);
            if let Some(t) = s.truth.as_mut() {
                t.replicate = replicate;
                t.subject_index = j;
            }
            s
        })
        .collect();
    let ds = PanelDataset::build(subjects, config.grid)?
        .with_names(vec!["1".into()], vec!["1".into(), "2".into(), "3".into()])?;
    Ok(ds)
}

/// Total clipped cells over a simulated dataset.
pub fn clipped_cells(ds: &PanelDataset) -> u64 {
    ds.subjects()
        .iter()
        .filter_map(|s| s.truth.as_ref())
        .map(|t| t.clipped_cells as u64)
        .sum()
}
