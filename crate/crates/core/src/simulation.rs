//! Data-generating processes and the Monte-Carlo study runner.
//!
//! Every generated record draws from its own random stream keyed by
//! `(seed, replicate, record index)`, so a dataset is reproducible in isolation and does not
//! depend on how work is spread over threads. Within a record the draws are made in the
//! order `Z, U, Y, R`; scenarios that differ only in their response mechanism therefore
//! share assignments, strata and outcomes for the same seed.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, LogNormal, Normal, StudentT};
use rayon::prelude::*;
use serde::Serialize;
use std::fmt;

use crate::error::{Error, Result};
use crate::estimation::{bootstrap, BootstrapOptions, FitResult};
use crate::li::li_bootstrap;
use crate::model::{Block, ComplianceStratum, FirstStageParams, ObservedRecord, OutcomeFamily, OutcomeParams, StratumLaw};
use crate::rng::{self, Purpose};
use crate::stats::{mean, sample_std};

/// Outcome distribution of the four blocks `[1c, 0c, a, n]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum OutcomeLaw {
    Family(OutcomeParams),
    /// `U[lo, hi]` per block.
    Uniform([(f64, f64); 4]),
    /// Student t with `df` degrees of freedom shifted to `location`, unit scale.
    ShiftedT { df: f64, location: [f64; 4] },
}

impl OutcomeLaw {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Family(p) => p.validate(),
            Self::Uniform(b) => b
                .iter()
                .all(|(lo, hi)| lo.is_finite() && hi.is_finite() && lo < hi)
                .then_some(())
                .ok_or_else(|| Error::Config(format!("uniform bounds {b:?}"))),
            Self::ShiftedT { df, location } => (*df > 1.0 && location.iter().all(|m| m.is_finite()))
                .then_some(())
                .ok_or_else(|| Error::Config(format!("t law with df {df}, locations {location:?}"))),
        }
    }

    /// Mean outcome of a block.
    pub fn mean(&self, block: Block) -> f64 {
        let i = block.index();
        match self {
            Self::Family(p) => p.block(block).mean(),
            Self::Uniform(b) => 0.5 * (b[i].0 + b[i].1),
            Self::ShiftedT { location, .. } => location[i],
        }
    }

    fn sample(&self, block: Block, rng: &mut ChaCha8Rng) -> f64 {
        let i = block.index();
        match self {
            Self::Family(p) => match p.block(block) {
                StratumLaw::Normal { mean, variance } => Normal::new(mean, variance.sqrt()).unwrap().sample(rng),
                StratumLaw::Exponential { rate } => Exp::new(rate).unwrap().sample(rng),
                StratumLaw::Gamma { shape, rate } => Gamma::new(shape, 1.0 / rate).unwrap().sample(rng),
                StratumLaw::LogNormal {
                    log_mean,
                    log_variance,
                } => LogNormal::new(log_mean, log_variance.sqrt()).unwrap().sample(rng),
            },
            Self::Uniform(b) => rng.random_range(b[i].0..b[i].1),
            Self::ShiftedT { df, location } => location[i] + StudentT::new(*df).unwrap().sample(rng),
        }
    }
}

/// Step response probability: `low` for `y <= 2`, `high` for `y >= 7`, `mid` in between.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRho {
    pub low: f64,
    pub mid: f64,
    pub high: f64,
}

impl StepRho {
    pub const TABLE: StepRho = StepRho {
        low: 0.85,
        mid: 0.9,
        high: 0.8,
    };

    pub fn constant(p: f64) -> Self {
        Self { low: p, mid: p, high: p }
    }

    /// The sensitivity family `(0.9 - delta, 0.9, 0.9 - 2 delta)`.
    pub fn delta(delta: f64) -> Self {
        Self {
            low: 0.9 - delta,
            mid: 0.9,
            high: 0.9 - 2.0 * delta,
        }
    }

    pub fn at(&self, y: f64) -> f64 {
        if y <= 2.0 {
            self.low
        } else if y >= 7.0 {
            self.high
        } else {
            self.mid
        }
    }
}

/// How the response indicator is generated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Mechanism {
    /// `P(R = 1 | Y = y)` only.
    Odn(StepRho),
    /// `gamma_du` in the order `(1c, 0c, 0n, 1a)`.
    Li([f64; 4]),
    /// `0.8 - 0.5 I(Y > 5) + 0.1 I(D = 1) - 0.1 I(Y > 5) I(D = 0)`.
    Dy,
    /// `1 / (1 + exp(5 + 0.1 D - Y - 0.1 U))` with `U` coded 1, 2, 3 for c, n, a.
    Dyu,
}

impl Mechanism {
    pub fn response_probability(&self, d: bool, stratum: ComplianceStratum, y: f64) -> f64 {
        let d01 = f64::from(u8::from(d));
        match *self {
            Self::Odn(rho) => rho.at(y),
            Self::Li(g) => match (stratum, d) {
                (ComplianceStratum::Complier, true) => g[0],
                (ComplianceStratum::Complier, false) => g[1],
                (ComplianceStratum::NeverTaker, _) => g[2],
                (ComplianceStratum::AlwaysTaker, _) => g[3],
            },
            Self::Dy => {
                let high = f64::from(u8::from(y > 5.0));
                0.8 - 0.5 * high + 0.1 * d01 - 0.1 * high * (1.0 - d01)
            }
            Self::Dyu => {
                let u = match stratum {
                    ComplianceStratum::Complier => 1.0,
                    ComplianceStratum::NeverTaker => 2.0,
                    ComplianceStratum::AlwaysTaker => 3.0,
                };
                1.0 / (1.0 + (5.0 + 0.1 * d01 - y - 0.1 * u).exp())
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Self::Odn(r) => [r.low, r.mid, r.high].iter().all(|p| (0.0..=1.0).contains(p)),
            Self::Li(g) => g.iter().all(|p| (0.0..=1.0).contains(p)),
            Self::Dy | Self::Dyu => true,
        };
        ok.then_some(())
            .ok_or_else(|| Error::Config(format!("response probabilities outside [0, 1]: {self:?}")))
    }
}

/// A complete data-generating process.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub name: String,
    pub alpha: FirstStageParams,
    pub outcome: OutcomeLaw,
    pub mechanism: Mechanism,
    /// Family the two-step estimator assumes for this scenario.
    pub fit_family: OutcomeFamily,
}

impl Scenario {
    /// Difference of the complier means.
    pub fn true_cace(&self) -> f64 {
        match &self.outcome {
            OutcomeLaw::Family(p) => p.cace(),
            law => law.mean(Block::TreatedComplier) - law.mean(Block::ControlComplier),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.outcome.validate()?;
        self.mechanism.validate()
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

const MEANS: [f64; 4] = [5.0, 4.0, 6.0, 3.0];

fn base_alpha() -> FirstStageParams {
    FirstStageParams::new(0.5, 1.0 / 3.0, 1.0 / 3.0).expect("valid margins")
}

fn homo_normal_law() -> OutcomeLaw {
    OutcomeLaw::Family(OutcomeParams::HomoNormal {
        mean: MEANS,
        variance: 1.0,
    })
}

fn scenario(name: &str, outcome: OutcomeLaw, mechanism: Mechanism, fit_family: OutcomeFamily) -> Scenario {
    Scenario {
        name: name.to_string(),
        alpha: base_alpha(),
        outcome,
        mechanism,
        fit_family,
    }
}

/// Response-probability tuples of the latent-ignorable scenarios `LI1` to `LI4`.
pub const LI_GAMMAS: [[f64; 4]; 4] = [
    [0.8, 0.75, 0.7, 0.9],
    [0.9, 0.7, 0.8, 0.7],
    [0.7, 0.6, 0.6, 0.8],
    [0.6, 0.7, 0.9, 0.7],
];

/// The named scenarios: four outcome families, five assumption violations and four
/// latent-ignorable mechanisms.
pub fn scenario_catalog() -> Vec<Scenario> {
    use OutcomeFamily as F;
    let odn = Mechanism::Odn(StepRho::TABLE);
    let mut v = vec![
        scenario("homo_normal", homo_normal_law(), odn, F::HomoNormal),
        scenario(
            "exponential",
            OutcomeLaw::Family(OutcomeParams::Exponential {
                rate: MEANS.map(|m| 1.0 / m),
            }),
            odn,
            F::Exponential,
        ),
        scenario(
            "gamma",
            OutcomeLaw::Family(OutcomeParams::Gamma { shape: MEANS, rate: 1.0 }),
            odn,
            F::Gamma,
        ),
        scenario(
            "lognormal",
            OutcomeLaw::Family(OutcomeParams::LogNormal {
                log_mean: [0.0, -1.0, -1.5, -0.5],
                log_variance: 1.0,
            }),
            odn,
            F::LogNormal,
        ),
        scenario(
            "Heter",
            OutcomeLaw::Family(OutcomeParams::HeteroNormal {
                mean: MEANS,
                variance: [0.25, 1.0, 0.30, 1.0],
            }),
            odn,
            F::HomoNormal,
        ),
        scenario(
            "Unif",
            OutcomeLaw::Uniform([(2.0, 8.0), (1.0, 7.0), (3.0, 9.0), (1.0, 5.0)]),
            odn,
            F::HomoNormal,
        ),
        scenario(
            "T",
            OutcomeLaw::ShiftedT {
                df: 4.0,
                location: MEANS,
            },
            odn,
            F::HomoNormal,
        ),
        scenario("DY", homo_normal_law(), Mechanism::Dy, F::HomoNormal),
        scenario("DYU", homo_normal_law(), Mechanism::Dyu, F::HomoNormal),
    ];
    for (i, g) in LI_GAMMAS.iter().enumerate() {
        v.push(scenario(&format!("LI{}", i + 1), homo_normal_law(), Mechanism::Li(*g), F::HomoNormal));
    }
    v
}

/// The homoskedastic normal scenario with the sensitivity response law `rho(y; delta)`,
/// `0 < delta <= 0.45`.
pub fn odn_delta(delta: f64) -> Result<Scenario> {
    if !(delta > 0.0 && delta <= 0.45) {
        return Err(Error::Config(format!("delta {delta} outside (0, 0.45]")));
    }
    Ok(scenario(
        &format!("odn_delta_{delta}"),
        homo_normal_law(),
        Mechanism::Odn(StepRho::delta(delta)),
        OutcomeFamily::HomoNormal,
    ))
}

/// Looks a scenario up by (case-insensitive) name; `odn_delta_<delta>` builds the
/// sensitivity scenario.
pub fn find_scenario(name: &str) -> Result<Scenario> {
    if let Some(rest) = name.to_ascii_lowercase().strip_prefix("odn_delta_") {
        let delta: f64 = rest
            .parse()
            .map_err(|_| Error::Config(format!("bad delta in scenario name {name:?}")))?;
        return odn_delta(delta);
    }
    scenario_catalog()
        .into_iter()
        .find(|s| s.name.eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::Config(format!("unknown scenario {name:?}")))
}

/// A generated record with the latent quantities the analyst never sees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulatedUnit {
    pub record: ObservedRecord,
    pub stratum: ComplianceStratum,
    /// Outcome before missingness was applied.
    pub y_full: f64,
}

fn draw_unit(scenario: &Scenario, rng: &mut ChaCha8Rng) -> SimulatedUnit {
    let alpha = &scenario.alpha;
    let z = rng.random::<f64>() < alpha.xi();
    let v: f64 = rng.random();
    let stratum = if v < alpha.omega_c() {
        ComplianceStratum::Complier
    } else if v < alpha.omega_c() + alpha.omega_n() {
        ComplianceStratum::NeverTaker
    } else {
        ComplianceStratum::AlwaysTaker
    };
    let d = stratum.treatment_received(z);
    let y = scenario.outcome.sample(stratum.block(z), rng);
    let r = rng.random::<f64>() < scenario.mechanism.response_probability(d, stratum, y);
    SimulatedUnit {
        record: if r {
            ObservedRecord::observed(z, d, y)
        } else {
            ObservedRecord::missing(z, d)
        },
        stratum,
        y_full: y,
    }
}

/// Replicate `replicate` of a size-`n` dataset, with hidden truth.
pub fn generate_with_truth(scenario: &Scenario, n: usize, seed: u64, replicate: u64) -> Result<Vec<SimulatedUnit>> {
    if n == 0 {
        return Err(Error::Config("sample size must be at least 1".into()));
    }
    scenario.validate()?;
    Ok((0..n)
        .map(|i| draw_unit(scenario, &mut rng::stream(seed, Purpose::Records, replicate, i as u64)))
        .collect())
}

pub fn generate_replicate(scenario: &Scenario, n: usize, seed: u64, replicate: u64) -> Result<Vec<ObservedRecord>> {
    Ok(generate_with_truth(scenario, n, seed, replicate)?
        .into_iter()
        .map(|u| u.record)
        .collect())
}

/// A size-`n` dataset; the same as replicate 0 of a study with this seed.
pub fn generate(scenario: &Scenario, n: usize, seed: u64) -> Result<Vec<ObservedRecord>> {
    generate_replicate(scenario, n, seed, 0)
}

/// Estimator compared in a study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Method {
    /// Two-step conditional likelihood under outcome-dependent missingness.
    Odn,
    /// EM under latent-ignorable missingness.
    Li,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Self::Odn => "ODN",
            Self::Li => "LI",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "ODN" => Some(Self::Odn),
            "LI" => Some(Self::Li),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Fits `method` with bootstrap inference; the ODN fit uses `family`.
pub fn fit_method(
    records: &[ObservedRecord],
    method: Method,
    family: OutcomeFamily,
    options: &BootstrapOptions,
) -> Result<FitResult> {
    match method {
        Method::Odn => bootstrap(records, family, options),
        Method::Li => li_bootstrap(records, options),
    }
}

#[derive(Debug, Clone)]
pub struct StudyOptions {
    pub n: usize,
    pub reps: usize,
    pub bootstrap_replicates: usize,
    pub seed: u64,
}

/// Outcome of one Monte-Carlo replicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReplicateResult {
    pub estimate: f64,
    pub ci95_lo: f64,
    pub ci95_hi: f64,
}

/// Monte-Carlo summary. Statistics that need more successful replicates than are available
/// are `None`.
#[derive(Debug, Clone, Serialize)]
pub struct StudyReport {
    pub scenario: String,
    pub n: usize,
    pub method: Method,
    pub reps: usize,
    pub true_cace: f64,
    pub bias: Option<f64>,
    pub std_dev: Option<f64>,
    pub cp95: Option<f64>,
    /// Mean lower and upper 95% interval endpoints.
    pub ci95_lo: Option<f64>,
    pub ci95_hi: Option<f64>,
    /// Replicates whose fit failed.
    pub failures: usize,
    #[serde(skip)]
    pub replicates: Vec<Option<ReplicateResult>>,
}

impl StudyReport {
    pub fn failure_fraction(&self) -> f64 {
        self.failures as f64 / self.reps as f64
    }

    fn summarize(scenario: &Scenario, options: &StudyOptions, method: Method, results: Vec<Option<ReplicateResult>>) -> Self {
        let ok: Vec<ReplicateResult> = results.iter().flatten().copied().collect();
        let truth = scenario.true_cace();
        let est: Vec<f64> = ok.iter().map(|r| r.estimate).collect();
        let nonempty = !ok.is_empty();
        let avg = |f: fn(&ReplicateResult) -> f64| nonempty.then(|| mean(&ok.iter().map(f).collect::<Vec<_>>()));
        Self {
            scenario: scenario.name.clone(),
            n: options.n,
            method,
            reps: options.reps,
            true_cace: truth,
            bias: nonempty.then(|| mean(&est) - truth),
            std_dev: sample_std(&est),
            cp95: nonempty.then(|| {
                ok.iter().filter(|r| r.ci95_lo <= truth && truth <= r.ci95_hi).count() as f64 / ok.len() as f64
            }),
            ci95_lo: avg(|r| r.ci95_lo),
            ci95_hi: avg(|r| r.ci95_hi),
            failures: results.len() - ok.len(),
            replicates: results,
        }
    }
}

/// Runs `generate -> fit -> bootstrap` for every replicate in parallel. Failed replicates
/// are counted, never fatal.
pub fn monte_carlo(scenario: &Scenario, method: Method, options: &StudyOptions) -> Result<StudyReport> {
    if options.reps == 0 {
        return Err(Error::Config("reps must be at least 1".into()));
    }
    scenario.validate()?;
    BootstrapOptions::new(options.bootstrap_replicates, 0).validate()?;
    let results: Vec<Option<ReplicateResult>> = (0..options.reps as u64)
        .into_par_iter()
        .map(|r| {
            let records = generate_replicate(scenario, options.n, options.seed, r).ok()?;
            let boot = BootstrapOptions::new(options.bootstrap_replicates, rng::derive_seed(options.seed, r));
            match fit_method(&records, method, scenario.fit_family, &boot) {
                Ok(fit) => {
                    let ci = fit.bootstrap.as_ref()?.interval(0.95)?;
                    Some(ReplicateResult {
                        estimate: fit.cace_hat(),
                        ci95_lo: ci.lower,
                        ci95_hi: ci.upper,
                    })
                }
                Err(e) => {
                    log::debug!("{} replicate {r}: {e}", scenario.name);
                    None
                }
            }
        })
        .collect();
    Ok(StudyReport::summarize(scenario, options, method, results))
}
