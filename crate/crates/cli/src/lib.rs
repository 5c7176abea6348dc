//! Command implementations behind the `cace` binary.
//!
//! Each command has a pure core that returns its output text, plus a `cmd_*` wrapper that
//! reads inputs and writes files under the configured output directory.

pub mod config;
pub mod report;

use anyhow::Context;
use std::fs;
use std::path::{Path, PathBuf};

use cace_core::data::{read_records, records_to_string};
use cace_core::estimation::BootstrapOptions;
use cace_core::rng::derive_seed;
use cace_core::simulation::{self, Mechanism, Method, Scenario, StepRho, StudyOptions, StudyReport};
use cace_core::{Error, ObservedRecord, OutcomeFamily};

pub use config::{parse_config, AnalysisConfig, ConfigFile, MethodChoice};
pub use report::FitRow;

/// Process exit code for a failed command: 3 when the data carry too little information,
/// 4 for numerical failures, 2 for everything else (usage, configuration, input format).
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return if e.is_statistical() {
                3
            } else if e.is_numerical() {
                4
            } else {
                2
            };
        }
    }
    2
}

fn scenario_for(cfg: &AnalysisConfig, name: &str) -> cace_core::Result<Scenario> {
    let mut s = simulation::find_scenario(name)?;
    if cfg.complete {
        s.mechanism = Mechanism::Odn(StepRho::constant(1.0));
        s.name = format!("{}_complete", s.name);
    }
    Ok(s)
}

fn require(v: Option<usize>, key: &str) -> cace_core::Result<usize> {
    match v {
        Some(x) if x > 0 => Ok(x),
        Some(_) => Err(Error::Config(format!("{key} must be positive"))),
        None => Err(Error::Config(format!("{key} is required"))),
    }
}

fn write_file(dir: &Path, name: &str, body: &str) -> anyhow::Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

/// A simulated dataset as CSV text plus its metadata sidecar.
pub fn simulate(cfg: &AnalysisConfig, scenario: &str) -> cace_core::Result<(String, String)> {
    let s = scenario_for(cfg, scenario)?;
    let n = require(cfg.n, "n")?;
    let records = simulation::generate(&s, n, cfg.seed)?;
    let meta = serde_json::json!({
        "scenario": s.name,
        "n": n,
        "seed": cfg.seed,
        "true_cace": s.true_cace(),
        "definition": s,
    });
    Ok((records_to_string(&records), format!("{meta:#}\n")))
}

pub fn cmd_simulate(cfg: &AnalysisConfig) -> anyhow::Result<Vec<PathBuf>> {
    if cfg.scenarios.is_empty() {
        return Err(Error::Config("simulate needs a scenario".into()).into());
    }
    let mut written = Vec::new();
    for name in &cfg.scenarios {
        let (csv, meta) = simulate(cfg, name)?;
        written.push(write_file(&cfg.out, &format!("{name}.csv"), &csv)?);
        written.push(write_file(&cfg.out, &format!("{name}.meta.json"), &meta)?);
    }
    Ok(written)
}

/// Fits every requested method/family combination. Two-step rows come first, one per
/// family, then the latent-ignorable row; each row bootstraps on its own stream derived
/// from the configured seed.
pub fn fit_records(records: &[ObservedRecord], cfg: &AnalysisConfig) -> cace_core::Result<Vec<FitRow>> {
    let mut jobs: Vec<(Method, OutcomeFamily)> = Vec::new();
    for method in cfg.method.methods() {
        match method {
            Method::Odn => jobs.extend(cfg.families.iter().map(|f| (Method::Odn, *f))),
            Method::Li => jobs.push((Method::Li, OutcomeFamily::HomoNormal)),
        }
    }
    jobs.iter()
        .enumerate()
        .map(|(i, &(method, family))| {
            let mut boot = BootstrapOptions::new(cfg.bootstrap, derive_seed(cfg.seed, i as u64));
            boot.levels = cfg.levels.clone();
            let fit = simulation::fit_method(records, method, family, &boot)?;
            let summary = fit.bootstrap.as_ref().expect("bootstrap requested");
            Ok(FitRow {
                method,
                family,
                estimate: fit.cace_hat(),
                std_error: summary.std_error,
                intervals: summary.intervals.clone(),
            })
        })
        .collect()
}

pub fn cmd_fit(cfg: &AnalysisConfig) -> anyhow::Result<(Vec<PathBuf>, String)> {
    let Some(input) = &cfg.input else {
        return Err(Error::Config("fit needs an input file".into()).into());
    };
    let file = fs::File::open(input).with_context(|| format!("opening {}", input.display()))?;
    let records = read_records(std::io::BufReader::new(file)).with_context(|| format!("reading {}", input.display()))?;
    let rows = fit_records(&records, cfg)?;
    let text = report::fit_text(&rows, &cfg.levels);
    let written = vec![
        write_file(&cfg.out, "fit.csv", &report::fit_csv(&rows, &cfg.levels))?,
        write_file(&cfg.out, "fit.txt", &text)?,
    ];
    Ok((written, text))
}

fn study_options(cfg: &AnalysisConfig) -> cace_core::Result<StudyOptions> {
    Ok(StudyOptions {
        n: require(cfg.n, "n")?,
        reps: require(cfg.reps, "reps")?,
        bootstrap_replicates: cfg.bootstrap,
        seed: cfg.seed,
    })
}

/// One report per `(scenario, method)`; every method sees the same simulated datasets.
pub fn study_reports(cfg: &AnalysisConfig) -> cace_core::Result<Vec<StudyReport>> {
    if cfg.scenarios.is_empty() {
        return Err(Error::Config("study needs a scenario".into()));
    }
    let options = study_options(cfg)?;
    let scenarios: Vec<Scenario> = cfg
        .scenarios
        .iter()
        .map(|name| scenario_for(cfg, name))
        .collect::<cace_core::Result<_>>()?;
    let mut reports = Vec::new();
    for s in &scenarios {
        for method in cfg.method.methods() {
            reports.push(simulation::monte_carlo(s, method, &options)?);
        }
    }
    Ok(reports)
}

pub fn cmd_study(cfg: &AnalysisConfig) -> anyhow::Result<PathBuf> {
    let reports = study_reports(cfg)?;
    write_file(&cfg.out, "study.csv", &report::study_csv(&reports))
}

/// Both methods at every `delta`, on datasets that differ only in their response draws.
pub fn sweep_reports(cfg: &AnalysisConfig) -> cace_core::Result<Vec<(f64, StudyReport)>> {
    if cfg.deltas.is_empty() {
        return Err(Error::Config("sweep needs at least one delta".into()));
    }
    let scenarios: Vec<(f64, Scenario)> = cfg
        .deltas
        .iter()
        .map(|&d| simulation::odn_delta(d).map(|s| (d, s)))
        .collect::<cace_core::Result<_>>()?;
    let options = study_options(cfg)?;
    let mut rows = Vec::new();
    for (delta, s) in &scenarios {
        for method in [Method::Odn, Method::Li] {
            rows.push((*delta, simulation::monte_carlo(s, method, &options)?));
        }
    }
    Ok(rows)
}

pub fn cmd_sweep(cfg: &AnalysisConfig) -> anyhow::Result<PathBuf> {
    let rows = sweep_reports(cfg)?;
    write_file(&cfg.out, "sweep.csv", &report::sweep_csv(&rows))
}

/// Reads and applies a configuration file.
pub fn load_config(path: &Path, cfg: &mut AnalysisConfig) -> anyhow::Result<()> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file = parse_config(&text).with_context(|| format!("in {}", path.display()))?;
    cfg.apply(&file).with_context(|| format!("in {}", path.display()))?;
    Ok(())
}
