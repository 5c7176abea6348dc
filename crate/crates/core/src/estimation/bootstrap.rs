use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::fit::{fit_cells, jittered_starts, moment_start, FitOptions};
use super::likelihood::ObservedCells;
use super::{first_stage, first_stage_from_counts, CountSummary, FitResult};
use crate::error::{Error, Result};
use crate::model::{ObservedRecord, OutcomeFamily};
use crate::rng::{self, Purpose};
use crate::stats::{quantile_sorted, sample_std};

/// Largest tolerated fraction of failed resamples.
pub const MAX_FAILURE_FRACTION: f64 = 0.2;

#[derive(Debug, Clone)]
pub struct BootstrapOptions {
    pub replicates: usize,
    pub seed: u64,
    /// Two-sided percentile interval levels, each in (0, 1).
    pub levels: Vec<f64>,
}

impl BootstrapOptions {
    pub fn new(replicates: usize, seed: u64) -> Self {
        Self {
            replicates,
            seed,
            levels: vec![0.95, 0.90],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates < 100 {
            return Err(Error::Config(format!(
                "bootstrap needs at least 100 replicates, got {}",
                self.replicates
            )));
        }
        if let Some(l) = self.levels.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
            return Err(Error::Config(format!("interval level {l} not in (0, 1)")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PercentileInterval {
    pub level: f64,
    pub lower: f64,
    pub upper: f64,
}

impl PercentileInterval {
    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BootstrapSummary {
    pub requested: usize,
    pub used: usize,
    pub failed: usize,
    /// Sample standard deviation of the replicate estimates; `None` with fewer than two.
    pub std_error: Option<f64>,
    pub intervals: Vec<PercentileInterval>,
    #[serde(skip)]
    pub replicates: Vec<f64>,
}

impl BootstrapSummary {
    pub fn from_replicates(requested: usize, replicates: Vec<f64>, failed: usize, levels: &[f64]) -> Result<Self> {
        if replicates.is_empty() {
            return Err(Error::UnstableFit {
                failed,
                total: requested,
            });
        }
        let mut sorted = replicates.clone();
        sorted.sort_by(f64::total_cmp);
        let intervals = levels
            .iter()
            .map(|&level| PercentileInterval {
                level,
                lower: quantile_sorted(&sorted, 0.5 * (1.0 - level)),
                upper: quantile_sorted(&sorted, 1.0 - 0.5 * (1.0 - level)),
            })
            .collect();
        Ok(Self {
            requested,
            used: replicates.len(),
            failed,
            std_error: sample_std(&replicates),
            intervals,
            replicates,
        })
    }

    pub fn failure_fraction(&self) -> f64 {
        self.failed as f64 / self.requested as f64
    }

    /// Interval at `level`, if it was requested.
    pub fn interval(&self, level: f64) -> Option<PercentileInterval> {
        self.intervals.iter().copied().find(|i| (i.level - level).abs() < 1e-12)
    }
}

/// Multiplicities of the `n` records in bootstrap resample `index`.
pub fn resample_multiplicities(n: usize, seed: u64, index: u64) -> Vec<u32> {
    let mut rng = rng::stream(seed, Purpose::Bootstrap, 0, index);
    let mut counts = vec![0u32; n];
    for _ in 0..n {
        counts[rng.random_range(0..n)] += 1;
    }
    counts
}

/// Runs `estimate` on every resample in parallel and summarizes the successes.
/// Resample order, and hence the result, does not depend on the thread count.
pub fn run_bootstrap<F>(n_records: usize, options: &BootstrapOptions, estimate: F) -> Result<BootstrapSummary>
where
    F: Fn(&[u32]) -> Result<f64> + Sync,
{
    options.validate()?;
    let outcomes: Vec<Result<f64>> = (0..options.replicates)
        .into_par_iter()
        .map(|b| estimate(&resample_multiplicities(n_records, options.seed, b as u64)))
        .collect();
    let mut values = Vec::with_capacity(outcomes.len());
    let mut failed = 0;
    for o in outcomes {
        match o {
            Ok(v) if v.is_finite() => values.push(v),
            _ => failed += 1,
        }
    }
    if failed as f64 > MAX_FAILURE_FRACTION * options.replicates as f64 {
        return Err(Error::UnstableFit {
            failed,
            total: options.replicates,
        });
    }
    BootstrapSummary::from_replicates(options.replicates, values, failed, &options.levels)
}

/// Two-step fit on the full data plus a nonparametric bootstrap that re-runs both stages on
/// every resample.
pub fn bootstrap(records: &[ObservedRecord], family: OutcomeFamily, options: &BootstrapOptions) -> Result<FitResult> {
    options.validate()?;
    let fit_options = FitOptions::default();
    let alpha = first_stage(records)?;
    let cells = ObservedCells::new(family, records, None)?;
    let base = moment_start(&cells)?;
    let mut starts = vec![base.clone()];
    starts.extend(jittered_starts(family, &base, fit_options.jitter_starts));
    let full = fit_cells(&cells, &alpha, &starts, None, &fit_options)?;

    let summary = run_bootstrap(records.len(), options, |mult| {
        let counts = CountSummary::from_multiplicities(records, mult);
        let alpha_b = first_stage_from_counts(&counts)?;
        let cells_b = ObservedCells::new(family, records, Some(mult))?;
        let warm = fit_cells(
            &cells_b,
            &alpha_b,
            std::slice::from_ref(&full.phi),
            Some(&full.inv_hessian),
            &fit_options,
        );
        let fit = match warm {
            Ok(fit) => fit,
            Err(e) if e.is_statistical() => return Err(e),
            Err(_) => {
                let base = moment_start(&cells_b)?;
                let mut starts = vec![base.clone()];
                starts.extend(jittered_starts(family, &base, fit_options.jitter_starts));
                fit_cells(&cells_b, &alpha_b, &starts, None, &fit_options)?
            }
        };
        Ok(fit.result.cace_hat())
    })?;

    let mut result = full.result;
    result.bootstrap = Some(summary);
    Ok(result)
}
