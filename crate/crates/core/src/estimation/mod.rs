//! Two-step estimation: closed-form first stage for `(xi, omega_a, omega_n)`, numerically
//! maximized conditional likelihood for the outcome parameters, and bootstrap inference.

mod bootstrap;
mod fit;
mod likelihood;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Cell, FirstStageParams, ObservedRecord, OutcomeParams};

pub use bootstrap::{
    bootstrap, resample_multiplicities, run_bootstrap, BootstrapOptions, BootstrapSummary,
    PercentileInterval,
};
pub use fit::{fit_second_stage, fit_two_step, FitOptions, Init};
pub(crate) use fit::jittered_starts;
pub use likelihood::{conditional_log_likelihood, ObservedCells};

/// Sample sizes and cell counts of a dataset (or of a bootstrap resample).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CountSummary {
    pub n_total: usize,
    pub n1: usize,
    pub n0: usize,
    /// `n_zd`, ordered as [`Cell::ALL`].
    pub cells: [usize; 4],
    /// Missing-outcome counts `M_zd`, ordered as [`Cell::ALL`].
    pub missing: [usize; 4],
}

impl CountSummary {
    pub fn from_records(records: &[ObservedRecord]) -> Self {
        Self::tally(records.iter().map(|r| (r, 1)))
    }

    pub fn from_multiplicities(records: &[ObservedRecord], multiplicity: &[u32]) -> Self {
        Self::tally(records.iter().zip(multiplicity.iter().map(|&m| m as usize)))
    }

    fn tally<'a>(it: impl Iterator<Item = (&'a ObservedRecord, usize)>) -> Self {
        let mut cells = [0; 4];
        let mut missing = [0; 4];
        for (rec, w) in it {
            let c = rec.cell().index();
            cells[c] += w;
            if !rec.r() {
                missing[c] += w;
            }
        }
        let n1 = cells[0] + cells[1];
        let n0 = cells[2] + cells[3];
        Self {
            n_total: n1 + n0,
            n1,
            n0,
            cells,
            missing,
        }
    }

    pub fn count(&self, cell: Cell) -> usize {
        self.cells[cell.index()]
    }

    pub fn missing_in(&self, cell: Cell) -> usize {
        self.missing[cell.index()]
    }

    pub fn total_missing(&self) -> usize {
        self.missing.iter().sum()
    }

    pub fn as_f64(&self) -> [f64; 4] {
        self.cells.map(|c| c as f64)
    }
}

/// Maximum-likelihood (equivalently, moment) estimate of the design and compliance margins.
pub fn first_stage(records: &[ObservedRecord]) -> Result<FirstStageParams> {
    first_stage_from_counts(&CountSummary::from_records(records))
}

pub fn first_stage_from_counts(counts: &CountSummary) -> Result<FirstStageParams> {
    if counts.n1 == 0 || counts.n0 == 0 {
        return Err(Error::InsufficientData(format!(
            "empty arm: N1 = {}, N0 = {}",
            counts.n1, counts.n0
        )));
    }
    let xi = counts.n1 as f64 / counts.n_total as f64;
    let omega_n = counts.count(Cell::Z1D0) as f64 / counts.n1 as f64;
    let omega_a = counts.count(Cell::Z0D1) as f64 / counts.n0 as f64;
    if omega_a + omega_n >= 1.0 {
        return Err(Error::WeakInstrument(1.0 - omega_a - omega_n));
    }
    FirstStageParams::new(xi, omega_a, omega_n)
}

/// Optimizer bookkeeping for a fit.
#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub grad_norm: f64,
    /// Index of the winning start (0 is the data-driven start).
    pub start_index: usize,
    pub starts_converged: usize,
    pub dropped_records: usize,
}

/// Point estimates, optimizer diagnostics and (optionally) bootstrap inference.
#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub alpha_hat: FirstStageParams,
    pub theta_hat: OutcomeParams,
    /// Maximized objective: `l2` for the two-step estimator, the observed-data
    /// log-likelihood for the latent-ignorable comparator.
    pub l2_at_max: f64,
    pub diagnostics: Diagnostics,
    pub bootstrap: Option<BootstrapSummary>,
}

impl FitResult {
    pub fn cace_hat(&self) -> f64 {
        self.theta_hat.cace()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records_from_counts(n11: usize, n10: usize, n01: usize, n00: usize) -> Vec<ObservedRecord> {
        let mut v = Vec::new();
        v.extend(std::iter::repeat(ObservedRecord::missing(true, true)).take(n11));
        v.extend(std::iter::repeat(ObservedRecord::missing(true, false)).take(n10));
        v.extend(std::iter::repeat(ObservedRecord::missing(false, true)).take(n01));
        v.extend(std::iter::repeat(ObservedRecord::missing(false, false)).take(n00));
        v
    }

    #[test]
    fn first_stage_closed_form() {
        let a = first_stage(&records_from_counts(4, 2, 1, 3)).unwrap();
        assert!((a.xi() - 0.6).abs() < 1e-15);
        assert!((a.omega_n() - 1.0 / 3.0).abs() < 1e-15);
        assert!((a.omega_a() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn first_stage_table5_margins() {
        let a = first_stage(&records_from_counts(122, 81, 57, 161)).unwrap();
        assert!((a.xi() - 203.0 / 421.0).abs() < 1e-15);
        assert!((a.omega_n() - 81.0 / 203.0).abs() < 1e-15);
        assert!((a.omega_a() - 57.0 / 218.0).abs() < 1e-15);
        assert!((a.xi() - 0.4822).abs() < 5e-5);
        assert!((a.omega_n() - 0.3990).abs() < 5e-5);
        assert!((a.omega_a() - 0.2615).abs() < 5e-5);
    }

    #[test]
    fn first_stage_perfect_compliance() {
        let a = first_stage(&records_from_counts(5, 0, 0, 7)).unwrap();
        assert_eq!((a.omega_a(), a.omega_n()), (0.0, 0.0));
        assert!((a.xi() - 5.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn first_stage_errors() {
        assert!(matches!(
            first_stage(&records_from_counts(3, 1, 0, 0)),
            Err(Error::InsufficientData(_))
        ));
        assert!(matches!(
            first_stage(&records_from_counts(0, 4, 4, 0)),
            Err(Error::WeakInstrument(_))
        ));
    }

    #[test]
    fn count_summary_tracks_missing() {
        let mut recs = records_from_counts(2, 1, 1, 2);
        recs.push(ObservedRecord::observed(true, true, 1.0));
        let c = CountSummary::from_records(&recs);
        assert_eq!(c.n_total, 7);
        assert_eq!((c.n1, c.n0), (4, 3));
        assert_eq!(c.count(Cell::Z1D1), 3);
        assert_eq!(c.missing_in(Cell::Z1D1), 2);
        assert_eq!(c.total_missing(), 6);
    }
}
