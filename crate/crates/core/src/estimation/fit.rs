use rand::Rng;

use super::likelihood::ObservedCells;
use super::{first_stage, Diagnostics, FitResult};
use crate::error::{Error, Result};
use crate::model::{Cell, FirstStageParams, ObservedRecord, OutcomeFamily, OutcomeParams};
use crate::optim::{self, BfgsOptions};
use crate::rng::{self, Purpose};

/// Starting point for the second-stage optimizer.
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// Complete-case moments per `(Z, D)` cell, ignoring the mixing.
    Auto,
    At(OutcomeParams),
}

/// Optimizer settings for one second-stage fit.
#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub bfgs: BfgsOptions,
    /// Randomized perturbations of the first start.
    pub jitter_starts: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            bfgs: BfgsOptions::default(),
            jitter_starts: 4,
        }
    }
}

/// Cell supplying the naive moment start for each block `[1c, 0c, a, n]`.
const START_CELLS: [Cell; 4] = [Cell::Z1D1, Cell::Z0D0, Cell::Z0D1, Cell::Z1D0];

/// Unconstrained moment start from the observed outcomes of each cell.
pub(crate) fn moment_start(cells: &ObservedCells) -> Result<Vec<f64>> {
    let family = cells.family();
    // Gamma carries y in the second statistic; every other family in the first.
    let stat = usize::from(family == OutcomeFamily::Gamma);
    let mut moments = [(0.0, 0.0, 0usize); 4];
    for (b, cell) in START_CELLS.iter().enumerate() {
        moments[b] = cells
            .cell_moments(*cell, stat)
            .ok_or_else(|| Error::NoInformation(format!("no observed outcome in cell {cell}")))?;
    }
    let pooled = {
        let (num, den) = moments
            .iter()
            .fold((0.0, 0.0), |(a, b), &(_, v, n)| (a + v * n as f64, b + n as f64));
        let v = num / den;
        if v > 1e-12 {
            v
        } else {
            1.0
        }
    };
    let own_var = |b: usize| {
        let (_, v, n) = moments[b];
        if n > 1 && v > 1e-12 {
            v
        } else {
            pooled
        }
    };
    let means = moments.map(|m| m.0);
    let params = match family {
        OutcomeFamily::HomoNormal => OutcomeParams::HomoNormal {
            mean: means,
            variance: pooled,
        },
        OutcomeFamily::HeteroNormal => OutcomeParams::HeteroNormal {
            mean: means,
            variance: [0, 1, 2, 3].map(own_var),
        },
        OutcomeFamily::Exponential => OutcomeParams::Exponential {
            rate: means.map(|m| if m > 1e-12 { 1.0 / m } else { 1.0 }),
        },
        OutcomeFamily::Gamma => {
            let (num, den) = moments
                .iter()
                .fold((0.0, 0.0), |(a, b), &(m, v, n)| (a + m * n as f64, b + v * n as f64));
            let rate = if den > 1e-12 && num > 0.0 { num / den } else { 1.0 };
            OutcomeParams::Gamma {
                shape: means.map(|m| if m > 1e-12 { m * rate } else { 1.0 }),
                rate,
            }
        }
        OutcomeFamily::LogNormal => OutcomeParams::LogNormal {
            log_mean: means,
            log_variance: pooled,
        },
    };
    Ok(params.to_unconstrained())
}

/// Coordinates of `phi` that are locations (means); the rest are logs of positive
/// quantities.
fn location_scale(family: OutcomeFamily, phi: &[f64], i: usize) -> Option<f64> {
    match family {
        OutcomeFamily::HomoNormal | OutcomeFamily::LogNormal if i < 4 => Some((0.5 * phi[4]).exp()),
        OutcomeFamily::HeteroNormal if i < 4 => Some((0.5 * phi[4 + i]).exp()),
        _ => None,
    }
}

/// `count` deterministic +-20% perturbations of `base`.
pub(crate) fn jittered_starts(family: OutcomeFamily, base: &[f64], count: usize) -> Vec<Vec<f64>> {
    (1..=count)
        .map(|k| {
            let mut rng = rng::stream(0, Purpose::Starts, k as u64, 0);
            base.iter()
                .enumerate()
                .map(|(i, &x)| {
                    let u: f64 = rng.random_range(-1.0..1.0);
                    match location_scale(family, base, i) {
                        Some(sd) => x + 0.2 * u * (x.abs() + sd),
                        None => x + (1.0 + 0.2 * u).ln(),
                    }
                })
                .collect()
        })
        .collect()
}

fn at_boundary(family: OutcomeFamily, phi: &[f64]) -> bool {
    phi.iter().enumerate().any(|(i, &x)| match location_scale(family, phi, i) {
        Some(_) => x.abs() > 1e8,
        None => x.abs() > 23.0,
    })
}

/// A finished second-stage fit plus what is needed to warm-start a related one.
pub(crate) struct SecondStage {
    pub result: FitResult,
    pub phi: Vec<f64>,
    pub inv_hessian: Vec<f64>,
}

/// Maximizes the conditional likelihood from each start in turn and keeps the best
/// converged optimum (ties within 1e-9 go to the earlier start).
pub(crate) fn fit_cells(
    cells: &ObservedCells,
    alpha: &FirstStageParams,
    starts: &[Vec<f64>],
    warm_hessian: Option<&[f64]>,
    options: &FitOptions,
) -> Result<SecondStage> {
    cells.require_all_cells()?;
    let family = cells.family();
    let weight = cells.total_weight();
    let objective = |phi: &[f64], g: &mut [f64]| -> f64 {
        match cells.log_likelihood_grad(phi, alpha, g) {
            Some(v) => {
                g.iter_mut().for_each(|x| *x /= -weight);
                -v / weight
            }
            None => f64::INFINITY,
        }
    };

    let mut best: Option<(usize, optim::Minimum)> = None;
    let mut best_any: Option<optim::Minimum> = None;
    let mut converged_count = 0;
    for (idx, start) in starts.iter().enumerate() {
        let h0 = if idx == 0 { warm_hessian } else { None };
        let m = optim::minimize(objective, start, options.bfgs, h0);
        if !m.value.is_finite() {
            continue;
        }
        if best_any.as_ref().is_none_or(|b| m.value < b.value) {
            best_any = Some(m.clone());
        }
        if !m.converged {
            continue;
        }
        converged_count += 1;
        let better = match &best {
            None => true,
            // objective is -l2 / W; compare on the l2 scale
            Some((_, b)) => (b.value - m.value) * weight > 1e-9,
        };
        if better {
            best = Some((idx, m));
        }
    }

    let Some((start_index, m)) = best else {
        let (iterations, grad_norm, params) = match best_any {
            Some(m) => (
                m.iterations,
                m.grad_norm(),
                OutcomeParams::from_unconstrained(family, &m.x).ok().map(Box::new),
            ),
            None => (0, f64::NAN, None),
        };
        return Err(Error::NonConvergence {
            iterations,
            grad_norm,
            best: params,
        });
    };
    if at_boundary(family, &m.x) {
        return Err(Error::Boundary(format!("unconstrained estimate {:?}", m.x)));
    }
    let theta_hat = OutcomeParams::from_unconstrained(family, &m.x)?;
    let (l2, dropped) = cells.log_likelihood(&theta_hat, alpha);
    Ok(SecondStage {
        result: FitResult {
            alpha_hat: *alpha,
            theta_hat,
            l2_at_max: l2,
            diagnostics: Diagnostics {
                iterations: m.iterations,
                evaluations: m.evaluations,
                converged: true,
                grad_norm: m.grad_norm(),
                start_index,
                starts_converged: converged_count,
                dropped_records: dropped,
            },
            bootstrap: None,
        },
        phi: m.x,
        inv_hessian: m.inv_hessian,
    })
}

/// Second stage: maximizes the conditional likelihood over the outcome parameters with the
/// first-stage margins held fixed.
pub fn fit_second_stage(
    records: &[ObservedRecord],
    family: OutcomeFamily,
    alpha: &FirstStageParams,
    init: Init,
) -> Result<FitResult> {
    let cells = ObservedCells::new(family, records, None)?;
    cells.require_all_cells()?;
    let options = FitOptions::default();
    let base = match init {
        Init::Auto => moment_start(&cells)?,
        Init::At(params) => {
            if params.family() != family {
                return Err(Error::Parameter(format!(
                    "initial value is {} but the fit is {family}",
                    params.family()
                )));
            }
            params.validate()?;
            params.to_unconstrained()
        }
    };
    let mut starts = vec![base.clone()];
    starts.extend(jittered_starts(family, &base, options.jitter_starts));
    Ok(fit_cells(&cells, alpha, &starts, None, &options)?.result)
}

/// Both stages on one dataset.
pub fn fit_two_step(records: &[ObservedRecord], family: OutcomeFamily) -> Result<FitResult> {
    let alpha = first_stage(records)?;
    fit_second_stage(records, family, &alpha, Init::Auto)
}
