//! Conditional log-likelihood of `(Z, D)` given the observed outcomes, with its analytic
//! gradient in the unconstrained outcome coordinates.

use crate::error::{Error, Result};
use crate::identification::log_cell_probabilities;
use crate::model::{Cell, FirstStageParams, NaturalMap, ObservedRecord, OutcomeFamily, OutcomeParams, MAX_FREE};
use crate::stats::log_add_exp;

/// Observed outcomes grouped by `(Z, D)` cell, stored as sufficient statistics with
/// (bootstrap) multiplicities.
#[derive(Debug, Clone)]
pub struct ObservedCells {
    family: OutcomeFamily,
    t1: [Vec<f64>; 4],
    t2: [Vec<f64>; 4],
    weight: [Vec<f64>; 4],
    total_weight: f64,
}

impl ObservedCells {
    /// Groups the observed records; `multiplicity[i]` (if given) repeats record `i`.
    pub fn new(family: OutcomeFamily, records: &[ObservedRecord], multiplicity: Option<&[u32]>) -> Result<Self> {
        let mut cells = Self {
            family,
            t1: Default::default(),
            t2: Default::default(),
            weight: Default::default(),
            total_weight: 0.0,
        };
        for (i, rec) in records.iter().enumerate() {
            let w = multiplicity.map_or(1, |m| m[i]);
            let Some(y) = rec.y else { continue };
            if w == 0 {
                continue;
            }
            family.check_support(y)?;
            let t = family.sufficient_stats(y);
            let c = rec.cell().index();
            cells.t1[c].push(t[0]);
            cells.t2[c].push(t[1]);
            cells.weight[c].push(w as f64);
            cells.total_weight += w as f64;
        }
        Ok(cells)
    }

    pub fn family(&self) -> OutcomeFamily {
        self.family
    }

    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    pub fn cell_weight(&self, cell: Cell) -> f64 {
        self.weight[cell.index()].iter().sum()
    }

    /// Errors unless every cell holds at least one observed outcome.
    pub fn require_all_cells(&self) -> Result<()> {
        if self.total_weight == 0.0 {
            return Err(Error::NoInformation("no observed outcomes".into()));
        }
        for cell in Cell::ALL {
            if self.weight[cell.index()].is_empty() {
                return Err(Error::NoInformation(format!(
                    "no observed outcome in cell {cell}"
                )));
            }
        }
        Ok(())
    }

    /// Weighted mean and variance of statistic `T_{stat+1}` within a cell, with the number of
    /// distinct records.
    pub(crate) fn cell_moments(&self, cell: Cell, stat: usize) -> Option<(f64, f64, usize)> {
        let c = cell.index();
        let w = &self.weight[c];
        let total: f64 = w.iter().sum();
        if total == 0.0 {
            return None;
        }
        let x = if stat == 0 { &self.t1[c] } else { &self.t2[c] };
        let mean = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / total;
        let var = x.iter().zip(w).map(|(a, b)| b * (a - mean).powi(2)).sum::<f64>() / total;
        Some((mean, var, w.len()))
    }

    /// `(l2, dropped)`: the conditional log-likelihood and the number of records whose
    /// cell masses were degenerate.
    pub fn log_likelihood(&self, params: &OutcomeParams, alpha: &FirstStageParams) -> (f64, usize) {
        let natural = params.natural();
        let mut total = 0.0;
        let mut dropped = 0;
        for cell in Cell::ALL {
            let c = cell.index();
            for i in 0..self.weight[c].len() {
                let lp = log_cell_probabilities(&natural, alpha, [self.t1[c][i], self.t2[c][i]])[c];
                if lp.is_nan() {
                    dropped += 1;
                    continue;
                }
                total += self.weight[c][i] * lp;
            }
        }
        if dropped > 0 {
            log::warn!("dropped {dropped} observed records with degenerate cell masses");
        }
        (total, dropped)
    }

    /// Conditional log-likelihood at unconstrained coordinates `phi`, writing
    /// `d l2 / d phi` into `grad`. Returns `None` outside the parameter space.
    pub fn log_likelihood_grad(&self, phi: &[f64], alpha: &FirstStageParams, grad: &mut [f64]) -> Option<f64> {
        let map = NaturalMap::at(self.family, phi).ok()?;
        let nat = map.natural;
        let lx = alpha.xi().ln();
        let l1x = (1.0 - alpha.xi()).ln();
        let xi = alpha.xi();
        let lw = [
            lx + alpha.omega_c().ln(),
            l1x + alpha.omega_c().ln(),
            alpha.omega_a().ln(),
            alpha.omega_n().ln(),
        ];

        // d l2 / d (p_1, p_2, log c) for each block
        let mut score = [[0.0f64; 3]; 4];
        let mut total = 0.0;
        for cell in Cell::ALL {
            let c = cell.index();
            let (t1s, t2s, ws) = (&self.t1[c], &self.t2[c], &self.weight[c]);
            for i in 0..ws.len() {
                let (t1, t2, w) = (t1s[i], t2s[i], ws[i]);
                let lt = [0, 1, 2, 3].map(|b| lw[b] + nat[b].log_c + nat[b].p[0] * t1 + nat[b].p[1] * t2);
                let m = lt[0].max(lt[1]).max(lt[2]).max(lt[3]);
                let e = lt.map(|v| (v - m).exp());
                let s = e[0] + e[1] + e[2] + e[3];
                // posterior of each block within the record's own cell
                let mut post = [0.0; 4];
                let num = match cell {
                    Cell::Z1D1 => {
                        let lin = e[0] + xi * e[2];
                        if lin > 1e-250 {
                            post[0] = e[0] / lin;
                            post[2] = 1.0 - post[0];
                            m + lin.ln()
                        } else {
                            let l = log_add_exp(lt[0], lx + lt[2]);
                            post[0] = (lt[0] - l).exp();
                            post[2] = 1.0 - post[0];
                            l
                        }
                    }
                    Cell::Z1D0 => {
                        post[3] = 1.0;
                        lx + lt[3]
                    }
                    Cell::Z0D1 => {
                        post[2] = 1.0;
                        l1x + lt[2]
                    }
                    Cell::Z0D0 => {
                        let lin = e[1] + (1.0 - xi) * e[3];
                        if lin > 1e-250 {
                            post[1] = e[1] / lin;
                            post[3] = 1.0 - post[1];
                            m + lin.ln()
                        } else {
                            let l = log_add_exp(lt[1], l1x + lt[3]);
                            post[1] = (lt[1] - l).exp();
                            post[3] = 1.0 - post[1];
                            l
                        }
                    }
                };
                let lp = num - (m + s.ln());
                if lp.is_nan() {
                    continue;
                }
                total += w * lp;
                for b in 0..4 {
                    let d = w * (post[b] - e[b] / s);
                    score[b][0] += d * t1;
                    score[b][1] += d * t2;
                    score[b][2] += d;
                }
            }
        }

        let n = phi.len();
        debug_assert!(n <= MAX_FREE);
        grad[..n].iter_mut().for_each(|g| *g = 0.0);
        for b in 0..4 {
            for j in 0..3 {
                let sc = score[b][j];
                if sc == 0.0 {
                    continue;
                }
                for (k, g) in grad[..n].iter_mut().enumerate() {
                    *g += sc * map.jacobian[b][j][k];
                }
            }
        }
        total.is_finite().then_some(total)
    }
}

/// Conditional log-likelihood `l2(theta, alpha)`; records without an outcome contribute
/// nothing.
pub fn conditional_log_likelihood(
    records: &[ObservedRecord],
    params: &OutcomeParams,
    alpha: &FirstStageParams,
) -> Result<f64> {
    params.validate()?;
    let cells = ObservedCells::new(params.family(), records, None)?;
    Ok(cells.log_likelihood(params, alpha).0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identification::cell_probabilities;

    #[test]
    fn single_record_is_one_term() {
        let alpha = FirstStageParams::new(0.5, 0.2, 0.3).unwrap();
        let params = OutcomeParams::HomoNormal {
            mean: [5.0, 4.0, 6.0, 3.0],
            variance: 1.0,
        };
        let rec = ObservedRecord::observed(true, false, 3.3);
        let ll = conditional_log_likelihood(&[rec], &params, &alpha).unwrap();
        let p = cell_probabilities(&params, &alpha, 3.3).unwrap().p10;
        assert!((ll - p.ln()).abs() < 1e-13);
    }

    #[test]
    fn missing_records_contribute_nothing() {
        let alpha = FirstStageParams::new(0.5, 0.2, 0.3).unwrap();
        let params = OutcomeParams::Exponential { rate: [1.0, 2.0, 0.5, 3.0] };
        let records = vec![ObservedRecord::missing(true, true), ObservedRecord::missing(false, false)];
        assert_eq!(conditional_log_likelihood(&records, &params, &alpha).unwrap(), 0.0);
        let cells = ObservedCells::new(params.family(), &records, None).unwrap();
        assert!(matches!(cells.require_all_cells(), Err(Error::NoInformation(_))));
    }

    #[test]
    fn gradient_path_matches_value_path() {
        let alpha = FirstStageParams::new(0.45, 0.3, 0.25).unwrap();
        let params = OutcomeParams::Gamma {
            shape: [5.0, 4.0, 6.0, 3.0],
            rate: 1.0,
        };
        let records: Vec<_> = (1..40)
            .map(|i| {
                let y = 0.25 * i as f64;
                ObservedRecord::observed(i % 2 == 0, i % 3 == 0, y)
            })
            .collect();
        let cells = ObservedCells::new(params.family(), &records, None).unwrap();
        let (v, _) = cells.log_likelihood(&params, &alpha);
        let mut g = vec![0.0; 5];
        let w = cells.log_likelihood_grad(&params.to_unconstrained(), &alpha, &mut g).unwrap();
        assert!((v - w).abs() < 1e-10 * v.abs());
    }
}
