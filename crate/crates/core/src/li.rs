//! Latent-ignorable comparator: maximum likelihood by EM for homoskedastic normal outcomes
//! when the response indicator depends on the treatment received and the stratum only.
//!
//! Response probabilities are `gamma_du = P(R = 1 | D = d, U = u)` for the four realizable
//! combinations, stored in the order `(1c, 0c, 0n, 1a)`. Missing outcomes integrate out of
//! the observed-data likelihood, so a record with `R = 0` in a given cell carries the same
//! posterior as every other missing record in that cell and is handled in aggregate.

use serde::Serialize;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::estimation::{
    first_stage_from_counts, jittered_starts, run_bootstrap, BootstrapOptions, CountSummary, Diagnostics,
    FitResult,
};
use crate::model::{Cell, FirstStageParams, ObservedRecord, OutcomeFamily, OutcomeParams};

/// Slack allowed on a likelihood decrease before EM is declared broken, per unit of
/// log-likelihood magnitude.
const MONOTONE_SLACK: f64 = 1e-10;

fn slack(l: f64) -> f64 {
    MONOTONE_SLACK * l.abs().max(1.0)
}

/// Parameters of the latent-ignorable model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LiParams {
    pub alpha: FirstStageParams,
    /// Means of the blocks `[1c, 0c, a, n]`.
    pub mean: [f64; 4],
    pub variance: f64,
    /// `(gamma_1c, gamma_0c, gamma_0n, gamma_1a)`.
    pub gamma: [f64; 4],
}

impl LiParams {
    pub fn validate(&self) -> Result<()> {
        if !self.mean.iter().all(|m| m.is_finite()) || !(self.variance > 0.0 && self.variance.is_finite()) {
            return Err(Error::Parameter(format!("normal blocks {:?}, variance {}", self.mean, self.variance)));
        }
        // the MLE of a response probability sits on 1 when its stratum has no missing outcome
        if !self.gamma.iter().all(|g| (0.0..=1.0).contains(g)) {
            return Err(Error::Parameter(format!("response probabilities {:?}", self.gamma)));
        }
        Ok(())
    }

    pub fn outcome_params(&self) -> OutcomeParams {
        OutcomeParams::HomoNormal {
            mean: self.mean,
            variance: self.variance,
        }
    }

    pub fn cace(&self) -> f64 {
        self.mean[0] - self.mean[1]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EmOptions {
    /// Stop once an iteration raises the log-likelihood by less than this.
    pub tol: f64,
    /// Upper bound on EM map evaluations.
    pub max_iter: usize,
    /// Squared extrapolation between plain EM steps.
    pub accelerate: bool,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 5000,
            accelerate: true,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LiFit {
    pub params: LiParams,
    pub log_likelihood: f64,
    /// EM map evaluations.
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood gain of the last plain EM step.
    pub last_increase: f64,
    pub start_index: usize,
}

impl LiFit {
    pub fn cace_hat(&self) -> f64 {
        self.params.cace()
    }

    pub fn into_fit_result(self) -> FitResult {
        FitResult {
            alpha_hat: self.params.alpha,
            theta_hat: self.params.outcome_params(),
            l2_at_max: self.log_likelihood,
            diagnostics: Diagnostics {
                iterations: self.iterations,
                evaluations: self.iterations,
                converged: self.converged,
                grad_norm: self.last_increase,
                start_index: self.start_index,
                starts_converged: usize::from(self.converged),
                dropped_records: 0,
            },
            bootstrap: None,
        }
    }
}

/// Weighted sums `(sum w, sum w y, sum w y^2)`.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    w: f64,
    s1: f64,
    s2: f64,
}

impl Moments {
    fn add(&mut self, w: f64, y: f64) {
        self.w += w;
        self.s1 += w * y;
        self.s2 += w * y * y;
    }

    fn plus(self, o: Moments) -> Moments {
        Moments {
            w: self.w + o.w,
            s1: self.s1 + o.s1,
            s2: self.s2 + o.s2,
        }
    }

    /// `sum w (y - m)^2`.
    fn ss(&self, m: f64) -> f64 {
        (self.s2 - 2.0 * m * self.s1 + m * m * self.w).max(0.0)
    }
}

/// Data reduced to what the EM iterations touch.
#[derive(Debug, Clone)]
struct LiData {
    counts: [f64; 4],
    missing: [f64; 4],
    /// Observed outcomes of the single-stratum cells `(1, 0)` and `(0, 1)`.
    pure: [Moments; 2],
    /// Observed `(y, weight)` in the mixed cells `(1, 1)` and `(0, 0)`.
    mixed: [Vec<(f64, f64)>; 2],
    n1: f64,
    n0: f64,
}

impl LiData {
    fn new(records: &[ObservedRecord], multiplicity: Option<&[u32]>) -> Self {
        let mut d = LiData {
            counts: [0.0; 4],
            missing: [0.0; 4],
            pure: [Moments::default(); 2],
            mixed: [Vec::new(), Vec::new()],
            n1: 0.0,
            n0: 0.0,
        };
        for (i, rec) in records.iter().enumerate() {
            let w = multiplicity.map_or(1, |m| m[i]) as f64;
            if w == 0.0 {
                continue;
            }
            let cell = rec.cell();
            d.counts[cell.index()] += w;
            match rec.y {
                None => d.missing[cell.index()] += w,
                Some(y) => match cell {
                    Cell::Z1D1 => d.mixed[0].push((y, w)),
                    Cell::Z0D0 => d.mixed[1].push((y, w)),
                    Cell::Z1D0 => d.pure[0].add(w, y),
                    Cell::Z0D1 => d.pure[1].add(w, y),
                },
            }
        }
        d.n1 = d.counts[0] + d.counts[1];
        d.n0 = d.counts[2] + d.counts[3];
        d
    }

    fn observed(&self, cell: Cell) -> f64 {
        self.counts[cell.index()] - self.missing[cell.index()]
    }

    fn check_support(&self) -> Result<()> {
        for cell in [Cell::Z1D1, Cell::Z0D0] {
            if self.observed(cell) == 0.0 {
                return Err(Error::NoInformation(format!("no observed outcome in cell {cell}")));
            }
        }
        for cell in [Cell::Z1D0, Cell::Z0D1] {
            if self.counts[cell.index()] > 0.0 && self.observed(cell) == 0.0 {
                return Err(Error::NoInformation(format!("no observed outcome in cell {cell}")));
            }
        }
        Ok(())
    }

    fn observed_moments(&self) -> Moments {
        let mixed = self.mixed.iter().flatten().fold(Moments::default(), |mut m, &(y, w)| {
            m.add(w, y);
            m
        });
        mixed.plus(self.pure[0]).plus(self.pure[1])
    }
}

/// EM state as a flat vector: `[omega_a, omega_n, mu x4, sigma^2, gamma x4]`.
type State = [f64; 11];

fn pack(p: &LiParams) -> State {
    let mut s = [0.0; 11];
    s[0] = p.alpha.omega_a();
    s[1] = p.alpha.omega_n();
    s[2..6].copy_from_slice(&p.mean);
    s[6] = p.variance;
    s[7..11].copy_from_slice(&p.gamma);
    s
}

fn feasible(s: &State) -> bool {
    s.iter().all(|x| x.is_finite())
        && s[0] >= 0.0
        && s[1] >= 0.0
        && s[0] + s[1] < 1.0
        && s[6] > 0.0
        && s[7..].iter().all(|g| (0.0..=1.0).contains(g))
}

/// `w * ln(x)` with the convention `0 * ln(0) = 0`.
fn wlog(w: f64, x: f64) -> f64 {
    if w == 0.0 {
        0.0
    } else {
        w * x.ln()
    }
}

/// One EM map evaluation: the observed-data log-likelihood at `s` and the updated state.
fn em_step(data: &LiData, s: &State) -> (f64, State) {
    let (oa, on) = (s[0], s[1]);
    let oc = 1.0 - oa - on;
    let mu = [s[2], s[3], s[4], s[5]];
    let v = s[6];
    let g = [s[7], s[8], s[9], s[10]];
    let xi = data.n1 / (data.n1 + data.n0);
    let norm = -0.5 * (2.0 * PI * v).ln();

    let mut ll = wlog(data.n1, xi) + wlog(data.n0, 1.0 - xi);
    // complier, always- and never-taker moments of observed outcomes, and posterior masses
    let mut mc = [Moments::default(); 2];
    let mut m_other = [Moments::default(); 2]; // [a, n] from the mixed cells
    let mut mass_c = [0.0; 2]; // total complier mass in the mixed cells
    let mut mass_other = [0.0; 2];

    // mixed cells: (1,1) holds {1c, a}, (0,0) holds {0c, n}
    let layout = [(Cell::Z1D1, 0usize, 2usize, 0usize, 3usize), (Cell::Z0D0, 1, 3, 1, 2)];
    for (k, &(cell, bc, bo, gc, go)) in layout.iter().enumerate() {
        let wo = if bo == 2 { oa } else { on };
        let lc = (oc * g[gc]).ln();
        let lo = (wo * g[go]).ln();
        // log-odds of the other stratum is linear in y
        let slope = (mu[bo] - mu[bc]) / v;
        let icpt = lo - lc + (mu[bc] * mu[bc] - mu[bo] * mu[bo]) / (2.0 * v);
        for &(y, w) in &data.mixed[k] {
            let eta = icpt + slope * y;
            let (qc, soft) = if eta > 0.0 {
                let e = (-eta).exp();
                (e / (1.0 + e), eta + e.ln_1p())
            } else {
                let e = eta.exp();
                (1.0 / (1.0 + e), e.ln_1p())
            };
            let r = y - mu[bc];
            ll += w * (lc + norm - 0.5 * r * r / v + soft);
            mc[k].add(w * qc, y);
            m_other[k].add(w * (1.0 - qc), y);
        }
        let miss = data.missing[cell.index()];
        if miss > 0.0 {
            let a = oc * (1.0 - g[gc]);
            let b = wo * (1.0 - g[go]);
            ll += miss * (a + b).ln();
            let qc = if a + b > 0.0 { a / (a + b) } else { 0.5 };
            mass_c[k] = mc[k].w + miss * qc;
            mass_other[k] = m_other[k].w + miss * (1.0 - qc);
        } else {
            mass_c[k] = mc[k].w;
            mass_other[k] = m_other[k].w;
        }
    }
    // pure cells: (1,0) never-takers, (0,1) always-takers
    for (k, (cell, b, gi, w_u)) in [(Cell::Z1D0, 3usize, 2usize, on), (Cell::Z0D1, 2, 3, oa)].into_iter().enumerate() {
        let m = &data.pure[k];
        if m.w > 0.0 {
            ll += m.w * ((w_u * g[gi]).ln() + norm) - 0.5 * m.ss(mu[b]) / v;
        }
        ll += wlog(data.missing[cell.index()], w_u * (1.0 - g[gi]));
    }

    // M-step
    let n = data.n1 + data.n0;
    let pure_n = data.counts[Cell::Z1D0.index()];
    let pure_a = data.counts[Cell::Z0D1.index()];
    let total_a = mass_other[0] + pure_a;
    let total_n = mass_other[1] + pure_n;
    let mut out = *s;
    out[0] = total_a / n;
    out[1] = total_n / n;

    let blocks = [mc[0], mc[1], m_other[0].plus(data.pure[1]), m_other[1].plus(data.pure[0])];
    let mut ss = 0.0;
    let mut wobs = 0.0;
    for (b, m) in blocks.iter().enumerate() {
        if m.w > 0.0 {
            out[2 + b] = m.s1 / m.w;
        }
        ss += m.ss(out[2 + b]);
        wobs += m.w;
    }
    out[6] = ss / wobs;

    let ratio = |num: f64, den: f64, old: f64| if den > 0.0 { num / den } else { old };
    out[7] = ratio(mc[0].w, mass_c[0], g[0]);
    out[8] = ratio(mc[1].w, mass_c[1], g[1]);
    out[9] = ratio(m_other[1].w + data.pure[0].w, total_n, g[2]);
    out[10] = ratio(m_other[0].w + data.pure[1].w, total_a, g[3]);
    (ll, out)
}

fn unpack(s: &State, xi: f64) -> Result<LiParams> {
    let p = LiParams {
        alpha: FirstStageParams::new(xi, s[0], s[1])?,
        mean: [s[2], s[3], s[4], s[5]],
        variance: s[6],
        gamma: [s[7], s[8], s[9], s[10]],
    };
    p.validate()?;
    Ok(p)
}

fn run_em(data: &LiData, start: &State, options: &EmOptions) -> Result<(State, f64, usize, bool, f64)> {
    let mut evals = 0;
    let mut x = *start;
    // lower bound the next log-likelihood must respect
    let mut floor = f64::NEG_INFINITY;
    loop {
        let (l0, x1) = em_step(data, &x);
        evals += 1;
        if !l0.is_finite() {
            return Err(Error::Numerical(format!("EM log-likelihood {l0} at {x:?}")));
        }
        if l0 < floor - slack(floor) {
            return Err(Error::EmMonotonicity(floor - l0));
        }
        if evals >= options.max_iter {
            return Ok((x, l0, evals, false, f64::NAN));
        }
        let (l1, x2) = em_step(data, &x1);
        evals += 1;
        if l1 < l0 - slack(l0) {
            return Err(Error::EmMonotonicity(l0 - l1));
        }
        if l1 - l0 < options.tol {
            return Ok((x1, l1, evals, true, l1 - l0));
        }
        if !options.accelerate || evals + 1 >= options.max_iter {
            x = x2;
            floor = l1;
            continue;
        }
        let mut r = [0.0; 11];
        let mut v = [0.0; 11];
        for i in 0..11 {
            r[i] = x1[i] - x[i];
            v[i] = x2[i] - 2.0 * x1[i] + x[i];
        }
        let rr: f64 = r.iter().map(|a| a * a).sum();
        let vv: f64 = v.iter().map(|a| a * a).sum();
        let step = if vv > 0.0 { -(rr / vv).sqrt() } else { -1.0 };
        if step >= -1.0 {
            x = x2;
            floor = l1;
            continue;
        }
        let mut xe = [0.0; 11];
        for i in 0..11 {
            xe[i] = x[i] - 2.0 * step * r[i] + step * step * v[i];
        }
        if !feasible(&xe) {
            x = x2;
            floor = l1;
            continue;
        }
        let (le, xe1) = em_step(data, &xe);
        evals += 1;
        if le.is_finite() && le >= l1 && feasible(&xe1) {
            x = xe1;
            floor = le;
        } else {
            x = x2;
            floor = l1;
        }
    }
}

/// Complete-case moments: each block from the cell it dominates, pooled variance, observed
/// response fractions per cell.
fn moment_start(data: &LiData, alpha: &FirstStageParams) -> State {
    let mixed_m = |k: usize| {
        data.mixed[k].iter().fold(Moments::default(), |mut m, &(y, w)| {
            m.add(w, y);
            m
        })
    };
    let all = data.observed_moments();
    let overall = all.s1 / all.w;
    let cells = [mixed_m(0), mixed_m(1), data.pure[1], data.pure[0]];
    let mean = cells.map(|m| if m.w > 0.0 { m.s1 / m.w } else { overall });
    let ss: f64 = cells.iter().zip(&mean).map(|(m, &mu)| m.ss(mu)).sum();
    let variance = if ss > 0.0 { ss / all.w } else { 1.0 };
    let frac = |cell: Cell| {
        let c = data.counts[cell.index()];
        let f = if c > 0.0 { data.observed(cell) / c } else { 0.5 };
        f.clamp(0.05, 0.95)
    };
    let mut s = [0.0; 11];
    s[0] = alpha.omega_a();
    s[1] = alpha.omega_n();
    s[2..6].copy_from_slice(&mean);
    s[6] = variance;
    s[7] = frac(Cell::Z1D1);
    s[8] = frac(Cell::Z0D0);
    s[9] = frac(Cell::Z1D0);
    s[10] = frac(Cell::Z0D1);
    s
}

fn fit_data(data: &LiData, starts: &[State], options: &EmOptions) -> Result<LiFit> {
    data.check_support()?;
    let xi = data.n1 / (data.n1 + data.n0);
    let mut best: Option<LiFit> = None;
    let mut last_err = None;
    for (idx, start) in starts.iter().enumerate() {
        match run_em(data, start, options) {
            Ok((x, ll, iterations, converged, last_increase)) => {
                let params = match unpack(&x, xi) {
                    Ok(p) => p,
                    Err(e) => {
                        last_err = Some(e);
                        continue;
                    }
                };
                let better = match &best {
                    None => true,
                    Some(b) => ll - b.log_likelihood > 1e-9,
                };
                if better {
                    best = Some(LiFit {
                        params,
                        log_likelihood: ll,
                        iterations,
                        converged,
                        last_increase,
                        start_index: idx,
                    });
                }
            }
            Err(e @ Error::EmMonotonicity(_)) => return Err(e),
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or_else(|| Error::Numerical("no EM start".into())))
}

/// Multi-start list: the moment start followed by jittered copies of its normal blocks.
fn default_starts(data: &LiData, alpha: &FirstStageParams, jitter: usize) -> Vec<State> {
    let base = moment_start(data, alpha);
    let phi = [base[2], base[3], base[4], base[5], base[6].ln()];
    let mut starts = vec![base];
    for j in jittered_starts(OutcomeFamily::HomoNormal, &phi, jitter) {
        let mut s = base;
        s[2..6].copy_from_slice(&j[..4]);
        s[6] = j[4].exp();
        starts.push(s);
    }
    starts
}

fn first_stage_of(records: &[ObservedRecord], multiplicity: Option<&[u32]>) -> Result<FirstStageParams> {
    let counts = match multiplicity {
        Some(m) => CountSummary::from_multiplicities(records, m),
        None => CountSummary::from_records(records),
    };
    first_stage_from_counts(&counts)
}

/// EM fit of the latent-ignorable model. With `init = None` the fit runs from complete-case
/// moments plus four jittered starts and keeps the highest likelihood.
pub fn li_em_fit(records: &[ObservedRecord], init: Option<&LiParams>, options: &EmOptions) -> Result<LiFit> {
    let alpha = first_stage_of(records, None)?;
    let data = LiData::new(records, None);
    let starts = match init {
        Some(p) => {
            p.validate()?;
            vec![pack(p)]
        }
        None => {
            data.check_support()?;
            default_starts(&data, &alpha, 4)
        }
    };
    fit_data(&data, &starts, options)
}

/// Latent-ignorable fit plus a nonparametric bootstrap. Each resample starts EM at the
/// full-sample estimate and falls back to the multi-start policy if that fails.
pub fn li_bootstrap(records: &[ObservedRecord], options: &BootstrapOptions) -> Result<FitResult> {
    options.validate()?;
    let em = EmOptions::default();
    let full = li_em_fit(records, None, &em)?;
    let warm = pack(&full.params);
    let summary = run_bootstrap(records.len(), options, |mult| {
        let alpha = first_stage_of(records, Some(mult))?;
        let data = LiData::new(records, Some(mult));
        let fit = match fit_data(&data, std::slice::from_ref(&warm), &em) {
            Ok(f) => f,
            Err(e) if e.is_statistical() => return Err(e),
            Err(_) => fit_data(&data, &default_starts(&data, &alpha, 4), &em)?,
        };
        Ok(fit.cace_hat())
    })?;
    let mut result = full.into_fit_result();
    result.bootstrap = Some(summary);
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Vec<ObservedRecord> {
        let mut v = Vec::new();
        for i in 0..60 {
            let y = 4.0 + (i % 7) as f64 * 0.3;
            v.push(ObservedRecord::observed(true, true, y + 1.0));
            v.push(ObservedRecord::observed(false, false, y - 0.5));
            if i % 2 == 0 {
                v.push(ObservedRecord::observed(true, false, y - 1.0));
                v.push(ObservedRecord::observed(false, true, y + 2.0));
            }
            if i % 5 == 0 {
                v.push(ObservedRecord::missing(true, true));
                v.push(ObservedRecord::missing(false, false));
                v.push(ObservedRecord::missing(true, false));
            }
        }
        v
    }

    #[test]
    fn plain_and_accelerated_em_agree() {
        let recs = toy();
        let plain = EmOptions {
            accelerate: false,
            tol: 1e-12,
            max_iter: 200_000,
        };
        let a = li_em_fit(&recs, None, &plain).unwrap();
        let b = li_em_fit(&recs, None, &EmOptions { tol: 1e-12, ..Default::default() }).unwrap();
        assert!(a.converged && b.converged);
        assert!((a.log_likelihood - b.log_likelihood).abs() < 1e-7);
        assert!((a.cace_hat() - b.cace_hat()).abs() < 1e-3, "{} vs {}", a.cace_hat(), b.cace_hat());
        assert!(b.iterations < a.iterations);
    }

    #[test]
    fn plain_em_is_monotone() {
        let recs = toy();
        let data = LiData::new(&recs, None);
        let alpha = first_stage_of(&recs, None).unwrap();
        let mut s = moment_start(&data, &alpha);
        let mut prev = f64::NEG_INFINITY;
        for _ in 0..300 {
            let (ll, next) = em_step(&data, &s);
            assert!(ll >= prev - slack(prev), "{ll} < {prev}");
            prev = ll;
            s = next;
        }
    }

    #[test]
    fn complete_data_without_mixing_gives_arm_means() {
        let recs: Vec<_> = (0..40)
            .map(|i| ObservedRecord::observed(i % 2 == 0, i % 2 == 0, (i * i % 13) as f64))
            .collect();
        let fit = li_em_fit(&recs, None, &EmOptions::default()).unwrap();
        let arm = |z: bool| {
            let ys: Vec<f64> = recs.iter().filter(|r| r.z == z).map(|r| r.y.unwrap()).collect();
            ys.iter().sum::<f64>() / ys.len() as f64
        };
        assert!((fit.params.mean[0] - arm(true)).abs() < 1e-12);
        assert!((fit.params.mean[1] - arm(false)).abs() < 1e-12);
        assert_eq!(fit.params.gamma[0], 1.0);
    }

    #[test]
    fn missing_complier_cell_has_no_information() {
        let recs = vec![
            ObservedRecord::missing(true, true),
            ObservedRecord::observed(false, false, 1.0),
            ObservedRecord::observed(true, false, 1.0),
        ];
        assert!(matches!(
            li_em_fit(&recs, None, &EmOptions::default()),
            Err(Error::NoInformation(_))
        ));
    }
}
