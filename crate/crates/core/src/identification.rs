//! Identification of the outcome parameters from the conditional law of `(Z, D)` given an
//! observed outcome.
//!
//! Conditional on `Y = y` and `R = 1`, the response probability `rho(y)` multiplies every
//! `(Z, D)` cell equally and cancels. The functions here therefore take no missingness
//! argument at all; [`full_log_likelihood`] is the one place `rho` appears, and it exists to
//! check that cancellation.

use crate::error::{Error, Result};
use crate::model::{Block, Cell, FirstStageParams, Natural, ObservedRecord, OutcomeFamily, OutcomeParams};
use crate::quadrature;
use crate::stats::{log_add_exp, log_sum_exp};

/// `P(Z = z, D = d | Y = y, R = 1)` for the four cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellProbabilities {
    pub p11: f64,
    pub p10: f64,
    pub p01: f64,
    pub p00: f64,
}

impl CellProbabilities {
    pub fn get(&self, cell: Cell) -> f64 {
        match cell {
            Cell::Z1D1 => self.p11,
            Cell::Z1D0 => self.p10,
            Cell::Z0D1 => self.p01,
            Cell::Z0D0 => self.p00,
        }
    }

    pub fn total(&self) -> f64 {
        self.p11 + self.p10 + self.p01 + self.p00
    }
}

/// Log probabilities of the four cells, ordered as [`Cell::ALL`].
pub(crate) fn log_cell_probabilities(
    natural: &[Natural; 4],
    alpha: &FirstStageParams,
    t: [f64; 2],
) -> [f64; 4] {
    let l = natural.map(|n| n.log_kernel(t));
    let lx = alpha.xi().ln();
    let l1x = (1.0 - alpha.xi()).ln();
    let lc = alpha.omega_c().ln();
    let la = alpha.omega_a().ln();
    let ln = alpha.omega_n().ln();

    let c1 = lx + lc + l[0];
    let a1 = lx + la + l[2];
    let n1 = lx + ln + l[3];
    let a0 = l1x + la + l[2];
    let c0 = l1x + lc + l[1];
    let n0 = l1x + ln + l[3];

    let total = log_sum_exp(&[c1, a1, n1, a0, c0, n0]);
    [
        log_add_exp(c1, a1) - total,
        n1 - total,
        a0 - total,
        log_add_exp(c0, n0) - total,
    ]
}

/// Conditional cell probabilities at outcome `y`.
pub fn cell_probabilities(
    params: &OutcomeParams,
    alpha: &FirstStageParams,
    y: f64,
) -> Result<CellProbabilities> {
    params.validate()?;
    let family = params.family();
    family.check_support(y)?;
    let logp = log_cell_probabilities(&params.natural(), alpha, family.sufficient_stats(y));
    if logp.iter().any(|v| v.is_nan()) {
        return Err(Error::DegeneratePoint(y));
    }
    let [p11, p10, p01, p00] = logp.map(f64::exp);
    Ok(CellProbabilities { p11, p10, p01, p00 })
}

/// Number of sufficient statistics carried by the log-odds relations. For the homoskedastic
/// normal the `y^2` coefficient is common to every block and drops out.
pub fn glm_dimension(family: OutcomeFamily) -> usize {
    match family {
        OutcomeFamily::HomoNormal | OutcomeFamily::Exponential => 1,
        OutcomeFamily::HeteroNormal | OutcomeFamily::Gamma | OutcomeFamily::LogNormal => 2,
    }
}

/// The identifiable contrasts of natural parameters and log normalizers.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentifiedVector {
    k: usize,
    values: Vec<f64>,
}

impl IdentifiedVector {
    pub fn from_params(params: &OutcomeParams) -> Result<Self> {
        params.validate()?;
        let k = glm_dimension(params.family());
        let nat = params.natural();
        let [c1, c0, a, n] = [0, 1, 2, 3].map(|i| nat[i]);
        let mut values = Vec::with_capacity(3 * (k + 1));
        for j in 0..k {
            values.push(n.p[j] - a.p[j]);
            values.push(c1.p[j] - a.p[j]);
            values.push(c0.p[j] - n.p[j]);
        }
        values.push(n.log_c - a.log_c);
        values.push(c1.log_c - a.log_c);
        values.push(c0.log_c - n.log_c);
        Ok(Self { k, values })
    }

    pub fn dimension(&self) -> usize {
        self.k
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

/// Slopes and intercepts of the three log-odds relations
///
/// 1. `log{ p10 (1 - xi) / (p01 xi) }` (never-takers against always-takers),
/// 2. `log{ p00 xi / (p10 (1 - xi)) - 1 }` (control compliers against never-takers),
/// 3. `log{ p11 (1 - xi) / (p01 xi) - 1 }` (treated compliers against always-takers),
///
/// each linear in the sufficient statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlmCoefficients {
    dim: usize,
    /// `slopes[i][k]` multiplies `T_k(y)` in relation `i`.
    pub slopes: [[f64; 2]; 3],
    pub intercepts: [f64; 3],
}

impl GlmCoefficients {
    /// One-statistic coefficients `(a1, b1, a2, b2, a3, b3)`.
    pub fn linear(a1: f64, b1: f64, a2: f64, b2: f64, a3: f64, b3: f64) -> Self {
        Self {
            dim: 1,
            slopes: [[a1, 0.0], [a2, 0.0], [a3, 0.0]],
            intercepts: [b1, b2, b3],
        }
    }

    pub fn new(dim: usize, slopes: [[f64; 2]; 3], intercepts: [f64; 3]) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::UnsupportedFamily(format!(
                "GLM representation with {dim} statistics"
            )));
        }
        Ok(Self {
            dim,
            slopes,
            intercepts,
        })
    }

    /// Forward map from parameters to coefficients.
    pub fn from_params(params: &OutcomeParams, alpha: &FirstStageParams) -> Result<Self> {
        params.validate()?;
        let (wc, wa, wn) = (alpha.omega_c(), alpha.omega_a(), alpha.omega_n());
        if wa <= 0.0 || wn <= 0.0 {
            return Err(Error::Parameter(
                "log-odds relations need omega_a > 0 and omega_n > 0".into(),
            ));
        }
        let nat = params.natural();
        let (c1, c0, a, n) = (nat[0], nat[1], nat[2], nat[3]);
        let diff = |x: Natural, y: Natural| [x.p[0] - y.p[0], x.p[1] - y.p[1]];
        let dim = glm_dimension(params.family());
        let mut slopes = [diff(n, a), diff(c0, n), diff(c1, a)];
        if dim == 1 {
            for s in &mut slopes {
                s[1] = 0.0;
            }
        }
        let intercepts = [
            n.log_c - a.log_c + (wn / wa).ln(),
            c0.log_c - n.log_c + (wc / wn).ln(),
            c1.log_c - a.log_c + (wc / wa).ln(),
        ];
        Ok(Self {
            dim,
            slopes,
            intercepts,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn a(&self, relation: usize) -> f64 {
        self.slopes[relation][0]
    }

    pub fn b(&self, relation: usize) -> f64 {
        self.intercepts[relation]
    }

    /// Right-hand sides of the three relations at statistics `t`.
    pub fn evaluate(&self, t: [f64; 2]) -> [f64; 3] {
        let k2 = if self.dim == 2 { 1.0 } else { 0.0 };
        [0, 1, 2].map(|i| self.slopes[i][0] * t[0] + k2 * self.slopes[i][1] * t[1] + self.intercepts[i])
    }
}

/// Left-hand sides of the three log-odds relations, computed from the cell probabilities
/// at `y` and `xi`.
pub fn log_odds_contrasts(
    params: &OutcomeParams,
    alpha: &FirstStageParams,
    y: f64,
) -> Result<[f64; 3]> {
    let cells = cell_probabilities(params, alpha, y)?;
    let xi = alpha.xi();
    let odds = [
        cells.p10 * (1.0 - xi) / (cells.p01 * xi),
        cells.p00 * xi / (cells.p10 * (1.0 - xi)) - 1.0,
        cells.p11 * (1.0 - xi) / (cells.p01 * xi) - 1.0,
    ];
    let mut out = [0.0; 3];
    for (i, v) in odds.into_iter().enumerate() {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::LogOddsDomain { index: i + 1, y });
        }
        out[i] = v.ln();
    }
    Ok(out)
}

fn ratio_logs(alpha: &FirstStageParams) -> (f64, f64, f64) {
    let (wc, wa, wn) = (alpha.omega_c(), alpha.omega_a(), alpha.omega_n());
    ((wn / wa).ln(), (wc / wn).ln(), (wc / wa).ln())
}

/// The two closed-form expressions for the common variance, from relations (1, 2) and (1, 3).
pub fn normal_variance_pair(coeffs: &GlmCoefficients, alpha: &FirstStageParams) -> Result<(f64, f64)> {
    let (l_na, l_cn, l_ca) = ratio_logs(alpha);
    let (a1, a2, a3) = (coeffs.a(0), coeffs.a(1), coeffs.a(2));
    let (b1, b2, b3) = (coeffs.b(0), coeffs.b(1), coeffs.b(2));
    if a1 == 0.0 || a2 == 0.0 || a3 == 0.0 {
        return Err(Error::Singular("zero log-odds slope"));
    }
    if a1 + a2 == 0.0 {
        return Err(Error::Singular("a1 + a2 = 0"));
    }
    if a3 - a1 == 0.0 {
        return Err(Error::Singular("a3 - a1 = 0"));
    }
    let first = 2.0 * ((b1 - l_na) / a1 - (b2 - l_cn) / a2) / (a1 + a2);
    let second = 2.0 * ((b1 - l_na) / a1 - (b3 - l_ca) / a3) / (a3 - a1);
    Ok((first, second))
}

/// Closed-form recovery of homoskedastic-normal parameters from log-odds coefficients.
pub fn recover_normal(coeffs: &GlmCoefficients, alpha: &FirstStageParams) -> Result<OutcomeParams> {
    if coeffs.dimension() != 1 {
        return Err(Error::UnsupportedFamily(
            "normal recovery expects one-statistic coefficients".into(),
        ));
    }
    let (variance, check) = normal_variance_pair(coeffs, alpha)?;
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(Error::InconsistentCoefficients(format!("variance {variance}")));
    }
    if (variance - check).abs() > 1e-8 * variance.max(1.0) {
        return Err(Error::InconsistentCoefficients(format!(
            "variance expressions disagree: {variance} vs {check}"
        )));
    }
    let (_, l_cn, l_ca) = ratio_logs(alpha);
    let (a2, a3) = (coeffs.a(1), coeffs.a(2));
    let (b2, b3) = (coeffs.b(1), coeffs.b(2));
    let mu_1c = 0.5 * a3 * variance - (b3 - l_ca) / a3;
    let mu_0c = 0.5 * a2 * variance - (b2 - l_cn) / a2;
    let mu_n = mu_0c - a2 * variance;
    let mu_a = mu_1c - a3 * variance;
    Ok(OutcomeParams::HomoNormal {
        mean: [mu_1c, mu_0c, mu_a, mu_n],
        variance,
    })
}

/// Closed-form recovery of exponential rates from log-odds coefficients.
pub fn recover_exponential(coeffs: &GlmCoefficients, alpha: &FirstStageParams) -> Result<OutcomeParams> {
    if coeffs.dimension() != 1 {
        return Err(Error::UnsupportedFamily(
            "exponential recovery expects one-statistic coefficients".into(),
        ));
    }
    let (l_na, _, _) = ratio_logs(alpha);
    let ratio = (coeffs.b(0) - l_na).exp();
    let denom = 1.0 - ratio;
    if denom.abs() < 1e-14 || !denom.is_finite() {
        return Err(Error::Singular("exp(b1 - log(omega_n / omega_a)) = 1"));
    }
    let a1 = coeffs.a(0);
    let rate_a = a1 / denom;
    let rate_n = ratio * rate_a;
    let rate_0c = a1 * ratio / denom - coeffs.a(1);
    let rate_1c = a1 / denom - coeffs.a(2);
    let rate = [rate_1c, rate_0c, rate_a, rate_n];
    if rate.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
        return Err(Error::InconsistentCoefficients(format!("recovered rates {rate:?}")));
    }
    Ok(OutcomeParams::Exponential { rate })
}

/// Parameter counting for the polynomial exponential family with `K` statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DimensionCheck {
    pub statistics: usize,
    pub unknowns: usize,
    pub identified: usize,
    pub passes: bool,
}

/// Necessary condition for a one-to-one map from the `4K` block parameters to the `3(K+1)`
/// identified contrasts.
pub fn mapping_dimension_check(k: usize) -> Result<DimensionCheck> {
    if k == 0 {
        return Err(Error::Parameter("K must be at least 1".into()));
    }
    let unknowns = 4 * k;
    let identified = 3 * (k + 1);
    Ok(DimensionCheck {
        statistics: k,
        unknowns,
        identified,
        passes: unknowns <= identified,
    })
}

fn log_mixture(la: f64, wa: f64, lb: f64, wb: f64) -> f64 {
    let s = wa + wb;
    log_add_exp(la + (wa / s).ln(), lb + (wb / s).ln())
}

fn block_log_densities(params: &OutcomeParams, y: f64) -> Result<[f64; 4]> {
    let mut out = [0.0; 4];
    for b in Block::ALL {
        out[b.index()] = params.block(b).log_density(y)?;
    }
    Ok(out)
}

/// Log of the full-likelihood factor contributed by one observed record `(z, d, 1, y)`:
/// assignment, compliance, response and outcome terms.
pub fn observed_log_factor(
    alpha: &FirstStageParams,
    params: &OutcomeParams,
    rho: &dyn Fn(f64) -> f64,
    cell: Cell,
    y: f64,
) -> Result<f64> {
    let f = block_log_densities(params, y)?;
    let (xi, wc, wa, wn) = (alpha.xi(), alpha.omega_c(), alpha.omega_a(), alpha.omega_n());
    let (arm, compliance, outcome) = match cell {
        Cell::Z1D1 => (xi, 1.0 - wn, log_mixture(f[0], wc, f[2], wa)),
        Cell::Z1D0 => (xi, wn, f[3]),
        Cell::Z0D1 => (1.0 - xi, wa, f[2]),
        Cell::Z0D0 => (1.0 - xi, 1.0 - wa, log_mixture(f[1], wc, f[3], wn)),
    };
    Ok(arm.ln() + compliance.ln() + rho(y).ln() + outcome)
}

/// Full observed-data log-likelihood in `(alpha, theta, rho)`.
///
/// Missing-outcome cells integrate `1 - rho` against the block densities by adaptive
/// quadrature. This is an oracle for tests; the estimator never maximizes it.
pub fn full_log_likelihood(
    records: &[ObservedRecord],
    alpha: &FirstStageParams,
    params: &OutcomeParams,
    rho: &dyn Fn(f64) -> f64,
) -> Result<f64> {
    params.validate()?;
    let family = params.family();
    let (lo, hi) = match family.support_lower() {
        None => (f64::NEG_INFINITY, f64::INFINITY),
        Some((lo, _)) => (lo, f64::INFINITY),
    };
    let mut nonresponse: [Option<f64>; 4] = [None; 4];
    let mut nonresponse_mass = |b: Block| -> Result<f64> {
        if let Some(v) = nonresponse[b.index()] {
            return Ok(v);
        }
        let law = params.block(b);
        let v = quadrature::integrate(
            |y| {
                if !family.in_support(y) {
                    return 0.0;
                }
                (1.0 - rho(y)) * law.density(y).unwrap_or(0.0)
            },
            lo,
            hi,
            1e-8,
        )?;
        nonresponse[b.index()] = Some(v);
        Ok(v)
    };

    let (xi, wc, wa, wn) = (alpha.xi(), alpha.omega_c(), alpha.omega_a(), alpha.omega_n());
    let mut total = 0.0;
    for rec in records {
        let cell = rec.cell();
        match rec.y {
            Some(y) => total += observed_log_factor(alpha, params, rho, cell, y)?,
            None => {
                let (arm, compliance) = match cell {
                    Cell::Z1D1 => (xi, 1.0 - wn),
                    Cell::Z1D0 => (xi, wn),
                    Cell::Z0D1 => (1.0 - xi, wa),
                    Cell::Z0D0 => (1.0 - xi, 1.0 - wa),
                };
                let mass = match cell {
                    Cell::Z1D1 => {
                        (wc * nonresponse_mass(Block::TreatedComplier)?
                            + wa * nonresponse_mass(Block::AlwaysTaker)?)
                            / (wc + wa)
                    }
                    Cell::Z1D0 => nonresponse_mass(Block::NeverTaker)?,
                    Cell::Z0D1 => nonresponse_mass(Block::AlwaysTaker)?,
                    Cell::Z0D0 => {
                        (wc * nonresponse_mass(Block::ControlComplier)?
                            + wn * nonresponse_mass(Block::NeverTaker)?)
                            / (wc + wn)
                    }
                };
                total += arm.ln() + compliance.ln() + mass.ln();
            }
        }
    }
    Ok(total)
}
