//! Data model and the exponential-family outcome laws.
//!
//! Every stratum outcome density is written as
//! `f(y) = c(theta) h(y) exp{ sum_k p_k(theta) T_k(y) }` with at most two sufficient
//! statistics. The likelihood code only ever needs the natural parameters `p_k`, the log
//! normalizer `log c` and the statistics `T_k(y)`; `h(y)` cancels from every conditional
//! probability of `(Z, D)` given `Y`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};
use std::f64::consts::PI;
use std::fmt;

use crate::error::{Error, Result};

/// Largest number of free (unconstrained) outcome parameters over all families.
pub const MAX_FREE: usize = 8;

/// One subject's observed `(Z, D, Y, R)`; `R = 1` exactly when `y` is present.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservedRecord {
    pub z: bool,
    pub d: bool,
    pub y: Option<f64>,
}

impl ObservedRecord {
    /// Builds a record from the 0/1 coding used in data files.
    pub fn new(z: u8, d: u8, y: Option<f64>, r: u8) -> Result<Self> {
        let bit = |name: &str, v: u8| match v {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(Error::InvalidRecord(format!("{name} must be 0 or 1, got {v}"))),
        };
        let z = bit("z", z)?;
        let d = bit("d", d)?;
        let r = bit("r", r)?;
        match (r, y) {
            (true, Some(v)) if v.is_finite() => Ok(Self { z, d, y: Some(v) }),
            (true, Some(v)) => Err(Error::InvalidRecord(format!("non-finite outcome {v}"))),
            (true, None) => Err(Error::InvalidRecord("r = 1 but y is missing".into())),
            (false, Some(_)) => Err(Error::InvalidRecord("r = 0 but y is present".into())),
            (false, None) => Ok(Self { z, d, y: None }),
        }
    }

    pub fn observed(z: bool, d: bool, y: f64) -> Self {
        Self { z, d, y: Some(y) }
    }

    pub fn missing(z: bool, d: bool) -> Self {
        Self { z, d, y: None }
    }

    pub fn r(&self) -> bool {
        self.y.is_some()
    }

    pub fn cell(&self) -> Cell {
        Cell::from_zd(self.z, self.d)
    }
}

/// The four observable `(Z, D)` cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cell {
    Z1D1,
    Z1D0,
    Z0D1,
    Z0D0,
}

impl Cell {
    pub const ALL: [Cell; 4] = [Cell::Z1D1, Cell::Z1D0, Cell::Z0D1, Cell::Z0D0];

    pub fn from_zd(z: bool, d: bool) -> Self {
        match (z, d) {
            (true, true) => Cell::Z1D1,
            (true, false) => Cell::Z1D0,
            (false, true) => Cell::Z0D1,
            (false, false) => Cell::Z0D0,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn z(self) -> bool {
        matches!(self, Cell::Z1D1 | Cell::Z1D0)
    }

    pub fn d(self) -> bool {
        matches!(self, Cell::Z1D1 | Cell::Z0D1)
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(z={}, d={})", self.z() as u8, self.d() as u8)
    }
}

/// Principal stratum under monotonicity. Defiers are not representable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ComplianceStratum {
    Complier,
    AlwaysTaker,
    NeverTaker,
}

impl ComplianceStratum {
    /// Classifies a unit from its potential treatments `D(1)` and `D(0)`.
    pub fn from_potential(d1: bool, d0: bool) -> Result<Self> {
        match (d1, d0) {
            (true, false) => Ok(Self::Complier),
            (true, true) => Ok(Self::AlwaysTaker),
            (false, false) => Ok(Self::NeverTaker),
            (false, true) => Err(Error::Parameter(
                "defier stratum excluded by monotonicity".into(),
            )),
        }
    }

    pub fn treatment_received(self, z: bool) -> bool {
        match self {
            Self::Complier => z,
            Self::AlwaysTaker => true,
            Self::NeverTaker => false,
        }
    }

    /// Outcome block governing this stratum in arm `z` (compound exclusion: only compliers
    /// depend on the arm).
    pub fn block(self, z: bool) -> Block {
        match (self, z) {
            (Self::Complier, true) => Block::TreatedComplier,
            (Self::Complier, false) => Block::ControlComplier,
            (Self::AlwaysTaker, _) => Block::AlwaysTaker,
            (Self::NeverTaker, _) => Block::NeverTaker,
        }
    }
}

/// Outcome parameter blocks `theta_1c, theta_0c, theta_a, theta_n`, in that order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Block {
    TreatedComplier,
    ControlComplier,
    AlwaysTaker,
    NeverTaker,
}

impl Block {
    pub const ALL: [Block; 4] = [
        Block::TreatedComplier,
        Block::ControlComplier,
        Block::AlwaysTaker,
        Block::NeverTaker,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Block::TreatedComplier => "1c",
            Block::ControlComplier => "0c",
            Block::AlwaysTaker => "a",
            Block::NeverTaker => "n",
        }
    }
}

/// Design and compliance margins `alpha = (xi, omega_a, omega_n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirstStageParams {
    xi: f64,
    omega_a: f64,
    omega_n: f64,
}

impl FirstStageParams {
    pub fn new(xi: f64, omega_a: f64, omega_n: f64) -> Result<Self> {
        if !(xi > 0.0 && xi < 1.0) {
            return Err(Error::Parameter(format!("xi = {xi} not in (0, 1)")));
        }
        if !(0.0..1.0).contains(&omega_a) || !(0.0..1.0).contains(&omega_n) {
            return Err(Error::Parameter(format!(
                "omega_a = {omega_a}, omega_n = {omega_n} must lie in [0, 1)"
            )));
        }
        if omega_a + omega_n >= 1.0 {
            return Err(Error::Parameter(format!(
                "omega_a + omega_n = {} leaves no compliers",
                omega_a + omega_n
            )));
        }
        Ok(Self {
            xi,
            omega_a,
            omega_n,
        })
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn omega_a(&self) -> f64 {
        self.omega_a
    }

    pub fn omega_n(&self) -> f64 {
        self.omega_n
    }

    pub fn omega_c(&self) -> f64 {
        1.0 - self.omega_a - self.omega_n
    }

    pub fn omega(&self, stratum: ComplianceStratum) -> f64 {
        match stratum {
            ComplianceStratum::Complier => self.omega_c(),
            ComplianceStratum::AlwaysTaker => self.omega_a,
            ComplianceStratum::NeverTaker => self.omega_n,
        }
    }

    /// First-stage log-likelihood of the `(Z, D)` margins given cell counts
    /// `[n11, n10, n01, n00]`; possibly fractional for weighted data.
    pub fn log_likelihood(&self, counts: [f64; 4]) -> f64 {
        let [n11, n10, n01, n00] = counts;
        let term = |n: f64, p: f64| if n == 0.0 { 0.0 } else { n * p.ln() };
        term(n11 + n10, self.xi)
            + term(n01 + n00, 1.0 - self.xi)
            + term(n11, 1.0 - self.omega_n)
            + term(n10, self.omega_n)
            + term(n01, self.omega_a)
            + term(n00, 1.0 - self.omega_a)
    }
}

/// Natural parameters `(p_1, p_2)` and log normalizer of one stratum law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Natural {
    pub p: [f64; 2],
    pub log_c: f64,
}

impl Natural {
    pub fn log_kernel(&self, t: [f64; 2]) -> f64 {
        self.log_c + self.p[0] * t[0] + self.p[1] * t[1]
    }
}

/// The shipped exponential-family outcome models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutcomeFamily {
    /// `N(mu_zu, sigma^2)` with one shared variance.
    HomoNormal,
    /// `N(mu_zu, sigma^2_zu)` with a variance per block.
    HeteroNormal,
    /// `Exp(lambda_zu)`, mean `1 / lambda_zu`.
    Exponential,
    /// `Gamma(alpha_zu, lambda)` with shared rate.
    Gamma,
    /// `Lognormal(mu_zu, sigma^2)` with one shared log-scale variance.
    LogNormal,
}

impl OutcomeFamily {
    pub const ALL: [OutcomeFamily; 5] = [
        OutcomeFamily::HomoNormal,
        OutcomeFamily::HeteroNormal,
        OutcomeFamily::Exponential,
        OutcomeFamily::Gamma,
        OutcomeFamily::LogNormal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::HomoNormal => "homo-normal",
            Self::HeteroNormal => "hetero-normal",
            Self::Exponential => "exponential",
            Self::Gamma => "gamma",
            Self::LogNormal => "lognormal",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == name || f.name().replace('-', "_") == name)
    }

    /// Number of sufficient statistics `K` in the density representation.
    pub fn dimension(self) -> usize {
        match self {
            Self::Exponential => 1,
            _ => 2,
        }
    }

    /// Number of free outcome parameters, counting the exclusion-restricted blocks once.
    pub fn free_parameters(self) -> usize {
        match self {
            Self::HomoNormal | Self::Gamma | Self::LogNormal => 5,
            Self::HeteroNormal => 8,
            Self::Exponential => 4,
        }
    }

    /// Lower end of the support; `None` means the whole real line.
    pub fn support_lower(self) -> Option<(f64, bool)> {
        match self {
            Self::HomoNormal | Self::HeteroNormal => None,
            // `(bound, closed)`
            Self::Exponential => Some((0.0, true)),
            Self::Gamma | Self::LogNormal => Some((0.0, false)),
        }
    }

    pub fn in_support(self, y: f64) -> bool {
        if !y.is_finite() {
            return false;
        }
        match self.support_lower() {
            None => true,
            Some((lo, true)) => y >= lo,
            Some((lo, false)) => y > lo,
        }
    }

    pub fn check_support(self, y: f64) -> Result<()> {
        if self.in_support(y) {
            Ok(())
        } else {
            Err(Error::Domain {
                family: self.name(),
                y,
            })
        }
    }

    /// Sufficient statistics `(T_1(y), T_2(y))`; unused slots are zero.
    pub fn sufficient_stats(self, y: f64) -> [f64; 2] {
        match self {
            Self::HomoNormal | Self::HeteroNormal => [y, y * y],
            Self::Exponential => [y, 0.0],
            Self::Gamma => [y.ln(), y],
            Self::LogNormal => {
                let l = y.ln();
                [l, l * l]
            }
        }
    }

    /// `log h(y)`.
    pub fn log_base_measure(self, y: f64) -> f64 {
        match self {
            Self::HomoNormal | Self::HeteroNormal | Self::Exponential => 0.0,
            Self::Gamma | Self::LogNormal => -y.ln(),
        }
    }
}

impl fmt::Display for OutcomeFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A single block's outcome law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StratumLaw {
    Normal { mean: f64, variance: f64 },
    Exponential { rate: f64 },
    Gamma { shape: f64, rate: f64 },
    LogNormal { log_mean: f64, log_variance: f64 },
}

impl StratumLaw {
    pub fn family_name(&self) -> &'static str {
        match self {
            Self::Normal { .. } => "normal",
            Self::Exponential { .. } => "exponential",
            Self::Gamma { .. } => "gamma",
            Self::LogNormal { .. } => "lognormal",
        }
    }

    fn family(&self) -> OutcomeFamily {
        match self {
            Self::Normal { .. } => OutcomeFamily::HeteroNormal,
            Self::Exponential { .. } => OutcomeFamily::Exponential,
            Self::Gamma { .. } => OutcomeFamily::Gamma,
            Self::LogNormal { .. } => OutcomeFamily::LogNormal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Normal { mean, variance } => mean.is_finite() && variance > 0.0 && variance.is_finite(),
            Self::Exponential { rate } => rate > 0.0 && rate.is_finite(),
            Self::Gamma { shape, rate } => {
                shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite()
            }
            Self::LogNormal {
                log_mean,
                log_variance,
            } => log_mean.is_finite() && log_variance > 0.0 && log_variance.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("{self:?}")))
        }
    }

    pub fn natural(&self) -> Natural {
        match *self {
            Self::Normal { mean, variance }
            | Self::LogNormal {
                log_mean: mean,
                log_variance: variance,
            } => Natural {
                p: [mean / variance, -0.5 / variance],
                log_c: -0.5 * mean * mean / variance - 0.5 * (2.0 * PI * variance).ln(),
            },
            Self::Exponential { rate } => Natural {
                p: [-rate, 0.0],
                log_c: rate.ln(),
            },
            Self::Gamma { shape, rate } => Natural {
                p: [shape, -rate],
                log_c: shape * rate.ln() - ln_gamma(shape),
            },
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Self::Normal { mean, .. } => mean,
            Self::Exponential { rate } => 1.0 / rate,
            Self::Gamma { shape, rate } => shape / rate,
            Self::LogNormal {
                log_mean,
                log_variance,
            } => (log_mean + 0.5 * log_variance).exp(),
        }
    }

    /// `log f(y)`, computed directly from the exponential-family form.
    pub fn log_density(&self, y: f64) -> Result<f64> {
        self.validate()?;
        let family = self.family();
        family.check_support(y)?;
        let t = family.sufficient_stats(y);
        Ok(self.natural().log_kernel(t) + family.log_base_measure(y))
    }

    pub fn density(&self, y: f64) -> Result<f64> {
        self.log_density(y).map(f64::exp)
    }
}

/// Outcome parameters `theta = (theta_1c, theta_0c, theta_a, theta_n)` for one family.
///
/// The exclusion restriction is structural: always-takers and never-takers carry one block
/// each, shared by both arms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OutcomeParams {
    HomoNormal { mean: [f64; 4], variance: f64 },
    HeteroNormal { mean: [f64; 4], variance: [f64; 4] },
    Exponential { rate: [f64; 4] },
    Gamma { shape: [f64; 4], rate: f64 },
    LogNormal { log_mean: [f64; 4], log_variance: f64 },
}

impl OutcomeParams {
    pub fn family(&self) -> OutcomeFamily {
        match self {
            Self::HomoNormal { .. } => OutcomeFamily::HomoNormal,
            Self::HeteroNormal { .. } => OutcomeFamily::HeteroNormal,
            Self::Exponential { .. } => OutcomeFamily::Exponential,
            Self::Gamma { .. } => OutcomeFamily::Gamma,
            Self::LogNormal { .. } => OutcomeFamily::LogNormal,
        }
    }

    pub fn block(&self, block: Block) -> StratumLaw {
        let i = block.index();
        match self {
            Self::HomoNormal { mean, variance } => StratumLaw::Normal {
                mean: mean[i],
                variance: *variance,
            },
            Self::HeteroNormal { mean, variance } => StratumLaw::Normal {
                mean: mean[i],
                variance: variance[i],
            },
            Self::Exponential { rate } => StratumLaw::Exponential { rate: rate[i] },
            Self::Gamma { shape, rate } => StratumLaw::Gamma {
                shape: shape[i],
                rate: *rate,
            },
            Self::LogNormal {
                log_mean,
                log_variance,
            } => StratumLaw::LogNormal {
                log_mean: log_mean[i],
                log_variance: *log_variance,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        Block::ALL
            .iter()
            .try_for_each(|&b| self.block(b).validate())
    }

    pub fn natural(&self) -> [Natural; 4] {
        Block::ALL.map(|b| self.block(b).natural())
    }

    pub fn means(&self) -> [f64; 4] {
        Block::ALL.map(|b| self.block(b).mean())
    }

    /// Complier average causal effect implied by the complier blocks.
    pub fn cace(&self) -> f64 {
        match self {
            Self::HomoNormal { mean, .. } | Self::HeteroNormal { mean, .. } => mean[0] - mean[1],
            Self::Exponential { rate } => 1.0 / rate[0] - 1.0 / rate[1],
            Self::Gamma { shape, rate } => shape[0] / rate - shape[1] / rate,
            Self::LogNormal {
                log_mean,
                log_variance,
            } => (log_mean[0] + 0.5 * log_variance).exp() - (log_mean[1] + 0.5 * log_variance).exp(),
        }
    }

    /// Same law with the two complier blocks exchanged.
    pub fn swap_compliers(&self) -> Self {
        let mut out = self.clone();
        match &mut out {
            Self::HomoNormal { mean, .. } => mean.swap(0, 1),
            Self::HeteroNormal { mean, variance } => {
                mean.swap(0, 1);
                variance.swap(0, 1);
            }
            Self::Exponential { rate } => rate.swap(0, 1),
            Self::Gamma { shape, .. } => shape.swap(0, 1),
            Self::LogNormal { log_mean, .. } => log_mean.swap(0, 1),
        }
        out
    }

    /// Unconstrained coordinates: identity for locations, natural log for variances,
    /// rates and shapes.
    pub fn to_unconstrained(&self) -> Vec<f64> {
        match self {
            Self::HomoNormal { mean, variance } => {
                let mut v = mean.to_vec();
                v.push(variance.ln());
                v
            }
            Self::HeteroNormal { mean, variance } => {
                let mut v = mean.to_vec();
                v.extend(variance.iter().map(|s| s.ln()));
                v
            }
            Self::Exponential { rate } => rate.iter().map(|r| r.ln()).collect(),
            Self::Gamma { shape, rate } => {
                let mut v: Vec<f64> = shape.iter().map(|s| s.ln()).collect();
                v.push(rate.ln());
                v
            }
            Self::LogNormal {
                log_mean,
                log_variance,
            } => {
                let mut v = log_mean.to_vec();
                v.push(log_variance.ln());
                v
            }
        }
    }

    pub fn from_unconstrained(family: OutcomeFamily, phi: &[f64]) -> Result<Self> {
        if phi.len() != family.free_parameters() {
            return Err(Error::Parameter(format!(
                "{family} expects {} coordinates, got {}",
                family.free_parameters(),
                phi.len()
            )));
        }
        let four = |off: usize, f: fn(f64) -> f64| [f(phi[off]), f(phi[off + 1]), f(phi[off + 2]), f(phi[off + 3])];
        let id = |x: f64| x;
        let params = match family {
            OutcomeFamily::HomoNormal => Self::HomoNormal {
                mean: four(0, id),
                variance: phi[4].exp(),
            },
            OutcomeFamily::HeteroNormal => Self::HeteroNormal {
                mean: four(0, id),
                variance: four(4, f64::exp),
            },
            OutcomeFamily::Exponential => Self::Exponential {
                rate: four(0, f64::exp),
            },
            OutcomeFamily::Gamma => Self::Gamma {
                shape: four(0, f64::exp),
                rate: phi[4].exp(),
            },
            OutcomeFamily::LogNormal => Self::LogNormal {
                log_mean: four(0, id),
                log_variance: phi[4].exp(),
            },
        };
        Ok(params)
    }
}

/// Natural parameters of the four blocks together with their Jacobian with respect to the
/// unconstrained coordinates: `jacobian[block][j][i] = d(p_1, p_2, log c)_j / d phi_i`.
#[derive(Debug, Clone)]
pub struct NaturalMap {
    pub natural: [Natural; 4],
    pub jacobian: [[[f64; MAX_FREE]; 3]; 4],
}

impl NaturalMap {
    pub fn at(family: OutcomeFamily, phi: &[f64]) -> Result<Self> {
        let params = OutcomeParams::from_unconstrained(family, phi)?;
        params.validate()?;
        let natural = params.natural();
        let mut jacobian = [[[0.0; MAX_FREE]; 3]; 4];
        for (b, jac) in jacobian.iter_mut().enumerate() {
            match family {
                OutcomeFamily::HomoNormal
                | OutcomeFamily::HeteroNormal
                | OutcomeFamily::LogNormal => {
                    let mu = phi[b];
                    let var_idx = if family == OutcomeFamily::HeteroNormal { 4 + b } else { 4 };
                    let v = phi[var_idx].exp();
                    jac[0][b] = 1.0 / v;
                    jac[0][var_idx] = -mu / v;
                    jac[1][var_idx] = 0.5 / v;
                    jac[2][b] = -mu / v;
                    jac[2][var_idx] = 0.5 * mu * mu / v - 0.5;
                }
                OutcomeFamily::Exponential => {
                    let rate = phi[b].exp();
                    jac[0][b] = -rate;
                    jac[2][b] = 1.0;
                }
                OutcomeFamily::Gamma => {
                    let shape = phi[b].exp();
                    let rate = phi[4].exp();
                    jac[0][b] = shape;
                    jac[1][4] = -rate;
                    jac[2][b] = shape * (rate.ln() - digamma(shape));
                    jac[2][4] = shape;
                }
            }
        }
        Ok(Self { natural, jacobian })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn normal_mode_value() {
        let law = StratumLaw::Normal {
            mean: 3.0,
            variance: 1.0,
        };
        assert_relative_eq!(law.density(3.0).unwrap(), 0.398_942_280_401_432_7, epsilon = 1e-15);
    }

    #[test]
    fn exponential_rate_at_origin() {
        let law = StratumLaw::Exponential { rate: 0.2 };
        assert_relative_eq!(law.density(0.0).unwrap(), 0.2, epsilon = 1e-15);
    }

    #[test]
    fn gamma_density_matches_direct_formula() {
        let law = StratumLaw::Gamma {
            shape: 5.0,
            rate: 1.0,
        };
        // 4^4 e^-4 / 4!
        let direct = 4f64.powi(4) * (-4f64).exp() / 24.0;
        assert_relative_eq!(law.density(4.0).unwrap(), direct, max_relative = 1e-13);
        assert_relative_eq!(direct, 0.195_366_814_813_165, epsilon = 1e-12);
    }

    #[test]
    fn support_violations_are_domain_errors() {
        let law = StratumLaw::Gamma {
            shape: 2.0,
            rate: 1.0,
        };
        assert!(matches!(law.density(0.0), Err(Error::Domain { .. })));
        let law = StratumLaw::Exponential { rate: 1.0 };
        assert!(matches!(law.density(-1e-9), Err(Error::Domain { .. })));
        let law = StratumLaw::Normal {
            mean: 0.0,
            variance: -1.0,
        };
        assert!(matches!(law.density(0.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn cace_values() {
        let normal = OutcomeParams::HomoNormal {
            mean: [5.0, 4.0, 6.0, 3.0],
            variance: 1.0,
        };
        assert_eq!(normal.cace(), 1.0);
        let lognormal = OutcomeParams::LogNormal {
            log_mean: [0.0, -1.0, -1.5, -0.5],
            log_variance: 1.0,
        };
        assert_relative_eq!(lognormal.cace(), 0.5f64.exp() - (-0.5f64).exp(), epsilon = 1e-15);
        assert!((lognormal.cace() - 1.0422).abs() < 5e-5);
        let flat = OutcomeParams::Gamma {
            shape: [3.0, 3.0, 1.0, 2.0],
            rate: 2.0,
        };
        assert_eq!(flat.cace(), 0.0);
    }

    #[test]
    fn defier_is_rejected() {
        assert!(ComplianceStratum::from_potential(false, true).is_err());
        assert_eq!(
            ComplianceStratum::from_potential(true, false).unwrap(),
            ComplianceStratum::Complier
        );
    }

    #[test]
    fn record_invariants() {
        assert!(ObservedRecord::new(1, 0, None, 1).is_err());
        assert!(ObservedRecord::new(1, 0, Some(1.0), 0).is_err());
        assert!(ObservedRecord::new(2, 0, None, 0).is_err());
        let rec = ObservedRecord::new(0, 1, Some(2.5), 1).unwrap();
        assert!(rec.r());
        assert_eq!(rec.cell(), Cell::Z0D1);
    }

    #[test]
    fn first_stage_params_reject_no_compliers() {
        assert!(FirstStageParams::new(0.5, 0.5, 0.5).is_err());
        assert!(FirstStageParams::new(1.0, 0.1, 0.1).is_err());
        assert!(FirstStageParams::new(0.5, 0.0, 0.0).is_ok());
    }

    #[test]
    fn unconstrained_round_trip() {
        let p = OutcomeParams::Gamma {
            shape: [5.0, 4.0, 6.0, 3.0],
            rate: 1.5,
        };
        let back = OutcomeParams::from_unconstrained(p.family(), &p.to_unconstrained()).unwrap();
        for (a, b) in p.means().iter().zip(back.means()) {
            assert_relative_eq!(*a, b, max_relative = 1e-14);
        }
    }

    #[test]
    fn natural_jacobian_matches_finite_differences() {
        let cases = [
            OutcomeParams::HomoNormal { mean: [5.0, 4.0, 6.0, 3.0], variance: 1.3 },
            OutcomeParams::HeteroNormal { mean: [5.0, 4.0, 6.0, 3.0], variance: [0.25, 1.0, 0.3, 2.0] },
            OutcomeParams::Exponential { rate: [0.2, 0.25, 1.0 / 6.0, 1.0 / 3.0] },
            OutcomeParams::Gamma { shape: [5.0, 4.0, 6.0, 3.0], rate: 1.2 },
            OutcomeParams::LogNormal { log_mean: [0.0, -1.0, -1.5, -0.5], log_variance: 0.8 },
        ];
        for params in cases {
            let family = params.family();
            let phi = params.to_unconstrained();
            let map = NaturalMap::at(family, &phi).unwrap();
            let h = 1e-6;
            for i in 0..phi.len() {
                let mut up = phi.clone();
                let mut dn = phi.clone();
                up[i] += h;
                dn[i] -= h;
                let nu = NaturalMap::at(family, &up).unwrap().natural;
                let nd = NaturalMap::at(family, &dn).unwrap().natural;
                for b in 0..4 {
                    let fd = [
                        (nu[b].p[0] - nd[b].p[0]) / (2.0 * h),
                        (nu[b].p[1] - nd[b].p[1]) / (2.0 * h),
                        (nu[b].log_c - nd[b].log_c) / (2.0 * h),
                    ];
                    for j in 0..3 {
                        assert!(
                            (fd[j] - map.jacobian[b][j][i]).abs() < 1e-6 * (1.0 + fd[j].abs()),
                            "{family} block {b} comp {j} coord {i}: fd {} vs {}",
                            fd[j],
                            map.jacobian[b][j][i]
                        );
                    }
                }
            }
        }
    }
}
