//! Source-destination hop-count distributions and their moment algebra.
//!
//! A packet entering the network needs some number of relay hops `L >= 1` to
//! reach its destination. Everything downstream of this module (transport
//! delay, tail bounds, fairness, shaping) is driven by the law of `L`, so this
//! module owns the three ways that law shows up:
//!
//! * [`HopCountPmf`] - a finite pmf `f(1..=phi)`, the discrete workhorse;
//! * [`RateAllocation`] - per-class fresh-packet rates `lambda(l)`, whose
//!   normalization induces a pmf (`f(l) = l(l)` weighting is *not* applied
//!   here: the pmf of hop counts among fresh packets is `lambda(l)/lambda`);
//! * [`ScalingLaw`] - parametric continuous families used for asymptotics,
//!   discretized onto `1..=phi` when a pmf is needed.
//!
//! The residual quantities follow the stationary-renewal pattern throughout:
//!
//! ```text
//! E[Lhat] = (E[L^2] + E[L]) / (2 E[L])        (discrete residual mean)
//! u       = E[Lhat] / E[L]                    (workload bias)
//!         = 1/2 + var[L]/(2 E[L]^2) + 1/(2 E[L])
//! ```
//!
//! For continuous laws the lattice correction drops out and the bias is
//! `u = E[L^2] / (2 E[L]^2)`; both conventions are documented where used.
//! A geometric `L` gives `u = 1` exactly, which is the reference point for
//! "relaying neither helps nor hurts" comparisons.
//!
//! Scalability of a whole allocation family `phi -> lambda_phi(.)` is decided
//! by the stabilized partial sums
//!
//! ```text
//! S(M, phi) = sum_{l <= M} l * lambda_phi(l)
//! ```
//!
//! the family sustains positive per-node throughput in the large-network
//! limit iff some truncation level `M` keeps `S(M, phi)` bounded away from
//! zero as `phi` grows. [`classify_scalability`] runs exactly that test over a
//! caller-supplied `phi` schedule and reports the witnessing `M` plus the
//! evidence table it used.

use crate::error::{Error, Result};

/// Hop-count masses must sum to one within this slack before renormalization.
const PMF_SUM_SLACK: f64 = 1e-9;

/// Default residual tail mass when truncating an infinite-support law.
const DEFAULT_TRUNCATION_TAIL: f64 = 1e-12;

// --------------------------------------------------------------------------
// HopCountPmf
// --------------------------------------------------------------------------

/// Probability mass function of the source-destination hop count `L`,
/// supported on `1..=phi`.
///
/// Invariants: every mass is finite and non-negative, the masses sum to one
/// (renormalized exactly at construction), and the final mass is positive so
/// `phi` really is the top of the support.
#[derive(Debug, Clone, PartialEq)]
pub struct HopCountPmf {
    probs: Vec<f64>,
}

/// Moment summary of a [`HopCountPmf`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct DistanceStats {
    pub mean: f64,
    pub second_moment: f64,
    pub variance: f64,
    /// Mean residual hop count `(E[L^2] + E[L]) / (2 E[L])`.
    pub residual_mean: f64,
    /// Workload bias `u = residual_mean / mean`.
    pub workload_bias: f64,
}

impl HopCountPmf {
    /// Builds a pmf from raw masses for `l = 1..=probs.len()`.
    ///
    /// Masses must be non-negative and sum to one within `1e-9`; the vector is
    /// renormalized to sum exactly and trailing zero masses are trimmed.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty mass vector".into()));
        }
        for (i, &p) in probs.iter().enumerate() {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::InvalidDistribution(format!(
                    "mass for l={} is {}",
                    i + 1,
                    p
                )));
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PMF_SUM_SLACK {
            return Err(Error::InvalidDistribution(format!(
                "masses sum to {sum}, expected 1"
            )));
        }
        let mut probs: Vec<f64> = probs.iter().map(|p| p / sum).collect();
        while probs.len() > 1 && *probs.last().unwrap() == 0.0 {
            probs.pop();
        }
        if probs.iter().sum::<f64>() == 0.0 {
            return Err(Error::InvalidDistribution("all masses zero".into()));
        }
        Ok(Self { probs })
    }

    /// Point mass at `l`.
    pub fn point(l: usize) -> Result<Self> {
        if l == 0 {
            return Err(Error::InvalidParameter("hop count must be >= 1".into()));
        }
        let mut probs = vec![0.0; l];
        probs[l - 1] = 1.0;
        Ok(Self { probs })
    }

    /// Uniform over `1..=phi`.
    pub fn uniform(phi: usize) -> Result<Self> {
        if phi == 0 {
            return Err(Error::InvalidParameter("phi must be >= 1".into()));
        }
        Ok(Self {
            probs: vec![1.0 / phi as f64; phi],
        })
    }

    /// Geometric hop count `Pr{L = l} = g (1-g)^(l-1)` truncated where the
    /// residual tail falls below `1e-12`, with the tail mass folded into the
    /// last class. Mean of the untruncated law is `1/g`.
    pub fn geometric(g: f64) -> Result<Self> {
        Self::geometric_with_tail(g, DEFAULT_TRUNCATION_TAIL)
    }

    /// Geometric hop count truncated at residual tail mass `tail`.
    pub fn geometric_with_tail(g: f64, tail: f64) -> Result<Self> {
        if !(g > 0.0 && g <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "geometric parameter g={g} outside (0, 1]"
            )));
        }
        if !(tail > 0.0 && tail < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "truncation tail {tail} outside (0, 1)"
            )));
        }
        if g == 1.0 {
            return Self::point(1);
        }
        // smallest phi with (1-g)^phi <= tail
        let phi = (tail.ln() / (1.0 - g).ln()).ceil().max(1.0) as usize;
        let mut probs = Vec::with_capacity(phi);
        let mut mass = g;
        let mut acc = 0.0;
        for _ in 0..phi - 1 {
            probs.push(mass);
            acc += mass;
            mass *= 1.0 - g;
        }
        probs.push(1.0 - acc); // folds the residual tail into l = phi
        Ok(Self { probs })
    }

    /// Geometric truncated at a fixed top class `phi`, tail folded into `phi`.
    pub fn geometric_truncated(g: f64, phi: usize) -> Result<Self> {
        if !(g > 0.0 && g <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "geometric parameter g={g} outside (0, 1]"
            )));
        }
        if phi == 0 {
            return Err(Error::InvalidParameter("phi must be >= 1".into()));
        }
        let mut probs = Vec::with_capacity(phi);
        let mut mass = g;
        let mut acc = 0.0;
        for _ in 0..phi.saturating_sub(1) {
            probs.push(mass);
            acc += mass;
            mass *= 1.0 - g;
        }
        probs.push(1.0 - acc);
        Ok(Self { probs })
    }

    /// Hop-count law induced by a rate allocation: `f(l) = lambda(l) / lambda`.
    pub fn from_rates(alloc: &RateAllocation) -> Result<Self> {
        let total = alloc.lambda();
        if total <= 0.0 {
            return Err(Error::InvalidDistribution(
                "allocation has zero total rate".into(),
            ));
        }
        Self::from_probs(alloc.rates().iter().map(|r| r / total).collect())
    }

    /// Top of the support.
    #[must_use]
    pub fn phi(&self) -> usize {
        self.probs.len()
    }

    /// `Pr{L = l}`; zero outside `1..=phi`.
    #[must_use]
    pub fn prob(&self, l: usize) -> f64 {
        if l == 0 || l > self.probs.len() {
            0.0
        } else {
            self.probs[l - 1]
        }
    }

    /// Masses for `l = 1..=phi`.
    #[must_use]
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// `E[L]`.
    #[must_use]
    pub fn mean(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(i, p)| (i + 1) as f64 * p)
            .sum()
    }

    /// `E[L^2]`.
    #[must_use]
    pub fn second_moment(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let l = (i + 1) as f64;
                l * l * p
            })
            .sum()
    }

    /// `var[L]`.
    #[must_use]
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.second_moment() - m * m
    }

    /// Mean residual hop count `(E[L^2] + E[L]) / (2 E[L])`: the expected
    /// remaining hops seen by an observer landing on a uniformly random hop
    /// of a stationary stream of `L`-hop journeys.
    #[must_use]
    pub fn residual_mean(&self) -> f64 {
        let m = self.mean();
        (self.second_moment() + m) / (2.0 * m)
    }

    /// Workload bias `u = residual_mean / mean`. Equals 1 exactly for the
    /// geometric law; `u > 1` means relayed traffic is biased toward longer
    /// journeys than fresh traffic.
    #[must_use]
    pub fn workload_bias(&self) -> f64 {
        self.residual_mean() / self.mean()
    }

    /// Full moment summary.
    #[must_use]
    pub fn stats(&self) -> DistanceStats {
        let mean = self.mean();
        let second = self.second_moment();
        DistanceStats {
            mean,
            second_moment: second,
            variance: second - mean * mean,
            residual_mean: (second + mean) / (2.0 * mean),
            workload_bias: (second + mean) / (2.0 * mean * mean),
        }
    }

    /// Moment generating function `M_L(z) = sum_l f(l) z^l` (a polynomial, so
    /// defined for every finite `z`; the transport chain only needs
    /// `z in [0, 1]`).
    #[must_use]
    pub fn mgf(&self, z: f64) -> f64 {
        // Horner from the top power down.
        let mut acc = 0.0;
        for &p in self.probs.iter().rev() {
            acc = (acc + p) * z;
        }
        acc
    }

    /// MGF of the residual hop count,
    /// `M_Lhat(z) = z (1 - M_L(z)) / ((1 - z) E[L])`, evaluated through its
    /// finite-sum form
    ///
    /// ```text
    /// M_Lhat(z) = (1 / E[L]) sum_{k=1}^{phi} Pr{L >= k} z^k
    /// ```
    ///
    /// which has no removable singularity at `z = 1` (it sums to 1 there).
    pub fn residual_mgf(&self, z: f64) -> Result<f64> {
        if !z.is_finite() || z < 0.0 {
            return Err(Error::Domain(format!(
                "residual MGF argument {z} outside [0, inf)"
            )));
        }
        // Horner over k = phi..1 with suffix = Pr{L >= k} accumulated on the fly
        let mut acc = 0.0;
        let mut suffix = 0.0;
        for &p in self.probs.iter().rev() {
            suffix += p;
            acc = (acc + suffix) * z;
        }
        Ok(acc / self.mean())
    }

    /// `Pr{L <= l}`.
    #[must_use]
    pub fn cdf(&self, l: usize) -> f64 {
        self.probs.iter().take(l).sum()
    }

    /// `Pr{L > l}`.
    #[must_use]
    pub fn tail(&self, l: usize) -> f64 {
        if l >= self.probs.len() {
            0.0
        } else {
            self.probs.iter().skip(l).sum()
        }
    }

    /// Smallest `m` with `Pr{L > m} <= eps` (tail threshold `L_m`).
    pub fn tail_threshold(&self, eps: f64) -> Result<usize> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "tail level {eps} outside (0, 1)"
            )));
        }
        let mut tail = 1.0;
        for (i, &p) in self.probs.iter().enumerate() {
            tail -= p;
            if tail <= eps {
                return Ok(i + 1);
            }
        }
        Ok(self.probs.len())
    }
}

// --------------------------------------------------------------------------
// RateAllocation
// --------------------------------------------------------------------------

/// Per-class fresh-packet rates: `rates[l-1]` is the rate `lambda(l)` at
/// which each node generates fresh packets needing `l` hops.
///
/// The network-level identities this type exposes:
///
/// ```text
/// lambda     = sum_l lambda(l)          (fresh-packet rate per node)
/// theta      = sum_l l * lambda(l)      (per-node throughput consumed)
/// u          = (sum_l l^2 lambda(l) * lambda + theta * lambda) / (2 theta^2)
/// ```
///
/// The bilinear `u` form is algebraically the same workload bias as
/// [`HopCountPmf::workload_bias`] applied to the induced hop-count law.
#[derive(Debug, Clone, PartialEq)]
pub struct RateAllocation {
    rates: Vec<f64>,
}

impl RateAllocation {
    pub fn new(rates: Vec<f64>) -> Result<Self> {
        if rates.is_empty() {
            return Err(Error::InvalidDistribution("empty rate vector".into()));
        }
        for (i, &r) in rates.iter().enumerate() {
            if !r.is_finite() || r < 0.0 {
                return Err(Error::InvalidDistribution(format!(
                    "rate for l={} is {}",
                    i + 1,
                    r
                )));
            }
        }
        Ok(Self { rates })
    }

    #[must_use]
    pub fn phi(&self) -> usize {
        self.rates.len()
    }

    #[must_use]
    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// `lambda(l)`; zero outside the support.
    #[must_use]
    pub fn rate(&self, l: usize) -> f64 {
        if l == 0 || l > self.rates.len() {
            0.0
        } else {
            self.rates[l - 1]
        }
    }

    /// Total fresh-packet rate `lambda = sum_l lambda(l)`.
    #[must_use]
    pub fn lambda(&self) -> f64 {
        self.rates.iter().sum()
    }

    /// Per-node throughput the allocation consumes,
    /// `theta = sum_l l * lambda(l)`.
    #[must_use]
    pub fn throughput(&self) -> f64 {
        self.rates
            .iter()
            .enumerate()
            .map(|(i, r)| (i + 1) as f64 * r)
            .sum()
    }

    /// Hop-count pmf among fresh packets.
    pub fn pmf(&self) -> Result<HopCountPmf> {
        HopCountPmf::from_rates(self)
    }

    /// Workload bias through the bilinear form
    /// `u = (sum l^2 lambda * sum lambda + theta * sum lambda) / (2 theta^2)`.
    pub fn workload_bias(&self) -> Result<f64> {
        let theta = self.throughput();
        if theta <= 0.0 {
            return Err(Error::InvalidDistribution(
                "allocation consumes zero throughput".into(),
            ));
        }
        let s0 = self.lambda();
        let s2: f64 = self
            .rates
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let l = (i + 1) as f64;
                l * l * r
            })
            .sum();
        Ok((s2 * s0 + theta * s0) / (2.0 * theta * theta))
    }
}

// --------------------------------------------------------------------------
// ScalingLaw
// --------------------------------------------------------------------------

/// Whether a moment of a parametric law is finite.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
#[serde(untagged)]
pub enum Moment {
    Finite(f64),
    Divergent,
}

impl Moment {
    #[must_use]
    pub fn finite(self) -> Option<f64> {
        match self {
            Moment::Finite(v) => Some(v),
            Moment::Divergent => None,
        }
    }

    /// Finite value or a domain error naming the moment.
    pub fn require(self, what: &str) -> Result<f64> {
        self.finite()
            .ok_or_else(|| Error::Domain(format!("{what} diverges")))
    }
}

/// Moment summary of a [`ScalingLaw`]. Continuous laws use the continuous
/// bias convention `u = E[L^2] / (2 E[L]^2)`; the natively discrete geometric
/// law uses the lattice convention `(E[L^2] + E[L]) / (2 E[L]^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LawStats {
    /// Normalizing constant of the density (1 for the closed-form laws).
    pub normalizer: f64,
    pub mean: Moment,
    pub second_moment: Moment,
    pub workload_bias: Moment,
}

/// Parametric families for the distance law at scale.
///
/// Densities (continuous variants live on `l > 0`, the power law on
/// `l >= epsilon`):
///
/// ```text
/// PowerLaw:     f(l) = c0 l^alpha,            c0 = -(1+alpha) eps^-(1+alpha)
/// Exponential:  f(l) = c0 l^alpha e^(-beta l)
/// Normal:       f(l) = c0 l^alpha e^(-beta l^2)
/// Rayleigh:     f(l) = (l / sigma^2) e^(-l^2 / (2 sigma^2))
/// Geometric:    f(l) = g (1-g)^(l-1)          (discrete, l = 1, 2, ...)
/// ```
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ScalingLaw {
    PowerLaw { alpha: f64, epsilon: f64 },
    Exponential { alpha: f64, beta: f64 },
    Normal { alpha: f64, beta: f64 },
    Rayleigh { sigma: f64 },
    Geometric { g: f64 },
}

impl ScalingLaw {
    fn validate(&self) -> Result<()> {
        match *self {
            ScalingLaw::PowerLaw { alpha, epsilon } => {
                if !(alpha < -1.0) || !alpha.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "power-law exponent alpha={alpha} must be < -1 for a normalizable density"
                    )));
                }
                if !(epsilon > 0.0) || !epsilon.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "power-law cutoff epsilon={epsilon} must be positive"
                    )));
                }
            }
            ScalingLaw::Exponential { alpha, beta } | ScalingLaw::Normal { alpha, beta } => {
                if !(alpha > -1.0) || !alpha.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "exponent alpha={alpha} must be > -1 for integrability at zero"
                    )));
                }
                if !(beta > 0.0) || !beta.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "decay rate beta={beta} must be positive"
                    )));
                }
            }
            ScalingLaw::Rayleigh { sigma } => {
                if !(sigma > 0.0) || !sigma.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "rayleigh scale sigma={sigma} must be positive"
                    )));
                }
            }
            ScalingLaw::Geometric { g } => {
                if !(g > 0.0 && g <= 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "geometric parameter g={g} outside (0, 1]"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Lower end of the support.
    #[must_use]
    pub fn support_start(&self) -> f64 {
        match *self {
            ScalingLaw::PowerLaw { epsilon, .. } => epsilon,
            ScalingLaw::Geometric { .. } => 1.0,
            _ => 0.0,
        }
    }

    /// Moment summary with divergence flags. Power-law moments are closed
    /// form; Rayleigh and geometric are closed form; the exponential and
    /// normal families integrate numerically.
    pub fn stats(&self) -> Result<LawStats> {
        self.validate()?;
        match *self {
            ScalingLaw::PowerLaw { alpha, epsilon } => {
                let c0 = -(1.0 + alpha) * epsilon.powf(-(1.0 + alpha));
                let mean = if alpha < -2.0 {
                    Moment::Finite((1.0 + alpha) * epsilon / (2.0 + alpha))
                } else {
                    Moment::Divergent
                };
                let second = if alpha < -3.0 {
                    Moment::Finite((1.0 + alpha) * epsilon * epsilon / (3.0 + alpha))
                } else {
                    Moment::Divergent
                };
                let bias = if alpha < -3.0 {
                    let a2 = alpha + 2.0;
                    Moment::Finite(a2 * a2 / (2.0 * (alpha + 1.0) * (alpha + 3.0)))
                } else {
                    Moment::Divergent
                };
                Ok(LawStats {
                    normalizer: c0,
                    mean,
                    second_moment: second,
                    workload_bias: bias,
                })
            }
            ScalingLaw::Rayleigh { sigma } => {
                let mean = sigma * (std::f64::consts::PI / 2.0).sqrt();
                let second = 2.0 * sigma * sigma;
                Ok(LawStats {
                    normalizer: 1.0 / (sigma * sigma),
                    mean: Moment::Finite(mean),
                    second_moment: Moment::Finite(second),
                    workload_bias: Moment::Finite(second / (2.0 * mean * mean)),
                })
            }
            ScalingLaw::Geometric { g } => {
                let mean = 1.0 / g;
                let second = (2.0 - g) / (g * g);
                // discrete convention; equals 1 identically for this family
                let bias = (second + mean) / (2.0 * mean * mean);
                Ok(LawStats {
                    normalizer: g,
                    mean: Moment::Finite(mean),
                    second_moment: Moment::Finite(second),
                    workload_bias: Moment::Finite(bias),
                })
            }
            ScalingLaw::Exponential { .. } | ScalingLaw::Normal { .. } => {
                let cutoff = self.integration_cutoff();
                let z0 = self.numeric_integral(0.0, 0.0, cutoff)?;
                let m1 = self.numeric_integral(1.0, 0.0, cutoff)? / z0;
                let m2 = self.numeric_integral(2.0, 0.0, cutoff)? / z0;
                Ok(LawStats {
                    normalizer: 1.0 / z0,
                    mean: Moment::Finite(m1),
                    second_moment: Moment::Finite(m2),
                    workload_bias: Moment::Finite(m2 / (2.0 * m1 * m1)),
                })
            }
        }
    }

    /// `integral_0^upper l^(alpha+k) e^(t l) kernel(l) dl` for the numeric
    /// families. The integrable singularity at zero (`-1 < alpha + k < 2`)
    /// is removed by the substitution `l = u^m` with `m` large enough that
    /// the transformed integrand `m u^(m(a+1)-1) h(u^m)` is C^1 at zero;
    /// plain adaptive Simpson then converges without special casing.
    fn numeric_integral(&self, k: f64, t: f64, upper: f64) -> Result<f64> {
        let (alpha, beta, quadratic) = match *self {
            ScalingLaw::Exponential { alpha, beta } => (alpha, beta, false),
            ScalingLaw::Normal { alpha, beta } => (alpha, beta, true),
            _ => unreachable!("closed-form families never integrate"),
        };
        let a = alpha + k;
        debug_assert!(a > -1.0, "validate() guards integrability");
        let m = (3.0 / (a + 1.0)).ceil().max(1.0);
        let exponent = m * (a + 1.0) - 1.0;
        let f = move |u: f64| {
            let l = u.powf(m);
            let decay = if quadratic { -beta * l * l } else { -beta * l };
            m * u.powf(exponent) * (t * l + decay).exp()
        };
        simpson_adaptive(&f, 0.0, upper.powf(1.0 / m), 1e-12)
    }

    fn integration_cutoff(&self) -> f64 {
        match *self {
            ScalingLaw::Exponential { alpha, beta } => {
                ((60.0 + 10.0 * (1.0 + alpha.abs()).ln()) / beta).max(10.0)
            }
            ScalingLaw::Normal { alpha, beta } => {
                ((60.0 + 10.0 * (1.0 + alpha.abs()).ln()) / beta).sqrt().max(10.0)
            }
            _ => f64::INFINITY,
        }
    }

    /// `Pr{L <= x}`.
    pub fn cdf(&self, x: f64) -> Result<f64> {
        self.validate()?;
        if x <= self.support_start() {
            return Ok(0.0);
        }
        match *self {
            ScalingLaw::PowerLaw { alpha, epsilon } => Ok(1.0 - (x / epsilon).powf(1.0 + alpha)),
            ScalingLaw::Rayleigh { sigma } => Ok(1.0 - (-x * x / (2.0 * sigma * sigma)).exp()),
            ScalingLaw::Geometric { g } => Ok(1.0 - (1.0 - g).powi(x.floor() as i32)),
            ScalingLaw::Exponential { .. } | ScalingLaw::Normal { .. } => {
                let cutoff = self.integration_cutoff();
                let z0 = self.numeric_integral(0.0, 0.0, cutoff)?;
                Ok((self.numeric_integral(0.0, 0.0, x.min(cutoff))? / z0).min(1.0))
            }
        }
    }

    /// Smallest `m` with `Pr{L > m} <= eps` (continuous tail threshold).
    pub fn tail_threshold(&self, eps: f64) -> Result<f64> {
        self.validate()?;
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "tail level {eps} outside (0, 1)"
            )));
        }
        match *self {
            ScalingLaw::PowerLaw { alpha, epsilon } => Ok(epsilon * eps.powf(1.0 / (1.0 + alpha))),
            ScalingLaw::Rayleigh { sigma } => Ok(sigma * (-2.0 * eps.ln()).sqrt()),
            ScalingLaw::Geometric { g } => Ok((eps.ln() / (1.0 - g).ln()).ceil()),
            ScalingLaw::Exponential { .. } | ScalingLaw::Normal { .. } => {
                // bisection on the cdf
                let mut lo = self.support_start();
                let mut hi = self.integration_cutoff();
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if 1.0 - self.cdf(mid)? > eps {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                Ok(hi)
            }
        }
    }

    /// `M_L(e^t) = E[e^(t L)]` for `t <= 0`. Rayleigh uses the closed form
    ///
    /// ```text
    /// M_L(e^t) = 1 + sigma t e^(sigma^2 t^2 / 2) sqrt(pi/2) (erf(sigma t / sqrt 2) + 1)
    /// ```
    ///
    /// geometric uses its rational form, and the remaining families integrate
    /// numerically.
    pub fn mgf(&self, t: f64) -> Result<f64> {
        self.validate()?;
        if !t.is_finite() || t > 0.0 {
            return Err(Error::Domain(format!(
                "MGF exponent {t} must be <= 0 for heavy-tailed supports"
            )));
        }
        if t == 0.0 {
            return Ok(1.0);
        }
        match *self {
            ScalingLaw::Rayleigh { sigma } => {
                let st = sigma * t;
                Ok(1.0
                    + st * (st * st / 2.0).exp()
                        * (std::f64::consts::PI / 2.0).sqrt()
                        * (statrs::function::erf::erf(st / std::f64::consts::SQRT_2) + 1.0))
            }
            ScalingLaw::Geometric { g } => {
                let z = t.exp();
                Ok(g * z / (1.0 - (1.0 - g) * z))
            }
            ScalingLaw::PowerLaw { alpha, epsilon } => {
                let c0 = -(1.0 + alpha) * epsilon.powf(-(1.0 + alpha));
                let f = move |l: f64| c0 * l.powf(alpha) * (t * l).exp();
                // e^(t l) < 1e-18 once t l < -42
                let cutoff = (-42.0 / t).max(epsilon * 2.0);
                simpson_adaptive(&f, epsilon, cutoff, 1e-12)
            }
            ScalingLaw::Exponential { .. } | ScalingLaw::Normal { .. } => {
                let cutoff = self.integration_cutoff();
                let z0 = self.numeric_integral(0.0, 0.0, cutoff)?;
                Ok(self.numeric_integral(0.0, t, cutoff)? / z0)
            }
        }
    }

    /// Discretizes onto hop classes `1..=phi`: class `l < phi` takes the mass
    /// of `[max(start, l - 1/2), l + 1/2)`, class `phi` takes everything from
    /// `max(start, phi - 1/2)` up, and the result is renormalized (mass below
    /// the first bin edge is discarded). The geometric family is already on
    /// the lattice and is truncated with its tail folded into `phi`.
    pub fn discretize(&self, phi: usize) -> Result<HopCountPmf> {
        self.validate()?;
        if phi == 0 {
            return Err(Error::InvalidParameter("phi must be >= 1".into()));
        }
        if let ScalingLaw::Geometric { g } = *self {
            return HopCountPmf::geometric_truncated(g, phi);
        }
        let start = self.support_start();
        let mut masses = Vec::with_capacity(phi);
        for l in 1..=phi {
            let lo = (l as f64 - 0.5).max(start);
            let mass = if l < phi {
                let hi = l as f64 + 0.5;
                if hi <= lo {
                    0.0
                } else {
                    (self.cdf(hi)? - self.cdf(lo)?).max(0.0)
                }
            } else {
                (1.0 - self.cdf(lo)?).max(0.0)
            };
            masses.push(mass);
        }
        let sum: f64 = masses.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvalidDistribution(
                "discretization captured no mass; raise phi".into(),
            ));
        }
        for m in &mut masses {
            *m /= sum;
        }
        HopCountPmf::from_probs(masses)
    }
}

/// Power-law exponent that makes a transmission-range disk of radius `r_t`
/// cover a `coverage` fraction of destinations:
///
/// ```text
/// coverage = F(r_t) = 1 - (r_t / epsilon)^(1 + alpha)
/// alpha    = ln(1 - coverage) / ln(r_t / epsilon) - 1
/// ```
pub fn alpha_for_region(epsilon: f64, r_t: f64, coverage: f64) -> Result<f64> {
    if !(epsilon > 0.0) || !(r_t > epsilon) {
        return Err(Error::InvalidParameter(format!(
            "need 0 < epsilon < r_t, got epsilon={epsilon}, r_t={r_t}"
        )));
    }
    if !(coverage > 0.0 && coverage < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "coverage {coverage} outside (0, 1)"
        )));
    }
    Ok((1.0 - coverage).ln() / (r_t / epsilon).ln() - 1.0)
}

// --------------------------------------------------------------------------
// Scalability
// --------------------------------------------------------------------------

/// Outcome of the stabilized-partial-sum scalability test.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ScalabilityVerdict {
    pub scalable: bool,
    /// Truncation level that witnessed a positive stabilized limit.
    pub witness_m: Option<usize>,
    /// Stabilized `S(M, phi_last)` at the witness (or at `m_max` when the
    /// verdict is negative).
    pub limit_estimate: f64,
    /// `(phi, S(M, phi))` pairs along the schedule for the reported `M`.
    pub evidence: Vec<(usize, f64)>,
}

/// Decides whether an allocation family `phi -> lambda_phi(.)` can sustain
/// positive per-node fresh throughput as the network grows.
///
/// For each truncation level `M <= m_max` the partial sums
/// `S(M, phi) = sum_{l<=M} l lambda_phi(l)` are evaluated along `schedule`
/// (an increasing list of `phi` values, at least two). `M` witnesses
/// scalability when the last two sums agree within `tol/10` (stabilized) and
/// the stabilized value exceeds `tol`. Families whose mass slides to ever
/// longer journeys never stabilize above `tol` and are classified
/// non-scalable.
pub fn classify_scalability<F>(
    family: F,
    schedule: &[usize],
    m_max: usize,
    tol: f64,
) -> Result<ScalabilityVerdict>
where
    F: Fn(usize) -> RateAllocation,
{
    if schedule.len() < 2 || schedule.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter(
            "schedule must list at least two increasing phi values".into(),
        ));
    }
    if m_max == 0 {
        return Err(Error::InvalidParameter("m_max must be >= 1".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tolerance {tol} must be positive"
        )));
    }
    let allocs: Vec<RateAllocation> = schedule.iter().map(|&phi| family(phi)).collect();
    let partial = |alloc: &RateAllocation, m: usize| -> f64 {
        alloc
            .rates()
            .iter()
            .take(m)
            .enumerate()
            .map(|(i, r)| (i + 1) as f64 * r)
            .sum()
    };
    let evidence_for = |m: usize| -> Vec<(usize, f64)> {
        schedule
            .iter()
            .zip(&allocs)
            .map(|(&phi, a)| (phi, partial(a, m)))
            .collect()
    };
    let last = allocs.len() - 1;
    for m in 1..=m_max {
        let s_last = partial(&allocs[last], m);
        let s_prev = partial(&allocs[last - 1], m);
        if (s_last - s_prev).abs() <= tol / 10.0 && s_last > tol {
            return Ok(ScalabilityVerdict {
                scalable: true,
                witness_m: Some(m),
                limit_estimate: s_last,
                evidence: evidence_for(m),
            });
        }
    }
    Ok(ScalabilityVerdict {
        scalable: false,
        witness_m: None,
        limit_estimate: partial(&allocs[last], m_max),
        evidence: evidence_for(m_max),
    })
}

// --------------------------------------------------------------------------
// quadrature
// --------------------------------------------------------------------------

/// Adaptive Simpson integration with absolute tolerance `tol`.
fn simpson_adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    fn simpson(a: f64, fa: f64, b: f64, fb: f64, fm: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> Result<f64> {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(a, fa, m, fm, flm);
        let right = simpson(m, fm, b, fb, frm);
        let delta = left + right - whole;
        if delta.abs() <= 15.0 * tol || (b - a) < 1e-14 {
            return Ok(left + right + delta / 15.0);
        }
        if depth == 0 {
            return Err(Error::PrecisionLoss(
                "quadrature failed to converge at requested tolerance".into(),
            ));
        }
        Ok(recurse(f, a, fa, m, fm, flm, left, tol / 2.0, depth - 1)?
            + recurse(f, m, fm, b, fb, frm, right, tol / 2.0, depth - 1)?)
    }
    if !(b > a) {
        return Ok(0.0);
    }
    // split at a few interior points so narrow peaks are not missed
    let splits = 16;
    let mut total = 0.0;
    for i in 0..splits {
        let x0 = a + (b - a) * i as f64 / splits as f64;
        let x1 = a + (b - a) * (i + 1) as f64 / splits as f64;
        let f0 = f(x0);
        let f1 = f(x1);
        let fm = f(0.5 * (x0 + x1));
        let whole = simpson(x0, f0, x1, f1, fm);
        total += recurse(f, x0, f0, x1, f1, fm, whole, tol / splits as f64, 48)?;
    }
    Ok(total)
}

// --------------------------------------------------------------------------
// tests
// --------------------------------------------------------------------------
