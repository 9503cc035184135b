//! Per-hop service and delay in a slotted random-access relay queue.
//!
//! Each relay runs one FIFO queue. A packet that just reached the head of the
//! line transmits immediately; after a failed attempt it retries in each slot
//! with probability `q`. Every attempt succeeds independently with the
//! network-wide success probability `p`, so the service time (slots from
//! first attempt to success) is
//!
//! ```text
//! X = 1                  w.p. p
//! X = 1 + Geom(pq)       w.p. 1 - p        E[X] = 1 + (1-p)/(pq)
//! M_X(z) = p z (1 - (1-q) z) / (1 - (1-pq) z)
//! ```
//!
//! With per-node throughput `theta` (fresh plus relayed, a Bernoulli(theta)
//! departure process in equilibrium), the queue behaves as a discrete-time
//! single-server queue and the stationary per-hop delay `T` (queueing plus
//! service) has the rational transform
//!
//! ```text
//! M_T(z) = p0 p z (1 - (1-q) z) / ((1-theta) - b z)
//! b      = (1 - pq) - p (1-q) theta
//! p0     = 1 - theta E[X]          (requires theta E[X] < 1)
//! ```
//!
//! which diagonalizes into a two-point spectral mixture, the form everything
//! tail-related relies on:
//!
//! ```text
//! M_T(z)    = beta1 z + beta2 (1-c) z / (1 - c z),     c = b / (1-theta)
//! Pr{T = 1} = beta1 + beta2 (1-c)
//! Pr{T = k} = beta2 (1-c) c^(k-1)                      (k >= 2)
//! Pr{T > x} = beta2 c^floor(x)                         (x >= 1)
//! ```
//!
//! `p` itself comes out of the saturation fixed point of the slotted-access
//! interference balance: with `n_int = pi R^2 sigma` mean interferers inside
//! the receive radius and each interferer loading the channel at rate
//! `theta / p`, the success probability solves
//!
//! ```text
//! p = exp(-theta n_int / p)   <=>   p ln p = -theta n_int
//! ```
//!
//! The larger of its two roots is the stable operating point; it exists iff
//! `theta n_int <= 1/e`, which is exactly the access-capacity ceiling
//! `theta <= e^-1 / n_int` reported by [`access_capacity`].
//!
//! The fixed point does not involve `q`, but the queueing layer does: callers
//! must pick `q` inside the stable region of the retry protocol (small enough
//! that backlogged retries do not overload the channel). The solver exposes
//! its final residual so that audit trails can record how sharp the root is.
//!
//! Edge case kept explicit throughout: `p = 1` collapses the service to one
//! slot and with Bernoulli input the whole delay degenerates to `T = 1`
//! (every arrival meets an empty queue). The spectral fields are bypassed via
//! the `deterministic` flag rather than dividing by `c - a = 0`.

use crate::error::{Error, Result};

/// Fixed-point iteration budget for the success probability.
const FIXED_POINT_MAX_ITER: u32 = 2_000_000;

/// Residual the fixed-point root must meet.
const FIXED_POINT_RESIDUAL: f64 = 1e-12;

/// Default residual tail when truncating the per-hop delay pmf.
const DEFAULT_PMF_TAIL: f64 = 1e-10;

// --------------------------------------------------------------------------
// contention geometry
// --------------------------------------------------------------------------

/// Spatial contention parameters: node density and receive radius.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ContentionGeometry {
    /// Nodes per unit area.
    pub density: f64,
    /// Interference radius around a receiver.
    pub radius: f64,
}

impl ContentionGeometry {
    pub fn new(density: f64, radius: f64) -> Result<Self> {
        if !(density > 0.0) || !density.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "density {density} must be positive"
            )));
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "radius {radius} must be positive"
            )));
        }
        Ok(Self { density, radius })
    }

    /// `n` nodes spread over `area`.
    pub fn from_nodes(n: usize, area: f64, radius: f64) -> Result<Self> {
        if n == 0 || !(area > 0.0) {
            return Err(Error::InvalidParameter(
                "need a positive node count and area".into(),
            ));
        }
        Self::new(n as f64 / area, radius)
    }

    /// Mean number of nodes inside the receive disk, `n_int = pi R^2 sigma`.
    #[must_use]
    pub fn mean_interferers(&self) -> f64 {
        std::f64::consts::PI * self.radius * self.radius * self.density
    }
}

/// Largest sustainable per-node throughput, `theta_max = e^-1 / n_int`.
#[must_use]
pub fn access_capacity(mean_interferers: f64) -> f64 {
    (-1.0f64).exp() / mean_interferers
}

/// Flow-conservation check for an offered fresh load: a per-node fresh rate
/// `lambda` with mean hop count `E[L]` consumes throughput
/// `theta = lambda * E[L]`, which must stay within the access capacity.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct FlowCheck {
    pub offered_throughput: f64,
    pub capacity: f64,
    pub feasible: bool,
}

#[must_use]
pub fn check_flow(lambda: f64, mean_hops: f64, geom: &ContentionGeometry) -> FlowCheck {
    let offered = lambda * mean_hops;
    let capacity = access_capacity(geom.mean_interferers());
    FlowCheck {
        offered_throughput: offered,
        capacity,
        feasible: offered <= capacity,
    }
}

// --------------------------------------------------------------------------
// success probability
// --------------------------------------------------------------------------

/// Root of the interference fixed point together with solver diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SuccessProbability {
    pub p: f64,
    /// `|p - exp(-theta n_int / p)|` at the returned root.
    pub residual: f64,
    pub iterations: u32,
}

/// Solves `p = exp(-theta * n_int / p)` for the stable (largest) root by
/// fixed-point iteration from `p = 1`.
///
/// The iterate decreases monotonically to the largest root whenever
/// `theta * n_int <= 1/e`; beyond that no root exists and the channel cannot
/// carry the load ([`Error::NoStableRoot`]). `theta = 0` gives `p = 1`.
pub fn solve_success_probability(theta: f64, mean_interferers: f64) -> Result<SuccessProbability> {
    if !(theta >= 0.0) || !theta.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "theta {theta} must be non-negative"
        )));
    }
    if !(mean_interferers >= 0.0) || !mean_interferers.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "mean interferer count {mean_interferers} must be non-negative"
        )));
    }
    let load = theta * mean_interferers;
    if load == 0.0 {
        return Ok(SuccessProbability {
            p: 1.0,
            residual: 0.0,
            iterations: 0,
        });
    }
    if load > (-1.0f64).exp() + 1e-15 {
        return Err(Error::NoStableRoot { load });
    }
    let mut p = 1.0f64;
    let mut iterations = 0;
    while iterations < FIXED_POINT_MAX_ITER {
        let next = (-load / p).exp();
        iterations += 1;
        if (next - p).abs() <= 1e-16 {
            p = next;
            break;
        }
        p = next;
    }
    let residual = (p - (-load / p).exp()).abs();
    if residual > FIXED_POINT_RESIDUAL {
        return Err(Error::NonConvergence(format!(
            "success-probability fixed point stalled at residual {residual:.3e} \
             after {iterations} iterations (load {load:.6})"
        )));
    }
    Ok(SuccessProbability {
        p,
        residual,
        iterations,
    })
}

// --------------------------------------------------------------------------
// delay pmf container
// --------------------------------------------------------------------------

/// Truncated pmf of an integer delay, supported on
/// `offset ..= offset + masses.len() - 1`, with the mass beyond the truncation
/// point tracked in `residual_tail` (always upper-tail mass).
#[derive(Debug, Clone, PartialEq)]
pub struct DelayPmf {
    pub offset: usize,
    pub masses: Vec<f64>,
    pub residual_tail: f64,
}

impl DelayPmf {
    pub fn new(offset: usize, masses: Vec<f64>, residual_tail: f64) -> Result<Self> {
        if masses.is_empty() {
            return Err(Error::InvalidDistribution("empty delay pmf".into()));
        }
        if masses.iter().any(|m| !m.is_finite() || *m < 0.0) || residual_tail < 0.0 {
            return Err(Error::InvalidDistribution(
                "delay pmf has negative or non-finite mass".into(),
            ));
        }
        let total: f64 = masses.iter().sum::<f64>() + residual_tail;
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidDistribution(format!(
                "delay pmf mass {total} is not 1"
            )));
        }
        Ok(Self {
            offset,
            masses,
            residual_tail,
        })
    }

    /// `Pr{value = k}`.
    #[must_use]
    pub fn mass(&self, k: usize) -> f64 {
        if k < self.offset || k >= self.offset + self.masses.len() {
            0.0
        } else {
            self.masses[k - self.offset]
        }
    }

    /// Largest represented value.
    #[must_use]
    pub fn max_value(&self) -> usize {
        self.offset + self.masses.len() - 1
    }

    /// Mean over the represented support (the residual tail is attributed to
    /// the first truncated point, an under-estimate by construction).
    #[must_use]
    pub fn mean(&self) -> f64 {
        let body: f64 = self
            .masses
            .iter()
            .enumerate()
            .map(|(i, m)| (self.offset + i) as f64 * m)
            .sum();
        body + self.residual_tail * (self.max_value() + 1) as f64
    }

    /// `Pr{value > x}` for real `x`, counting the residual tail.
    #[must_use]
    pub fn tail(&self, x: f64) -> f64 {
        if x < self.offset as f64 {
            return self.masses.iter().sum::<f64>() + self.residual_tail;
        }
        let k = x.floor() as usize; // Pr{value > x} = Pr{value >= k+1}
        let from = (k + 1).max(self.offset) - self.offset;
        self.masses.iter().skip(from).sum::<f64>() + self.residual_tail
    }
}

// --------------------------------------------------------------------------
// hop model
// --------------------------------------------------------------------------

/// Moments of the service time `X`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ServiceStats {
    pub mean: f64,
    pub second_factorial: f64,
    pub variance: f64,
}

/// Moments of the per-hop delay `T`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct HopStats {
    pub mean: f64,
    pub second_moment: f64,
    pub variance: f64,
    /// `Pr{T = 1}`.
    pub mass_at_one: f64,
}

/// Stationary per-hop queueing model for given `(p, q, theta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlohaHopModel {
    p: f64,
    q: f64,
    theta: f64,
    // cached derived constants
    ex: f64,
    exx1: f64,
    p0: f64,
    a: f64,
    b: f64,
    c: f64,
    beta1: f64,
    beta2: f64,
    deterministic: bool,
}

impl AlohaHopModel {
    /// Builds the model; fails when the queue would be unstable
    /// (`theta * E[X] >= 1`).
    pub fn new(p: f64, q: f64, theta: f64) -> Result<Self> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "success probability p={p} outside (0, 1]"
            )));
        }
        if !(q > 0.0 && q <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "retry probability q={q} outside (0, 1]"
            )));
        }
        if !(0.0..1.0).contains(&theta) {
            return Err(Error::InvalidParameter(format!(
                "per-node throughput theta={theta} outside [0, 1)"
            )));
        }
        let ex = 1.0 + (1.0 - p) / (p * q);
        let utilization = theta * ex;
        if utilization >= 1.0 {
            return Err(Error::UnstableQueue { utilization });
        }
        let exx1 = 2.0 * (1.0 - p) / (p * q * p * q);
        let p0 = 1.0 - utilization;
        let a = 1.0 - q;
        let b = (1.0 - p * q) - p * (1.0 - q) * theta;
        let deterministic = p == 1.0;
        let (c, beta1, beta2) = if deterministic {
            (a, 1.0, 0.0)
        } else {
            let c = b / (1.0 - theta);
            let beta1 = p0 * p * (1.0 - q) / (c * (1.0 - theta));
            let beta2 = p0 * p * (c + q - 1.0) / (c * (1.0 - c) * (1.0 - theta));
            (c, beta1, beta2)
        };
        Ok(Self {
            p,
            q,
            theta,
            ex,
            exx1,
            p0,
            a,
            b,
            c,
            beta1,
            beta2,
            deterministic,
        })
    }

    /// Solves the interference fixed point and builds the model from its
    /// stable root.
    pub fn from_contention(theta: f64, mean_interferers: f64, q: f64) -> Result<Self> {
        let root = solve_success_probability(theta, mean_interferers)?;
        Self::new(root.p, q, theta)
    }

    #[must_use]
    pub fn p(&self) -> f64 {
        self.p
    }

    #[must_use]
    pub fn q(&self) -> f64 {
        self.q
    }

    #[must_use]
    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Idle probability `p0 = 1 - theta E[X]`.
    #[must_use]
    pub fn p0(&self) -> f64 {
        self.p0
    }

    /// Queue utilization `theta E[X]`.
    #[must_use]
    pub fn utilization(&self) -> f64 {
        self.theta * self.ex
    }

    /// Geometric tail ratio `c = b / (1 - theta)`.
    #[must_use]
    pub fn c(&self) -> f64 {
        self.c
    }

    /// `a = 1 - q`, the retry-idle ratio appearing in the service transform.
    #[must_use]
    pub fn a(&self) -> f64 {
        self.a
    }

    /// Spectral weight on the one-slot atom.
    #[must_use]
    pub fn beta1(&self) -> f64 {
        self.beta1
    }

    /// Spectral weight on the geometric component.
    #[must_use]
    pub fn beta2(&self) -> f64 {
        self.beta2
    }

    /// True when `p = 1` collapses the delay to `T = 1`.
    #[must_use]
    pub fn is_deterministic(&self) -> bool {
        self.deterministic
    }

    /// Service transform `M_X(z)`; pole at `z = 1/(1-pq)`.
    pub fn service_mgf(&self, z: f64) -> Result<f64> {
        if !(z >= 0.0) || !z.is_finite() {
            return Err(Error::Domain(format!("MGF argument {z} must be >= 0")));
        }
        let denom_root = 1.0 - self.p * self.q;
        if denom_root > 0.0 && z >= 1.0 / denom_root {
            return Err(Error::Domain(format!(
                "service MGF argument {z} at or beyond the pole {}",
                1.0 / denom_root
            )));
        }
        Ok(self.p * z * (1.0 - (1.0 - self.q) * z) / (1.0 - denom_root * z))
    }

    /// Service moments via exact differentiation of the rational transform.
    #[must_use]
    pub fn service_stats(&self) -> ServiceStats {
        ServiceStats {
            mean: self.ex,
            second_factorial: self.exx1,
            variance: self.exx1 + self.ex - self.ex * self.ex,
        }
    }

    /// Per-hop delay transform `M_T(z)`; pole at `z = 1/c`.
    pub fn hop_mgf(&self, z: f64) -> Result<f64> {
        if !(z >= 0.0) || !z.is_finite() {
            return Err(Error::Domain(format!("MGF argument {z} must be >= 0")));
        }
        if self.deterministic {
            return Ok(z);
        }
        if z >= 1.0 / self.c {
            return Err(Error::Domain(format!(
                "hop MGF argument {z} at or beyond the pole {}",
                1.0 / self.c
            )));
        }
        Ok(self.p0 * self.p * z * (1.0 - self.a * z) / ((1.0 - self.theta) - self.b * z))
    }

    /// Per-hop delay moments from the quotient rule applied to the rational
    /// transform `N(z)/D(z)` with `N = p0 p (z - a z^2)`, `D = (1-theta) - b z`.
    #[must_use]
    pub fn hop_stats(&self) -> HopStats {
        if self.deterministic {
            return HopStats {
                mean: 1.0,
                second_moment: 1.0,
                variance: 0.0,
                mass_at_one: 1.0,
            };
        }
        let k = self.p0 * self.p;
        let n1 = k * (1.0 - self.a); // N(1)
        let d1 = (1.0 - self.theta) - self.b; // D(1)
        let np = k * (1.0 - 2.0 * self.a); // N'(1)
        let npp = -2.0 * k * self.a; // N''
        let dp = -self.b; // D'
        let mean = (np * d1 - n1 * dp) / (d1 * d1);
        let second_factorial =
            (npp * d1 * d1 - 2.0 * np * dp * d1 + 2.0 * n1 * dp * dp) / (d1 * d1 * d1);
        let second = second_factorial + mean;
        HopStats {
            mean,
            second_moment: second,
            variance: second - mean * mean,
            mass_at_one: self.beta1 + self.beta2 * (1.0 - self.c),
        }
    }

    /// Exact upper tail `Pr{T > x} = beta2 c^floor(x)` for `x >= 1`;
    /// 1 below the support.
    #[must_use]
    pub fn hop_tail(&self, x: f64) -> f64 {
        if x < 1.0 {
            return 1.0;
        }
        if self.deterministic {
            return 0.0;
        }
        self.beta2 * self.c.powi(x.floor() as i32)
    }

    /// Truncated per-hop delay pmf. `k_max` defaults to the smallest point
    /// with residual tail below `1e-10`.
    #[must_use]
    pub fn hop_pmf(&self, k_max: Option<usize>) -> DelayPmf {
        self.hop_pmf_with_tail(k_max, DEFAULT_PMF_TAIL)
    }

    /// Truncated per-hop delay pmf with an explicit tail target.
    #[must_use]
    pub fn hop_pmf_with_tail(&self, k_max: Option<usize>, tail: f64) -> DelayPmf {
        if self.deterministic {
            return DelayPmf {
                offset: 1,
                masses: vec![1.0],
                residual_tail: 0.0,
            };
        }
        let k_max = k_max.unwrap_or_else(|| {
            // smallest k with beta2 c^k <= tail
            let k = ((tail / self.beta2).ln() / self.c.ln()).ceil();
            k.max(1.0) as usize
        });
        let mut masses = Vec::with_capacity(k_max);
        masses.push(self.beta1 + self.beta2 * (1.0 - self.c));
        let mut geo = self.beta2 * (1.0 - self.c) * self.c; // Pr{T = 2}
        for _ in 2..=k_max {
            masses.push(geo);
            geo *= self.c;
        }
        let residual = self.beta2 * self.c.powi(k_max as i32);
        DelayPmf {
            offset: 1,
            masses,
            residual_tail: residual,
        }
    }
}

/// Delay transform of a generic discrete-time single-server queue fed by
/// Bernoulli(theta) arrivals with service transform `M_X`:
///
/// ```text
/// M_T(z) = (1 - theta E[X]) (z - 1) M_X(z) / ((z - 1) + theta (1 - M_X(z)))
/// ```
///
/// Independent route to the same object as [`AlohaHopModel::hop_mgf`]; used
/// to cross-check the specialized rational form and available for arbitrary
/// service laws. `z = 1` is a removable singularity, returned exactly as 1;
/// arguments within `1e-9` of it are rejected rather than evaluated in the
/// cancellation zone.
pub fn queue_delay_mgf<F>(theta: f64, mean_service: f64, service_mgf: F, z: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if theta * mean_service >= 1.0 {
        return Err(Error::UnstableQueue {
            utilization: theta * mean_service,
        });
    }
    if z == 1.0 {
        return Ok(1.0);
    }
    if (z - 1.0).abs() < 1e-9 {
        return Err(Error::Domain(
            "argument too close to the removable singularity at z = 1".into(),
        ));
    }
    let mx = service_mgf(z);
    let p0 = 1.0 - theta * mean_service;
    Ok(p0 * (z - 1.0) * mx / ((z - 1.0) + theta * (1.0 - mx)))
}

// --------------------------------------------------------------------------
// tests
// --------------------------------------------------------------------------
