//! End-to-end transport delay as a Markov renewal process.
//!
//! A packet crossing `L` hops relays through a chain of queues; its
//! remaining-hop process is the embedded Markov chain whose state drops by
//! one per relay and resamples from the hop-count law on delivery:
//!
//! ```text
//! P = | f(1) f(2) ... f(phi) |        pi_l = Pr{L >= l} / E[L]
//!     |  1    0   ...   0    |
//!     |  0    1   ...   0    |
//!     |  ...                 |
//! ```
//!
//! Each visit holds for one per-hop delay `T`, so the transport delay
//! `D = T_1 + ... + T_L` composes the two transforms and factors its
//! moments:
//!
//! ```text
//! M_D(z)  = M_L(M_T(z))
//! E[D]    = E[L] E[T]
//! E[D^2]  = E[L^2] E[T]^2 + E[L] var[T]
//! E[Dhat] = (E[D^2] + E[D]) / (2 E[D])     (delay seen mid-flight)
//! ```
//!
//! The same composition yields the flow identities: fresh packets enter at
//! rate `lambda` per node, each consuming `E[L]` transmissions, so the
//! per-node throughput is `theta = lambda E[L]` and Little's law counts the
//! in-flight population two equivalent ways, `n lambda E[D] = n theta E[T]`.
//!
//! Transform results are cross-checked by a brute-force oracle
//! ([`transport_pmf_oracle`]) that mixes explicit l-fold convolutions of the
//! hop-delay pmf, and [`transport_tail`] evaluates the exact
//! `Pr{D > L x}` the large-deviation bounds are sandwiching.

use crate::aloha::{AlohaHopModel, DelayPmf};
use crate::distance::HopCountPmf;
use crate::error::{Error, Result};

// --------------------------------------------------------------------------
// embedded chain
// --------------------------------------------------------------------------

/// Remaining-hop transition matrix: row 1 resamples from the hop-count law,
/// every other row shifts down by one. Rows are stochastic.
#[must_use]
pub fn transition_matrix(pmf: &HopCountPmf) -> Vec<Vec<f64>> {
    let phi = pmf.phi();
    let mut rows = Vec::with_capacity(phi);
    rows.push(pmf.probs().to_vec());
    for l in 2..=phi {
        let mut row = vec![0.0; phi];
        row[l - 2] = 1.0;
        rows.push(row);
    }
    rows
}

/// Limiting probabilities of the embedded chain, `pi_l = Pr{L >= l}/E[L]`.
/// Suffix sums keep the result exactly normalized.
#[must_use]
pub fn embedded_limits(pmf: &HopCountPmf) -> Vec<f64> {
    let mean = pmf.mean();
    let mut suffix = 0.0;
    let mut pi = vec![0.0; pmf.phi()];
    for (slot, &p) in pi.iter_mut().zip(pmf.probs()).rev() {
        suffix += p;
        *slot = suffix / mean;
    }
    pi
}

// --------------------------------------------------------------------------
// transport model
// --------------------------------------------------------------------------

/// Transport-delay moments.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct TransportStats {
    pub mean: f64,
    pub second_moment: f64,
    pub variance: f64,
    /// Mean remaining delay of an in-flight packet.
    pub residual_mean: f64,
}

/// Hop-count law composed with a per-hop delay law.
#[derive(Debug, Clone)]
pub struct TransportModel {
    pmf: HopCountPmf,
    hop: AlohaHopModel,
}

impl TransportModel {
    #[must_use]
    pub fn new(pmf: HopCountPmf, hop: AlohaHopModel) -> Self {
        Self { pmf, hop }
    }

    #[must_use]
    pub fn pmf(&self) -> &HopCountPmf {
        &self.pmf
    }

    #[must_use]
    pub fn hop(&self) -> &AlohaHopModel {
        &self.hop
    }

    #[must_use]
    pub fn stats(&self) -> TransportStats {
        let l = self.pmf.stats();
        let t = self.hop.hop_stats();
        let mean = l.mean * t.mean;
        let second = l.second_moment * t.mean * t.mean + l.mean * t.variance;
        TransportStats {
            mean,
            second_moment: second,
            variance: second - mean * mean,
            residual_mean: (second + mean) / (2.0 * mean),
        }
    }

    /// `M_D(z) = M_L(M_T(z))`; inherits the hop transform's pole at `1/c`.
    pub fn delay_mgf(&self, z: f64) -> Result<f64> {
        Ok(self.pmf.mgf(self.hop.hop_mgf(z)?))
    }

    /// Transform of the remaining delay seen by an observer landing at a
    /// uniform instant of a transport interval,
    ///
    /// ```text
    /// M_Dhat(z) = z (1 - M_D(z)) / ((1 - z) E[D])
    /// ```
    ///
    /// The removable singularity at `z = 1` is evaluated by series: within
    /// `1e-9` of 1 a quadratic expansion replaces the ratio, whose
    /// subtraction would cancel.
    pub fn residual_delay_mgf(&self, z: f64) -> Result<f64> {
        if !(z >= 0.0) || !z.is_finite() {
            return Err(Error::Domain(format!("MGF argument {z} must be >= 0")));
        }
        let stats = self.stats();
        if (z - 1.0).abs() <= 1e-9 {
            let factorial2 = stats.second_moment - stats.mean;
            return Ok(z * (1.0 + (z - 1.0) * factorial2 / (2.0 * stats.mean)));
        }
        let md = self.delay_mgf(z)?;
        Ok(z * (1.0 - md) / ((1.0 - z) * stats.mean))
    }
}

// --------------------------------------------------------------------------
// flow relations
// --------------------------------------------------------------------------

/// Throughput/delay/population identities for an `n`-node network in
/// equilibrium.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct FlowRelations {
    /// Fresh-packet rate per node, `lambda = theta / E[L]`.
    pub lambda: f64,
    pub theta: f64,
    pub mean_hops: f64,
    pub mean_hop_delay: f64,
    /// `E[D] = theta E[T] / lambda`.
    pub mean_transport_delay: f64,
    /// `n lambda E[D]`.
    pub population_via_delay: f64,
    /// `n theta E[T]`; equals the other count up to rounding.
    pub population_via_hops: f64,
}

/// Little's-law bookkeeping: the two population counts must agree, and
/// `lambda E[L] = theta` by flow conservation.
pub fn flow_relations(
    theta: f64,
    pmf: &HopCountPmf,
    hop: &AlohaHopModel,
    n: usize,
) -> Result<FlowRelations> {
    if (theta - hop.theta()).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "flow throughput {theta} disagrees with the hop model's {}",
            hop.theta()
        )));
    }
    let mean_hops = pmf.mean();
    let mean_hop_delay = hop.hop_stats().mean;
    let lambda = theta / mean_hops;
    let mean_transport_delay = theta * mean_hop_delay / lambda;
    Ok(FlowRelations {
        lambda,
        theta,
        mean_hops,
        mean_hop_delay,
        mean_transport_delay,
        population_via_delay: n as f64 * lambda * mean_transport_delay,
        population_via_hops: n as f64 * theta * mean_hop_delay,
    })
}

// --------------------------------------------------------------------------
// per-packet dispersion
// --------------------------------------------------------------------------

/// Moments of the per-packet average hop delay `Y = D / L`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct DispersionStats {
    /// `E[Y] = E[T]`.
    pub mean: f64,
    /// `var[Y] = var[T] sum_l f(l)/l`; vanishing variance signals the
    /// regime where the per-hop average concentrates at `E[T]`.
    pub variance: f64,
}

#[must_use]
pub fn dispersion(pmf: &HopCountPmf, hop: &AlohaHopModel) -> DispersionStats {
    let t = hop.hop_stats();
    let inv_mean: f64 = pmf
        .probs()
        .iter()
        .enumerate()
        .map(|(i, &p)| p / (i + 1) as f64)
        .sum();
    DispersionStats {
        mean: t.mean,
        variance: t.variance * inv_mean,
    }
}

// --------------------------------------------------------------------------
// convolution oracle
// --------------------------------------------------------------------------

/// `out = a (*) taps`, truncated to `cap` entries; returns the clipped mass.
///
/// Output-tiled dot products keep the (short) tap vector in cache across the
/// whole pass instead of streaming the output array once per tap.
fn convolve_capped(a: &[f64], taps: &[f64], cap: usize) -> (Vec<f64>, f64) {
    let full = a.len() + taps.len() - 1;
    let n = full.min(cap);
    let tlen = taps.len();
    // taps reversed so each output is a forward dot of two contiguous slices
    let mut trev: Vec<f64> = taps.to_vec();
    trev.reverse();
    let mut out = vec![0.0; n];
    for (k, slot) in out.iter_mut().enumerate() {
        // out[k] = sum_j a[k - j] taps[j] over the overlapping index range
        let a_lo = (k + 1).saturating_sub(tlen);
        let a_hi = (k + 1).min(a.len());
        let t_lo = tlen - 1 + a_lo - k;
        let win = &a[a_lo..a_hi];
        let tap = &trev[t_lo..t_lo + win.len()];
        let mut acc = [0.0f64; 4];
        let mut chunks = win.chunks_exact(4).zip(tap.chunks_exact(4));
        for (w, t) in &mut chunks {
            acc[0] += w[0] * t[0];
            acc[1] += w[1] * t[1];
            acc[2] += w[2] * t[2];
            acc[3] += w[3] * t[3];
        }
        let mut dot = (acc[0] + acc[1]) + (acc[2] + acc[3]);
        let rem = win.len() - win.len() % 4;
        for (w, t) in win[rem..].iter().zip(&tap[rem..]) {
            dot += w * t;
        }
        *slot = dot;
    }
    // mass the cap clipped off: total product mass minus what was kept
    let clipped = if n < full {
        let kept: f64 = out.iter().sum();
        let total = a.iter().sum::<f64>() * taps.iter().sum::<f64>();
        (total - kept).max(0.0)
    } else {
        0.0
    };
    (out, clipped)
}

/// Brute-force transport-delay pmf: the hop-count mixture of l-fold
/// convolutions of `hop_pmf`.
///
/// `cap` bounds the represented support (largest delay value); `None` keeps
/// the full support `phi * hop_pmf.max_value()`. Mass beyond the cap and
/// mass lost to the hop-law truncation both land in the output's
/// `residual_tail`. More than `1e-6` of unresolved mass is refused rather
/// than returned, since the oracle's whole purpose is exactness.
pub fn transport_pmf_oracle(
    pmf: &HopCountPmf,
    hop_pmf: &DelayPmf,
    cap: Option<usize>,
) -> Result<DelayPmf> {
    if hop_pmf.residual_tail > 1e-9 {
        return Err(Error::InvalidDistribution(format!(
            "hop pmf residual {} too coarse for the convolution oracle",
            hop_pmf.residual_tail
        )));
    }
    let phi = pmf.phi();
    let h_off = hop_pmf.offset;
    let h_top = hop_pmf.max_value();
    let cap = cap.unwrap_or(phi * h_top);
    if cap < phi * h_off {
        return Err(Error::InvalidParameter(format!(
            "support cap {cap} below the minimum transport delay {}",
            phi * h_off
        )));
    }
    let out_off = h_off;
    let mut mix = vec![0.0; cap - out_off + 1];
    let mut unresolved = 0.0;

    // conv holds the pmf of D_l = T_1 + ... + T_l at offset l * h_off
    let mut conv = hop_pmf.masses.clone();
    let mut lost = hop_pmf.residual_tail;
    let first_cap = cap + 1 - h_off;
    if conv.len() > first_cap {
        lost += conv[first_cap..].iter().sum::<f64>();
        conv.truncate(first_cap);
    }
    for l in 1..=phi {
        let f = pmf.prob(l);
        if f > 0.0 {
            for (i, &m) in conv.iter().enumerate() {
                mix[l * h_off + i - out_off] += f * m;
            }
            unresolved += f * lost;
        }
        if l == phi {
            break;
        }
        let next_cap = cap + 1 - (l + 1) * h_off;
        let (next, clipped) = convolve_capped(&conv, &hop_pmf.masses, next_cap);
        let mass_before: f64 = conv.iter().sum();
        lost += mass_before * hop_pmf.residual_tail + clipped;
        conv = next;
    }
    if unresolved > 1e-6 {
        return Err(Error::PrecisionLoss(format!(
            "convolution oracle left {unresolved:.3e} of mass unresolved; \
             raise the support cap or refine the hop pmf"
        )));
    }
    DelayPmf::new(out_off, mix, unresolved)
}

/// Exact `Pr{D > L x}`: the per-class probability that `l` hop delays
/// exceed the budget `l x`, mixed over the hop-count law. Non-integer
/// thresholds use the strict convention `Pr{D >= floor(l x) + 1}`.
///
/// Mass beyond the working cap or lost to the hop-law truncation is counted
/// as exceeding the budget, so keep `hop_pmf`'s residual small relative to
/// the tails of interest.
pub fn transport_tail(pmf: &HopCountPmf, hop_pmf: &DelayPmf, x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("budget {x} must be positive")));
    }
    let phi = pmf.phi();
    let h_off = hop_pmf.offset;
    // beyond the largest threshold every class counts the mass as tail
    let cap = (phi as f64 * x).floor() as usize + 2;
    let mut conv = hop_pmf.masses.clone();
    let mut beyond = hop_pmf.residual_tail;
    let mut total = 0.0;
    for l in 1..=phi {
        let offset = l * h_off;
        if conv.len() + offset > cap {
            let keep = cap.saturating_sub(offset);
            beyond += conv[keep..].iter().sum::<f64>();
            conv.truncate(keep);
        }
        let f = pmf.prob(l);
        if f > 0.0 {
            let thresh = (l as f64 * x).floor() as usize; // tail = Pr{D_l >= thresh+1}
            let from = (thresh + 1).max(offset) - offset;
            let tail_l = if from < conv.len() {
                conv[from..].iter().sum::<f64>() + beyond
            } else {
                beyond
            };
            total += f * tail_l;
        }
        if l == phi {
            break;
        }
        let (next, clipped) = convolve_capped(&conv, &hop_pmf.masses, usize::MAX);
        let mass_before: f64 = conv.iter().sum();
        beyond += mass_before * hop_pmf.residual_tail + clipped;
        conv = next;
    }
    Ok(total)
}

// --------------------------------------------------------------------------
// tests
// --------------------------------------------------------------------------
