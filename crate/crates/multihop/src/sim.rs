//! Slot-synchronous Monte Carlo simulation of multihop packet transport.
//!
//! Two geometries share one packet engine:
//!
//! * mean field: `n` independent FIFO queues; a head-of-line packet transmits
//!   with probability 1 while it has never failed and with probability `q`
//!   afterwards; each transmission succeeds by an i.i.d. coin `p`; a packet
//!   whose residual hop count stays positive re-enters a uniformly random
//!   queue as relay traffic;
//! * torus: nodes on a unit-spacing `side x side` torus; a transmission from
//!   `i` to `j` succeeds iff no other node within Euclidean distance `R` of
//!   the receiver `j` transmits in the same slot; packets follow the
//!   minimum-distance next hop toward their destination.
//!
//! Per-hop and end-to-end delays use the same convention as the analytic
//! model: a packet arriving in slot `t` and forwarded successfully in slot
//! `s` spent `s - t + 1` slots on that hop, so the smallest possible delay is
//! one slot and end-to-end delay telescopes:
//!
//! ```text
//! D = sum of per-hop delays = delivery slot - birth slot + 1
//! ```
//!
//! Statistics are collected only from slots past the warmup; per-hop samples
//! require the hop to start after warmup and transport samples require the
//! packet to be born after warmup. Every run is deterministic: one
//! counter-based RNG per node, stream-keyed by node index, so reports are
//! bit-identical for equal `(config, seed)`.
//!
//! [`estimate_tail`] is the direct Monte Carlo companion of the analytic
//! tail curves: it samples a hop count, sums that many i.i.d. per-hop
//! delays, and scores the exceedance indicator on a whole grid of thresholds
//! from the same sample.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted_alias::WeightedAliasIndex;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::aloha::{solve_success_probability, AlohaHopModel, DelayPmf};
use crate::distance::HopCountPmf;
use crate::distspec::DistSpec;
use crate::error::{Error, Result};

// --------------------------------------------------------------------------
// Configuration
// --------------------------------------------------------------------------

/// Simulation geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimMode {
    MeanField,
    Torus,
}

/// Where the mean-field success coin comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuccessModel {
    /// Fixed success probability per transmission attempt.
    Explicit(f64),
    /// Solve the contention fixed point for the configured offered load.
    FromContention { mean_interferers: f64 },
}

/// Fresh-packet generation process, per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalSpec {
    /// Every node keeps exactly one packet of its own in flight; a new one
    /// is injected at the source the moment the old one is delivered.
    Saturated,
    /// Independent Bernoulli coin per hop class `l` each slot, with rate
    /// `lambda * f(l)`; `lambda` is the total per-node fresh-packet rate.
    Bernoulli { lambda: f64 },
}

/// Full description of one simulation run. Serialized as JSON with field
/// names exactly as written here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub mode: SimMode,
    /// Node count; the torus requires a perfect square.
    pub nodes: usize,
    /// Hop-count law for fresh packets, in mini-language form.
    pub dist: DistSpec,
    /// Retry probability of a backlogged head-of-line packet.
    pub q: f64,
    pub arrival: ArrivalSpec,
    /// Mean-field only; ignored by the torus (its collisions are geometric).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success: Option<SuccessModel>,
    /// Torus only: interference radius around the receiver.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    pub slots: u32,
    #[serde(default)]
    pub warmup: u32,
    pub seed: u64,
}

/// A queue longer than this, or an aggregate backlog beyond it, aborts the
/// run as unstable.
const MAX_QUEUE: usize = 1_000_000;

/// Everything `validate` resolves once so the runners stay branch-light.
struct Prepared {
    pmf: HopCountPmf,
    /// Per-class fresh rates `lambda * f(l)`; `None` when saturated.
    class_rates: Option<Vec<f64>>,
    /// Mean-field success probability.
    p: Option<f64>,
    /// Torus grid side.
    side: Option<usize>,
}

impl SimConfig {
    /// Checks every cross-field invariant and resolves derived quantities.
    ///
    /// Mean-field configs with Bernoulli arrivals are additionally screened
    /// for queue stability (`theta E[X] < 1`); saturated and torus runs rely
    /// on the runtime backlog guard instead.
    fn validate(&self) -> Result<Prepared> {
        if self.nodes == 0 {
            return Err(Error::InvalidParameter("need at least one node".into()));
        }
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "retry probability q={} outside (0, 1]",
                self.q
            )));
        }
        if self.slots == 0 || self.warmup >= self.slots {
            return Err(Error::InvalidParameter(format!(
                "need slots > warmup >= 0, got slots={} warmup={}",
                self.slots, self.warmup
            )));
        }
        let pmf = self.dist.to_pmf()?;
        let class_rates = match &self.arrival {
            ArrivalSpec::Saturated => None,
            ArrivalSpec::Bernoulli { lambda } => {
                if !(*lambda > 0.0 && *lambda < 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "fresh rate lambda={lambda} outside (0, 1)"
                    )));
                }
                Some(pmf.probs().iter().map(|f| lambda * f).collect())
            }
        };
        let (p, side) = match self.mode {
            SimMode::MeanField => {
                let theta = match &self.arrival {
                    ArrivalSpec::Bernoulli { lambda } => Some(lambda * pmf.mean()),
                    ArrivalSpec::Saturated => None,
                };
                let p = match self.success {
                    Some(SuccessModel::Explicit(p)) => {
                        if !(p > 0.0 && p <= 1.0) {
                            return Err(Error::InvalidParameter(format!(
                                "success probability p={p} outside (0, 1]"
                            )));
                        }
                        p
                    }
                    Some(SuccessModel::FromContention { mean_interferers }) => {
                        let theta = theta.ok_or_else(|| {
                            Error::InvalidParameter(
                                "saturated mean-field runs need an explicit success \
                                 probability; the contention fixed point needs a known \
                                 offered load"
                                    .into(),
                            )
                        })?;
                        solve_success_probability(theta, mean_interferers)?.p
                    }
                    None => {
                        return Err(Error::InvalidParameter(
                            "mean-field mode needs a success model".into(),
                        ));
                    }
                };
                if let Some(theta) = theta {
                    // surfaces UnstableQueue before any slots are spent
                    AlohaHopModel::new(p, self.q, theta)?;
                }
                (Some(p), None)
            }
            SimMode::Torus => {
                let side = (self.nodes as f64).sqrt().round() as usize;
                if side * side != self.nodes {
                    return Err(Error::InvalidParameter(format!(
                        "torus needs a square node count, got {}",
                        self.nodes
                    )));
                }
                let radius = self.radius.ok_or_else(|| {
                    Error::InvalidParameter("torus mode needs an interference radius".into())
                })?;
                if !(radius >= 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "interference radius {radius} must be >= 1"
                    )));
                }
                if pmf.phi() * 2 > side {
                    return Err(Error::InvalidParameter(format!(
                        "max hop count {} exceeds half the torus side {side}",
                        pmf.phi()
                    )));
                }
                (None, Some(side))
            }
        };
        Ok(Prepared {
            pmf,
            class_rates,
            p,
            side,
        })
    }

    /// Dispatches on `mode`.
    pub fn run(&self) -> Result<SimReport> {
        match self.mode {
            SimMode::MeanField => run_meanfield(self),
            SimMode::Torus => run_torus(self),
        }
    }
}

// --------------------------------------------------------------------------
// Report
// --------------------------------------------------------------------------

/// Backlog summary over the measured window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueSummary {
    /// Time-average number of packets in the system (all queues plus
    /// packets mid-relay).
    pub mean_in_system: f64,
    /// Largest single queue ever seen, warmup included.
    pub max_queue: usize,
}

/// Measured outcome of one run. All rates are per node per slot; histograms
/// index delay `k` at position `k - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub mode: SimMode,
    pub nodes: usize,
    /// Slots past warmup that produced the statistics.
    pub measured_slots: u32,
    pub seed: u64,
    /// Success coin actually used (mean field only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success_probability: Option<f64>,
    /// Successful transmissions per node per slot.
    pub throughput: f64,
    /// Fresh packets injected per node per slot.
    pub input_rate: f64,
    /// Mean hop count of packets behind the transport-delay samples.
    pub mean_hops: f64,
    pub mean_hop_delay: f64,
    pub mean_transport_delay: f64,
    pub hop_delay_samples: u64,
    pub transport_delay_samples: u64,
    /// 95% half-widths treating samples as independent; serial correlation
    /// makes these slightly optimistic.
    pub hop_delay_ci: f64,
    pub transport_delay_ci: f64,
    pub throughput_ci: f64,
    pub hop_delay_hist: Vec<u64>,
    pub transport_delay_hist: Vec<u64>,
    pub queue: QueueSummary,
    /// Conservation audit: `generated = delivered + in_system_end` always.
    pub generated: u64,
    pub delivered: u64,
    pub in_system_end: u64,
}

impl SimReport {
    /// Relative flow-conservation defect `|input_rate * mean_hops / throughput - 1|`.
    #[must_use]
    pub fn flow_residual(&self) -> f64 {
        if self.throughput == 0.0 {
            return f64::INFINITY;
        }
        (self.input_rate * self.mean_hops / self.throughput - 1.0).abs()
    }

    /// Population estimate from the fresh-packet side of Little's law:
    /// `n * input_rate * mean_transport_delay`.
    #[must_use]
    pub fn population_via_input(&self) -> f64 {
        self.nodes as f64 * self.input_rate * self.mean_transport_delay
    }

    /// Population estimate from the per-hop side: `n * throughput * mean_hop_delay`.
    #[must_use]
    pub fn population_via_hops(&self) -> f64 {
        self.nodes as f64 * self.throughput * self.mean_hop_delay
    }
}

// --------------------------------------------------------------------------
// Shared engine pieces
// --------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
struct Packet {
    /// Hops still to travel; delivery when it reaches zero.
    residual: u32,
    /// Original journey length.
    hops: u32,
    born: u32,
    /// Slot the packet joined its current queue.
    enq: u32,
    /// Node that generated the packet (saturated re-injection target).
    origin: u32,
    /// Torus destination node; unused in mean field.
    dest: u32,
}

/// Statistics accumulator; all counters windowed unless stated otherwise.
#[derive(Default)]
struct Accum {
    hop_hist: Vec<u64>,
    hop_n: u64,
    hop_sum: u64,
    hop_sumsq: u64,
    d_hist: Vec<u64>,
    d_n: u64,
    d_sum: u64,
    d_sumsq: u64,
    d_hops: u64,
    arrivals: u64,
    successes: u64,
    in_system_integral: u64,
    max_queue: usize,
    generated: u64,
    delivered: u64,
}

impl Accum {
    fn hop_sample(&mut self, t: u32) {
        let idx = (t - 1) as usize;
        if idx >= self.hop_hist.len() {
            self.hop_hist.resize(idx + 1, 0);
        }
        self.hop_hist[idx] += 1;
        self.hop_n += 1;
        self.hop_sum += u64::from(t);
        self.hop_sumsq += u64::from(t) * u64::from(t);
    }

    fn transport_sample(&mut self, d: u32, hops: u32) {
        let idx = (d - 1) as usize;
        if idx >= self.d_hist.len() {
            self.d_hist.resize(idx + 1, 0);
        }
        self.d_hist[idx] += 1;
        self.d_n += 1;
        self.d_sum += u64::from(d);
        self.d_sumsq += u64::from(d) * u64::from(d);
        self.d_hops += u64::from(hops);
    }

    fn finalize(self, cfg: &SimConfig, p_used: Option<f64>) -> SimReport {
        let window = u64::from(cfg.slots - cfg.warmup);
        let node_slots = (cfg.nodes as u64 * window) as f64;
        let mean_ci = |n: u64, sum: u64, sumsq: u64| -> (f64, f64) {
            if n == 0 {
                return (0.0, 0.0);
            }
            let nf = n as f64;
            let mean = sum as f64 / nf;
            if n == 1 {
                return (mean, 0.0);
            }
            let var = ((sumsq as f64 / nf) - mean * mean).max(0.0) * nf / (nf - 1.0);
            (mean, 1.96 * (var / nf).sqrt())
        };
        let (mean_hop_delay, hop_delay_ci) = mean_ci(self.hop_n, self.hop_sum, self.hop_sumsq);
        let (mean_transport_delay, transport_delay_ci) =
            mean_ci(self.d_n, self.d_sum, self.d_sumsq);
        let throughput = self.successes as f64 / node_slots;
        SimReport {
            mode: cfg.mode,
            nodes: cfg.nodes,
            measured_slots: cfg.slots - cfg.warmup,
            seed: cfg.seed,
            success_probability: p_used,
            throughput,
            input_rate: self.arrivals as f64 / node_slots,
            mean_hops: if self.d_n == 0 {
                0.0
            } else {
                self.d_hops as f64 / self.d_n as f64
            },
            mean_hop_delay,
            mean_transport_delay,
            hop_delay_samples: self.hop_n,
            transport_delay_samples: self.d_n,
            hop_delay_ci,
            transport_delay_ci,
            throughput_ci: 1.96 * (throughput * (1.0 - throughput).max(0.0) / node_slots).sqrt(),
            hop_delay_hist: self.hop_hist,
            transport_delay_hist: self.d_hist,
            queue: QueueSummary {
                mean_in_system: self.in_system_integral as f64 / window as f64,
                max_queue: self.max_queue,
            },
            generated: self.generated,
            delivered: self.delivered,
            in_system_end: self.generated - self.delivered,
        }
    }
}

/// Prefix products `Q[l] = prod_{j<=l} (1 - rate_j)`, `Q[0] = 1`: the
/// probability that no class up to `l` generates an arrival this slot.
fn no_arrival_prefix(rates: &[f64]) -> Vec<f64> {
    let mut q = Vec::with_capacity(rates.len() + 1);
    let mut acc = 1.0;
    q.push(acc);
    for r in rates {
        acc *= 1.0 - r;
        q.push(acc);
    }
    q
}

/// Samples the set of classes that generate an arrival this slot, by
/// sequential inversion over the prefix products. One uniform draw settles
/// the common no-arrival slot; each further draw locates one more arriving
/// class, so cost tracks the arrival count, not the class count.
fn sample_arrival_classes(rng: &mut ChaCha8Rng, prefix: &[f64], out: &mut Vec<u32>) {
    out.clear();
    let phi = prefix.len() - 1;
    let mut base = 0usize;
    while base < phi {
        let u: f64 = rng.gen();
        // no arrival among classes in (base, phi]
        if u * prefix[base] <= prefix[phi] {
            return;
        }
        let mut l = base + 1;
        while prefix[l] >= u * prefix[base] {
            l += 1;
        }
        out.push(l as u32);
        base = l;
    }
}

fn queue_guard(len: usize, in_system: u64, node: usize, slot: u32) -> Result<()> {
    if len > MAX_QUEUE || in_system > MAX_QUEUE as u64 {
        return Err(Error::NonConvergence(format!(
            "unstable run: backlog passed {MAX_QUEUE} (queue {len} at node {node}, \
             {in_system} packets in system) in slot {slot}"
        )));
    }
    Ok(())
}

// --------------------------------------------------------------------------
// Mean-field runner
// --------------------------------------------------------------------------

/// Runs the mean-field abstraction: relay placement is uniformly random, and
/// collisions are collapsed into the i.i.d. success coin `p`.
pub fn run_meanfield(cfg: &SimConfig) -> Result<SimReport> {
    let prep = cfg.validate()?;
    if cfg.mode != SimMode::MeanField {
        return Err(Error::InvalidParameter(
            "run_meanfield called with a torus config".into(),
        ));
    }
    let p = prep.p.expect("validated mean-field");
    let n = cfg.nodes;
    let mut rngs: Vec<ChaCha8Rng> = (0..n)
        .map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
            r.set_stream(i as u64);
            r
        })
        .collect();
    let mut queues: Vec<VecDeque<Packet>> = vec![VecDeque::new(); n];
    // head has never lost an attempt; such packets transmit with probability 1
    let mut head_fresh = vec![true; n];
    let mut acc = Accum::default();
    let mut in_system: u64 = 0;

    let prefix = prep.class_rates.as_deref().map(no_arrival_prefix);
    let alias = match prefix {
        None => Some(alias_over(prep.pmf.probs())?),
        Some(_) => None,
    };

    // saturated start: one own packet per node, fresh at slot zero
    if let Some(alias) = &alias {
        for (i, rng) in rngs.iter_mut().enumerate() {
            let hops = alias.sample(rng) as u32 + 1;
            queues[i].push_back(Packet {
                residual: hops,
                hops,
                born: 0,
                enq: 0,
                origin: i as u32,
                dest: 0,
            });
            acc.generated += 1;
            in_system += 1;
        }
    }

    let mut classes: Vec<u32> = Vec::new();
    let mut staged: Vec<(u32, Packet)> = Vec::new();
    for slot in 0..cfg.slots {
        let measured = slot >= cfg.warmup;
        // fresh arrivals join their own node's queue at slot start
        if let Some(prefix) = &prefix {
            for i in 0..n {
                sample_arrival_classes(&mut rngs[i], prefix, &mut classes);
                for &l in &classes {
                    queues[i].push_back(Packet {
                        residual: l,
                        hops: l,
                        born: slot,
                        enq: slot,
                        origin: i as u32,
                        dest: 0,
                    });
                    if queues[i].len() == 1 {
                        head_fresh[i] = true;
                    }
                    acc.generated += 1;
                    in_system += 1;
                    acc.max_queue = acc.max_queue.max(queues[i].len());
                    if measured {
                        acc.arrivals += 1;
                    }
                }
                queue_guard(queues[i].len(), in_system, i, slot)?;
            }
        }
        // service: one head-of-line attempt per backlogged node
        for i in 0..n {
            if queues[i].is_empty() {
                continue;
            }
            let attempt = head_fresh[i] || rngs[i].gen_bool(cfg.q);
            if !attempt {
                continue;
            }
            if !rngs[i].gen_bool(p) {
                head_fresh[i] = false;
                continue;
            }
            let mut pkt = queues[i].pop_front().expect("nonempty");
            head_fresh[i] = true;
            if measured {
                acc.successes += 1;
                if pkt.enq >= cfg.warmup {
                    acc.hop_sample(slot - pkt.enq + 1);
                }
            }
            pkt.residual -= 1;
            if pkt.residual == 0 {
                acc.delivered += 1;
                in_system -= 1;
                if measured && pkt.born >= cfg.warmup {
                    acc.transport_sample(slot - pkt.born + 1, pkt.hops);
                }
                if let Some(alias) = &alias {
                    // saturated: the source replaces its delivered packet
                    let origin = pkt.origin;
                    let hops = alias.sample(&mut rngs[i]) as u32 + 1;
                    staged.push((
                        origin,
                        Packet {
                            residual: hops,
                            hops,
                            born: slot + 1,
                            enq: slot + 1,
                            origin,
                            dest: 0,
                        },
                    ));
                    acc.generated += 1;
                    in_system += 1;
                    if measured {
                        acc.arrivals += 1;
                    }
                }
            } else {
                // relay: uniformly random queue, visible from the next slot
                let target = rngs[i].gen_range(0..n) as u32;
                pkt.enq = slot + 1;
                staged.push((target, pkt));
            }
        }
        for (target, pkt) in staged.drain(..) {
            let q = &mut queues[target as usize];
            q.push_back(pkt);
            if q.len() == 1 {
                head_fresh[target as usize] = true;
            }
            acc.max_queue = acc.max_queue.max(q.len());
            queue_guard(q.len(), in_system, target as usize, slot)?;
        }
        if measured {
            acc.in_system_integral += in_system;
        }
        debug_assert_eq!(acc.generated - acc.delivered, in_system);
    }
    let queued: u64 = queues.iter().map(|q| q.len() as u64).sum();
    if queued != in_system {
        return Err(Error::Invariant(format!(
            "conservation audit failed: {queued} queued vs {in_system} outstanding"
        )));
    }
    Ok(acc.finalize(cfg, Some(p)))
}

// --------------------------------------------------------------------------
// Torus runner
// --------------------------------------------------------------------------

fn alias_over(probs: &[f64]) -> Result<WeightedAliasIndex<f64>> {
    WeightedAliasIndex::new(probs.to_vec())
        .map_err(|e| Error::InvalidDistribution(format!("alias table: {e}")))
}

/// Wrapped coordinate difference in `[-side/2, side/2]`.
fn wrapped_delta(from: i64, to: i64, side: i64) -> i64 {
    let d = (to - from).rem_euclid(side);
    if 2 * d > side {
        d - side
    } else {
        d
    }
}

fn torus_dist2(ax: i64, ay: i64, bx: i64, by: i64, side: i64) -> i64 {
    let dx = wrapped_delta(ax, bx, side);
    let dy = wrapped_delta(ay, by, side);
    dx * dx + dy * dy
}

/// `k`-th cell of the Chebyshev ring of radius `l`, walking the four edges
/// half-open so each of the `8l` cells appears exactly once.
fn ring_offset(l: i64, k: i64) -> (i64, i64) {
    let edge = 2 * l;
    match k / edge {
        0 => (-l + k % edge, l),
        1 => (l, l - k % edge),
        2 => (l - k % edge, -l),
        _ => (-l, -l + k % edge),
    }
}

/// Minimum-Euclidean-distance next hop among the eight lattice neighbors,
/// ties broken by the fixed lexicographic scan order of the offsets.
fn next_hop(px: i64, py: i64, dx: i64, dy: i64, side: i64) -> (i64, i64) {
    const STEPS: [(i64, i64); 8] = [
        (-1, -1),
        (-1, 0),
        (-1, 1),
        (0, -1),
        (0, 1),
        (1, -1),
        (1, 0),
        (1, 1),
    ];
    let mut best = (px, py);
    let mut best_d = i64::MAX;
    for (sx, sy) in STEPS {
        let nx = (px + sx).rem_euclid(side);
        let ny = (py + sy).rem_euclid(side);
        let d = torus_dist2(nx, ny, dx, dy, side);
        if d < best_d {
            best_d = d;
            best = (nx, ny);
        }
    }
    best
}

/// Runs the geometric mode: unit-spacing torus, receiver-centric collisions
/// within radius `R`, minimum-distance forwarding.
pub fn run_torus(cfg: &SimConfig) -> Result<SimReport> {
    let prep = cfg.validate()?;
    if cfg.mode != SimMode::Torus {
        return Err(Error::InvalidParameter(
            "run_torus called with a mean-field config".into(),
        ));
    }
    let side = prep.side.expect("validated torus") as i64;
    let radius = cfg.radius.expect("validated torus");
    let n = cfg.nodes;
    let node_at = |x: i64, y: i64| -> usize { (y.rem_euclid(side) * side + x.rem_euclid(side)) as usize };
    let pos_of = |i: usize| -> (i64, i64) { (i as i64 % side, i as i64 / side) };
    // lattice offsets whose Euclidean length is within the radius; scanning
    // them around a receiver enumerates every possible interferer
    let reach = radius.floor() as i64;
    let mut disk: Vec<(i64, i64)> = Vec::new();
    for ox in -reach..=reach {
        for oy in -reach..=reach {
            if ((ox * ox + oy * oy) as f64) <= radius * radius {
                disk.push((ox, oy));
            }
        }
    }

    let mut rngs: Vec<ChaCha8Rng> = (0..n)
        .map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
            r.set_stream(i as u64);
            r
        })
        .collect();
    let mut queues: Vec<VecDeque<Packet>> = vec![VecDeque::new(); n];
    let mut head_fresh = vec![true; n];
    let mut acc = Accum::default();
    let mut in_system: u64 = 0;

    let alias = alias_over(prep.pmf.probs())?;
    let prefix = prep.class_rates.as_deref().map(no_arrival_prefix);
    let saturated = prefix.is_none();

    let draw_dest = |i: usize, hops: u32, rng: &mut ChaCha8Rng| -> u32 {
        let (px, py) = pos_of(i);
        let k = rng.gen_range(0..8 * i64::from(hops));
        let (ox, oy) = ring_offset(i64::from(hops), k);
        node_at(px + ox, py + oy) as u32
    };

    if saturated {
        for i in 0..n {
            let rng = &mut rngs[i];
            let hops = alias.sample(rng) as u32 + 1;
            let dest = draw_dest(i, hops, rng);
            queues[i].push_back(Packet {
                residual: hops,
                hops,
                born: 0,
                enq: 0,
                origin: i as u32,
                dest,
            });
            acc.generated += 1;
            in_system += 1;
        }
    }

    let mut classes: Vec<u32> = Vec::new();
    // (sender, receiver) pairs attempting this slot, in node order
    let mut attempts: Vec<(u32, u32)> = Vec::new();
    // transmitters per cell, slot-stamped so no per-slot clear is needed
    let mut tx_count = vec![0u32; n];
    let mut tx_stamp = vec![u32::MAX; n];
    let mut staged: Vec<(u32, Packet)> = Vec::new();

    for slot in 0..cfg.slots {
        let measured = slot >= cfg.warmup;
        if let Some(prefix) = &prefix {
            for i in 0..n {
                sample_arrival_classes(&mut rngs[i], prefix, &mut classes);
                for &l in &classes {
                    let dest = draw_dest(i, l, &mut rngs[i]);
                    queues[i].push_back(Packet {
                        residual: l,
                        hops: l,
                        born: slot,
                        enq: slot,
                        origin: i as u32,
                        dest,
                    });
                    if queues[i].len() == 1 {
                        head_fresh[i] = true;
                    }
                    acc.generated += 1;
                    in_system += 1;
                    acc.max_queue = acc.max_queue.max(queues[i].len());
                    if measured {
                        acc.arrivals += 1;
                    }
                }
                queue_guard(queues[i].len(), in_system, i, slot)?;
            }
        }
        // phase 1: who transmits, and toward which neighbor
        attempts.clear();
        for i in 0..n {
            if queues[i].is_empty() {
                continue;
            }
            if !(head_fresh[i] || rngs[i].gen_bool(cfg.q)) {
                continue;
            }
            let pkt = queues[i].front().expect("nonempty");
            let (px, py) = pos_of(i);
            let (dx, dy) = pos_of(pkt.dest as usize);
            let (hx, hy) = next_hop(px, py, dx, dy, side);
            attempts.push((i as u32, node_at(hx, hy) as u32));
            if tx_stamp[i] != slot {
                tx_stamp[i] = slot;
                tx_count[i] = 0;
            }
            tx_count[i] += 1;
        }
        // phase 2 + 3: receiver-centric collision test, then apply outcomes
        for &(tx, rx) in &attempts {
            let (rx_x, rx_y) = pos_of(rx as usize);
            let mut in_disk = 0u32;
            for &(ox, oy) in &disk {
                let cell = node_at(rx_x + ox, rx_y + oy);
                if tx_stamp[cell] == slot {
                    in_disk += tx_count[cell];
                }
            }
            let i = tx as usize;
            let (tx_x, tx_y) = pos_of(i);
            // only transmitters other than the sender jam the receiver; the
            // sender is in its own disk count exactly when R covers its cell
            let sender_counted =
                u32::from(torus_dist2(tx_x, tx_y, rx_x, rx_y, side) as f64 <= radius * radius);
            if in_disk != sender_counted {
                head_fresh[i] = false;
                continue;
            }
            let mut pkt = queues[i].pop_front().expect("transmitter has a head");
            head_fresh[i] = true;
            if measured {
                acc.successes += 1;
                if pkt.enq >= cfg.warmup {
                    acc.hop_sample(slot - pkt.enq + 1);
                }
            }
            pkt.residual -= 1;
            debug_assert_eq!(
                {
                    let (px, py) = pos_of(rx as usize);
                    let (dx, dy) = pos_of(pkt.dest as usize);
                    wrapped_delta(px, dx, side)
                        .abs()
                        .max(wrapped_delta(py, dy, side).abs()) as u32
                },
                pkt.residual,
                "forwarding must shrink the hop distance by exactly one"
            );
            if pkt.residual == 0 {
                acc.delivered += 1;
                in_system -= 1;
                if measured && pkt.born >= cfg.warmup {
                    acc.transport_sample(slot - pkt.born + 1, pkt.hops);
                }
                if saturated {
                    let origin = pkt.origin;
                    let rng = &mut rngs[i];
                    let hops = alias.sample(rng) as u32 + 1;
                    let dest = draw_dest(origin as usize, hops, rng);
                    staged.push((
                        origin,
                        Packet {
                            residual: hops,
                            hops,
                            born: slot + 1,
                            enq: slot + 1,
                            origin,
                            dest,
                        },
                    ));
                    acc.generated += 1;
                    in_system += 1;
                    if measured {
                        acc.arrivals += 1;
                    }
                }
            } else {
                pkt.enq = slot + 1;
                staged.push((rx, pkt));
            }
        }
        for (target, pkt) in staged.drain(..) {
            let q = &mut queues[target as usize];
            q.push_back(pkt);
            if q.len() == 1 {
                head_fresh[target as usize] = true;
            }
            acc.max_queue = acc.max_queue.max(q.len());
            queue_guard(q.len(), in_system, target as usize, slot)?;
        }
        if measured {
            acc.in_system_integral += in_system;
        }
        debug_assert_eq!(acc.generated - acc.delivered, in_system);
    }
    let queued: u64 = queues.iter().map(|q| q.len() as u64).sum();
    if queued != in_system {
        return Err(Error::Invariant(format!(
            "conservation audit failed: {queued} queued vs {in_system} outstanding"
        )));
    }
    Ok(acc.finalize(cfg, None))
}

// --------------------------------------------------------------------------
// Tail estimation
// --------------------------------------------------------------------------

/// Monte Carlo exceedance estimates on a shared sample set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailEstimate {
    pub x: Vec<f64>,
    /// `Pr{D > L x}` estimates, one per grid point.
    pub estimate: Vec<f64>,
    /// 95% half-widths `1.96 sqrt(p(1-p)/samples)`.
    pub ci_halfwidth: Vec<f64>,
    pub samples: u64,
}

/// Estimates `Pr{D > L x}` by direct simulation of the defining mixture:
/// draw a hop count `L`, sum `L` i.i.d. per-hop delays, and score every grid
/// point against the same sample (`D >= floor(L x) + 1`).
pub fn estimate_tail(
    pmf: &HopCountPmf,
    hop_pmf: &DelayPmf,
    x_grid: &[f64],
    samples: u64,
    seed: u64,
) -> Result<TailEstimate> {
    if samples < 10_000 {
        return Err(Error::InvalidParameter(format!(
            "need at least 10^4 samples for a usable CI, got {samples}"
        )));
    }
    if x_grid.is_empty() || x_grid.iter().any(|x| !x.is_finite() || *x <= 0.0) {
        return Err(Error::InvalidParameter(
            "x grid must be nonempty, finite, positive".into(),
        ));
    }
    if hop_pmf.residual_tail > 1e-9 {
        return Err(Error::PrecisionLoss(format!(
            "hop pmf drops {:.3e} tail mass; rebuild it with a tighter truncation",
            hop_pmf.residual_tail
        )));
    }
    let l_alias = alias_over(pmf.probs())?;
    let t_alias = alias_over(&hop_pmf.masses)?;
    let offset = hop_pmf.offset as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = vec![0u64; x_grid.len()];
    for _ in 0..samples {
        let l = l_alias.sample(&mut rng) as u64 + 1;
        let mut d: u64 = 0;
        for _ in 0..l {
            d += offset + t_alias.sample(&mut rng) as u64;
        }
        for (hit, &x) in hits.iter_mut().zip(x_grid) {
            if d as f64 > (l as f64 * x).floor() {
                *hit += 1;
            }
        }
    }
    let nf = samples as f64;
    let estimate: Vec<f64> = hits.iter().map(|&h| h as f64 / nf).collect();
    let ci_halfwidth = estimate
        .iter()
        .map(|p| 1.96 * (p * (1.0 - p) / nf).sqrt())
        .collect();
    Ok(TailEstimate {
        x: x_grid.to_vec(),
        estimate,
        ci_halfwidth,
        samples,
    })
}

// --------------------------------------------------------------------------
// Tests
// --------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tail::tail_bounds;

    fn meanfield_reference(slots: u32, warmup: u32, seed: u64) -> SimConfig {
        SimConfig {
            mode: SimMode::MeanField,
            nodes: 100,
            dist: "geometric:0.2".parse().unwrap(),
            q: 0.1,
            arrival: ArrivalSpec::Bernoulli { lambda: 0.006 },
            success: Some(SuccessModel::FromContention {
                mean_interferers: 10.0,
            }),
            radius: None,
            slots,
            warmup,
            seed,
        }
    }

    #[test]
    fn empty_system_limit_has_unit_delay() {
        let cfg = SimConfig {
            mode: SimMode::MeanField,
            nodes: 50,
            dist: "point:1".parse().unwrap(),
            q: 0.5,
            arrival: ArrivalSpec::Bernoulli { lambda: 1e-4 },
            success: Some(SuccessModel::Explicit(1.0)),
            radius: None,
            slots: 200_000,
            warmup: 0,
            seed: 11,
        };
        let report = run_meanfield(&cfg).unwrap();
        assert!(report.hop_delay_samples > 500);
        assert!(
            (report.mean_hop_delay - 1.0).abs() <= 0.01,
            "{}",
            report.mean_hop_delay
        );
        assert!((report.mean_transport_delay - 1.0).abs() <= 0.01);
        assert_eq!(report.generated, report.delivered + report.in_system_end);
    }

    #[test]
    fn meanfield_matches_the_analytic_hop_law() {
        let cfg = meanfield_reference(400_000, 40_000, 7);
        let report = run_meanfield(&cfg).unwrap();
        let model = AlohaHopModel::from_contention(0.03, 10.0, 0.1).unwrap();
        let analytic = model.hop_stats().mean;
        let rel = (report.mean_hop_delay - analytic).abs() / analytic;
        assert!(
            rel <= 0.05,
            "hop delay {} vs analytic {analytic} (rel {rel:.4})",
            report.mean_hop_delay
        );
        let composed = report.mean_hops * report.mean_hop_delay;
        let rel_d = (report.mean_transport_delay - composed).abs() / composed;
        assert!(rel_d <= 0.05, "{} vs {}", report.mean_transport_delay, composed);
        assert!(report.flow_residual() <= 0.03, "{}", report.flow_residual());

        // histogram against the analytic per-hop law, total-variation metric
        let pmf = model.hop_pmf_with_tail(None, 1e-10);
        let total: f64 = report.hop_delay_samples as f64;
        let mut tv = 0.0;
        let kmax = report.hop_delay_hist.len().max(pmf.offset + pmf.masses.len());
        for k in 1..=kmax {
            let emp = report
                .hop_delay_hist
                .get(k - 1)
                .map_or(0.0, |&c| c as f64 / total);
            tv += (emp - pmf.mass(k)).abs();
        }
        tv *= 0.5;
        assert!(tv <= 0.02, "total variation {tv:.4}");
    }

    #[test]
    fn warmup_doubling_is_negligible() {
        let a = run_meanfield(&meanfield_reference(300_000, 15_000, 3)).unwrap();
        let b = run_meanfield(&meanfield_reference(300_000, 30_000, 3)).unwrap();
        let rel = (a.mean_hop_delay - b.mean_hop_delay).abs() / a.mean_hop_delay;
        assert!(rel < 0.01, "warmup sensitivity {rel:.4}");
    }

    #[test]
    fn reports_are_bit_identical_per_seed() {
        let cfg = meanfield_reference(50_000, 5_000, 42);
        let a = serde_json::to_string(&run_meanfield(&cfg).unwrap()).unwrap();
        let b = serde_json::to_string(&run_meanfield(&cfg).unwrap()).unwrap();
        assert_eq!(a, b);
        let mut other = cfg;
        other.seed = 43;
        let c = serde_json::to_string(&run_meanfield(&other).unwrap()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn saturated_meanfield_conserves_population() {
        let cfg = SimConfig {
            mode: SimMode::MeanField,
            nodes: 64,
            dist: "uniform:4".parse().unwrap(),
            q: 0.2,
            arrival: ArrivalSpec::Saturated,
            success: Some(SuccessModel::Explicit(0.5)),
            radius: None,
            slots: 30_000,
            warmup: 3_000,
            seed: 5,
        };
        let report = run_meanfield(&cfg).unwrap();
        // every node owns exactly one outstanding packet at all times
        assert_eq!(report.in_system_end, 64);
        assert!((report.queue.mean_in_system - 64.0).abs() < 1e-9);
        assert!(report.flow_residual() <= 0.03, "{}", report.flow_residual());
    }

    #[test]
    fn torus_isolated_path_is_lossless() {
        let cfg = SimConfig {
            mode: SimMode::Torus,
            nodes: 36,
            dist: "uniform:3".parse().unwrap(),
            q: 0.5,
            arrival: ArrivalSpec::Bernoulli { lambda: 1e-5 },
            success: None,
            radius: Some(1.6),
            slots: 1_000_000,
            warmup: 0,
            seed: 9,
        };
        let report = run_torus(&cfg).unwrap();
        assert!(report.transport_delay_samples > 100);
        // a lone packet advances one hop per slot: D = L exactly, so the
        // ratio only exceeds one on the rare slots where two overlap
        let ratio = report.mean_transport_delay / report.mean_hops;
        assert!((1.0..=1.02).contains(&ratio), "{ratio}");
        let unit_hops = report.hop_delay_hist[0] as f64 / report.hop_delay_samples as f64;
        assert!(unit_hops >= 0.97, "{unit_hops}");
    }

    #[test]
    fn torus_throughput_respects_the_contention_bound() {
        let cfg = SimConfig {
            mode: SimMode::Torus,
            nodes: 400,
            dist: "uniform:6".parse().unwrap(),
            q: 0.1,
            arrival: ArrivalSpec::Saturated,
            success: None,
            radius: Some(1.6),
            slots: 30_000,
            warmup: 3_000,
            seed: 21,
        };
        let report = run_torus(&cfg).unwrap();
        // R = 1.6 reaches exactly the 8 surrounding lattice cells
        let n_int = 8.0;
        let bound = (-1.0f64).exp() / n_int;
        let sigma = report.throughput_ci / 1.96;
        assert!(
            report.throughput <= bound + 3.0 * sigma,
            "{} vs {}",
            report.throughput,
            bound
        );
        assert!(report.throughput > 0.0);
        assert!(report.flow_residual() <= 0.03, "{}", report.flow_residual());
    }

    #[test]
    fn torus_flow_conservation_at_moderate_load() {
        let cfg = SimConfig {
            mode: SimMode::Torus,
            nodes: 400,
            dist: "geometric:0.5:8".parse().unwrap(),
            q: 0.2,
            arrival: ArrivalSpec::Bernoulli { lambda: 0.01 },
            success: None,
            radius: Some(1.6),
            slots: 100_000,
            warmup: 10_000,
            seed: 13,
        };
        let report = run_torus(&cfg).unwrap();
        assert!(report.flow_residual() <= 0.03, "{}", report.flow_residual());
        assert_eq!(report.generated, report.delivered + report.in_system_end);
    }

    #[test]
    fn overload_aborts_with_diagnostics() {
        let cfg = SimConfig {
            mode: SimMode::Torus,
            nodes: 100,
            dist: "geometric:0.5:5".parse().unwrap(),
            q: 0.01,
            arrival: ArrivalSpec::Bernoulli { lambda: 0.2 },
            success: None,
            radius: Some(3.0),
            slots: 2_000_000,
            warmup: 0,
            seed: 1,
        };
        match run_torus(&cfg) {
            Err(Error::NonConvergence(msg)) => assert!(msg.contains("backlog")),
            other => panic!("expected an instability abort, got {other:?}"),
        }
    }

    #[test]
    fn config_validation_rejects_bad_setups() {
        let base = meanfield_reference(1000, 100, 0);
        let mut c = base.clone();
        c.warmup = 1000;
        assert!(c.run().is_err());
        let mut c = base.clone();
        c.success = None;
        assert!(c.run().is_err());
        let mut c = base.clone();
        c.arrival = ArrivalSpec::Saturated;
        assert!(matches!(c.run(), Err(Error::InvalidParameter(_))));
        let mut c = base.clone();
        c.arrival = ArrivalSpec::Bernoulli { lambda: 0.5 };
        assert!(matches!(c.run(), Err(Error::UnstableQueue { .. }) | Err(Error::NoStableRoot { .. })));
        let mut c = base.clone();
        c.mode = SimMode::Torus;
        c.radius = Some(1.6);
        c.nodes = 99;
        assert!(c.run().is_err());
        c.nodes = 100;
        c.radius = Some(0.5);
        assert!(c.run().is_err());
        c.radius = Some(1.6);
        // phi = 126 exceeds half the side
        assert!(c.run().is_err());
        let mut c = base;
        c.mode = SimMode::Torus;
        assert!(c.run().is_err(), "torus without a radius");
    }

    #[test]
    fn config_json_round_trips() {
        let cfg = meanfield_reference(1000, 100, 3);
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        let back: SimConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
        assert!(json.contains("\"mode\": \"meanfield\""));
        assert!(json.contains("\"dist\": \"geometric:0.2\""));
    }

    #[test]
    fn deterministic_mixture_has_zero_variance() {
        let pmf = HopCountPmf::point(3).unwrap();
        let hop = DelayPmf::new(2, vec![1.0], 0.0).unwrap();
        let est = estimate_tail(&pmf, &hop, &[1.5, 2.5], 10_000, 0).unwrap();
        // D = 6 always: above floor(3 * 1.5) = 4, not above floor(3 * 2.5) = 7
        assert_eq!(est.estimate, vec![1.0, 0.0]);
        assert_eq!(est.ci_halfwidth, vec![0.0, 0.0]);
    }

    #[test]
    fn ci_shrinks_like_root_two() {
        let pmf = HopCountPmf::geometric(0.2).unwrap();
        let model = AlohaHopModel::from_contention(0.03, 10.0, 0.1).unwrap();
        let hop = model.hop_pmf_with_tail(None, 1e-10);
        let a = estimate_tail(&pmf, &hop, &[12.0], 50_000, 2).unwrap();
        let b = estimate_tail(&pmf, &hop, &[12.0], 100_000, 2).unwrap();
        let ratio = b.ci_halfwidth[0] / a.ci_halfwidth[0];
        let target = 0.5f64.sqrt();
        assert!(
            (ratio / target - 1.0).abs() <= 0.10,
            "ratio {ratio} vs {target}"
        );
    }

    #[test]
    fn estimates_sit_inside_the_analytic_bounds() {
        let pmf = HopCountPmf::geometric(0.2).unwrap();
        let model = AlohaHopModel::from_contention(0.03, 10.0, 0.1).unwrap();
        let hop = model.hop_pmf_with_tail(None, 1e-10);
        let grid: Vec<f64> = (0..15).map(|k| 12.0 + 2.0 * k as f64).collect();
        let curve = tail_bounds(&pmf, &model, &grid).unwrap();
        let est = estimate_tail(&pmf, &hop, &grid, 200_000, 17).unwrap();
        for (k, _) in grid.iter().enumerate() {
            let slack = 3.0 * est.ci_halfwidth[k] / 1.96;
            assert!(
                est.estimate[k] >= curve.lower[k] - slack,
                "x={} mc={} lower={}",
                grid[k],
                est.estimate[k],
                curve.lower[k]
            );
            assert!(
                est.estimate[k] <= curve.upper[k] + slack,
                "x={} mc={} upper={}",
                grid[k],
                est.estimate[k],
                curve.upper[k]
            );
        }
    }

    #[test]
    fn estimator_rejects_thin_sampling() {
        let pmf = HopCountPmf::geometric(0.2).unwrap();
        let hop = DelayPmf::new(1, vec![0.5, 0.5], 0.0).unwrap();
        assert!(estimate_tail(&pmf, &hop, &[2.0], 9_999, 0).is_err());
        assert!(estimate_tail(&pmf, &hop, &[], 10_000, 0).is_err());
        let leaky = DelayPmf::new(1, vec![0.5, 0.4], 0.1).unwrap();
        assert!(estimate_tail(&pmf, &leaky, &[2.0], 10_000, 0).is_err());
    }
}
