//! Leaky-bucket admission shaping where a route costs its length in tokens.
//!
//! A fresh packet that will cross `L` hops consumes `L` transmissions from
//! the network, so the shaper charges it `L` tokens at the door; relayed
//! traffic passes free. Tokens drip in at rate `r` per slot into a bucket
//! of size `b`, and any window of `tau` slots therefore admits at most
//! `a + r tau` tokens' worth of hops, where `a` is the level at the window
//! start:
//!
//! ```text
//! L_1 + L_2 + ... + L_m <= a + r tau        (every conformed window)
//! ```
//!
//! so the long-run admitted workload rate can overshoot `r` by at most
//! `b / tau`. Bucket sizing walks the line between delaying long routes
//! (`b` near the mean route length) and letting bursts through (`b` at the
//! high quantile of the route law); [`bucket_sizing`] returns that interval.
//!
//! [`ParallelShaper`] runs one bucket per hop class and splits the token
//! rate across them. Splitting equally starves long routes into the
//! equal-backlog pattern `lambda(l) ~ 1/l`; splitting proportionally to `l`
//! equalizes the admitted rates instead, at lower total admitted packets.
//! Both emergent patterns are measured by [`run_parallel`], which records a
//! per-slot trace whose conformance windows [`ShaperTrace::verify_envelope`]
//! checks exhaustively.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::distance::{HopCountPmf, ScalingLaw};
use crate::error::{Error, Result};

// --------------------------------------------------------------------------
// single bucket
// --------------------------------------------------------------------------

/// What happened to a packet presented at the bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OfferOutcome {
    /// Admitted immediately; tokens were available.
    Conformed,
    /// Waiting in the conformance queue for refills.
    Queued,
    /// Rejected because the bucket runs in drop mode and was short.
    Dropped,
    /// Needs more tokens than the bucket can ever hold.
    Oversize,
}

/// Token bucket with a FIFO conformance queue. Tokens are real-valued so
/// the refill rate need not be an integer per slot.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBucket {
    rate: f64,
    size: f64,
    tokens: f64,
    queue: VecDeque<u32>,
    drop_mode: bool,
}

impl TokenBucket {
    /// A bucket that starts full.
    pub fn new(rate: f64, size: f64) -> Result<Self> {
        if !rate.is_finite() || rate <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "token rate {rate} must be positive"
            )));
        }
        if !size.is_finite() || size <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "bucket size {size} must be positive"
            )));
        }
        Ok(Self {
            rate,
            size,
            tokens: size,
            queue: VecDeque::new(),
            drop_mode: false,
        })
    }

    /// A bucket starting at an explicit token level in `[0, size]`.
    pub fn with_level(rate: f64, size: f64, tokens: f64) -> Result<Self> {
        let mut bucket = Self::new(rate, size)?;
        if !tokens.is_finite() || !(0.0..=size).contains(&tokens) {
            return Err(Error::InvalidParameter(format!(
                "initial level {tokens} outside [0, {size}]"
            )));
        }
        bucket.tokens = tokens;
        Ok(bucket)
    }

    /// Switches non-conforming arrivals from queueing to dropping.
    #[must_use]
    pub fn drop_non_conforming(mut self, drop: bool) -> Self {
        self.drop_mode = drop;
        self
    }

    /// Token refill rate per slot.
    #[must_use]
    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Maximum token level.
    #[must_use]
    pub fn size(&self) -> f64 {
        self.size
    }

    /// Current token level.
    #[must_use]
    pub fn tokens(&self) -> f64 {
        self.tokens
    }

    /// Packets waiting for tokens.
    #[must_use]
    pub fn queued(&self) -> usize {
        self.queue.len()
    }

    /// Presents a fresh packet needing `hops` tokens. Conforms on the spot
    /// when the queue is empty and tokens suffice; otherwise the packet
    /// waits its turn (or is dropped, in drop mode). A packet larger than
    /// the bucket can never conform and is reported as oversize.
    pub fn offer(&mut self, hops: u32) -> Result<OfferOutcome> {
        if hops == 0 {
            return Err(Error::InvalidParameter(
                "a packet crosses at least one hop".into(),
            ));
        }
        let need = f64::from(hops);
        if need > self.size {
            return Ok(OfferOutcome::Oversize);
        }
        if self.queue.is_empty() && need <= self.tokens {
            self.tokens -= need;
            debug_assert!(self.tokens >= 0.0);
            return Ok(OfferOutcome::Conformed);
        }
        if self.drop_mode {
            return Ok(OfferOutcome::Dropped);
        }
        self.queue.push_back(hops);
        Ok(OfferOutcome::Queued)
    }

    /// Advances one slot: refill first, then re-test the queue head (and
    /// its followers, while tokens last). Returns the hop counts conformed
    /// by this tick, in admission order.
    pub fn tick(&mut self) -> Vec<u32> {
        self.tokens = self.size.min(self.tokens + self.rate);
        let mut admitted = Vec::new();
        while let Some(&head) = self.queue.front() {
            let need = f64::from(head);
            if need > self.tokens {
                break;
            }
            self.tokens -= need;
            self.queue.pop_front();
            admitted.push(head);
        }
        debug_assert!(self.tokens >= 0.0 && self.tokens <= self.size);
        admitted
    }
}

// --------------------------------------------------------------------------
// sizing
// --------------------------------------------------------------------------

/// Recommended bucket size interval: the mean route length up to the
/// `epsilon`-quantile threshold of the route law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BucketSizing {
    /// Mean route length; sizes below it throttle typical traffic.
    pub b_min: f64,
    /// Smallest threshold whose exceedance probability is at most
    /// `epsilon`; sizes above it only buy burst room for routes that
    /// almost never occur.
    pub b_max: f64,
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "tail mass {epsilon} must lie in (0, 1)"
        )));
    }
    Ok(())
}

/// Sizing interval for a discrete route law.
pub fn bucket_sizing(pmf: &HopCountPmf, epsilon: f64) -> Result<BucketSizing> {
    check_epsilon(epsilon)?;
    let mut threshold = 0;
    while pmf.tail(threshold) > epsilon {
        threshold += 1;
    }
    Ok(BucketSizing {
        b_min: pmf.mean(),
        b_max: threshold as f64,
    })
}

/// Sizing interval for a continuous route law; the threshold is found by
/// bisection on the tail. Requires a finite mean.
pub fn bucket_sizing_law(law: &ScalingLaw, epsilon: f64) -> Result<BucketSizing> {
    check_epsilon(epsilon)?;
    let b_min = law.stats()?.mean.require("mean route length")?;
    if let ScalingLaw::Geometric { g } = *law {
        // stepwise tail (1-g)^k inverts in closed form
        let b_max = if g >= 1.0 {
            1.0
        } else {
            (epsilon.ln() / (1.0 - g).ln()).ceil()
        };
        return Ok(BucketSizing { b_min, b_max });
    }
    let tail = |x: f64| -> Result<f64> { Ok(1.0 - law.cdf(x)?) };
    let mut lo = law.support_start();
    let mut hi = (2.0 * lo).max(1.0);
    let mut grow = 0;
    while tail(hi)? > epsilon {
        lo = hi;
        hi *= 2.0;
        grow += 1;
        if grow > 200 {
            return Err(Error::NonConvergence(format!(
                "tail threshold for epsilon = {epsilon} not bracketed"
            )));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if tail(mid)? > epsilon {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi.max(1.0) {
            break;
        }
    }
    Ok(BucketSizing { b_min, b_max: hi })
}

// --------------------------------------------------------------------------
// parallel shaper
// --------------------------------------------------------------------------

/// How the total token rate is split across the per-class buckets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitRule {
    /// Every class gets `r / phi`; admits equal workload per class, so the
    /// packet rates fall off like `1 / l`.
    EqualSplit,
    /// Class `l` gets `r l / (1 + ... + phi)`; admits equal packet rates
    /// across classes.
    ProportionalToL,
}

/// One token bucket per hop class `l = 1..=phi`, sharing a total rate.
#[derive(Debug, Clone, PartialEq)]
pub struct ParallelShaper {
    buckets: Vec<TokenBucket>,
    rule: SplitRule,
    rate: f64,
}

impl ParallelShaper {
    /// Buckets of a common size, rates split per `rule`.
    pub fn new(rate: f64, bucket_size: f64, phi: usize, rule: SplitRule) -> Result<Self> {
        if phi == 0 {
            return Err(Error::InvalidParameter(
                "a shaper needs at least one hop class".into(),
            ));
        }
        if !rate.is_finite() || rate <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "token rate {rate} must be positive"
            )));
        }
        let weight_sum = (phi * (phi + 1) / 2) as f64;
        let buckets = (1..=phi)
            .map(|l| {
                let share = match rule {
                    SplitRule::EqualSplit => rate / phi as f64,
                    SplitRule::ProportionalToL => rate * l as f64 / weight_sum,
                };
                TokenBucket::new(share, bucket_size)
            })
            .collect::<Result<Vec<_>>>()?;
        debug_assert!(
            (buckets.iter().map(TokenBucket::rate).sum::<f64>() - rate).abs() <= 1e-12 * rate
        );
        Ok(Self { buckets, rule, rate })
    }

    /// Hop classes served.
    #[must_use]
    pub fn phi(&self) -> usize {
        self.buckets.len()
    }

    /// Total token rate across buckets.
    #[must_use]
    pub fn total_rate(&self) -> f64 {
        self.rate
    }

    /// Token split rule.
    #[must_use]
    pub fn rule(&self) -> SplitRule {
        self.rule
    }

    /// Per-class token rates.
    #[must_use]
    pub fn rates(&self) -> Vec<f64> {
        self.buckets.iter().map(TokenBucket::rate).collect()
    }
}

/// Per-class arrival streams feeding a parallel shaper.
#[derive(Debug, Clone, PartialEq)]
pub enum ArrivalModel {
    /// Every class has a packet waiting in every slot.
    Saturated,
    /// One independent coin per class per slot, with these success
    /// probabilities indexed by class.
    Bernoulli(Vec<f64>),
}

impl ArrivalModel {
    fn validate(&self, phi: usize) -> Result<()> {
        if let ArrivalModel::Bernoulli(rates) = self {
            if rates.len() != phi {
                return Err(Error::InvalidParameter(format!(
                    "{} arrival rates do not cover {} hop classes",
                    rates.len(),
                    phi
                )));
            }
            if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
                return Err(Error::InvalidParameter(
                    "arrival probabilities must lie in [0, 1]".into(),
                ));
            }
        }
        Ok(())
    }
}

// --------------------------------------------------------------------------
// traces
// --------------------------------------------------------------------------

/// Slot-by-slot record of a shaper run, in class-major rows per slot, plus
/// the bucket parameters needed to audit it afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct ShaperTrace {
    phi: usize,
    slots: usize,
    rates: Vec<f64>,
    sizes: Vec<f64>,
    initial_tokens: Vec<f64>,
    offered: Vec<u32>,
    conformed: Vec<u32>,
    tokens_after: Vec<f64>,
}

impl ShaperTrace {
    /// Slots recorded.
    #[must_use]
    pub fn len(&self) -> usize {
        self.slots
    }

    /// True when no slots were recorded.
    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.slots == 0
    }

    /// Hop classes recorded.
    #[must_use]
    pub fn phi(&self) -> usize {
        self.phi
    }

    /// Per-class token rates of the run.
    #[must_use]
    pub fn bucket_rates(&self) -> &[f64] {
        &self.rates
    }

    fn idx(&self, slot: usize, class: usize) -> usize {
        debug_assert!(slot < self.slots && (1..=self.phi).contains(&class));
        slot * self.phi + class - 1
    }

    /// Packets of hop class `class` that arrived in `slot`.
    #[must_use]
    pub fn offered(&self, slot: usize, class: usize) -> u32 {
        self.offered[self.idx(slot, class)]
    }

    /// Packets of hop class `class` admitted in `slot`.
    #[must_use]
    pub fn conformed(&self, slot: usize, class: usize) -> u32 {
        self.conformed[self.idx(slot, class)]
    }

    /// Token level of the class bucket at the end of `slot`.
    #[must_use]
    pub fn tokens_after(&self, slot: usize, class: usize) -> f64 {
        self.tokens_after[self.idx(slot, class)]
    }

    /// Long-run admitted packet rate per class, `conformed / slots`.
    #[must_use]
    pub fn measured_rates(&self) -> Vec<f64> {
        let mut totals = vec![0u64; self.phi];
        for (i, &c) in self.conformed.iter().enumerate() {
            totals[i % self.phi] += u64::from(c);
        }
        totals
            .iter()
            .map(|&t| t as f64 / self.slots as f64)
            .collect()
    }

    /// Long-run admitted workload rate, `sum_l l * lambda(l)`.
    #[must_use]
    pub fn measured_throughput(&self) -> f64 {
        self.measured_rates()
            .iter()
            .enumerate()
            .map(|(i, r)| (i + 1) as f64 * r)
            .sum()
    }

    /// Checks the conformance envelope on every window of every class:
    /// tokens spent in `[t, t + tau)` never exceed the level at `t` plus
    /// `r tau`, and recorded levels stay within the bucket. Runs in one
    /// pass per class via a suffix maximum.
    pub fn verify_envelope(&self) -> Result<()> {
        for class in 1..=self.phi {
            let r = self.rates[class - 1];
            let size = self.sizes[class - 1];
            // g[s] = tokens spent before slot s, minus r s; the window
            // inequality says no later g may beat g[t] by more than the
            // level held at t
            let mut g = Vec::with_capacity(self.slots + 1);
            let mut spent = 0.0;
            g.push(0.0);
            for slot in 0..self.slots {
                let level = self.tokens_after(slot, class);
                if !(-1e-9..=size + 1e-9).contains(&level) {
                    return Err(Error::Invariant(format!(
                        "class {class} token level {level} escapes [0, {size}] at slot {slot}"
                    )));
                }
                spent += f64::from(self.conformed(slot, class)) * class as f64;
                g.push(spent - r * (slot + 1) as f64);
            }
            let mut suffix = f64::NEG_INFINITY;
            for t in (0..self.slots).rev() {
                suffix = suffix.max(g[t + 1]);
                let level = if t == 0 {
                    self.initial_tokens[class - 1]
                } else {
                    self.tokens_after(t - 1, class)
                };
                if suffix > g[t] + level + 1e-9 {
                    return Err(Error::Invariant(format!(
                        "class {class} spends past its envelope in a window starting at slot {t}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Runs a parallel shaper for `slots` slots and records the trace.
///
/// Each slot, per class: the bucket refills and re-tests its queue, then
/// the slot's arrivals (if any) are offered. Saturated input keeps one
/// fresh packet arriving per class per slot; Bernoulli input flips one
/// seeded coin per class per slot, on independent streams so a class's
/// arrivals do not depend on `phi`.
pub fn run_parallel(
    mut shaper: ParallelShaper,
    arrivals: &ArrivalModel,
    slots: usize,
    seed: u64,
) -> Result<ShaperTrace> {
    if slots == 0 {
        return Err(Error::InvalidParameter("run needs at least one slot".into()));
    }
    let phi = shaper.phi();
    arrivals.validate(phi)?;
    let mut rngs: Vec<ChaCha8Rng> = (0..phi)
        .map(|class| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(class as u64);
            rng
        })
        .collect();
    let initial_tokens: Vec<f64> = shaper.buckets.iter().map(TokenBucket::tokens).collect();
    let mut offered = vec![0u32; slots * phi];
    let mut conformed = vec![0u32; slots * phi];
    let mut tokens_after = vec![0.0f64; slots * phi];
    for slot in 0..slots {
        for (k, bucket) in shaper.buckets.iter_mut().enumerate() {
            let class = (k + 1) as u32;
            let cell = slot * phi + k;
            conformed[cell] += bucket.tick().len() as u32;
            let arrived = match arrivals {
                ArrivalModel::Saturated => true,
                ArrivalModel::Bernoulli(rates) => rngs[k].gen_bool(rates[k]),
            };
            if arrived {
                offered[cell] += 1;
                if bucket.offer(class)? == OfferOutcome::Conformed {
                    conformed[cell] += 1;
                }
            }
            tokens_after[cell] = bucket.tokens();
        }
    }
    Ok(ShaperTrace {
        phi,
        slots,
        rates: shaper.rates(),
        sizes: shaper.buckets.iter().map(TokenBucket::size).collect(),
        initial_tokens,
        offered,
        conformed,
        tokens_after,
    })
}

// --------------------------------------------------------------------------
// tests
// --------------------------------------------------------------------------
