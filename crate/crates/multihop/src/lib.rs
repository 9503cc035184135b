//! Delay and throughput analysis of multihop wireless random-access
//! networks.
//!
//! A packet in a slotted mesh network crosses a random number of relay
//! hops `L`, pays a queueing-plus-contention delay `T` at each one, and
//! arrives after a transport delay that is a random sum:
//!
//! ```text
//! D = T_1 + T_2 + ... + T_L,        E[D] = E[L] E[T]
//! ```
//!
//! This crate carries that composition end to end, analytically where
//! closed forms exist and by simulation where they do not:
//!
//! * [`distance`]: route-length laws `f(l)`, their moments, residual
//!   forms, continuous scaling families, and a scalability classifier for
//!   allocation families as the network grows;
//! * [`aloha`]: the per-hop model; the contention fixed point
//!   `p = exp(-theta n_int / p)`, head-of-line service, and the geometric
//!   per-hop delay tail `Pr{T > x} = beta2 c^floor(x)`;
//! * [`transport`]: journey-level statistics, flow conservation
//!   (`lambda E[L] = theta`), population counts, and an exact
//!   convolution oracle for `Pr{D > L x}`;
//! * [`tail`]: the large-deviation rate function of the per-hop delay in
//!   closed form, and lower/upper/approximate bound curves for the
//!   transport-delay tail;
//! * [`fairness`]: proportional, max-min, and bias-constrained rate
//!   allocations across route-length classes;
//! * [`shaper`]: route-length-aware token buckets, bucket sizing, and
//!   per-class shaping with an exhaustively checkable service envelope;
//! * [`sim`]: deterministic slot-synchronous Monte Carlo in mean-field
//!   and torus geometries, plus direct tail estimation;
//! * [`distspec`] and [`report`]: the `geometric:0.2` distribution
//!   mini-language and byte-deterministic JSON/CSV artifacts.
//!
//! The [`guide`] module embeds the full book; start there for a guided
//! tour. The `multihop` binary exposes everything as subcommands.
//!
//! # Quick start
//!
//! ```
//! use multihop::aloha::AlohaHopModel;
//! use multihop::distance::HopCountPmf;
//! use multihop::tail::tail_bounds;
//! use multihop::transport::TransportModel;
//!
//! // geometric routes, mean 5 hops; ~10 interferers per node; retry 0.1
//! let pmf = HopCountPmf::geometric(0.2)?;
//! let hop = AlohaHopModel::from_contention(0.03, 10.0, 0.1)?;
//!
//! // mean per-hop delay at this operating point: 11.27 slots
//! assert!((hop.hop_stats().mean - 11.27).abs() < 0.01);
//!
//! // journeys: E[D] = E[L] E[T]
//! let journey = TransportModel::new(pmf.clone(), hop.clone()).stats();
//! assert!((journey.mean - 56.36).abs() < 0.01);
//!
//! // tail bounds for "more than 20 slots per hop"
//! let curve = tail_bounds(&pmf, &hop, &[20.0])?;
//! assert!(curve.lower[0] <= curve.upper[0]);
//! # Ok::<(), multihop::Error>(())
//! ```
//!
//! # Conventions
//!
//! Time is slotted and all rates are per node per slot. Route lengths and
//! delays are positive integers; pmfs over hops live on `1..=phi`.
//! Exceedance is strict with budgets scaled by route length:
//! `Pr{D > L x}` means `D >= floor(L x) + 1`. Every function validates
//! its domain and returns [`Error`] instead of panicking on caller input;
//! panics are reserved for internal invariant violations.

#![forbid(unsafe_code)]
// guards are spelled `!(x > 0.0)` so NaN fails validation; the un-negated
// comparison would admit it
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aloha;
pub mod distance;
pub mod distspec;
pub mod error;
pub mod fairness;
pub mod guide;
pub mod report;
pub mod shaper;
pub mod sim;
pub mod tail;
pub mod transport;

pub use error::{Error, Result};

/// Compiles the README's example as a doc-test so it cannot rot.
#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
mod readme {}
