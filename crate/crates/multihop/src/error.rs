//! Error type shared by every module in the crate.
//!
//! The variants distinguish caller mistakes (bad parameters, out-of-domain
//! evaluation points) from model-level refusals (unstable queue, no stable
//! contention root, infeasible constraint set) and from numeric failures
//! (non-convergence, precision exhaustion). CLI layers map the first group to
//! usage-style diagnostics and everything else to exit code 1.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A constructor argument violates its documented range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A probability vector or rate vector is malformed.
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    /// An evaluation point lies outside the domain of the requested transform
    /// or statistic (for example an MGF argument at or beyond its pole).
    #[error("domain: {0}")]
    Domain(String),

    /// Per-node queue utilization is at or above one; stationary per-hop
    /// delay does not exist.
    #[error("unstable queue: utilization {utilization:.6} >= 1")]
    UnstableQueue { utilization: f64 },

    /// The contention fixed point has no root: the offered load
    /// `theta * n_int` exceeds 1/e.
    #[error("no stable success probability: offered load {load:.6} exceeds 1/e")]
    NoStableRoot { load: f64 },

    /// An iterative solver exhausted its budget before meeting tolerance.
    #[error("did not converge: {0}")]
    NonConvergence(String),

    /// A result would be dominated by truncation or round-off error.
    #[error("precision loss: {0}")]
    PrecisionLoss(String),

    /// No allocation satisfies the requested constraints.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// A packet needs more tokens than the bucket can ever hold.
    #[error("oversize packet: {hops} hops exceeds bucket capacity {capacity}")]
    Oversize { hops: u32, capacity: f64 },

    /// An internal mathematical invariant failed; indicates a bug, never a
    /// caller mistake.
    #[error("internal invariant violated: {0}")]
    Invariant(String),

    /// A distribution string or grid string could not be parsed.
    #[error("parse: {0}")]
    Parse(String),
}
