//! Fairness-driven rate allocations across hop-count classes.
//!
//! A node spends one transmission per hop, so per-class fresh-packet rates
//! `lambda(l)` compete for the per-node throughput budget through the
//! resource constraint `sum_l l lambda(l) = theta`. Two classic criteria
//! have closed forms on the classes `l = 1..phi`:
//!
//! ```text
//! proportional: lambda(l) = theta / (l phi)      max-min: lambda(l) = 2 theta / (phi (phi+1))
//!               lambda    = (theta/phi) H_phi             lambda   = 2 theta / (phi+1)
//!               u         = H_phi (phi+3) / (4 phi)       u        = (2 phi+4) / (3 phi+3)
//! ```
//!
//! with `H_phi` the harmonic sum. `lambda` is the resulting fresh-packet
//! rate and `u` the workload bias of the induced hop-count law,
//!
//! ```text
//! u = (sum_l l^2 lambda(l) * sum_l lambda(l) + theta * sum_l lambda(l)) / (2 theta^2)
//! ```
//!
//! the mean residual workload per admitted hop, relative to the mean route
//! length. Proportional allocation yields more throughput than max-min at
//! every `phi`; max-min pins the bias below one while the proportional bias
//! grows like `H_phi / 4`.
//!
//! [`optimize_with_qos`] generalizes both: it maximizes a caller-supplied
//! objective over allocations that meet the throughput budget exactly and
//! hit a prescribed workload bias. The solver is a penalty method with
//! multi-start pairwise-transfer descent on the throughput shares, checked
//! against dense grid search at tiny `phi`; it refuses (with the closest
//! achieved residual) rather than return an infeasible point.

use crate::distance::RateAllocation;
use crate::error::{Error, Result};

// --------------------------------------------------------------------------
// results
// --------------------------------------------------------------------------

/// Which criterion produced an allocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FairnessCriterion {
    Proportional,
    MaxMin,
    Custom,
}

/// Large-`phi` logarithmic estimates reported next to the exact values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEstimates {
    /// `theta ln(phi) / phi`, the harmonic sum flattened to a logarithm.
    pub network_throughput: f64,
    /// `ln(phi) / 4`.
    pub workload_bias: f64,
}

/// A rate allocation with its fresh-packet throughput and workload bias.
#[derive(Debug, Clone, PartialEq)]
pub struct FairnessResult {
    /// Per-class rates `lambda(l)`, `l = 1..=phi`.
    pub allocation: RateAllocation,
    /// Fresh-packet rate `lambda = sum_l lambda(l)` the allocation admits.
    pub network_throughput: f64,
    /// Exact workload bias `u` of the induced hop-count law.
    pub workload_bias: f64,
    /// Criterion that produced the allocation.
    pub criterion: FairnessCriterion,
    /// Logarithmic estimates, for the criteria that have classic ones.
    pub log_estimates: Option<LogEstimates>,
}

fn check_theta_phi(theta: f64, phi: usize) -> Result<()> {
    if !theta.is_finite() || theta <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "throughput budget theta = {theta} must be positive"
        )));
    }
    if phi == 0 {
        return Err(Error::InvalidParameter(
            "hop-count cutoff phi must be at least 1".into(),
        ));
    }
    Ok(())
}

/// Harmonic sum `H_phi = 1 + 1/2 + ... + 1/phi`.
#[must_use]
pub fn harmonic(phi: usize) -> f64 {
    // summed small-to-large so the tiny terms are not absorbed by the head
    (1..=phi).rev().map(|l| 1.0 / l as f64).sum()
}

// --------------------------------------------------------------------------
// closed-form criteria
// --------------------------------------------------------------------------

/// Proportionally fair allocation `lambda(l) = theta / (l phi)`: every
/// class holds the same in-flight backlog `l lambda(l)`.
///
/// Exact throughput `(theta/phi) H_phi` and exact bias
/// `H_phi (phi+3) / (4 phi)`, with the logarithmic estimates alongside.
pub fn proportional_allocation(theta: f64, phi: usize) -> Result<FairnessResult> {
    check_theta_phi(theta, phi)?;
    let p = phi as f64;
    let rates: Vec<f64> = (1..=phi).map(|l| theta / (l as f64 * p)).collect();
    let allocation = RateAllocation::new(rates)?;
    let h = harmonic(phi);
    Ok(FairnessResult {
        network_throughput: theta * h / p,
        workload_bias: h * (p + 3.0) / (4.0 * p),
        allocation,
        criterion: FairnessCriterion::Proportional,
        log_estimates: Some(LogEstimates {
            network_throughput: theta * p.ln() / p,
            workload_bias: p.ln() / 4.0,
        }),
    })
}

/// Max-min fair allocation: the one constant rate per class,
/// `lambda(l) = 2 theta / (phi (phi+1))`.
pub fn maxmin_allocation(theta: f64, phi: usize) -> Result<FairnessResult> {
    check_theta_phi(theta, phi)?;
    let p = phi as f64;
    let rate = 2.0 * theta / (p * (p + 1.0));
    let allocation = RateAllocation::new(vec![rate; phi])?;
    Ok(FairnessResult {
        network_throughput: 2.0 * theta / (p + 1.0),
        workload_bias: (2.0 * p + 4.0) / (3.0 * p + 3.0),
        allocation,
        criterion: FairnessCriterion::MaxMin,
        log_estimates: None,
    })
}

// --------------------------------------------------------------------------
// constrained optimizer
// --------------------------------------------------------------------------

/// Workload bias of the allocation `lambda(l) = theta w(l) / l` given its
/// throughput shares `w` (nonnegative, summing to one).
fn bias_of_shares(w: &[f64], theta: f64) -> f64 {
    let mut s0 = 0.0;
    let mut s2 = 0.0;
    for (i, &wi) in w.iter().enumerate() {
        let l = (i + 1) as f64;
        s0 += theta * wi / l;
        s2 += theta * wi * l;
    }
    (s2 * s0 + theta * s0) / (2.0 * theta * theta)
}

fn rates_of_shares(w: &[f64], theta: f64) -> Vec<f64> {
    w.iter()
        .enumerate()
        .map(|(i, &wi)| theta * wi / (i + 1) as f64)
        .collect()
}

/// Best `t` for `score(t)` on `[lo, hi]`: coarse scan, then golden-section
/// refinement of the best cell. Scores of minus infinity or NaN lose.
fn line_max(mut score: impl FnMut(f64) -> f64, lo: f64, hi: f64) -> (f64, f64) {
    const CELLS: usize = 16;
    let clean = |s: f64| if s.is_nan() { f64::NEG_INFINITY } else { s };
    let mut best_i = 0;
    let mut best_s = f64::NEG_INFINITY;
    for i in 0..=CELLS {
        let t = lo + (hi - lo) * i as f64 / CELLS as f64;
        let s = clean(score(t));
        if s > best_s {
            best_s = s;
            best_i = i;
        }
    }
    let cell = (hi - lo) / CELLS as f64;
    let mut a = lo + cell * (best_i.saturating_sub(1)) as f64;
    let mut b = (lo + cell * (best_i + 1) as f64).min(hi);
    const INV_GOLDEN: f64 = 0.618_033_988_749_894_9;
    let mut t1 = b - INV_GOLDEN * (b - a);
    let mut t2 = a + INV_GOLDEN * (b - a);
    let mut s1 = clean(score(t1));
    let mut s2 = clean(score(t2));
    for _ in 0..60 {
        if s1 < s2 {
            a = t1;
            t1 = t2;
            s1 = s2;
            t2 = a + INV_GOLDEN * (b - a);
            s2 = clean(score(t2));
        } else {
            b = t2;
            t2 = t1;
            s2 = s1;
            t1 = b - INV_GOLDEN * (b - a);
            s1 = clean(score(t1));
        }
    }
    let t = 0.5 * (a + b);
    (t, clean(score(t)))
}

/// One multi-pass pairwise-transfer descent of the penalized score at a
/// fixed penalty weight. Transfers move throughput share between two
/// classes, so the budget constraint holds by construction.
fn descend(w: &mut Vec<f64>, score: impl Fn(&[f64]) -> f64) {
    let phi = w.len();
    let mut current = score(w);
    for _pass in 0..40 {
        let mut improved = false;
        for i in 0..phi {
            for j in (i + 1)..phi {
                let (wi, wj) = (w[i], w[j]);
                if wi + wj <= 0.0 {
                    continue;
                }
                // t is the share moved from class i to class j
                let trial = |t: f64, w: &mut Vec<f64>| {
                    w[i] = wi - t;
                    w[j] = wj + t;
                };
                let mut probe = w.clone();
                let (t, s) = line_max(
                    |t| {
                        trial(t, &mut probe);
                        score(&probe)
                    },
                    -wj,
                    wi,
                );
                if s > current + 1e-14 * current.abs().max(1.0) {
                    trial(t, w);
                    current = s;
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
        // transfers preserve the share sum up to round-off; renormalize so
        // the drift never compounds
        let total: f64 = w.iter().sum();
        for wi in w.iter_mut() {
            *wi /= total;
        }
        current = score(w);
    }
}

/// Deterministic seed shares covering the corners and the classic shapes.
fn seed_shares(phi: usize) -> Vec<Vec<f64>> {
    let p = phi as f64;
    let uniform = vec![1.0 / p; phi];
    let mut seeds = vec![uniform.clone()];
    if phi > 1 {
        // proportional backlog: shares grow with l
        let grow: Vec<f64> = (1..=phi).map(|l| l as f64).collect();
        // inverse: shares shrink with l
        let shrink: Vec<f64> = (1..=phi).map(|l| 1.0 / l as f64).collect();
        for mut s in [grow, shrink] {
            let total: f64 = s.iter().sum();
            for v in &mut s {
                *v /= total;
            }
            seeds.push(s);
        }
        for corner in [0, phi - 1] {
            let mut s = uniform.clone();
            for (k, v) in s.iter_mut().enumerate() {
                *v = if k == corner { 0.9 } else { 0.1 / (p - 1.0) };
            }
            seeds.push(s);
        }
    }
    seeds
}

/// Maximizes `objective` over allocations on classes `1..=phi` that spend
/// the throughput budget exactly and hit the workload-bias target.
///
/// The search runs on throughput shares (so the budget holds by
/// construction) with an escalating quadratic penalty on the relative bias
/// residual, restarted from several fixed seeds. The returned point never
/// violates the bias target by more than `1e-6` relative; if no start
/// reaches that, the closest residual is reported as infeasibility.
pub fn optimize_with_qos<F>(
    objective: F,
    theta: f64,
    u_target: f64,
    phi: usize,
) -> Result<FairnessResult>
where
    F: Fn(&[f64]) -> f64,
{
    check_theta_phi(theta, phi)?;
    if phi > 20 {
        return Err(Error::InvalidParameter(format!(
            "the bias-constrained solver supports phi <= 20, got {phi}"
        )));
    }
    if !u_target.is_finite() || u_target <= 0.5 {
        return Err(Error::InvalidParameter(format!(
            "workload-bias target {u_target} must exceed 1/2"
        )));
    }
    const REL_TOL: f64 = 1e-6;
    if phi == 1 {
        // the budget pins the one rate, which forces u = 1
        if (u_target - 1.0).abs() > REL_TOL {
            return Err(Error::Infeasible(format!(
                "phi = 1 forces workload bias 1, off the target {u_target} by {:.3e}",
                (u_target - 1.0).abs()
            )));
        }
        return Ok(FairnessResult {
            allocation: RateAllocation::new(vec![theta])?,
            network_throughput: theta,
            workload_bias: 1.0,
            criterion: FairnessCriterion::Custom,
            log_estimates: None,
        });
    }
    // the bias is minimized by concentrating every packet on the longest
    // route, so targets below that floor are infeasible outright
    let u_floor = (phi as f64 + 1.0) / (2.0 * phi as f64);
    if u_target < u_floor {
        return Err(Error::Infeasible(format!(
            "workload bias cannot go below {u_floor:.6} on phi = {phi} classes; \
             target {u_target} misses by {:.3e}",
            u_floor - u_target
        )));
    }

    let residual = |w: &[f64]| (bias_of_shares(w, theta) - u_target) / u_target;
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut closest_residual = f64::INFINITY;
    for seed in seed_shares(phi) {
        let mut w = seed;
        // scale the penalty to the seed's objective so escalation starts
        // where the two terms compete
        let scale = objective(&rates_of_shares(&w, theta)).abs().max(1.0);
        let mut mu = 10.0 * scale;
        for _round in 0..10 {
            descend(&mut w, |w| {
                let r = residual(w);
                objective(&rates_of_shares(w, theta)) - mu * r * r
            });
            if residual(&w).abs() <= REL_TOL * 1e-2 {
                break;
            }
            mu *= 10.0;
        }
        let r = residual(&w).abs();
        closest_residual = closest_residual.min(r);
        if r <= REL_TOL {
            let value = objective(&rates_of_shares(&w, theta));
            if best.as_ref().is_none_or(|(b, _)| value > *b) {
                best = Some((value, w));
            }
        }
    }
    let Some((_, w)) = best else {
        return Err(Error::Infeasible(format!(
            "no allocation on phi = {phi} classes reached workload bias {u_target}; \
             closest relative residual {closest_residual:.3e}"
        )));
    };
    let allocation = RateAllocation::new(rates_of_shares(&w, theta))?;
    let bias = allocation.workload_bias()?;
    debug_assert!((allocation.throughput() - theta).abs() <= 1e-10 * theta);
    debug_assert!((bias - u_target).abs() <= REL_TOL * u_target);
    Ok(FairnessResult {
        network_throughput: allocation.lambda(),
        workload_bias: bias,
        allocation,
        criterion: FairnessCriterion::Custom,
        log_estimates: None,
    })
}

// --------------------------------------------------------------------------
// tests
// --------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    fn log_sum(rates: &[f64]) -> f64 {
        rates.iter().map(|r| r.ln()).sum()
    }

    #[test]
    fn proportional_shape_and_budget() {
        let res = proportional_allocation(0.03, 2).unwrap();
        assert_eq!(res.criterion, FairnessCriterion::Proportional);
        assert_close(res.allocation.rate(1), 0.015, 1e-15);
        assert_close(res.allocation.rate(2), 0.0075, 1e-15);
        assert_close(res.allocation.throughput(), 0.03, 1e-12);

        // equal backlog per class: l * lambda(l) is constant
        let res = proportional_allocation(0.03, 17).unwrap();
        assert_close(res.allocation.throughput(), 0.03, 1e-12);
        for l in 1..=17 {
            assert_close(l as f64 * res.allocation.rate(l), 0.03 / 17.0, 1e-15);
        }
    }

    #[test]
    fn proportional_frozen_values() {
        // frozen against an exact-rational harmonic sum
        let res = proportional_allocation(0.03, 50).unwrap();
        assert_close(harmonic(50), 4.499205338329425, 1e-13);
        assert_close(res.network_throughput, 0.0026995232029976544, 1e-15);
        assert_close(res.network_throughput, res.allocation.lambda(), 1e-15);
        assert_close(res.workload_bias, 1.1922894146572975, 1e-12);
        assert_close(
            res.workload_bias,
            res.allocation.workload_bias().unwrap(),
            1e-12,
        );
        let log = res.log_estimates.unwrap();
        assert_close(log.workload_bias, 0.9780057513570365, 1e-15);
        assert_close(log.network_throughput, 0.03 * 0.9780057513570365 * 4.0 / 50.0, 1e-12);
    }

    #[test]
    fn maxmin_closed_forms() {
        let res = maxmin_allocation(0.03, 9).unwrap();
        assert_eq!(res.criterion, FairnessCriterion::MaxMin);
        assert_close(res.network_throughput, 0.006, 1e-15);
        assert_close(res.allocation.throughput(), 0.03, 1e-12);
        for l in 1..=9 {
            assert_close(res.allocation.rate(l), 2.0 * 0.03 / (9.0 * 10.0), 1e-15);
        }
        assert_close(maxmin_allocation(1.0, 3).unwrap().workload_bias, 10.0 / 12.0, 1e-15);
        // the bias tends to 2/3 from above as phi grows
        let far = maxmin_allocation(1.0, 2000).unwrap().workload_bias;
        assert!(far > 2.0 / 3.0 && far - 2.0 / 3.0 < 1e-3);
    }

    #[test]
    fn closed_form_bias_matches_bilinear_form() {
        for phi in 1..=100 {
            let m = maxmin_allocation(0.4, phi).unwrap();
            assert_close(m.workload_bias, m.allocation.workload_bias().unwrap(), 1e-12);
            let p = proportional_allocation(0.4, phi).unwrap();
            assert_close(p.workload_bias, p.allocation.workload_bias().unwrap(), 1e-12);
        }
    }

    #[test]
    fn proportional_beats_maxmin_throughput() {
        for phi in 1..=100 {
            let p = proportional_allocation(0.05, phi).unwrap();
            let m = maxmin_allocation(0.05, phi).unwrap();
            assert!(p.network_throughput >= m.network_throughput - 1e-15);
        }
    }

    #[test]
    fn qos_single_class_is_fully_pinned() {
        let res = optimize_with_qos(log_sum, 0.03, 1.0, 1).unwrap();
        assert_eq!(res.allocation.rates(), &[0.03]);
        assert_close(res.workload_bias, 1.0, 1e-15);
        assert!(matches!(
            optimize_with_qos(log_sum, 0.03, 0.9, 1),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn qos_matches_grid_search_on_two_classes() {
        // phi = 2 leaves one degree of freedom t = lambda(2); the bias
        // constraint u = 1 - (t/theta)^2 pins t = theta sqrt(1 - u)
        let theta = 0.03;
        let res = optimize_with_qos(log_sum, theta, 0.9, 2).unwrap();
        let t_star = theta * 0.1_f64.sqrt();
        let obj_star = (theta - 2.0 * t_star).ln() + t_star.ln();

        // dense grid over the feasible segment, keeping the bias-nearest
        // point, reproduces the same objective
        let steps = 100_000;
        let mut grid_best = (f64::INFINITY, 0.0);
        for i in 1..steps {
            let t = (theta / 2.0) * i as f64 / steps as f64;
            let gap = (1.0 - (t / theta).powi(2) - 0.9_f64).abs();
            if gap < grid_best.0 {
                grid_best = (gap, (theta - 2.0 * t).ln() + t.ln());
            }
        }
        assert_close(obj_star, grid_best.1, 1e-4);
        assert_close(log_sum(res.allocation.rates()), obj_star, 1e-4);
        assert_close(res.allocation.rate(2), t_star, 1e-6);
        assert_close(res.allocation.throughput(), theta, 1e-12);
        assert!((res.workload_bias - 0.9).abs() <= 1e-6 * 0.9);
    }

    #[test]
    fn qos_reports_infeasible_targets() {
        // below the bias floor (phi+1)/(2 phi)
        let err = optimize_with_qos(log_sum, 0.03, 0.6, 2).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)));
        assert!(err.to_string().contains("0.75"));
        assert!(matches!(
            optimize_with_qos(log_sum, 0.03, 0.55, 5),
            Err(Error::Infeasible(_))
        ));
        // far above anything phi = 2 mixtures can reach
        assert!(matches!(
            optimize_with_qos(log_sum, 0.03, 3.0, 2),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn qos_holds_constraints_at_larger_phi() {
        let theta = 0.05;
        let res = optimize_with_qos(log_sum, theta, 0.8, 5).unwrap();
        assert_close(res.allocation.throughput(), theta, 1e-12);
        assert!((res.workload_bias - 0.8).abs() <= 1e-6 * 0.8);
        assert_eq!(res.criterion, FairnessCriterion::Custom);

        // deterministic: the same call lands on the same allocation
        let again = optimize_with_qos(log_sum, theta, 0.8, 5).unwrap();
        assert_eq!(res.allocation.rates(), again.allocation.rates());

        // a different objective respects the same constraints
        let spread = optimize_with_qos(
            |r| -r.iter().map(|v| v * v).sum::<f64>(),
            theta,
            0.8,
            5,
        )
        .unwrap();
        assert_close(spread.allocation.throughput(), theta, 1e-12);
        assert!((spread.workload_bias - 0.8).abs() <= 1e-6 * 0.8);
    }

    #[test]
    fn parameter_validation() {
        assert!(proportional_allocation(0.0, 5).is_err());
        assert!(proportional_allocation(f64::NAN, 5).is_err());
        assert!(maxmin_allocation(-1.0, 5).is_err());
        assert!(maxmin_allocation(0.03, 0).is_err());
        assert!(optimize_with_qos(log_sum, 0.03, 0.5, 5).is_err());
        assert!(optimize_with_qos(log_sum, 0.03, 0.9, 21).is_err());
        assert!(optimize_with_qos(log_sum, 0.03, 0.9, 0).is_err());
    }
}
