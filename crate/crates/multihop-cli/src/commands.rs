//! One function per subcommand.
//!
//! Every function resolves its flags into library calls, renders the result
//! (canonical JSON through `ReportDocument`, or one of the fixed-header CSV
//! layouts), and hands the bytes to the output sink.  Nothing here consults
//! a clock or ambient randomness; rerunning a command with equal flags must
//! reproduce the artifact byte for byte.

use std::fs;

use anyhow::{bail, Context, Result};
use serde_json::json;

use multihop::aloha::{solve_success_probability, AlohaHopModel, SuccessProbability};
use multihop::distance::{alpha_for_region, HopCountPmf, Moment, ScalingLaw};
use multihop::distspec::DistSpec;
use multihop::fairness::{maxmin_allocation, optimize_with_qos, proportional_allocation};
use multihop::report::{
    fmt12, round_sig12, scaling_csv, shaper_trace_csv, tail_curve_csv, ReportDocument, ScalingRow,
};
use multihop::shaper::{run_parallel, ParallelShaper, SplitRule};
use multihop::sim::{estimate_tail, SimConfig, SimMode};
use multihop::tail::tail_bounds;
use multihop::transport::{flow_relations, TransportModel};

use crate::output::{emit, with_suffix};
use crate::{AnalyzeArgs, Criterion, HopArgs, OptimizeArgs, Rule, ScalingArgs, ShapeArgs, SimulateArgs, TailArgs};

fn tool(subcommand: &str) -> String {
    format!("multihop {subcommand} {}", env!("CARGO_PKG_VERSION"))
}

/// Builds the hop model from the shared operating-point flags, keeping the
/// solver diagnostics when the success probability was solved rather than
/// pinned.
fn build_hop(args: &HopArgs) -> Result<(AlohaHopModel, Option<SuccessProbability>)> {
    match (args.nint, args.p) {
        (Some(nint), None) => {
            let root = solve_success_probability(args.theta, nint)?;
            Ok((AlohaHopModel::new(root.p, args.q, args.theta)?, Some(root)))
        }
        (None, Some(p)) => Ok((AlohaHopModel::new(p, args.q, args.theta)?, None)),
        // clap enforces exactly one of --nint / --p
        _ => unreachable!("flag parser admits exactly one success-probability source"),
    }
}

// ----------------------------------------------------------------------------
// analyze
// ----------------------------------------------------------------------------

pub fn analyze(args: &AnalyzeArgs) -> Result<()> {
    let (hop, solved) = build_hop(&args.hop)?;
    let pmf = args.dist.to_pmf()?;
    let flow = flow_relations(args.hop.theta, &pmf, &hop, args.n)?;
    let transport = TransportModel::new(pmf.clone(), hop.clone());

    let mut doc = ReportDocument::new(&tool("analyze"));
    doc.set_config(&json!({
        "theta": args.hop.theta,
        "q": args.hop.q,
        "nint": args.hop.nint,
        "p": args.hop.p,
        "dist": args.dist.to_string(),
        "n": args.n,
    }))?;
    doc.insert(
        "hop",
        &json!({
            "p": hop.p(),
            "utilization": hop.utilization(),
            "c": hop.c(),
            "stats": hop.hop_stats(),
            "fixed_point": solved,
        }),
    )?;
    doc.insert("transport", &transport.stats())?;
    doc.insert("flow", &flow)?;
    doc.insert(
        "distance",
        &json!({
            "phi": pmf.phi(),
            "stats": pmf.stats(),
        }),
    )?;
    emit(args.sink.out.as_deref(), &doc.to_json_string()?)
}

// ----------------------------------------------------------------------------
// tail
// ----------------------------------------------------------------------------

pub fn tail(args: &TailArgs) -> Result<()> {
    let (hop, _) = build_hop(&args.hop)?;

    // either a family of geometric route laws keyed by mean, or one law
    let mut curves: Vec<(Option<f64>, HopCountPmf)> = Vec::new();
    if args.el.is_empty() {
        let dist = args.dist.as_ref().expect("flag parser requires --dist or --el");
        curves.push((None, dist.to_pmf()?));
    } else {
        for &mean in &args.el {
            if !(mean >= 1.0) || !mean.is_finite() {
                bail!("mean route length {mean} must be at least 1");
            }
            let pmf = HopCountPmf::geometric(1.0 / mean)
                .with_context(|| format!("route law for el={mean}"))?;
            curves.push((Some(mean), pmf));
        }
    }

    // the hop-delay pmf is shared by every Monte Carlo overlay
    let hop_pmf = args.mc.map(|_| hop.hop_pmf_with_tail(None, 1e-12));

    for (i, (el, pmf)) in curves.iter().enumerate() {
        let mut curve = tail_bounds(pmf, &hop, &args.x.0)?;
        if let Some(samples) = args.mc {
            let hop_pmf = hop_pmf.as_ref().expect("built when --mc is present");
            let seed = args.seed.wrapping_add(i as u64);
            let est = estimate_tail(pmf, hop_pmf, &args.x.0, samples, seed)?;
            curve.attach_monte_carlo(est.estimate, est.ci_halfwidth)?;
        }
        let csv = tail_curve_csv(&curve);
        match (args.sink.out.as_deref(), el) {
            (Some(base), Some(el)) => {
                let path = with_suffix(base, &format!("el{}", fmt12(*el)));
                emit(Some(&path), &csv)?;
            }
            (Some(base), None) => emit(Some(base), &csv)?,
            (None, Some(el)) => emit(None, &format!("# el={}\n{csv}", fmt12(*el)))?,
            (None, None) => emit(None, &csv)?,
        }
    }
    Ok(())
}

// ----------------------------------------------------------------------------
// scaling
// ----------------------------------------------------------------------------

pub fn scaling(args: &ScalingArgs) -> Result<()> {
    let mut rows = Vec::with_capacity(args.rt.0.len());
    for &rt in &args.rt.0 {
        let alpha = alpha_for_region(args.epsilon, rt, args.coverage)?;
        let law = ScalingLaw::PowerLaw {
            alpha,
            epsilon: args.epsilon,
        };
        // per-node throughput relative to nearest-neighbor-only traffic;
        // a diverging mean route length starves it to zero
        let relative_throughput = match law.stats()?.mean {
            Moment::Finite(mean) => args.epsilon / mean,
            Moment::Divergent => 0.0,
        };
        rows.push(ScalingRow {
            rt,
            alpha,
            relative_throughput,
        });
    }
    emit(args.sink.out.as_deref(), &scaling_csv(&rows))
}

// ----------------------------------------------------------------------------
// optimize
// ----------------------------------------------------------------------------

pub fn optimize(args: &OptimizeArgs) -> Result<()> {
    let result = match args.criterion {
        Criterion::Proportional => proportional_allocation(args.theta, args.phi)?,
        Criterion::Maxmin => maxmin_allocation(args.theta, args.phi)?,
        Criterion::Qos => {
            let u_target = args.u_target.expect("flag parser requires --u-target for qos");
            // bias-constrained, throughput-optimal: maximize the fresh-packet rate
            optimize_with_qos(|rates| rates.iter().sum(), args.theta, u_target, args.phi)?
        }
    };
    let pmf = result.allocation.pmf()?;
    let echo = DistSpec::Explicit {
        probs: pmf.probs().iter().copied().map(round_sig12).collect(),
    };

    let mut doc = ReportDocument::new(&tool("optimize"));
    doc.set_config(&json!({
        "theta": args.theta,
        "phi": args.phi,
        "criterion": args.criterion.name(),
        "u_target": args.u_target,
    }))?;
    doc.insert(
        "allocation",
        &json!({
            "rates": result.allocation.rates(),
            "network_throughput": result.network_throughput,
            "hop_throughput": result.allocation.throughput(),
            "workload_bias": result.workload_bias,
            "log_estimates": result.log_estimates.map(|le| json!({
                "network_throughput": le.network_throughput,
                "workload_bias": le.workload_bias,
            })),
        }),
    )?;
    doc.insert("dist", &echo.to_string())?;
    emit(args.sink.out.as_deref(), &doc.to_json_string()?)
}

// ----------------------------------------------------------------------------
// simulate
// ----------------------------------------------------------------------------

fn mode_name(mode: SimMode) -> &'static str {
    match mode {
        SimMode::MeanField => "meanfield",
        SimMode::Torus => "torus",
    }
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let text = fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let config: SimConfig = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", args.config.display()))?;
    if let Some(mode) = args.mode {
        if mode.to_sim() != config.mode {
            bail!(
                "--mode {} disagrees with the config's {}",
                mode_name(mode.to_sim()),
                mode_name(config.mode)
            );
        }
    }
    let report = config.run()?;

    let mut doc = ReportDocument::new(&tool("simulate"));
    doc.seed = Some(config.seed);
    doc.set_config(&config)?;
    doc.insert("report", &report)?;
    doc.insert(
        "derived",
        &json!({
            "flow_residual": report.flow_residual(),
            "population_via_input": report.population_via_input(),
            "population_via_hops": report.population_via_hops(),
        }),
    )?;
    emit(args.sink.out.as_deref(), &doc.to_json_string()?)
}

// ----------------------------------------------------------------------------
// shape
// ----------------------------------------------------------------------------

pub fn shape(args: &ShapeArgs) -> Result<()> {
    let rule = match args.rule {
        Rule::Equal => SplitRule::EqualSplit,
        Rule::Prop => SplitRule::ProportionalToL,
    };
    let shaper = ParallelShaper::new(args.r, args.b, args.phi, rule)?;
    let trace = run_parallel(shaper, &args.arrival.0, args.slots, args.seed)?;
    // the envelope is the shaper's contract; refuse to emit a trace that
    // violates it rather than hand a broken artifact downstream
    trace.verify_envelope()?;
    emit(args.sink.out.as_deref(), &shaper_trace_csv(&trace))
}
