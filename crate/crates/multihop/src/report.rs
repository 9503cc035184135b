//! Deterministic report documents and curve files.
//!
//! Everything emitted to disk flows through this module so that equal inputs
//! produce byte-identical artifacts:
//!
//! * floats are rounded to 12 significant digits before serialization,
//!   below every analytic tolerance in the crate and above accumulation
//!   noise;
//! * JSON objects serialize with sorted keys and no wall-clock fields, so
//!   `(config, seed)` fully determines the bytes;
//! * CSV files carry fixed headers, one per curve kind:
//!
//! ```text
//! x,lower,upper,approx,mc,mc_ci          tail curve
//! slot,class,offered,conformed,tokens    shaper trace
//! k,mass                                 hop-count pmf
//! rt,alpha,relative_throughput           traffic-locality sweep
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::distance::HopCountPmf;
use crate::error::{Error, Result};
use crate::shaper::ShaperTrace;
use crate::tail::TailCurve;

// --------------------------------------------------------------------------
// Float policy
// --------------------------------------------------------------------------

/// Rounds to 12 significant digits (round half to even via the decimal
/// formatter). Zero and non-finite values pass through.
#[must_use]
pub fn round_sig12(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    // one leading digit plus eleven fractional digits = 12 significant
    format!("{x:.11e}").parse().expect("rounded float reparses")
}

/// Renders a float at 12 significant digits, shortest form: plain decimal in
/// the human range, exponent notation outside it.
#[must_use]
pub fn fmt12(x: f64) -> String {
    let r = round_sig12(x);
    if r == 0.0 {
        return "0".into();
    }
    let mag = r.abs();
    if (1e-4..1e15).contains(&mag) {
        format!("{r}")
    } else {
        format!("{r:e}")
    }
}

// --------------------------------------------------------------------------
// Report document
// --------------------------------------------------------------------------

/// One self-describing experiment artifact: enough metadata to reproduce the
/// run bit-for-bit, plus named result sections.
///
/// There is deliberately no timestamp: reproducibility promises that equal
/// `(config, seed)` yield equal bytes, and a clock would break that.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    /// Emitting tool and version, such as `multihop 0.1.0`.
    pub tool: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Fully resolved configuration: every flag and default the run used.
    pub config: Value,
    /// Result payloads keyed by module name, serialized sorted.
    pub sections: BTreeMap<String, Value>,
}

impl ReportDocument {
    #[must_use]
    pub fn new(tool: &str) -> Self {
        Self {
            tool: tool.to_string(),
            seed: None,
            config: Value::Null,
            sections: BTreeMap::new(),
        }
    }

    pub fn set_config<T: Serialize>(&mut self, config: &T) -> Result<()> {
        self.config = to_value(config)?;
        Ok(())
    }

    pub fn insert<T: Serialize>(&mut self, key: &str, section: &T) -> Result<()> {
        self.sections.insert(key.to_string(), to_value(section)?);
        Ok(())
    }

    /// Canonical JSON: sorted keys, 12-significant-digit floats, trailing
    /// newline.
    pub fn to_json_string(&self) -> Result<String> {
        let mut value = to_value(self)?;
        canonicalize(&mut value);
        let body = serde_json::to_string_pretty(&value)
            .map_err(|e| Error::Invariant(format!("report serialization failed: {e}")))?;
        Ok(body + "\n")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("report document: {e}")))
    }
}

fn to_value<T: Serialize>(value: &T) -> Result<Value> {
    serde_json::to_value(value).map_err(|e| Error::Invariant(format!("serialization failed: {e}")))
}

/// Rounds every float in the tree; integers pass through untouched.
fn canonicalize(value: &mut Value) {
    match value {
        Value::Number(n) => {
            if n.is_f64() {
                let rounded = round_sig12(n.as_f64().expect("is_f64"));
                if let Some(num) = serde_json::Number::from_f64(rounded) {
                    *n = num;
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(canonicalize),
        Value::Object(map) => map.values_mut().for_each(canonicalize),
        _ => {}
    }
}

// --------------------------------------------------------------------------
// CSV builders
// --------------------------------------------------------------------------

/// `x,lower,upper,approx,mc,mc_ci`; the two Monte Carlo columns stay empty
/// when no overlay is attached.
#[must_use]
pub fn tail_curve_csv(curve: &TailCurve) -> String {
    let mut out = String::from("x,lower,upper,approx,mc,mc_ci\n");
    for i in 0..curve.len() {
        let _ = write!(
            out,
            "{},{},{}",
            fmt12(curve.grid[i]),
            fmt12(curve.lower[i]),
            fmt12(curve.upper[i])
        );
        let _ = write!(out, ",{}", fmt12(curve.approx[i]));
        match (&curve.mc_estimate, &curve.mc_ci_halfwidth) {
            (Some(mc), Some(ci)) => {
                let _ = writeln!(out, ",{},{}", fmt12(mc[i]), fmt12(ci[i]));
            }
            _ => out.push_str(",,\n"),
        }
    }
    out
}

/// `slot,class,offered,conformed,tokens`, slot-major then class.
#[must_use]
pub fn shaper_trace_csv(trace: &ShaperTrace) -> String {
    let mut out = String::from("slot,class,offered,conformed,tokens\n");
    let phi = trace.phi();
    for slot in 0..trace.len() {
        for class in 1..=phi {
            let _ = writeln!(
                out,
                "{slot},{class},{},{},{}",
                trace.offered(slot, class),
                trace.conformed(slot, class),
                fmt12(trace.tokens_after(slot, class)),
            );
        }
    }
    out
}

/// `k,mass` over the full support `1..=phi`.
#[must_use]
pub fn pmf_csv(pmf: &HopCountPmf) -> String {
    let mut out = String::from("k,mass\n");
    for (i, mass) in pmf.probs().iter().enumerate() {
        let _ = writeln!(out, "{},{}", i + 1, fmt12(*mass));
    }
    out
}

/// One row of the traffic-locality sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    /// Traffic-region radius.
    pub rt: f64,
    /// Power-law exponent that confines the coverage fraction within `rt`.
    pub alpha: f64,
    /// Per-node throughput relative to the nearest-neighbor pattern
    /// (`epsilon / E[L]`); zero when the mean journey diverges.
    pub relative_throughput: f64,
}

/// `rt,alpha,relative_throughput`.
#[must_use]
pub fn scaling_csv(rows: &[ScalingRow]) -> String {
    let mut out = String::from("rt,alpha,relative_throughput\n");
    for row in rows {
        let _ = writeln!(
            out,
            "{},{},{}",
            fmt12(row.rt),
            fmt12(row.alpha),
            fmt12(row.relative_throughput)
        );
    }
    out
}

// --------------------------------------------------------------------------
// Tests
// --------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aloha::AlohaHopModel;
    use crate::shaper::{run_parallel, ArrivalModel, ParallelShaper, SplitRule};
    use crate::tail::tail_bounds;

    // the over-long literals are the inputs under test
    #[allow(clippy::excessive_precision)]
    #[test]
    fn rounding_keeps_exactly_twelve_digits() {
        assert_eq!(round_sig12(11.271650645802341), 11.2716506458);
        assert_eq!(round_sig12(-11.271650645802341), -11.2716506458);
        assert_eq!(round_sig12(0.612992715069321), 0.612992715069);
        assert_eq!(round_sig12(2.763953195712345e-115), 2.76395319571e-115);
        assert_eq!(round_sig12(123456789.0), 123456789.0);
        assert_eq!(round_sig12(0.0), 0.0);
        assert!(round_sig12(f64::INFINITY).is_infinite());
    }

    #[allow(clippy::excessive_precision)]
    #[test]
    fn formatting_picks_the_readable_branch() {
        assert_eq!(fmt12(12.0), "12");
        assert_eq!(fmt12(0.05), "0.05");
        assert_eq!(fmt12(11.271650645802341), "11.2716506458");
        assert_eq!(fmt12(0.0), "0");
        assert_eq!(fmt12(-0.0), "0");
        assert_eq!(fmt12(2.5e-115), "2.5e-115");
        assert_eq!(fmt12(3.0e18), "3e18");
        assert_eq!(fmt12(1e-4), "0.0001");
    }

    #[test]
    fn documents_round_trip_and_stay_canonical() {
        let mut doc = ReportDocument::new("multihop 0.0.0-test");
        doc.seed = Some(7);
        doc.set_config(&serde_json::json!({"theta": 0.03, "q": 0.1})).unwrap();
        doc.insert("zeta", &serde_json::json!({"b": 1.0 / 3.0, "a": 2}))
            .unwrap();
        doc.insert("alpha", &vec![0.1 + 0.2]).unwrap();
        let text = doc.to_json_string().unwrap();
        // keys sorted, floats rounded
        assert!(text.find("\"alpha\"").unwrap() < text.find("\"zeta\"").unwrap());
        assert!(text.contains("0.333333333333"));
        assert!(!text.contains("0.30000000000000004"), "0.1 + 0.2 must round to 0.3");
        let back = ReportDocument::from_json_str(&text).unwrap();
        assert_eq!(back.to_json_string().unwrap(), text);
        assert!(text.ends_with('\n'));
    }

    #[test]
    fn tail_csv_has_the_fixed_header_and_optional_overlay() {
        let pmf = HopCountPmf::geometric(0.2).unwrap();
        let model = AlohaHopModel::from_contention(0.03, 10.0, 0.1).unwrap();
        let mut curve = tail_bounds(&pmf, &model, &[12.0, 14.0]).unwrap();
        let bare = tail_curve_csv(&curve);
        let mut lines = bare.lines();
        assert_eq!(lines.next(), Some("x,lower,upper,approx,mc,mc_ci"));
        assert!(bare.lines().skip(1).all(|l| l.ends_with(",,")));
        curve
            .attach_monte_carlo(vec![0.3, 0.2], vec![0.001, 0.001])
            .unwrap();
        let overlaid = tail_curve_csv(&curve);
        assert!(overlaid.lines().nth(1).unwrap().ends_with(",0.3,0.001"));
        assert_eq!(overlaid, tail_curve_csv(&curve));
    }

    #[test]
    fn shaper_csv_walks_slot_major() {
        let shaper = ParallelShaper::new(0.5, 4.0, 2, SplitRule::EqualSplit).unwrap();
        let trace = run_parallel(shaper, &ArrivalModel::Saturated, 3, 9).unwrap();
        let csv = shaper_trace_csv(&trace);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "slot,class,offered,conformed,tokens");
        assert_eq!(lines.len(), 1 + 3 * 2);
        assert!(lines[1].starts_with("0,1,"));
        assert!(lines[2].starts_with("0,2,"));
        assert!(lines[3].starts_with("1,1,"));
    }

    #[test]
    fn pmf_and_scaling_builders_are_stable() {
        let pmf = HopCountPmf::uniform(3).unwrap();
        let csv = pmf_csv(&pmf);
        assert_eq!(csv, "k,mass\n1,0.333333333333\n2,0.333333333333\n3,0.333333333333\n");
        let rows = vec![ScalingRow {
            rt: 5.0,
            alpha: -3.0,
            relative_throughput: 0.5,
        }];
        assert_eq!(scaling_csv(&rows), "rt,alpha,relative_throughput\n5,-3,0.5\n");
    }
}
