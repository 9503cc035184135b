//! Textual mini-language for hop-count distributions.
//!
//! Configuration files and CLI flags name a distance law as one compact
//! string; this module parses those strings into [`DistSpec`] values and
//! renders them back, round-trip exact:
//!
//! ```text
//! point:4                  all journeys exactly 4 hops
//! uniform:7                uniform on {1, ..., 7}
//! geometric:0.2            f(l) = g (1-g)^(l-1), truncated at mass 1e-12
//! geometric:0.2:40         same family, hard-truncated at phi = 40
//! power:-3.5:0.5           continuous F(x) = 1 - (x/eps)^(1+alpha), x >= eps
//! rayleigh:3               continuous f(x) proportional to x exp(-x^2/(2 s^2))
//! explicit:[0.5,0.3,0.2]   literal pmf over {1, 2, 3}
//! ```
//!
//! Continuous families are discretized onto the lattice `1..=phi` via
//! [`ScalingLaw::discretize`] when a pmf is required; `phi` is chosen so the
//! continuous tail beyond it is below 1e-9. Parsing is locale-free and
//! [`Display`](std::fmt::Display) emits the shortest float representation, so
//! `parse . to_string` is the identity on canonical strings.

use std::fmt;
use std::str::FromStr;

use crate::distance::{HopCountPmf, ScalingLaw};
use crate::error::{Error, Result};

// --------------------------------------------------------------------------
// DistSpec
// --------------------------------------------------------------------------

/// A named hop-count distribution, parsed from or rendered to one string.
#[derive(Debug, Clone, PartialEq)]
pub enum DistSpec {
    /// Point mass at `l`.
    Point { l: usize },
    /// Uniform on `{1, ..., phi}`.
    Uniform { phi: usize },
    /// Geometric with per-hop stop probability `g`, soft-truncated.
    Geometric { g: f64 },
    /// Geometric hard-truncated and renormalized on `{1, ..., phi}`.
    GeometricTruncated { g: f64, phi: usize },
    /// Continuous power law with exponent `alpha < -1` above `epsilon`.
    PowerLaw { alpha: f64, epsilon: f64 },
    /// Continuous Rayleigh with scale `sigma`.
    Rayleigh { sigma: f64 },
    /// Literal pmf over `{1, ..., len}`.
    Explicit { probs: Vec<f64> },
}

/// Continuous tails are cut where less than this mass remains.
const DISCRETIZE_TAIL: f64 = 1e-9;

/// Hard ceiling on discretization support, guards degenerate scales.
const MAX_PHI: usize = 1 << 20;

impl DistSpec {
    /// Materializes the spec as a finite pmf on `1..=phi`.
    ///
    /// Discrete families map directly; continuous families are discretized
    /// with tail mass below `1e-9`.
    pub fn to_pmf(&self) -> Result<HopCountPmf> {
        match self {
            DistSpec::Point { l } => HopCountPmf::point(*l),
            DistSpec::Uniform { phi } => HopCountPmf::uniform(*phi),
            DistSpec::Geometric { g } => HopCountPmf::geometric(*g),
            DistSpec::GeometricTruncated { g, phi } => HopCountPmf::geometric_truncated(*g, *phi),
            DistSpec::PowerLaw { .. } | DistSpec::Rayleigh { .. } => {
                let law = self.to_law().expect("continuous arm");
                let cut = law.tail_threshold(DISCRETIZE_TAIL)?;
                let phi = (cut.ceil() as usize).max(1);
                if phi > MAX_PHI {
                    return Err(Error::InvalidParameter(format!(
                        "discretized support {phi} exceeds {MAX_PHI}; scale too heavy-tailed"
                    )));
                }
                law.discretize(phi)
            }
            DistSpec::Explicit { probs } => HopCountPmf::from_probs(probs.clone()),
        }
    }

    /// The continuous law behind the spec, when there is one.
    #[must_use]
    pub fn to_law(&self) -> Option<ScalingLaw> {
        match *self {
            DistSpec::Geometric { g } => Some(ScalingLaw::Geometric { g }),
            DistSpec::PowerLaw { alpha, epsilon } => Some(ScalingLaw::PowerLaw { alpha, epsilon }),
            DistSpec::Rayleigh { sigma } => Some(ScalingLaw::Rayleigh { sigma }),
            _ => None,
        }
    }

    /// Validates parameters eagerly so parse errors surface before any run.
    fn validate(self) -> Result<Self> {
        // to_pmf performs the full range checks; a throwaway build is cheap
        // for every family except wide geometrics, whose parameters are
        // checked directly instead.
        match &self {
            DistSpec::Geometric { g } | DistSpec::GeometricTruncated { g, .. } => {
                if !(*g > 0.0 && *g <= 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "geometric stop probability {g} outside (0, 1]"
                    )));
                }
                if let DistSpec::GeometricTruncated { phi, .. } = &self {
                    if *phi == 0 {
                        return Err(Error::InvalidParameter("phi must be >= 1".into()));
                    }
                }
            }
            _ => {
                self.to_pmf()?;
            }
        }
        Ok(self)
    }
}

// --------------------------------------------------------------------------
// Parsing and rendering
// --------------------------------------------------------------------------

fn parse_usize(s: &str, what: &str) -> Result<usize> {
    s.trim()
        .parse::<usize>()
        .map_err(|e| Error::Parse(format!("{what} `{s}`: {e}")))
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|e| Error::Parse(format!("{what} `{s}`: {e}")))?;
    if !v.is_finite() {
        return Err(Error::Parse(format!("{what} `{s}` is not finite")));
    }
    Ok(v)
}

impl FromStr for DistSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, rest) = s
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("distribution `{s}` has no `name:` prefix")))?;
        let spec = match name {
            "point" => DistSpec::Point {
                l: parse_usize(rest, "point hop count")?,
            },
            "uniform" => DistSpec::Uniform {
                phi: parse_usize(rest, "uniform support size")?,
            },
            "geometric" => match rest.split_once(':') {
                None => DistSpec::Geometric {
                    g: parse_f64(rest, "geometric parameter")?,
                },
                Some((g, phi)) => DistSpec::GeometricTruncated {
                    g: parse_f64(g, "geometric parameter")?,
                    phi: parse_usize(phi, "geometric truncation")?,
                },
            },
            "power" => {
                let (alpha, epsilon) = rest.split_once(':').ok_or_else(|| {
                    Error::Parse(format!("power law needs `power:alpha:epsilon`, got `{s}`"))
                })?;
                DistSpec::PowerLaw {
                    alpha: parse_f64(alpha, "power-law exponent")?,
                    epsilon: parse_f64(epsilon, "power-law cutoff")?,
                }
            }
            "rayleigh" => DistSpec::Rayleigh {
                sigma: parse_f64(rest, "rayleigh scale")?,
            },
            "explicit" => {
                let inner = rest
                    .strip_prefix('[')
                    .and_then(|r| r.strip_suffix(']'))
                    .ok_or_else(|| {
                        Error::Parse(format!("explicit pmf needs `explicit:[p1,...]`, got `{s}`"))
                    })?;
                let probs = inner
                    .split(',')
                    .map(|p| parse_f64(p, "pmf entry"))
                    .collect::<Result<Vec<f64>>>()?;
                DistSpec::Explicit { probs }
            }
            other => {
                return Err(Error::Parse(format!(
                    "unknown distribution family `{other}` \
                     (expected point, uniform, geometric, power, rayleigh, explicit)"
                )));
            }
        };
        spec.validate()
    }
}

impl fmt::Display for DistSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistSpec::Point { l } => write!(f, "point:{l}"),
            DistSpec::Uniform { phi } => write!(f, "uniform:{phi}"),
            DistSpec::Geometric { g } => write!(f, "geometric:{g}"),
            DistSpec::GeometricTruncated { g, phi } => write!(f, "geometric:{g}:{phi}"),
            DistSpec::PowerLaw { alpha, epsilon } => write!(f, "power:{alpha}:{epsilon}"),
            DistSpec::Rayleigh { sigma } => write!(f, "rayleigh:{sigma}"),
            DistSpec::Explicit { probs } => {
                write!(f, "explicit:[")?;
                for (i, p) in probs.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{p}")?;
                }
                write!(f, "]")
            }
        }
    }
}

impl serde::Serialize for DistSpec {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        ser.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for DistSpec {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

// --------------------------------------------------------------------------
// Sweep grids
// --------------------------------------------------------------------------

/// Parses the sweep notation `start:stop:step` into an inclusive grid.
///
/// The grid is `start, start+step, ...` up to and including `stop` when it
/// lands within half a step (guards accumulated round-off at the endpoint).
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.trim().split(':').collect();
    if parts.len() != 3 {
        return Err(Error::Parse(format!(
            "grid `{s}` must be start:stop:step"
        )));
    }
    let start = parse_f64(parts[0], "grid start")?;
    let stop = parse_f64(parts[1], "grid stop")?;
    let step = parse_f64(parts[2], "grid step")?;
    if !(step > 0.0) {
        return Err(Error::Parse(format!("grid step {step} must be positive")));
    }
    if stop < start {
        return Err(Error::Parse(format!(
            "grid stop {stop} is below start {start}"
        )));
    }
    let count = ((stop - start) / step + 0.5).floor() as usize;
    let mut grid = Vec::with_capacity(count + 1);
    for k in 0..=count {
        // recomputed from the index, not accumulated: keeps points exact
        grid.push(start + k as f64 * step);
    }
    Ok(grid)
}

// --------------------------------------------------------------------------
// Tests
// --------------------------------------------------------------------------
