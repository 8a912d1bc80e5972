//! Closed-form density-delay relations.
//!
//! Proposals arrive as a Poisson process of aggregate intensity `lambda`; a
//! collision is two or more arrivals inside one propagation window of length
//! `delta`. Everything here is a pure function of `x = lambda * delta` and the
//! per-epoch resolution probability `q`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::NUMERICS;

/// Per-node proposal rate as a function of the node count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GatingRule {
    /// Every node proposes at `g0` regardless of system size.
    Constant { g0: f64 },
    /// Per-node rate `c / n`, keeping the aggregate at `c`.
    Inverse { c: f64 },
}

impl GatingRule {
    pub fn constant(g0: f64) -> Result<Self> {
        let rule = GatingRule::Constant { g0 };
        rule.validate()?;
        Ok(rule)
    }

    pub fn inverse(c: f64) -> Result<Self> {
        let rule = GatingRule::Inverse { c };
        rule.validate()?;
        Ok(rule)
    }

    pub fn validate(&self) -> Result<()> {
        let (name, v) = match *self {
            GatingRule::Constant { g0 } => ("g0", g0),
            GatingRule::Inverse { c } => ("c", c),
        };
        if v.is_finite() && v > 0.0 {
            Ok(())
        } else {
            Err(Error::domain(format!("gating parameter {name} must be finite and > 0, got {v}")))
        }
    }

    /// Per-node rate g(n).
    pub fn per_node_rate(&self, n: u64) -> Result<f64> {
        check_node_count(n)?;
        self.validate()?;
        Ok(match *self {
            GatingRule::Constant { g0 } => g0,
            GatingRule::Inverse { c } => c / n as f64,
        })
    }

    pub fn label(&self) -> &'static str {
        match self {
            GatingRule::Constant { .. } => "constant",
            GatingRule::Inverse { .. } => "inverse",
        }
    }
}

impl fmt::Display for GatingRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GatingRule::Constant { g0 } => write!(f, "constant:{g0}"),
            GatingRule::Inverse { c } => write!(f, "inverse:{c}"),
        }
    }
}

/// Parses `constant:<g0>` or `inverse:<c>`.
impl FromStr for GatingRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, value) = s
            .split_once(':')
            .ok_or_else(|| Error::domain(format!("expected `constant:<g0>` or `inverse:<c>`, got `{s}`")))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::domain(format!("invalid gating parameter `{value}`")))?;
        match kind.trim().to_ascii_lowercase().as_str() {
            "constant" => GatingRule::constant(value),
            "inverse" => GatingRule::inverse(value),
            other => Err(Error::domain(format!("unknown gating rule `{other}`"))),
        }
    }
}

/// Stationary fork-depth bound: finite in the stable region, otherwise divergent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StationaryBound {
    Finite(f64),
    Divergent,
}

impl StationaryBound {
    pub fn is_finite(&self) -> bool {
        matches!(self, StationaryBound::Finite(_))
    }

    pub fn value(&self) -> Option<f64> {
        match *self {
            StationaryBound::Finite(v) => Some(v),
            StationaryBound::Divergent => None,
        }
    }
}

impl fmt::Display for StationaryBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StationaryBound::Finite(v) => write!(f, "{v}"),
            StationaryBound::Divergent => f.write_str("divergent"),
        }
    }
}

// Finite bounds serialize as numbers, the divergent case as the string "divergent".
impl Serialize for StationaryBound {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match *self {
            StationaryBound::Finite(v) => s.serialize_f64(v),
            StationaryBound::Divergent => s.serialize_str("divergent"),
        }
    }
}

impl<'de> Deserialize<'de> for StationaryBound {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(StationaryBound::Finite(v)),
            Repr::Text(t) if t == "divergent" => Ok(StationaryBound::Divergent),
            Repr::Text(t) => t
                .parse()
                .map(StationaryBound::Finite)
                .map_err(|_| serde::de::Error::custom(format!("invalid stationary bound `{t}`"))),
        }
    }
}

/// All analytic quantities for one `(lambda, delta, q)` point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionStats {
    pub lambda: f64,
    pub delta: f64,
    pub x: f64,
    pub q: f64,
    pub p_coll: f64,
    pub drift: f64,
    pub stationary_bound: StationaryBound,
}

impl CollisionStats {
    pub fn compute(lambda: f64, delta: f64, q: f64) -> Result<Self> {
        let p_coll = collision_probability(lambda, delta)?;
        Ok(CollisionStats {
            lambda,
            delta,
            x: lambda * delta,
            q,
            p_coll,
            drift: expected_drift(p_coll, q)?,
            stationary_bound: stationary_bound(p_coll, q)?,
        })
    }

    pub fn is_stable(&self) -> bool {
        self.p_coll < self.q
    }
}

fn check_node_count(n: u64) -> Result<()> {
    if n == 0 {
        return Err(Error::domain("node count must be at least 1"));
    }
    Ok(())
}

fn check_nonnegative(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must be finite and >= 0, got {v}")))
    }
}

fn check_probability(name: &str, p: f64, allow_one: bool) -> Result<()> {
    let ok = p >= 0.0 && if allow_one { p <= 1.0 } else { p < 1.0 };
    if ok {
        Ok(())
    } else {
        let upper = if allow_one { "]" } else { ")" };
        Err(Error::domain(format!("{name} must lie in [0, 1{upper}, got {p}")))
    }
}

/// Aggregate proposal intensity `n * g(n)`.
///
/// Under inverse gating this is exactly `c` for every `n`.
pub fn aggregate_intensity(n: u64, rule: GatingRule) -> Result<f64> {
    check_node_count(n)?;
    rule.validate()?;
    Ok(match rule {
        GatingRule::Constant { g0 } => n as f64 * g0,
        GatingRule::Inverse { c } => c,
    })
}

/// Largest double strictly below one.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

/// P(K >= 2) for K ~ Poisson(x), with `x = lambda * delta`.
///
/// For large `x` the exact value rounds to 1.0 in double precision; the result
/// is capped at the largest double below one so it always lies in `[0, 1)`.
pub fn collision_probability(lambda: f64, delta: f64) -> Result<f64> {
    check_nonnegative("lambda", lambda)?;
    check_nonnegative("delta", delta)?;
    Ok(pcoll_of_x(lambda * delta))
}

pub(crate) fn pcoll_of_x(x: f64) -> f64 {
    if x < NUMERICS.series_cutoff {
        // sum_{k>=2} (-1)^k (k-1) x^k / k!, avoiding cancellation near zero
        let mut term = x * x / 2.0;
        let mut sum = 0.0;
        let mut k = 2u32;
        while term != 0.0 && k < 64 {
            let contrib = term * f64::from(k - 1);
            sum += if k.is_multiple_of(2) { contrib } else { -contrib };
            if contrib.abs() <= sum.abs() * 1e-18 {
                break;
            }
            k += 1;
            term *= x / f64::from(k);
        }
        sum
    } else {
        (1.0 - (-x).exp() * (1.0 + x)).min(BELOW_ONE)
    }
}

/// Rare-event approximation `(lambda * delta)^2 / 2`.
///
/// This overestimates [`collision_probability`] for every `x > 0`; the gap is
/// at most `x^3 / 3` on `[0, 1]` and grows quickly beyond it.
pub fn collision_probability_approx(lambda: f64, delta: f64) -> Result<f64> {
    check_nonnegative("lambda", lambda)?;
    check_nonnegative("delta", delta)?;
    let x = lambda * delta;
    Ok(x * x / 2.0)
}

/// Expected one-epoch change in fork depth, `p_coll - q`.
pub fn expected_drift(p_coll: f64, q: f64) -> Result<f64> {
    check_probability("p_coll", p_coll, false)?;
    check_probability("q", q, true)?;
    Ok(p_coll - q)
}

/// Upper bound `p_coll / (q - p_coll)` on the stationary mean fork depth.
pub fn stationary_bound(p_coll: f64, q: f64) -> Result<StationaryBound> {
    check_probability("p_coll", p_coll, false)?;
    check_probability("q", q, true)?;
    if p_coll < q {
        Ok(StationaryBound::Finite(p_coll / (q - p_coll)))
    } else if p_coll == 0.0 {
        // q = 0 and no conflicts are ever created
        Ok(StationaryBound::Finite(0.0))
    } else {
        Ok(StationaryBound::Divergent)
    }
}

/// The density-delay product `x*` at which the collision probability equals `q`.
///
/// Solved by bisection on `[0, hi]`, doubling `hi` from 1 until it brackets
/// the root.
pub fn stability_threshold(q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::domain(format!("q must lie in (0, 1), got {q}")));
    }
    let f = |x: f64| pcoll_of_x(x) - q;
    let mut hi = 1.0;
    let mut doublings = 0;
    while f(hi) <= 0.0 {
        hi *= 2.0;
        doublings += 1;
        if doublings > NUMERICS.threshold_max_doublings {
            return Err(Error::domain(format!("no threshold found for q = {q}")));
        }
    }
    let mut lo = 0.0;
    while hi - lo > NUMERICS.threshold_tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
