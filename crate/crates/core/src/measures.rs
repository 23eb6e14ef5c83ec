//! Convex potentials `V` and the normalized log-concave measures
//! `dμ_V = e^{-V} dx / Z` they induce on the line, the half-line, and small
//! products.
//!
//! A [`Potential`] carries closed-form evaluators for `V`, `V'` and `V''`.
//! Construction validates them against each other by centered finite
//! differences on a probe grid, so a typo in a custom derivative is caught
//! before it poisons every downstream integral.
//!
//! A [`Measure`] adds the normalization constant and a truncated support
//! `[lo, hi]` chosen so that `V` has climbed [`TRUNCATION_NATS`] above its
//! minimum at both ends.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quad::integrate_interval;

/// Height (in nats above `min V`) at which the support is cut.
pub const TRUNCATION_NATS: f64 = 40.0;

/// Smallest admissible `V''` at a quadrature node.
pub const CURVATURE_FLOOR: f64 = 1e-12;

/// Default regularization radius for `|x|^p` potentials.
pub const DEFAULT_REGULARIZATION: f64 = 0.1;

/// Largest product dimension supported by the tensor rules.
pub const MAX_PRODUCT_DIM: usize = 3;

const SUPPORT_CAP: f64 = 1e6;
const DERIVATIVE_TOL: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasureError {
    #[error("invalid potential parameter: {0}")]
    InvalidParameter(String),
    #[error("potential is not strictly convex: V''({x}) = {value:e}")]
    NonConvex { x: f64, value: f64 },
    #[error("{which} disagrees with finite differences at x = {x}: analytic {analytic:e}, numeric {numeric:e}")]
    InconsistentDerivatives {
        which: &'static str,
        x: f64,
        analytic: f64,
        numeric: f64,
    },
    #[error("truncation tolerance {0:e} outside (1e-14, 1e-2)")]
    InvalidTolerance(f64),
    #[error("potential grows too slowly to truncate (gave up at |x| = {0:e})")]
    TailDivergence(f64),
    #[error("half-line measures require a symmetric potential")]
    HalfLineAsymmetric,
    #[error("product dimension {0} outside 1..=3")]
    DimensionCap(usize),
}

/// Serializable description of a built-in potential, as read from config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialSpec {
    /// `V(x) = a x² / 2`.
    Gaussian {
        #[serde(default = "unit")]
        a: f64,
    },
    /// `V(x) = (x² + r²)^{p/2}`, which is `|x|^p` when `r = 0`.
    Power {
        p: f64,
        #[serde(default = "default_regularization")]
        r: f64,
    },
}

fn unit() -> f64 {
    1.0
}

fn default_regularization() -> f64 {
    DEFAULT_REGULARIZATION
}

impl PotentialSpec {
    pub fn gaussian(a: f64) -> Self {
        PotentialSpec::Gaussian { a }
    }

    pub fn power(p: f64, r: f64) -> Self {
        PotentialSpec::Power { p, r }
    }
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
struct CustomFns {
    name: String,
    value: ScalarFn,
    first: ScalarFn,
    second: ScalarFn,
}

#[derive(Clone)]
enum Kind {
    Gaussian { a: f64 },
    Power { p: f64, r: f64 },
    Custom(CustomFns),
}

/// A one-dimensional C² convex potential.
#[derive(Clone)]
pub struct Potential {
    kind: Kind,
    symmetric: bool,
}

impl fmt::Debug for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Potential")
            .field("label", &self.label())
            .field("symmetric", &self.symmetric)
            .finish()
    }
}

/// Builds and validates a potential from its spec.
pub fn make_potential(spec: &PotentialSpec) -> Result<Potential, MeasureError> {
    match *spec {
        PotentialSpec::Gaussian { a } => Potential::gaussian(a),
        PotentialSpec::Power { p, r } => Potential::power(p, r),
    }
}

impl Potential {
    pub fn gaussian(a: f64) -> Result<Self, MeasureError> {
        if !(a.is_finite() && a > 0.0) {
            return Err(MeasureError::InvalidParameter(format!("gaussian needs a > 0, got {a}")));
        }
        let pot = Potential { kind: Kind::Gaussian { a }, symmetric: true };
        pot.validate()?;
        Ok(pot)
    }

    pub fn power(p: f64, r: f64) -> Result<Self, MeasureError> {
        if !(p.is_finite() && p > 1.0) {
            return Err(MeasureError::InvalidParameter(format!("power needs p > 1, got {p}")));
        }
        if !(r.is_finite() && r >= 0.0) {
            return Err(MeasureError::InvalidParameter(format!("power needs r >= 0, got {r}")));
        }
        if r == 0.0 && p < 2.0 {
            // V'' = p(p-1)|x|^{p-2} is unbounded at the origin.
            log::warn!("power potential with p = {p} < 2 and r = 0 has V'' unbounded at 0");
        }
        let pot = Potential { kind: Kind::Power { p, r }, symmetric: true };
        pot.validate()?;
        Ok(pot)
    }

    /// A user-supplied potential. The three evaluators are checked against
    /// each other on a probe grid.
    pub fn custom<V, D1, D2>(
        name: impl Into<String>,
        value: V,
        first: D1,
        second: D2,
        symmetric: bool,
    ) -> Result<Self, MeasureError>
    where
        V: Fn(f64) -> f64 + Send + Sync + 'static,
        D1: Fn(f64) -> f64 + Send + Sync + 'static,
        D2: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let pot = Potential {
            kind: Kind::Custom(CustomFns {
                name: name.into(),
                value: Arc::new(value),
                first: Arc::new(first),
                second: Arc::new(second),
            }),
            symmetric,
        };
        pot.validate()?;
        Ok(pot)
    }

    pub fn value(&self, x: f64) -> f64 {
        match &self.kind {
            Kind::Gaussian { a } => 0.5 * a * x * x,
            Kind::Power { p, r } => {
                if *r == 0.0 {
                    x.abs().powf(*p)
                } else {
                    (x * x + r * r).powf(0.5 * p)
                }
            }
            Kind::Custom(c) => (c.value)(x),
        }
    }

    pub fn first(&self, x: f64) -> f64 {
        match &self.kind {
            Kind::Gaussian { a } => a * x,
            Kind::Power { p, r } => {
                if *r == 0.0 {
                    p * x.signum() * x.abs().powf(p - 1.0)
                } else {
                    p * x * (x * x + r * r).powf(0.5 * p - 1.0)
                }
            }
            Kind::Custom(c) => (c.first)(x),
        }
    }

    pub fn second(&self, x: f64) -> f64 {
        match &self.kind {
            Kind::Gaussian { a } => *a,
            Kind::Power { p, r } => {
                if *r == 0.0 {
                    p * (p - 1.0) * x.abs().powf(p - 2.0)
                } else {
                    let q = x * x + r * r;
                    p * q.powf(0.5 * p - 2.0) * ((p - 1.0) * x * x + r * r)
                }
            }
            Kind::Custom(c) => (c.second)(x),
        }
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn spec(&self) -> Option<PotentialSpec> {
        match self.kind {
            Kind::Gaussian { a } => Some(PotentialSpec::Gaussian { a }),
            Kind::Power { p, r } => Some(PotentialSpec::Power { p, r }),
            Kind::Custom(_) => None,
        }
    }

    pub fn label(&self) -> String {
        match &self.kind {
            Kind::Gaussian { a } => format!("gaussian(a={a})"),
            Kind::Power { p, r } => format!("power(p={p},r={r})"),
            Kind::Custom(c) => format!("custom({})", c.name),
        }
    }

    /// Probe grid used at construction: 101 points on [-3, 3], offset so
    /// that no point sits on the origin where `|x|^p` potentials may lose
    /// a derivative.
    pub fn probe_grid(lo: f64, hi: f64) -> Vec<f64> {
        let step = (hi - lo) / 101.0;
        (0..101).map(|i| lo + (i as f64 + 0.37) * step).collect()
    }

    /// Checks `V'' > 0` and finite-difference consistency of the
    /// evaluators on the given points. `rel_first` and `rel_second` are
    /// relative tolerances with an absolute floor of the same size for
    /// derivatives smaller than one.
    pub fn check_derivatives(
        &self,
        points: &[f64],
        rel_first: f64,
        rel_second: f64,
    ) -> Result<(), MeasureError> {
        for &x in points {
            let v2 = self.second(x);
            if !(v2 > 0.0) {
                return Err(MeasureError::NonConvex { x, value: v2 });
            }
            let h = 1e-4 * x.abs().max(1.0);
            let fd1 = (self.value(x + h) - self.value(x - h)) / (2.0 * h);
            let d1 = self.first(x);
            if !((fd1 - d1).abs() <= rel_first * d1.abs().max(1.0)) {
                return Err(MeasureError::InconsistentDerivatives {
                    which: "V'",
                    x,
                    analytic: d1,
                    numeric: fd1,
                });
            }
            let fd2 = (self.first(x + h) - self.first(x - h)) / (2.0 * h);
            if !((fd2 - v2).abs() <= rel_second * v2.abs().max(1.0)) {
                return Err(MeasureError::InconsistentDerivatives {
                    which: "V''",
                    x,
                    analytic: v2,
                    numeric: fd2,
                });
            }
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), MeasureError> {
        let probe = Self::probe_grid(-3.0, 3.0);
        self.check_derivatives(&probe, DERIVATIVE_TOL, DERIVATIVE_TOL)?;
        if self.symmetric {
            for &x in &probe {
                let (a, b) = (self.value(x), self.value(-x));
                if (a - b).abs() > 1e-12 * a.abs().max(1.0) {
                    return Err(MeasureError::InvalidParameter(format!(
                        "flagged symmetric but V({x}) = {a} != V({}) = {b}",
                        -x
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A normalized log-concave probability measure on a truncated interval.
#[derive(Clone, Debug)]
pub struct Measure {
    potential: Potential,
    /// `∫ e^{-(V - v_min)}` over the full (untruncated) domain.
    shifted_z: f64,
    v_min: f64,
    lo: f64,
    hi: f64,
    anchor: f64,
    truncation_tol: f64,
    half_line: bool,
}

/// Normalizes `potential` on the whole line.
pub fn normalize(potential: &Potential, tol: f64) -> Result<Measure, MeasureError> {
    Measure::build(potential, tol, false)
}

/// Normalizes a symmetric potential restricted to `[0, ∞)`.
pub fn normalize_half_line(potential: &Potential, tol: f64) -> Result<Measure, MeasureError> {
    Measure::build(potential, tol, true)
}

/// Default truncation tolerance.
pub const DEFAULT_TOL: f64 = 1e-12;

impl Measure {
    /// Convenience constructor from a spec with the default tolerance.
    pub fn from_spec(spec: &PotentialSpec, half_line: bool) -> Result<Measure, MeasureError> {
        let pot = make_potential(spec)?;
        Measure::build(&pot, DEFAULT_TOL, half_line)
    }

    fn build(potential: &Potential, tol: f64, half_line: bool) -> Result<Measure, MeasureError> {
        if !(tol > 1e-14 && tol < 1e-2) {
            return Err(MeasureError::InvalidTolerance(tol));
        }
        if half_line && !potential.is_symmetric() {
            return Err(MeasureError::HalfLineAsymmetric);
        }
        let anchor = if potential.is_symmetric() { 0.0 } else { locate_minimum(potential)? };
        let v_min = potential.value(anchor);

        let mut hi = climb(potential, anchor, 1.0, v_min)?;
        let mut lo = if half_line { 0.0 } else { climb(potential, anchor, -1.0, v_min)? };

        let mass = |lo: f64, hi: f64| -> f64 {
            let f = |x: f64| (-(potential.value(x) - v_min)).exp();
            let left = if lo < anchor { integrate_interval(&f, lo, anchor, 256) } else { 0.0 };
            left + integrate_interval(&f, anchor, hi, 256)
        };
        let mut inner = mass(lo, hi);

        // Push the ends out until the omitted tail, bounded by e^{-ΔV}/|V'|
        // for convex V, is below tol times the retained mass.
        for _ in 0..200 {
            let right_tail = tail_bound(potential, hi, v_min, 1.0);
            let left_tail = if half_line { 0.0 } else { tail_bound(potential, lo, v_min, -1.0) };
            if right_tail + left_tail < tol * inner {
                return Ok(Measure {
                    potential: potential.clone(),
                    shifted_z: inner,
                    v_min,
                    lo,
                    hi,
                    anchor,
                    truncation_tol: tol,
                    half_line,
                });
            }
            if right_tail >= 0.5 * tol * inner {
                hi = anchor + 1.25 * (hi - anchor);
            }
            if !half_line && left_tail >= 0.5 * tol * inner {
                lo = anchor - 1.25 * (anchor - lo);
            }
            if hi.abs() > SUPPORT_CAP || lo.abs() > SUPPORT_CAP {
                return Err(MeasureError::TailDivergence(hi.abs().max(lo.abs())));
            }
            inner = mass(lo, hi);
        }
        Err(MeasureError::TailDivergence(hi.abs().max(lo.abs())))
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    /// `Z = ∫ e^{-V}` (over the full half-line for half-line measures).
    pub fn z(&self) -> f64 {
        self.shifted_z * (-self.v_min).exp()
    }

    pub fn log_z(&self) -> f64 {
        self.shifted_z.ln() - self.v_min
    }

    pub fn support(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    /// The point splitting the support into two monotone halves of `V`.
    pub fn anchor(&self) -> f64 {
        self.anchor
    }

    pub fn truncation_tol(&self) -> f64 {
        self.truncation_tol
    }

    pub fn is_half_line(&self) -> bool {
        self.half_line
    }

    pub fn is_symmetric(&self) -> bool {
        self.potential.is_symmetric() && !self.half_line
    }

    /// Probability density `e^{-V}/Z` at `x` (zero off the half-line).
    pub fn density(&self, x: f64) -> f64 {
        if self.half_line && x < 0.0 {
            return 0.0;
        }
        (-(self.potential.value(x) - self.v_min)).exp() / self.shifted_z
    }

    pub fn label(&self) -> String {
        if self.half_line {
            format!("{}+", self.potential.label())
        } else {
            self.potential.label()
        }
    }

    /// `μ((x, ∞))`, computed by integrating from `x` outwards until `V` has
    /// risen another [`TRUNCATION_NATS`], so the relative accuracy holds
    /// deep in the tail rather than only up to the truncation tolerance.
    pub fn tail_mass(&self, x: f64) -> f64 {
        if self.half_line && x <= 0.0 {
            return 1.0;
        }
        if x >= self.anchor {
            self.outward_mass(x, 1.0)
        } else {
            (1.0 - self.outward_mass(x, -1.0)).clamp(0.0, 1.0)
        }
    }

    /// Mass of `(x, ∞)` (direction +1) or `(-∞, x)` (direction -1), for `x`
    /// on the matching side of the anchor.
    fn outward_mass(&self, x: f64, direction: f64) -> f64 {
        let pot = &self.potential;
        let v_x = pot.value(x);
        let end = match climb(pot, x, direction, v_x) {
            Ok(end) => end,
            Err(_) => return 0.0,
        };
        let f = |t: f64| (-(pot.value(t) - self.v_min)).exp();
        let (a, b) = if direction > 0.0 { (x, end) } else { (end, x) };
        let body = integrate_interval(&f, a, b, 64);
        let tail = tail_bound(pot, end, self.v_min, direction);
        ((body + tail) / self.shifted_z).clamp(0.0, 1.0)
    }
}

/// Product of one-dimensional measures (up to three factors).
#[derive(Clone, Debug)]
pub struct ProductMeasure {
    factors: Vec<Measure>,
}

impl ProductMeasure {
    pub fn new(factors: Vec<Measure>) -> Result<Self, MeasureError> {
        if factors.is_empty() || factors.len() > MAX_PRODUCT_DIM {
            return Err(MeasureError::DimensionCap(factors.len()));
        }
        Ok(ProductMeasure { factors })
    }

    pub fn factors(&self) -> &[Measure] {
        &self.factors
    }

    pub fn dimension(&self) -> usize {
        self.factors.len()
    }

    pub fn label(&self) -> String {
        self.factors.iter().map(Measure::label).collect::<Vec<_>>().join("⊗")
    }
}

impl From<Measure> for ProductMeasure {
    fn from(m: Measure) -> Self {
        ProductMeasure { factors: vec![m] }
    }
}

/// Walks from `start` in `direction` until `V` exceeds `base + TRUNCATION_NATS`,
/// then bisects to that level.
fn climb(pot: &Potential, start: f64, direction: f64, base: f64) -> Result<f64, MeasureError> {
    let target = base + TRUNCATION_NATS;
    let mut step = 1.0_f64;
    let mut inner = start;
    let mut outer = start + direction * step;
    while pot.value(outer) < target {
        inner = outer;
        step *= 2.0;
        outer = start + direction * step;
        if outer.abs() > SUPPORT_CAP {
            return Err(MeasureError::TailDivergence(outer.abs()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (inner + outer);
        if mid == inner || mid == outer {
            break;
        }
        if pot.value(mid) < target {
            inner = mid;
        } else {
            outer = mid;
        }
    }
    Ok(outer)
}

/// Upper bound `e^{-(V(x) - v_min)} / |V'(x)|` on the mass beyond `x`.
fn tail_bound(pot: &Potential, x: f64, v_min: f64, direction: f64) -> f64 {
    let slope = direction * pot.first(x);
    if slope <= 0.0 {
        return f64::INFINITY;
    }
    (-(pot.value(x) - v_min)).exp() / slope
}

/// Root of `V'` by bracketing and bisection (V' is non-decreasing).
fn locate_minimum(pot: &Potential) -> Result<f64, MeasureError> {
    let d0 = pot.first(0.0);
    if d0 == 0.0 {
        return Ok(0.0);
    }
    let direction = -d0.signum();
    let mut step = 1.0;
    let mut a = 0.0;
    let mut b = direction * step;
    while pot.first(b) * d0 > 0.0 {
        a = b;
        step *= 2.0;
        b = direction * step;
        if step > SUPPORT_CAP {
            return Err(MeasureError::TailDivergence(step));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid == a || mid == b {
            break;
        }
        if pot.first(mid) * d0 > 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_evaluators() {
        let v = make_potential(&PotentialSpec::gaussian(1.0)).unwrap();
        assert_eq!(v.value(1.0), 0.5);
        assert_eq!(v.first(1.0), 1.0);
        assert_eq!(v.second(1.0), 1.0);
    }

    #[test]
    fn quadratic_power_has_constant_curvature() {
        let v = make_potential(&PotentialSpec::power(2.0, 0.0)).unwrap();
        for x in [-3.0, -0.5, 0.25, 2.0] {
            assert!((v.value(x) - x * x).abs() < 1e-15);
            assert!((v.second(x) - 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn regularized_power_at_origin() {
        let v = make_potential(&PotentialSpec::power(1.5, 0.1)).unwrap();
        // (x² + r²)^{p/2} at 0 is r^p; V''(0) = p r^{p-2}.
        assert!((v.value(0.0) - 0.1f64.powf(1.5)).abs() < 1e-15);
        assert!((v.value(0.0) - 0.031_622_776_601_683_79).abs() < 1e-15);
        assert!((v.second(0.0) - 1.5 * 0.1f64.powf(-0.5)).abs() < 1e-12);
        assert!((v.second(0.0) - 4.743_416_490_252_569).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(matches!(Potential::gaussian(0.0), Err(MeasureError::InvalidParameter(_))));
        assert!(matches!(Potential::power(1.0, 0.1), Err(MeasureError::InvalidParameter(_))));
        assert!(matches!(Potential::power(2.0, -1.0), Err(MeasureError::InvalidParameter(_))));
    }

    #[test]
    fn detects_nonconvexity() {
        let err = Potential::custom("concave", |x| -x * x, |x| -2.0 * x, |_| -2.0, true).unwrap_err();
        assert!(matches!(err, MeasureError::NonConvex { .. }));
    }

    #[test]
    fn detects_wrong_derivative() {
        let err = Potential::custom("typo", |x| x * x, |x| 2.1 * x, |_| 2.0, true).unwrap_err();
        assert!(matches!(err, MeasureError::InconsistentDerivatives { which: "V'", .. }));
        let err = Potential::custom("typo2", |x| x * x, |x| 2.0 * x, |_| 2.5, true).unwrap_err();
        assert!(matches!(err, MeasureError::InconsistentDerivatives { which: "V''", .. }));
    }

    #[test]
    fn symmetric_flag_is_checked() {
        let err = Potential::custom(
            "shifted",
            |x| (x - 1.0) * (x - 1.0),
            |x| 2.0 * (x - 1.0),
            |_| 2.0,
            true,
        )
        .unwrap_err();
        assert!(matches!(err, MeasureError::InvalidParameter(_)));
    }

    #[test]
    fn normalization_constants() {
        let g = normalize(&Potential::gaussian(1.0).unwrap(), 1e-12).unwrap();
        assert!((g.z() - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-10);
        let q = normalize(&Potential::power(2.0, 0.0).unwrap(), 1e-12).unwrap();
        assert!((q.z() - std::f64::consts::PI.sqrt()).abs() < 1e-10);
        let half = normalize_half_line(&Potential::power(2.0, 0.0).unwrap(), 1e-12).unwrap();
        assert!((half.z() - 0.5 * std::f64::consts::PI.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn support_reaches_truncation_height() {
        let g = normalize(&Potential::gaussian(1.0).unwrap(), 1e-12).unwrap();
        let (lo, hi) = g.support();
        assert!(g.potential().value(hi) >= TRUNCATION_NATS - 1e-9);
        assert!(g.potential().value(lo) >= TRUNCATION_NATS - 1e-9);
        assert!((hi - 80f64.sqrt()).abs() < 0.05);
    }

    #[test]
    fn rejects_tolerance_out_of_range() {
        let v = Potential::gaussian(1.0).unwrap();
        assert!(matches!(normalize(&v, 0.1), Err(MeasureError::InvalidTolerance(_))));
        assert!(matches!(normalize(&v, 1e-15), Err(MeasureError::InvalidTolerance(_))));
    }

    #[test]
    fn slow_growth_is_tail_divergence() {
        let eps = 1e-9;
        let v = Potential::custom(
            "nearly-flat",
            move |x: f64| eps * (1.0 + x * x).sqrt(),
            move |x: f64| eps * x / (1.0 + x * x).sqrt(),
            move |x: f64| eps / (1.0 + x * x).powf(1.5),
            true,
        )
        .unwrap();
        assert!(matches!(normalize(&v, 1e-12), Err(MeasureError::TailDivergence(_))));
    }

    #[test]
    fn asymmetric_custom_measure_is_anchored_at_minimum() {
        let v = Potential::custom(
            "shifted",
            |x| 0.5 * (x - 1.0) * (x - 1.0),
            |x| x - 1.0,
            |_| 1.0,
            false,
        )
        .unwrap();
        let m = normalize(&v, 1e-12).unwrap();
        assert!((m.anchor() - 1.0).abs() < 1e-9);
        assert!((m.tail_mass(1.0) - 0.5).abs() < 1e-10);
        assert!(matches!(normalize_half_line(&v, 1e-12), Err(MeasureError::HalfLineAsymmetric)));
    }

    #[test]
    fn gaussian_tail_masses() {
        let g = normalize(&Potential::gaussian(1.0).unwrap(), 1e-12).unwrap();
        assert!((g.tail_mass(0.0) - 0.5).abs() < 1e-12);
        assert!((g.tail_mass(1.0) - 0.158_655_253_931_457_05).abs() < 1e-12);
        assert!((g.tail_mass(-1.0) - 0.841_344_746_068_542_9).abs() < 1e-12);
        let (_, hi) = g.support();
        assert!(g.tail_mass(hi) < g.truncation_tol());
    }

    #[test]
    fn product_dimension_cap() {
        let g = Measure::from_spec(&PotentialSpec::gaussian(1.0), false).unwrap();
        assert!(ProductMeasure::new(vec![]).is_err());
        assert!(ProductMeasure::new(vec![g.clone(); 4]).is_err());
        assert_eq!(ProductMeasure::new(vec![g.clone(), g]).unwrap().dimension(), 2);
    }
}
