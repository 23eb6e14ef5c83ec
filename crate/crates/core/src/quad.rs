//! Composite Gauss-Legendre quadrature on mass-equilibrated panels.
//!
//! A rule at `level` splits each side of the support (left and right of the
//! measure's anchor) into `2^{level-1}` panels and places a 10-point
//! Gauss-Legendre rule on each. Panel edges equidistribute a blend of arc
//! length and `e^{-V}` mass, so the bulk is resolved finely while the tails,
//! where integrands like `f² e^{-V}` or `V'' e^{V}` still carry weight, are
//! not starved. Every rule carries its level-1 companion; the error estimate
//! is the difference of the two plus a roundoff floor.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measures::{Measure, ProductMeasure, MAX_PRODUCT_DIM};

/// Points per panel.
pub const PANEL_ORDER: usize = 10;

/// Default refinement level (256 panels, 2560 nodes on the line).
pub const DEFAULT_LEVEL: u32 = 8;

pub const MAX_LEVEL: u32 = 16;

const MASS_FRACTION: f64 = 0.5;
const PREGRID: usize = 4096;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuadError {
    #[error("quadrature level {0} outside [1, 16]")]
    LevelOutOfRange(u32),
    #[error("integrand is not finite at x = {0:?}")]
    NonFinite(Vec<f64>),
    #[error("product dimension {0} outside 1..=3")]
    DimensionCap(usize),
}

/// A value together with its estimated absolute error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub err_est: f64,
}

impl Estimate {
    pub fn new(value: f64, err_est: f64) -> Self {
        Estimate { value, err_est }
    }

    /// Builds an estimate from a fine and a coarse evaluation.
    pub fn from_levels(fine: f64, coarse: f64, scale: f64) -> Self {
        let floor = 64.0 * f64::EPSILON * scale.abs().max(fine.abs());
        Estimate { value: fine, err_est: (fine - coarse).abs() + floor }
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1], by Newton iteration on the
/// three-term recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..(n + 1) / 2 {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = nf * (x * pn - pm) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn panel_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(PANEL_ORDER))
}

/// Neumaier-compensated sum; order-dependent but deterministic.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(terms: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for t in terms {
        let s = sum + t;
        if sum.abs() >= t.abs() {
            comp += (sum - s) + t;
        } else {
            comp += (t - s) + sum;
        }
        sum = s;
    }
    sum + comp
}

/// `∫_a^b f` with `panels` equal Gauss-Legendre panels.
pub fn integrate_interval<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, panels: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    let (nodes, weights) = panel_rule();
    let width = (b - a) / panels as f64;
    let half = 0.5 * width;
    compensated_sum((0..panels).flat_map(|k| {
        let mid = a + (k as f64 + 0.5) * width;
        nodes.iter().zip(weights).map(move |(t, w)| half * w * f(mid + half * t))
    }))
}

/// Nodes and Lebesgue weights of a composite rule, with the companion rule
/// one level down for error estimation.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub level: u32,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// Panel boundaries; panel `k` holds nodes `10k..10k+10`.
    pub edges: Vec<f64>,
    pub coarse_nodes: Vec<f64>,
    pub coarse_weights: Vec<f64>,
    pub coarse_edges: Vec<f64>,
}

/// Builds the composite rule for `m` at `level` (1..=16).
pub fn build_rule(m: &Measure, level: u32) -> Result<QuadratureRule, QuadError> {
    if !(1..=MAX_LEVEL).contains(&level) {
        return Err(QuadError::LevelOutOfRange(level));
    }
    let (nodes, weights, edges) = rule_for_panels(m, panels_per_side(level));
    let (coarse_nodes, coarse_weights, coarse_edges) =
        rule_for_panels(m, panels_per_side(level - 1));
    Ok(QuadratureRule { level, nodes, weights, edges, coarse_nodes, coarse_weights, coarse_edges })
}

fn panels_per_side(level: u32) -> usize {
    1usize << level.saturating_sub(1)
}

/// Panel edges on `[a, b]` (with `a` the anchor side) equidistributing a
/// blend of length and `e^{-V}` mass.
fn side_edges(m: &Measure, a: f64, b: f64, panels: usize) -> Vec<f64> {
    let xs: Vec<f64> = (0..=PREGRID).map(|i| a + (b - a) * i as f64 / PREGRID as f64).collect();
    let dens: Vec<f64> = xs.iter().map(|&x| m.density(x)).collect();
    let mut cum = vec![0.0; PREGRID + 1];
    for i in 1..=PREGRID {
        cum[i] = cum[i - 1] + 0.5 * (dens[i] + dens[i - 1]) * (xs[i] - xs[i - 1]).abs();
    }
    let total = cum[PREGRID].max(f64::MIN_POSITIVE);
    let blend: Vec<f64> = (0..=PREGRID)
        .map(|i| {
            (1.0 - MASS_FRACTION) * i as f64 / PREGRID as f64 + MASS_FRACTION * cum[i] / total
        })
        .collect();
    let mut edges = Vec::with_capacity(panels + 1);
    edges.push(a);
    let mut j = 0;
    for k in 1..panels {
        let target = k as f64 / panels as f64;
        while j + 1 < PREGRID && blend[j + 1] < target {
            j += 1;
        }
        let (g0, g1) = (blend[j], blend[j + 1]);
        let t = if g1 > g0 { (target - g0) / (g1 - g0) } else { 0.0 };
        edges.push(xs[j] + t * (xs[j + 1] - xs[j]));
    }
    edges.push(b);
    edges
}

fn rule_for_panels(m: &Measure, panels: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (lo, hi) = m.support();
    let anchor = m.anchor();
    let mut edges = Vec::new();
    if lo < anchor {
        let mut left = side_edges(m, anchor, lo, panels);
        left.reverse();
        edges.extend(left);
    }
    let right = side_edges(m, anchor, hi, panels);
    if edges.is_empty() {
        edges.extend(right);
    } else {
        edges.extend(right.into_iter().skip(1));
    }
    let (gl_nodes, gl_weights) = panel_rule();
    let mut nodes = Vec::with_capacity((edges.len() - 1) * PANEL_ORDER);
    let mut weights = Vec::with_capacity(nodes.capacity());
    for pair in edges.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for (t, w) in gl_nodes.iter().zip(gl_weights) {
            nodes.push(mid + half * t);
            weights.push(half * w);
        }
    }
    (nodes, weights, edges)
}

impl QuadratureRule {
    /// `∫ f dx` over the truncated support.
    pub fn integrate_dx<F: Fn(f64) -> f64>(&self, f: F) -> Result<Estimate, QuadError> {
        let fine = weighted_sum(&self.nodes, &self.weights, &f)?;
        let coarse = weighted_sum(&self.coarse_nodes, &self.coarse_weights, &f)?;
        Ok(Estimate::from_levels(fine.0, coarse.0, fine.1))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

fn weighted_sum<F: Fn(f64) -> f64>(
    nodes: &[f64],
    weights: &[f64],
    f: &F,
) -> Result<(f64, f64), QuadError> {
    let mut terms = Vec::with_capacity(nodes.len());
    let mut abs = 0.0;
    for (&x, &w) in nodes.iter().zip(weights) {
        let v = f(x);
        if !v.is_finite() {
            return Err(QuadError::NonFinite(vec![x]));
        }
        terms.push(w * v);
        abs += (w * v).abs();
    }
    Ok((compensated_sum(terms), abs))
}

/// `∫ f dμ` for the measure the rule was built from.
pub fn integrate<F: Fn(f64) -> f64>(
    rule: &QuadratureRule,
    m: &Measure,
    f: F,
) -> Result<Estimate, QuadError> {
    rule.integrate_dx(|x| f(x) * m.density(x))
}

/// Tensor-product `∫ f dμ₁⊗…⊗μ_n`. The error estimate sums the effect of
/// coarsening each axis in turn.
pub fn integrate_product<F: Fn(&[f64]) -> f64>(
    rules: &[QuadratureRule],
    m: &ProductMeasure,
    f: F,
) -> Result<Estimate, QuadError> {
    let dim = m.dimension();
    if rules.len() != dim || dim > MAX_PRODUCT_DIM {
        return Err(QuadError::DimensionCap(rules.len().max(dim)));
    }
    let axes_fine: Vec<(Vec<f64>, Vec<f64>)> = rules
        .iter()
        .zip(m.factors())
        .map(|(r, fm)| {
            let w = r.nodes.iter().zip(&r.weights).map(|(&x, &w)| w * fm.density(x)).collect();
            (r.nodes.clone(), w)
        })
        .collect();
    let axes_coarse: Vec<(Vec<f64>, Vec<f64>)> = rules
        .iter()
        .zip(m.factors())
        .map(|(r, fm)| {
            let w = r
                .coarse_nodes
                .iter()
                .zip(&r.coarse_weights)
                .map(|(&x, &w)| w * fm.density(x))
                .collect();
            (r.coarse_nodes.clone(), w)
        })
        .collect();
    let (fine, abs) = tensor_sum(&axes_fine.iter().collect::<Vec<_>>(), &f)?;
    let mut err = 64.0 * f64::EPSILON * abs;
    for k in 0..dim {
        let mixed: Vec<&(Vec<f64>, Vec<f64>)> =
            (0..dim).map(|j| if j == k { &axes_coarse[j] } else { &axes_fine[j] }).collect();
        let (v, _) = tensor_sum(&mixed, &f)?;
        err += (fine - v).abs();
    }
    Ok(Estimate::new(fine, err))
}

fn tensor_sum<F: Fn(&[f64]) -> f64>(
    axes: &[&(Vec<f64>, Vec<f64>)],
    f: &F,
) -> Result<(f64, f64), QuadError> {
    let dim = axes.len();
    let sizes: Vec<usize> = axes.iter().map(|a| a.0.len()).collect();
    let total: usize = sizes.iter().product();
    let mut point = vec![0.0; dim];
    let mut idx = vec![0usize; dim];
    let mut terms = Vec::with_capacity(total);
    let mut abs = 0.0;
    for _ in 0..total {
        let mut w = 1.0;
        for d in 0..dim {
            point[d] = axes[d].0[idx[d]];
            w *= axes[d].1[idx[d]];
        }
        let v = f(&point);
        if !v.is_finite() {
            return Err(QuadError::NonFinite(point.clone()));
        }
        terms.push(w * v);
        abs += (w * v).abs();
        // Lexicographic increment, last axis fastest.
        for d in (0..dim).rev() {
            idx[d] += 1;
            if idx[d] < sizes[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Ok((compensated_sum(terms), abs))
}

/// Node set with normalized μ-weights and the potential's derivatives,
/// flattened over a tensor grid (point `i` occupies `dim` consecutive
/// entries of `points`, `first`, `second`).
#[derive(Debug, Clone)]
pub struct GridLevel {
    pub dim: usize,
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl GridLevel {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    /// `Σ w_i g_i` for precomputed node values.
    pub fn sum(&self, values: &[f64]) -> f64 {
        compensated_sum(self.weights.iter().zip(values).map(|(w, v)| w * v))
    }

    fn from_axes(axes: &[(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)]) -> GridLevel {
        let dim = axes.len();
        let sizes: Vec<usize> = axes.iter().map(|a| a.0.len()).collect();
        let total: usize = sizes.iter().product();
        let mut level = GridLevel {
            dim,
            points: Vec::with_capacity(total * dim),
            weights: Vec::with_capacity(total),
            first: Vec::with_capacity(total * dim),
            second: Vec::with_capacity(total * dim),
        };
        let mut idx = vec![0usize; dim];
        for _ in 0..total {
            let mut w = 1.0;
            for d in 0..dim {
                let (x, wt, v1, v2) = (&axes[d].0, &axes[d].1, &axes[d].2, &axes[d].3);
                level.points.push(x[idx[d]]);
                level.first.push(v1[idx[d]]);
                level.second.push(v2[idx[d]]);
                w *= wt[idx[d]];
            }
            level.weights.push(w);
            for d in (0..dim).rev() {
                idx[d] += 1;
                if idx[d] < sizes[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        level
    }
}

/// Fine and coarse node sets for a (product) measure, with μ-weights
/// normalized to sum to one on each axis.
#[derive(Debug, Clone)]
pub struct WeightedGrid {
    pub level: u32,
    pub fine: GridLevel,
    pub coarse: GridLevel,
    axes: Vec<Axis>,
}

#[derive(Debug, Clone)]
struct Axis {
    measure: Measure,
    rule: QuadratureRule,
    /// Discrete μ-mass of the fine and coarse rules (the normalizers).
    fine_total: f64,
    coarse_total: f64,
}

impl WeightedGrid {
    pub fn new(m: &ProductMeasure, level: u32) -> Result<Self, QuadError> {
        if m.dimension() > MAX_PRODUCT_DIM {
            return Err(QuadError::DimensionCap(m.dimension()));
        }
        let rules: Vec<QuadratureRule> =
            m.factors().iter().map(|f| build_rule(f, level)).collect::<Result<_, _>>()?;
        let mut totals = Vec::new();
        let mut axis = |fm: &Measure, nodes: &[f64], weights: &[f64]| {
            let pot = fm.potential();
            let mut w: Vec<f64> =
                nodes.iter().zip(weights).map(|(&x, &w)| w * fm.density(x)).collect();
            let total = compensated_sum(w.iter().copied());
            totals.push(total);
            w.iter_mut().for_each(|v| *v /= total);
            (
                nodes.to_vec(),
                w,
                nodes.iter().map(|&x| pot.first(x)).collect::<Vec<_>>(),
                nodes.iter().map(|&x| pot.second(x)).collect::<Vec<_>>(),
            )
        };
        let fine_axes: Vec<_> = rules
            .iter()
            .zip(m.factors())
            .map(|(r, fm)| axis(fm, &r.nodes, &r.weights))
            .collect();
        let coarse_axes: Vec<_> = rules
            .iter()
            .zip(m.factors())
            .map(|(r, fm)| axis(fm, &r.coarse_nodes, &r.coarse_weights))
            .collect();
        let dim = rules.len();
        let axes = rules
            .into_iter()
            .zip(m.factors())
            .enumerate()
            .map(|(k, (rule, fm))| Axis {
                measure: fm.clone(),
                rule,
                fine_total: totals[k],
                coarse_total: totals[dim + k],
            })
            .collect();
        Ok(WeightedGrid {
            level,
            fine: GridLevel::from_axes(&fine_axes),
            coarse: GridLevel::from_axes(&coarse_axes),
            axes,
        })
    }

    pub fn dim(&self) -> usize {
        self.fine.dim
    }

    /// Fine nodes of axis `k` with their normalized weights and `V''`.
    pub fn axis_nodes(&self, k: usize) -> AxisNodes {
        let ax = &self.axes[k];
        let pot = ax.measure.potential();
        let points = ax.rule.nodes.clone();
        let weights = points
            .iter()
            .zip(&ax.rule.weights)
            .map(|(&x, &w)| w * ax.measure.density(x) / ax.fine_total)
            .collect();
        let second = points.iter().map(|&x| pot.second(x)).collect();
        AxisNodes { points, weights, second }
    }

    /// Panel boundaries of axis `k` on the fine (or coarse) level.
    pub fn edges(&self, k: usize, fine: bool) -> &[f64] {
        let r = &self.axes[k].rule;
        if fine {
            &r.edges
        } else {
            &r.coarse_edges
        }
    }

    /// The 1D fine (or coarse) level with every panel split at the sign
    /// changes of the `levels`, so kinks they mark fall on panel boundaries.
    /// Panels without a sign change keep the grid's own nodes. Returns
    /// `None` for products.
    pub fn split_level_1d(&self, fine: bool, levels: &[&dyn Fn(f64) -> f64]) -> Option<GridLevel> {
        if self.axes.len() != 1 {
            return None;
        }
        let ax = &self.axes[0];
        let (edges, lvl, total) = if fine {
            (&ax.rule.edges, &self.fine, ax.fine_total)
        } else {
            (&ax.rule.coarse_edges, &self.coarse, ax.coarse_total)
        };
        let pot = ax.measure.potential();
        let (gl_nodes, gl_weights) = panel_rule();
        let mut out = GridLevel {
            dim: 1,
            points: Vec::with_capacity(lvl.len()),
            weights: Vec::with_capacity(lvl.len()),
            first: Vec::with_capacity(lvl.len()),
            second: Vec::with_capacity(lvl.len()),
        };
        for (k, pair) in edges.windows(2).enumerate() {
            let (a, b) = (pair[0], pair[1]);
            let panel = k * PANEL_ORDER..(k + 1) * PANEL_ORDER;
            let mut xs = Vec::with_capacity(PANEL_ORDER + 2);
            xs.push(a);
            xs.extend_from_slice(&lvl.points[panel.clone()]);
            xs.push(b);
            let mut cuts = vec![a, b];
            for h in levels {
                let vals: Vec<f64> = xs.iter().map(|&x| h(x)).collect();
                for j in 0..xs.len() - 1 {
                    if vals[j] * vals[j + 1] < 0.0 {
                        cuts.push(bisect_root(h, xs[j], xs[j + 1], vals[j]));
                    }
                }
            }
            if cuts.len() == 2 {
                out.points.extend_from_slice(&lvl.points[panel.clone()]);
                out.weights.extend_from_slice(&lvl.weights[panel.clone()]);
                out.first.extend_from_slice(&lvl.first[panel.clone()]);
                out.second.extend_from_slice(&lvl.second[panel]);
                continue;
            }
            cuts.sort_by(f64::total_cmp);
            for c in cuts.windows(2) {
                let half = 0.5 * (c[1] - c[0]);
                if !(half > 0.0) {
                    continue;
                }
                let mid = 0.5 * (c[0] + c[1]);
                for (t, w) in gl_nodes.iter().zip(gl_weights) {
                    let x = mid + half * t;
                    out.points.push(x);
                    out.weights.push(half * w * ax.measure.density(x) / total);
                    out.first.push(pot.first(x));
                    out.second.push(pot.second(x));
                }
            }
        }
        Some(out)
    }

    /// `∫ |h| dμ` in one dimension with panels split at the sign changes of
    /// `h`. Returns `None` for products.
    pub fn abs_integral_1d<H: Fn(f64) -> f64>(&self, h: &H, fine: bool) -> Option<f64> {
        let lvl = self.split_level_1d(fine, &[h])?;
        Some(compensated_sum(lvl.points.iter().zip(&lvl.weights).map(|(&x, w)| w * h(x).abs())))
    }
}

#[derive(Debug, Clone)]
pub struct AxisNodes {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    pub second: Vec<f64>,
}

/// Root of `h` in `[a, b]` given a sign change, by bisection to roundoff.
fn bisect_root<H: Fn(f64) -> f64>(h: &H, mut a: f64, mut b: f64, ha: f64) -> f64 {
    let sa = ha.signum();
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let hm = h(m);
        if hm == 0.0 {
            return m;
        }
        if hm.signum() == sa {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}
