//! Test functions and the scalar functionals built on them: variance,
//! Brascamp-Lieb energy, deficit, extremisers `f_θ = ⟨θ, V'⟩`, barycentre,
//! the L² projection onto the extremiser space, entropy, and the
//! Bolley-Gentil-Guillin lower bound on the deficit.
//!
//! Every functional is evaluated on the fine and coarse node sets of a
//! [`WeightedGrid`]; the reported `err_est` is the level difference plus a
//! roundoff floor.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measures::{Measure, Potential, ProductMeasure, CURVATURE_FLOOR};
use crate::quad::{compensated_sum, Estimate, GridLevel, QuadError, WeightedGrid};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FunctionalError {
    #[error(transparent)]
    Quadrature(#[from] QuadError),
    #[error("non-finite value of {0} at a quadrature node")]
    NonFinite(String),
    #[error("V'' = {value:e} below the floor at x = {x:?}")]
    SingularWeight { x: Vec<f64>, value: f64 },
    #[error("deficit {deficit:e} is below -10 x err_est ({err_est:e}); quadrature is unreliable")]
    NegativeDeficit { deficit: f64, err_est: f64 },
    #[error("Gram matrix of V' is singular")]
    SingularGram,
    #[error("∫g² dμ = {0:e} is too small")]
    DegenerateFunction(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("gradient disagrees with finite differences at x = {x:?}: analytic {analytic:e}, numeric {numeric:e}")]
    InconsistentGradient { x: Vec<f64>, analytic: f64, numeric: f64 },
}

type ValueFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;
pub type KinkFn = dyn Fn(f64) -> f64 + Send + Sync;

/// A scalar function on `ℝ^dim` with its gradient.
#[derive(Clone)]
pub struct TestFunction {
    name: String,
    dim: usize,
    value: Arc<ValueFn>,
    grad: Arc<GradFn>,
    /// 1D functions whose sign changes mark jumps of the gradient.
    kinks: Vec<Arc<KinkFn>>,
    pub mean_zero_hint: bool,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction").field("name", &self.name).field("dim", &self.dim).finish()
    }
}

impl TestFunction {
    pub fn new<V, G>(name: impl Into<String>, dim: usize, value: V, grad: G) -> Self
    where
        V: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        TestFunction {
            name: name.into(),
            dim,
            value: Arc::new(value),
            grad: Arc::new(grad),
            kinks: Vec::new(),
            mean_zero_hint: false,
        }
    }

    /// One-dimensional function from `f` and `f'`.
    pub fn univariate<V, D>(name: impl Into<String>, f: V, df: D) -> Self
    where
        V: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        TestFunction::new(name, 1, move |x| f(x[0]), move |x, g| g[0] = df(x[0]))
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        TestFunction::new(format!("const({c})"), dim, move |_| c, |_, g| g.fill(0.0))
    }

    /// `Σ c_k x^k` in one variable.
    pub fn polynomial(coeffs: Vec<f64>) -> Self {
        let name = format!("poly(deg {})", coeffs.len().saturating_sub(1));
        let dc: Vec<f64> = coeffs.iter().enumerate().skip(1).map(|(k, c)| k as f64 * c).collect();
        TestFunction::univariate(name, move |x| horner(&coeffs, x), move |x| horner(&dc, x))
    }

    /// Probabilists' Hermite polynomial `He_k`.
    pub fn hermite(k: usize) -> Self {
        TestFunction::univariate(
            format!("He_{k}"),
            move |x| hermite_value(k, x),
            move |x| if k == 0 { 0.0 } else { k as f64 * hermite_value(k - 1, x) },
        )
    }

    /// `exp(⟨λ, x⟩)`.
    pub fn exp_linear(lambda: Vec<f64>) -> Self {
        let dim = lambda.len();
        let l2 = lambda.clone();
        TestFunction::new(
            format!("exp({lambda:?}·x)"),
            dim,
            move |x| dot(&lambda, x).exp(),
            move |x, g| {
                let e = dot(&l2, x).exp();
                for (gi, li) in g.iter_mut().zip(&l2) {
                    *gi = li * e;
                }
            },
        )
    }

    /// Separable product `Π_k f_k(x_k)` of one-dimensional factors.
    pub fn separable(factors: Vec<TestFunction>) -> Self {
        assert!(factors.iter().all(|f| f.dim == 1));
        let dim = factors.len();
        let name = factors.iter().map(|f| f.name.as_str()).collect::<Vec<_>>().join("⊗");
        let fs = Arc::new(factors);
        let gs = fs.clone();
        TestFunction::new(
            name,
            dim,
            move |x| fs.iter().zip(x).map(|(f, &xi)| f.eval(&[xi])).product(),
            move |x, g| {
                let vals: Vec<f64> = gs.iter().zip(x).map(|(f, &xi)| f.eval(&[xi])).collect();
                let mut d = [0.0];
                for k in 0..gs.len() {
                    gs[k].gradient(&[x[k]], &mut d);
                    let others: f64 =
                        vals.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, v)| v).product();
                    g[k] = d[0] * others;
                }
            },
        )
    }

    /// Embeds a one-dimensional function as a function of coordinate `axis`
    /// in `ℝ^dim`.
    pub fn on_axis(inner: TestFunction, dim: usize, axis: usize) -> Self {
        assert!(inner.dim == 1 && axis < dim);
        let name = format!("{}(x{})", inner.name, axis + 1);
        let f = inner.clone();
        TestFunction::new(
            name,
            dim,
            move |x| inner.eval(&[x[axis]]),
            move |x, g| {
                g.fill(0.0);
                let mut d = [0.0];
                f.gradient(&[x[axis]], &mut d);
                g[axis] = d[0];
            },
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        (self.grad)(x, out)
    }

    /// Declares a gradient jump wherever `level` changes sign. Only used in
    /// one dimension, where quadrature panels are split at those points.
    pub fn with_kink_level<L>(mut self, level: L) -> Self
    where
        L: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        self.kinks.push(Arc::new(level));
        self
    }

    pub fn kink_levels(&self) -> &[Arc<KinkFn>] {
        &self.kinks
    }

    /// `f + c`.
    pub fn shifted(&self, c: f64) -> Self {
        let (v, g) = (self.value.clone(), self.grad.clone());
        TestFunction {
            name: format!("{}+{c}", self.name),
            dim: self.dim,
            value: Arc::new(move |x| v(x) + c),
            grad: g,
            kinks: self.kinks.clone(),
            mean_zero_hint: false,
        }
    }

    /// `λ f`.
    pub fn scaled(&self, lambda: f64) -> Self {
        let (v, g) = (self.value.clone(), self.grad.clone());
        TestFunction {
            name: format!("{lambda}*{}", self.name),
            dim: self.dim,
            value: Arc::new(move |x| lambda * v(x)),
            grad: Arc::new(move |x, out| {
                g(x, out);
                out.iter_mut().for_each(|o| *o *= lambda);
            }),
            kinks: self.kinks.clone(),
            mean_zero_hint: self.mean_zero_hint,
        }
    }

    /// `a f + b g`.
    pub fn combine(&self, a: f64, other: &TestFunction, b: f64) -> Self {
        assert_eq!(self.dim, other.dim);
        let (v1, g1) = (self.value.clone(), self.grad.clone());
        let (v2, g2) = (other.value.clone(), other.grad.clone());
        let dim = self.dim;
        TestFunction {
            name: format!("{a}*{}+{b}*{}", self.name, other.name),
            dim,
            value: Arc::new(move |x| a * v1(x) + b * v2(x)),
            grad: Arc::new(move |x, out| {
                let mut tmp = vec![0.0; dim];
                g1(x, out);
                g2(x, &mut tmp);
                for (o, t) in out.iter_mut().zip(&tmp) {
                    *o = a * *o + b * t;
                }
            }),
            kinks: self.kinks.iter().chain(&other.kinks).cloned().collect(),
            mean_zero_hint: false,
        }
    }

    /// `f - g`.
    pub fn minus(&self, other: &TestFunction) -> Self {
        self.combine(1.0, other, -1.0)
    }

    /// `f · b` with `b(x) = exp(1 - 1/(1 - |x - c|²/ρ²))` inside the ball of
    /// radius `ρ` around `c`, zero outside. Smooth and compactly supported.
    pub fn times_bump(&self, center: f64, radius: f64) -> Self {
        let (v, g) = (self.value.clone(), self.grad.clone());
        let v2 = v.clone();
        let dim = self.dim;
        TestFunction {
            name: format!("{}·bump({center},{radius})", self.name),
            dim,
            value: Arc::new(move |x| {
                let (b, _) = bump(x, center, radius);
                if b == 0.0 {
                    0.0
                } else {
                    v(x) * b
                }
            }),
            grad: Arc::new(move |x, out| {
                let (b, db) = bump(x, center, radius);
                if b == 0.0 {
                    out.fill(0.0);
                    return;
                }
                g(x, out);
                let fx = v2(x);
                for k in 0..dim {
                    out[k] = out[k] * b + fx * db * (x[k] - center);
                }
            }),
            kinks: self.kinks.clone(),
            mean_zero_hint: false,
        }
    }

    /// Compares the gradient against centered finite differences; tolerance
    /// is relative with an absolute floor of the same size below one.
    pub fn check_gradient(&self, points: &[Vec<f64>], tol: f64) -> Result<(), FunctionalError> {
        let mut g = vec![0.0; self.dim];
        for x in points {
            self.gradient(x, &mut g);
            for k in 0..self.dim {
                let h = 1e-5 * x[k].abs().max(1.0);
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[k] += h;
                xm[k] -= h;
                let fd = (self.eval(&xp) - self.eval(&xm)) / (2.0 * h);
                if !((fd - g[k]).abs() <= tol * g[k].abs().max(1.0)) {
                    return Err(FunctionalError::InconsistentGradient {
                        x: x.clone(),
                        analytic: g[k],
                        numeric: fd,
                    });
                }
            }
        }
        Ok(())
    }
}

fn horner(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ck| acc * x + ck)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `He_k(x)` via `He_{k+1} = x He_k - k He_{k-1}`.
pub fn hermite_value(k: usize, x: f64) -> f64 {
    let (mut h0, mut h1) = (1.0, x);
    if k == 0 {
        return h0;
    }
    for j in 1..k {
        let h2 = x * h1 - j as f64 * h0;
        h0 = h1;
        h1 = h2;
    }
    h1
}

/// Bump value and the radial factor `db` with `∇b = db · (x - c)`.
fn bump(x: &[f64], center: f64, radius: f64) -> (f64, f64) {
    let r2: f64 = x.iter().map(|xi| (xi - center) * (xi - center)).sum::<f64>() / (radius * radius);
    if r2 >= 1.0 {
        return (0.0, 0.0);
    }
    let q = 1.0 - r2;
    let b = (1.0 - 1.0 / q).exp();
    (b, -b * 2.0 / (q * q * radius * radius))
}

/// Which integral `∫|f - f_θ|^p dμ` to report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistanceOrder {
    L1,
    L2,
}

/// Everything known about the deficit of one function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeficitReport {
    pub function: String,
    pub mean: f64,
    pub variance: Estimate,
    pub energy: Estimate,
    /// `energy - variance`; err_est is the sum of both estimates.
    pub deficit: Estimate,
    /// `∫ x f dμ` for the centered function.
    pub barycentre: Vec<f64>,
    /// L² projection of the centered function onto span{V'_i}.
    pub best_theta: Vec<f64>,
    /// `∫|f - f_θ̂| dμ`.
    pub l1_dist: f64,
    /// `∫|f - f_θ̂|² dμ`.
    pub l2_dist: f64,
    /// `∫|f - f_θ*| dμ`.
    pub l1_dist_barycentre: f64,
    /// `∫|f - f_θ*|² dμ`.
    pub l2_dist_barycentre: f64,
}

/// Node values of a function and its gradient on one grid level.
struct Samples {
    f: Vec<f64>,
    grad: Vec<f64>,
}

/// Evaluates functionals of a fixed (product) measure at a fixed level.
#[derive(Debug, Clone)]
pub struct Evaluator {
    grid: WeightedGrid,
    potentials: Vec<Potential>,
    label: String,
}

impl Evaluator {
    pub fn new(m: &Measure, level: u32) -> Result<Self, FunctionalError> {
        Self::product(&ProductMeasure::from(m.clone()), level)
    }

    pub fn product(m: &ProductMeasure, level: u32) -> Result<Self, FunctionalError> {
        Ok(Evaluator {
            grid: WeightedGrid::new(m, level)?,
            potentials: m.factors().iter().map(|f| f.potential().clone()).collect(),
            label: m.label(),
        })
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn grid(&self) -> &WeightedGrid {
        &self.grid
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn potentials(&self) -> &[Potential] {
        &self.potentials
    }

    fn check_dim(&self, f: &TestFunction) -> Result<(), FunctionalError> {
        if f.dim() != self.dim() {
            return Err(FunctionalError::DimensionMismatch { expected: self.dim(), got: f.dim() });
        }
        Ok(())
    }

    fn sample(&self, level: &GridLevel, f: &TestFunction) -> Result<Samples, FunctionalError> {
        let d = level.dim;
        let mut values = Vec::with_capacity(level.len());
        let mut grad = vec![0.0; level.len() * d];
        for i in 0..level.len() {
            let x = level.point(i);
            let v = f.eval(x);
            let gi = &mut grad[i * d..(i + 1) * d];
            f.gradient(x, gi);
            if !v.is_finite() || gi.iter().any(|g| !g.is_finite()) {
                return Err(FunctionalError::NonFinite(f.name().to_string()));
            }
            values.push(v);
        }
        Ok(Samples { f: values, grad })
    }

    /// Kink-split fine and coarse levels for 1D functions with declared
    /// kinks (plus the zeros of `f` itself when `with_zeros`).
    fn split_levels(&self, f: &TestFunction, with_zeros: bool) -> Option<(GridLevel, GridLevel)> {
        if self.dim() != 1 || (f.kinks.is_empty() && !with_zeros) {
            return None;
        }
        let zero = |x: f64| f.eval(&[x]);
        let mut levels: Vec<&dyn Fn(f64) -> f64> = f.kinks.iter().map(|k| k.as_ref() as &dyn Fn(f64) -> f64).collect();
        if with_zeros {
            levels.push(&zero);
        }
        Some((self.grid.split_level_1d(true, &levels)?, self.grid.split_level_1d(false, &levels)?))
    }

    /// Evaluates `op` on both levels and packages the result.
    fn two_level<F>(&self, f: &TestFunction, op: F) -> Result<Estimate, FunctionalError>
    where
        F: Fn(&GridLevel, &Samples) -> Result<(f64, f64), FunctionalError>,
    {
        self.check_dim(f)?;
        let split = self.split_levels(f, false);
        let (fl, cl) = match &split {
            Some((a, b)) => (a, b),
            None => (&self.grid.fine, &self.grid.coarse),
        };
        let fine_s = self.sample(fl, f)?;
        let coarse_s = self.sample(cl, f)?;
        let (fine, scale) = op(fl, &fine_s)?;
        let (coarse, _) = op(cl, &coarse_s)?;
        Ok(Estimate::from_levels(fine, coarse, scale))
    }

    /// Two functionals of `f` from one sampling per level.
    fn two_level_pair<F, G>(&self, f: &TestFunction, op1: F, op2: G) -> Result<(Estimate, Estimate), FunctionalError>
    where
        F: Fn(&GridLevel, &Samples) -> Result<(f64, f64), FunctionalError>,
        G: Fn(&GridLevel, &Samples) -> Result<(f64, f64), FunctionalError>,
    {
        self.check_dim(f)?;
        let split = self.split_levels(f, false);
        let (fl, cl) = match &split {
            Some((a, b)) => (a, b),
            None => (&self.grid.fine, &self.grid.coarse),
        };
        let fine_s = self.sample(fl, f)?;
        let coarse_s = self.sample(cl, f)?;
        let est = |op: &dyn Fn(&GridLevel, &Samples) -> Result<(f64, f64), FunctionalError>| {
            let (fine, scale) = op(fl, &fine_s)?;
            let (coarse, _) = op(cl, &coarse_s)?;
            Ok::<_, FunctionalError>(Estimate::from_levels(fine, coarse, scale))
        };
        Ok((est(&op1)?, est(&op2)?))
    }

    /// `∫ f dμ`.
    pub fn mean(&self, f: &TestFunction) -> Result<Estimate, FunctionalError> {
        self.two_level(f, |lvl, s| Ok((lvl.sum(&s.f), abs_sum(lvl, &s.f))))
    }

    /// `Var_μ(f) = ∫ (f - ∫f)² dμ`.
    pub fn variance(&self, f: &TestFunction) -> Result<Estimate, FunctionalError> {
        self.two_level(f, |lvl, s| Ok(centered_second_moment(lvl, &s.f)))
    }

    /// `∫ ⟨(V'')^{-1} ∇f, ∇f⟩ dμ` with diagonal `V''` for products.
    pub fn bl_energy(&self, f: &TestFunction) -> Result<Estimate, FunctionalError> {
        self.two_level(f, |lvl, s| energy_on(lvl, &s.grad))
    }

    /// Deficit and the associated projections, for the centered function.
    pub fn deficit(&self, f: &TestFunction) -> Result<DeficitReport, FunctionalError> {
        let mean = self.mean(f)?.value;
        let fc = f.shifted(-mean);
        let variance = self.variance(&fc)?;
        let energy = self.bl_energy(&fc)?;
        let deficit = Estimate::new(energy.value - variance.value, energy.err_est + variance.err_est);
        if deficit.value < -10.0 * deficit.err_est {
            return Err(FunctionalError::NegativeDeficit {
                deficit: deficit.value,
                err_est: deficit.err_est,
            });
        }
        let barycentre: Vec<f64> = self.barycentre(&fc)?.iter().map(|e| e.value).collect();
        let best_theta = self.best_theta(&fc)?;
        let l1_dist = self.lp_dist_to_extremiser(&fc, &best_theta, DistanceOrder::L1)?.value;
        let l2_dist = self.lp_dist_to_extremiser(&fc, &best_theta, DistanceOrder::L2)?.value;
        let l1_dist_barycentre =
            self.lp_dist_to_extremiser(&fc, &barycentre, DistanceOrder::L1)?.value;
        let l2_dist_barycentre =
            self.lp_dist_to_extremiser(&fc, &barycentre, DistanceOrder::L2)?.value;
        Ok(DeficitReport {
            function: f.name().to_string(),
            mean,
            variance,
            energy,
            deficit,
            barycentre,
            best_theta,
            l1_dist,
            l2_dist,
            l1_dist_barycentre,
            l2_dist_barycentre,
        })
    }

    /// `f_θ = ⟨θ, V'⟩` with gradient `V'' θ`.
    pub fn extremiser(&self, theta: &[f64]) -> Result<TestFunction, FunctionalError> {
        extremiser_of(&self.potentials, theta)
    }

    /// `θ* = ∫ x f dμ`, componentwise.
    pub fn barycentre(&self, f: &TestFunction) -> Result<Vec<Estimate>, FunctionalError> {
        (0..self.dim())
            .map(|k| {
                self.two_level(f, |lvl, s| {
                    let terms: Vec<f64> =
                        (0..lvl.len()).map(|i| lvl.point(i)[k] * s.f[i]).collect();
                    Ok((lvl.sum(&terms), abs_sum(lvl, &terms)))
                })
            })
            .collect()
    }

    /// Solves `G θ = (∫ V'_i f dμ)_i` with `G_ij = ∫ V'_i V'_j dμ`.
    pub fn best_theta(&self, f: &TestFunction) -> Result<Vec<f64>, FunctionalError> {
        self.check_dim(f)?;
        let split = self.split_levels(f, false);
        let lvl = split.as_ref().map(|(a, _)| a).unwrap_or(&self.grid.fine);
        let s = self.sample(lvl, f)?;
        let n = self.dim();
        let mut gram = DMatrix::<f64>::zeros(n, n);
        let mut rhs = DVector::<f64>::zeros(n);
        for i in 0..n {
            let vi: Vec<f64> = (0..lvl.len()).map(|p| lvl.first[p * n + i]).collect();
            let fv: Vec<f64> = vi.iter().zip(&s.f).map(|(a, b)| a * b).collect();
            rhs[i] = lvl.sum(&fv);
            for j in 0..=i {
                let prod: Vec<f64> = (0..lvl.len()).map(|p| vi[p] * lvl.first[p * n + j]).collect();
                let gij = lvl.sum(&prod);
                gram[(i, j)] = gij;
                gram[(j, i)] = gij;
            }
        }
        let eig = gram.clone().symmetric_eigenvalues();
        let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &e| (a.min(e), b.max(e)));
        if !(lo > 1e-300) {
            return Err(FunctionalError::SingularGram);
        }
        if hi / lo > 1e10 {
            log::warn!("Gram matrix of V' is ill-conditioned (cond ≈ {:e})", hi / lo);
        }
        let chol = gram.cholesky().ok_or(FunctionalError::SingularGram)?;
        Ok(chol.solve(&rhs).iter().copied().collect())
    }

    /// `∫ |f - f_θ|^p dμ` (no root taken).
    pub fn lp_dist_to_extremiser(
        &self,
        f: &TestFunction,
        theta: &[f64],
        order: DistanceOrder,
    ) -> Result<Estimate, FunctionalError> {
        if theta.len() != self.dim() {
            return Err(FunctionalError::DimensionMismatch { expected: self.dim(), got: theta.len() });
        }
        let n = self.dim();
        if order == DistanceOrder::L1 && n == 1 {
            let ft = self.extremiser(theta)?;
            return self.abs_integral(&f.minus(&ft));
        }
        let theta = theta.to_vec();
        self.two_level(f, move |lvl, s| {
            let terms: Vec<f64> = (0..lvl.len())
                .map(|i| {
                    let ft: f64 = (0..n).map(|k| theta[k] * lvl.first[i * n + k]).sum();
                    let d = (s.f[i] - ft).abs();
                    match order {
                        DistanceOrder::L1 => d,
                        DistanceOrder::L2 => d * d,
                    }
                })
                .collect();
            Ok((lvl.sum(&terms), abs_sum(lvl, &terms)))
        })
    }

    /// `∫ |f| dμ`.
    pub fn l1_norm(&self, f: &TestFunction) -> Result<Estimate, FunctionalError> {
        if self.dim() == 1 {
            return self.abs_integral(f);
        }
        self.two_level(f, |lvl, s| {
            let a: Vec<f64> = s.f.iter().map(|v| v.abs()).collect();
            let v = lvl.sum(&a);
            Ok((v, v))
        })
    }

    /// One-dimensional `∫|f| dμ` with panels split at the zeros and the
    /// declared kinks of `f`.
    fn abs_integral(&self, f: &TestFunction) -> Result<Estimate, FunctionalError> {
        self.check_dim(f)?;
        let (fl, cl) = self.split_levels(f, true).expect("one-dimensional grid");
        let abs = |lvl: &GridLevel| compensated_sum(lvl.points.iter().zip(&lvl.weights).map(|(&x, w)| w * f.eval(&[x]).abs()));
        let (fine, coarse) = (abs(&fl), abs(&cl));
        if !fine.is_finite() || !coarse.is_finite() {
            return Err(FunctionalError::NonFinite(f.name().to_string()));
        }
        Ok(Estimate::from_levels(fine, coarse, fine))
    }

    /// `∫ f² dμ`.
    pub fn second_moment(&self, f: &TestFunction) -> Result<Estimate, FunctionalError> {
        self.two_level(f, |lvl, s| {
            let a: Vec<f64> = s.f.iter().map(|v| v * v).collect();
            let v = lvl.sum(&a);
            Ok((v, v))
        })
    }

    /// `Ent_μ(g²) = ∫ g² log(g² / ∫g² dμ) dμ`.
    pub fn entropy(&self, g: &TestFunction) -> Result<Estimate, FunctionalError> {
        self.two_level(g, |lvl, s| entropy_on(lvl, &s.f))
    }

    /// `∫ φ-entropy`: `∫ g² φ(g²) dμ - ∫g² dμ · φ(∫g² dμ)`.
    pub fn phi_entropy<P: Fn(f64) -> f64>(
        &self,
        g: &TestFunction,
        phi: P,
    ) -> Result<Estimate, FunctionalError> {
        self.two_level(g, |lvl, s| phi_entropy_on(lvl, &s.f, &phi))
    }

    /// `(bl_energy(g), phi_entropy(g, phi))` sharing the samples of `g`.
    pub fn energy_and_phi_entropy<P: Fn(f64) -> f64>(
        &self,
        g: &TestFunction,
        phi: P,
    ) -> Result<(Estimate, Estimate), FunctionalError> {
        self.two_level_pair(g, |lvl, s| energy_on(lvl, &s.grad), |lvl, s| phi_entropy_on(lvl, &s.f, &phi))
    }

    /// `∫ |f̃ - ⟨∇f, (V'')^{-1} V'⟩|² / (n + ⟨V', (V'')^{-1} V'⟩) dμ` for the
    /// centered `f̃`; never exceeds the deficit.
    pub fn bgg_bound(&self, f: &TestFunction) -> Result<Estimate, FunctionalError> {
        let mean = self.mean(f)?.value;
        let n = self.dim();
        self.two_level(f, move |lvl, s| {
            let mut terms = Vec::with_capacity(lvl.len());
            for i in 0..lvl.len() {
                let mut proj = 0.0;
                let mut denom = n as f64;
                for k in 0..n {
                    let v1 = lvl.first[i * n + k];
                    let v2 = checked_curvature(lvl, i, k)?;
                    proj += s.grad[i * n + k] * v1 / v2;
                    denom += v1 * v1 / v2;
                }
                let r = s.f[i] - mean - proj;
                terms.push(r * r / denom);
            }
            let v = lvl.sum(&terms);
            Ok((v, v))
        })
    }
}

/// Builds `f_θ = Σ θ_k V_k'(x_k)` for a list of one-dimensional factors.
pub fn extremiser_of(potentials: &[Potential], theta: &[f64]) -> Result<TestFunction, FunctionalError> {
    if theta.len() != potentials.len() {
        return Err(FunctionalError::DimensionMismatch {
            expected: potentials.len(),
            got: theta.len(),
        });
    }
    let pots = potentials.to_vec();
    let pots2 = pots.clone();
    let th = theta.to_vec();
    let th2 = th.clone();
    let mut f = TestFunction::new(
        format!("f_θ(θ={theta:?})"),
        theta.len(),
        move |x| pots.iter().zip(&th).zip(x).map(|((p, t), &xi)| t * p.first(xi)).sum(),
        move |x, g| {
            for k in 0..g.len() {
                g[k] = th2[k] * pots2[k].second(x[k]);
            }
        },
    );
    f.mean_zero_hint = true;
    Ok(f)
}

fn abs_sum(lvl: &GridLevel, v: &[f64]) -> f64 {
    compensated_sum(lvl.weights.iter().zip(v).map(|(w, x)| (w * x).abs()))
}

fn centered_second_moment(lvl: &GridLevel, f: &[f64]) -> (f64, f64) {
    let mean = lvl.sum(f);
    let sq: Vec<f64> = f.iter().map(|v| (v - mean) * (v - mean)).collect();
    let v = lvl.sum(&sq);
    let raw: Vec<f64> = f.iter().map(|v| v * v).collect();
    (v, lvl.sum(&raw))
}

fn checked_curvature(lvl: &GridLevel, i: usize, k: usize) -> Result<f64, FunctionalError> {
    let v2 = lvl.second[i * lvl.dim + k];
    if !(v2 >= CURVATURE_FLOOR) {
        return Err(FunctionalError::SingularWeight { x: lvl.point(i).to_vec(), value: v2 });
    }
    Ok(v2)
}

pub(crate) fn energy_on(lvl: &GridLevel, grad: &[f64]) -> Result<(f64, f64), FunctionalError> {
    let d = lvl.dim;
    let mut terms = Vec::with_capacity(lvl.len());
    for i in 0..lvl.len() {
        let mut e = 0.0;
        for k in 0..d {
            let g = grad[i * d + k];
            e += g * g / checked_curvature(lvl, i, k)?;
        }
        terms.push(e);
    }
    let v = lvl.sum(&terms);
    Ok((v, v))
}

pub(crate) fn entropy_on(lvl: &GridLevel, g: &[f64]) -> Result<(f64, f64), FunctionalError> {
    let sq: Vec<f64> = g.iter().map(|v| v * v).collect();
    let m2 = lvl.sum(&sq);
    if !(m2 > 1e-300) {
        return Err(FunctionalError::DegenerateFunction(m2));
    }
    let log_m2 = m2.ln();
    let terms: Vec<f64> =
        sq.iter().map(|&s| if s > 0.0 { s * (s.ln() - log_m2) } else { 0.0 }).collect();
    let scale = compensated_sum(
        lvl.weights.iter().zip(&sq).map(|(w, &s)| if s > 0.0 { (w * s * s.ln()).abs() } else { 0.0 }),
    ) + m2 * log_m2.abs();
    Ok((lvl.sum(&terms), scale))
}

pub(crate) fn phi_entropy_on<P: Fn(f64) -> f64>(
    lvl: &GridLevel,
    g: &[f64],
    phi: &P,
) -> Result<(f64, f64), FunctionalError> {
    let sq: Vec<f64> = g.iter().map(|v| v * v).collect();
    let m2 = lvl.sum(&sq);
    if !(m2 > 1e-300) {
        return Err(FunctionalError::DegenerateFunction(m2));
    }
    let terms: Vec<f64> = sq.iter().map(|&s| if s > 0.0 { s * phi(s) } else { 0.0 }).collect();
    let first = lvl.sum(&terms);
    let v = first - m2 * phi(m2);
    Ok((v, abs_sum(lvl, &terms) + (m2 * phi(m2)).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::PotentialSpec;
    use crate::quad::DEFAULT_LEVEL;

    fn eval_for(spec: PotentialSpec) -> Evaluator {
        Evaluator::new(&Measure::from_spec(&spec, false).unwrap(), DEFAULT_LEVEL).unwrap()
    }

    fn gaussian() -> Evaluator {
        eval_for(PotentialSpec::gaussian(1.0))
    }

    fn x() -> TestFunction {
        TestFunction::polynomial(vec![0.0, 1.0])
    }

    fn h2() -> TestFunction {
        TestFunction::polynomial(vec![-1.0, 0.0, 1.0])
    }

    #[test]
    fn variance_examples() {
        let ev = gaussian();
        assert!((ev.variance(&x()).unwrap().value - 1.0).abs() < 1e-9);
        assert!((ev.variance(&h2()).unwrap().value - 2.0).abs() < 1e-8);
        assert!(ev.variance(&TestFunction::constant(1, 7.0)).unwrap().value.abs() < 1e-12);
    }

    #[test]
    fn energy_examples() {
        let ev = gaussian();
        assert!((ev.bl_energy(&x()).unwrap().value - 1.0).abs() < 1e-9);
        assert!((ev.bl_energy(&h2()).unwrap().value - 4.0).abs() < 1e-8);
        let q = eval_for(PotentialSpec::power(2.0, 0.0));
        assert!((q.bl_energy(&x()).unwrap().value - 0.5).abs() < 1e-9);
    }

    #[test]
    fn deficit_examples() {
        let ev = gaussian();
        let r = ev.deficit(&x()).unwrap();
        assert!(r.deficit.value.abs() < 1e-9);
        let r = ev.deficit(&TestFunction::hermite(3)).unwrap();
        assert!((r.variance.value - 6.0).abs() < 1e-6);
        assert!((r.energy.value - 18.0).abs() < 1e-6);
        assert!((r.deficit.value - 12.0).abs() < 1e-6);
        let r = ev.deficit(&h2()).unwrap();
        assert!((r.deficit.value - 2.0).abs() < 1e-8);
        assert_eq!(r.variance.value + r.deficit.value, r.energy.value);
    }

    #[test]
    fn extremiser_examples() {
        let ev = gaussian();
        let f = ev.extremiser(&[1.0]).unwrap();
        assert_eq!(f.eval(&[0.7]), 0.7);
        let q = eval_for(PotentialSpec::power(2.0, 0.0));
        let f = q.extremiser(&[1.0]).unwrap();
        assert!((f.eval(&[0.7]) - 1.4).abs() < 1e-15);
        let f = ev.extremiser(&[0.0]).unwrap();
        assert_eq!(f.eval(&[3.0]), 0.0);
        assert!(ev.extremiser(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn barycentre_examples() {
        let ev = gaussian();
        assert!((ev.barycentre(&x()).unwrap()[0].value - 1.0).abs() < 1e-9);
        assert!(ev.barycentre(&h2()).unwrap()[0].value.abs() < 1e-9);
        let f = ev.extremiser(&[2.5]).unwrap();
        assert!((ev.barycentre(&f).unwrap()[0].value - 2.5).abs() < 1e-8);
    }

    #[test]
    fn best_theta_examples() {
        let ev = gaussian();
        assert!((ev.best_theta(&x()).unwrap()[0] - 1.0).abs() < 1e-9);
        let x3 = TestFunction::polynomial(vec![0.0, 0.0, 0.0, 1.0]);
        assert!((ev.best_theta(&x3).unwrap()[0] - 3.0).abs() < 1e-8);
        assert!(ev.best_theta(&h2()).unwrap()[0].abs() < 1e-9);
    }

    #[test]
    fn distance_examples() {
        let ev = gaussian();
        let f = ev.extremiser(&[1.3]).unwrap();
        assert!(ev.lp_dist_to_extremiser(&f, &[1.3], DistanceOrder::L2).unwrap().value < 1e-10);
        let d = ev.lp_dist_to_extremiser(&h2(), &[0.0], DistanceOrder::L2).unwrap().value;
        assert!((d - 2.0).abs() < 1e-8);
        assert!(ev.lp_dist_to_extremiser(&x(), &[1.0], DistanceOrder::L1).unwrap().value < 1e-10);
    }

    #[test]
    fn entropy_examples() {
        let ev = gaussian();
        assert!(ev.entropy(&TestFunction::constant(1, 1.0)).unwrap().value.abs() < 1e-12);
        // g² = e^{x - 1/2} has unit mass; Ent = E_{N(1,1)}[x - 1/2] = 1/2.
        let g = TestFunction::exp_linear(vec![0.5]).scaled((-0.25f64).exp());
        assert!((ev.entropy(&g).unwrap().value - 0.5).abs() < 1e-8);
        assert!(matches!(
            ev.entropy(&TestFunction::constant(1, 0.0)),
            Err(FunctionalError::DegenerateFunction(_))
        ));
    }

    #[test]
    fn bgg_examples() {
        let ev = gaussian();
        assert!(ev.bgg_bound(&x()).unwrap().value.abs() < 1e-9);
        let b = ev.bgg_bound(&h2()).unwrap().value;
        assert!((b - 2.0).abs() < 1e-7);
        assert!(b <= ev.deficit(&h2()).unwrap().deficit.value + 1e-7);
        assert_eq!(ev.bgg_bound(&TestFunction::constant(1, 0.0)).unwrap().value, 0.0);
    }

    #[test]
    fn singular_weight_is_reported() {
        // A potential with V'' = 0 on an interval cannot be built, so use a
        // hand-made grid level with one flat node.
        let lvl = GridLevel {
            dim: 1,
            points: vec![0.0, 1.0],
            weights: vec![0.5, 0.5],
            first: vec![0.0, 1.0],
            second: vec![0.0, 1.0],
        };
        assert!(matches!(energy_on(&lvl, &[1.0, 1.0]), Err(FunctionalError::SingularWeight { .. })));
    }

    #[test]
    fn hermite_recurrence() {
        assert_eq!(hermite_value(3, 2.0), 8.0 - 6.0);
        assert_eq!(hermite_value(4, 1.0), 1.0 - 6.0 + 3.0);
        TestFunction::hermite(5).check_gradient(&[vec![0.3], vec![-1.7]], 1e-6).unwrap();
    }

    #[test]
    fn bump_gradient() {
        let f = TestFunction::polynomial(vec![0.3, -1.0, 0.5]).times_bump(0.0, 2.5);
        let pts: Vec<Vec<f64>> = (0..40).map(|i| vec![-2.4 + 0.12 * i as f64]).collect();
        f.check_gradient(&pts, 1e-5).unwrap();
        let sep = TestFunction::separable(vec![TestFunction::hermite(2), TestFunction::hermite(1)]);
        sep.check_gradient(&[vec![0.3, 0.9], vec![-1.0, 2.0]], 1e-6).unwrap();
    }
}
