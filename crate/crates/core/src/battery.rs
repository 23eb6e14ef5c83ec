//! Seeded randomized test batteries: polynomials of bounded degree in
//! standardized coordinates, multiplied by a smooth compact bump fitted to
//! the support.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::functionals::TestFunction;
use crate::measures::{Measure, MeasureError, PotentialSpec, ProductMeasure, MAX_PRODUCT_DIM};
use crate::quad::{build_rule, integrate, QuadError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatterySpec {
    pub seed: u64,
    pub size: usize,
    pub degree_cap: usize,
    /// Bump radii as fractions of the support half-width.
    pub cutoff_radii: Vec<f64>,
}

impl Default for BatterySpec {
    fn default() -> Self {
        BatterySpec { seed: 12345, size: 64, degree_cap: 6, cutoff_radii: vec![0.35, 0.6, 0.9] }
    }
}

impl BatterySpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.degree_cap == 0 || self.degree_cap > MAX_DEG {
            return Err(format!("degree_cap {} outside 1..=12", self.degree_cap));
        }
        if self.cutoff_radii.is_empty() {
            return Err("cutoff_radii is empty".into());
        }
        if self.cutoff_radii.iter().any(|r| !(*r > 0.0 && *r <= 2.0)) {
            return Err("cutoff radii must lie in (0, 2]".into());
        }
        Ok(())
    }
}

/// Centre, spread and support half-width of one axis.
#[derive(Debug, Clone, Copy)]
struct AxisFrame {
    center: f64,
    scale: f64,
    half_width: f64,
}

fn frame(m: &Measure) -> Result<AxisFrame, QuadError> {
    let rule = build_rule(m, 6)?;
    let mean = integrate(&rule, m, |x| x)?.value;
    let var = integrate(&rule, m, |x| (x - mean) * (x - mean))?.value;
    let (lo, hi) = m.support();
    Ok(AxisFrame { center: mean, scale: var.sqrt(), half_width: 0.5 * (hi - lo).max(1e-12) })
}

/// `p(u) · Π_k b_k(x_k)` with `u_k = (x_k - c_k)/σ_k` and
/// `b_k(x) = exp(1 - 1/(1 - ((x - c_k)/ρ_k)²))`.
#[derive(Debug, Clone)]
struct PolyBump {
    terms: Vec<(Vec<u32>, f64)>,
    deg: usize,
    center: Vec<f64>,
    scale: Vec<f64>,
    radius: Vec<f64>,
}

const MAX_DIM: usize = MAX_PRODUCT_DIM;
/// Largest `degree_cap` the spec validation accepts.
const MAX_DEG: usize = 12;

impl PolyBump {
    /// Powers `u_k^j` for every axis, `j ≤ MAX_DEG`.
    fn powers(&self, x: &[f64]) -> [[f64; MAX_DEG + 1]; MAX_DIM] {
        let mut pw = [[1.0; MAX_DEG + 1]; MAX_DIM];
        for k in 0..x.len() {
            let u = (x[k] - self.center[k]) / self.scale[k];
            for j in 1..=self.deg {
                pw[k][j] = pw[k][j - 1] * u;
            }
        }
        pw
    }

    fn poly(&self, pw: &[[f64; MAX_DEG + 1]; MAX_DIM], dim: usize) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| c * (0..dim).map(|k| pw[k][e[k] as usize]).product::<f64>())
            .sum()
    }

    fn poly_grad(&self, pw: &[[f64; MAX_DEG + 1]; MAX_DIM], out: &mut [f64]) {
        out.fill(0.0);
        let dim = out.len();
        for (e, c) in &self.terms {
            for k in 0..dim {
                if e[k] == 0 {
                    continue;
                }
                let mut t = c * e[k] as f64 * pw[k][e[k] as usize - 1];
                for j in (0..dim).filter(|&j| j != k) {
                    t *= pw[j][e[j] as usize];
                }
                out[k] += t / self.scale[k];
            }
        }
    }

    /// Bump factor and `d log b / dx_k` per axis; `None` outside the support.
    fn bump(&self, x: &[f64]) -> Option<(f64, [f64; MAX_DIM])> {
        let mut b = 1.0;
        let mut dlog = [0.0; MAX_DIM];
        for k in 0..x.len() {
            let t = (x[k] - self.center[k]) / self.radius[k];
            let q = 1.0 - t * t;
            if q <= 0.0 {
                return None;
            }
            b *= (1.0 - 1.0 / q).exp();
            dlog[k] = -2.0 * t / (q * q * self.radius[k]);
        }
        if b == 0.0 {
            return None;
        }
        Some((b, dlog))
    }

    fn into_function(self, name: String) -> TestFunction {
        let dim = self.center.len();
        assert!(dim <= MAX_DIM);
        let a = std::sync::Arc::new(self);
        let b = a.clone();
        TestFunction::new(
            name,
            dim,
            move |x| match a.bump(x) {
                Some((bv, _)) => a.poly(&a.powers(x), x.len()) * bv,
                None => 0.0,
            },
            move |x, g| match b.bump(x) {
                Some((bv, dlog)) => {
                    let pw = b.powers(x);
                    let p = b.poly(&pw, x.len());
                    b.poly_grad(&pw, g);
                    for k in 0..g.len() {
                        g[k] = (g[k] + p * dlog[k]) * bv;
                    }
                }
                None => g.fill(0.0),
            },
        )
    }
}

/// Multi-indices of total degree `≤ deg` in `dim` variables.
fn multi_indices(dim: usize, deg: u32) -> Vec<Vec<u32>> {
    if dim == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for k in 0..=deg {
        for mut rest in multi_indices(dim - 1, deg - k) {
            rest.insert(0, k);
            out.push(rest);
        }
    }
    out
}

fn factorial(k: u32) -> f64 {
    (1..=k).map(f64::from).product()
}

fn random_polybump(
    rng: &mut ChaCha8Rng,
    frames: &[AxisFrame],
    degree_cap: usize,
    radius_frac: f64,
) -> PolyBump {
    let deg = rng.gen_range(1..=degree_cap as u32);
    let terms = multi_indices(frames.len(), deg)
        .into_iter()
        .filter_map(|e| {
            // Scale so each monomial has comparable L² size under a unit Gaussian.
            let norm: f64 = e.iter().map(|&k| factorial(k).sqrt()).product();
            let c: f64 = rng.gen_range(-1.0..1.0);
            (c != 0.0).then(|| (e, c / norm))
        })
        .collect();
    PolyBump {
        terms,
        deg: deg as usize,
        center: frames.iter().map(|f| f.center).collect(),
        scale: frames.iter().map(|f| f.scale).collect(),
        radius: frames.iter().map(|f| radius_frac * f.half_width).collect(),
    }
}

/// `spec.size` smooth random functions adapted to `m`.
pub fn generate(m: &Measure, spec: &BatterySpec) -> Result<Vec<TestFunction>, QuadError> {
    generate_product(&ProductMeasure::from(m.clone()), spec)
}

/// Random functions on a product measure; in dimension ≥ 2 the polynomial
/// part couples the coordinates, so the family is not separable.
pub fn generate_product(
    m: &ProductMeasure,
    spec: &BatterySpec,
) -> Result<Vec<TestFunction>, QuadError> {
    let frames: Vec<AxisFrame> = m.factors().iter().map(frame).collect::<Result<_, _>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.size);
    for i in 0..spec.size {
        let radius = spec.cutoff_radii[i % spec.cutoff_radii.len()];
        let pb = random_polybump(&mut rng, &frames, spec.degree_cap.max(1), radius);
        out.push(pb.into_function(format!("battery[{i}]")));
    }
    Ok(out)
}

/// The measures every battery-wide acceptance check runs on.
pub fn builtin_specs() -> Vec<PotentialSpec> {
    vec![
        PotentialSpec::gaussian(1.0),
        PotentialSpec::power(2.0, 0.0),
        PotentialSpec::power(1.5, 0.1),
        PotentialSpec::power(3.0, 0.0),
    ]
}

pub fn builtin_measures() -> Result<Vec<Measure>, MeasureError> {
    builtin_specs().iter().map(|s| Measure::from_spec(s, false)).collect()
}
