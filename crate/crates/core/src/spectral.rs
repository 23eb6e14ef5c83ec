//! Piecewise-linear finite-element discretization of the energy and
//! L²(μ) forms, and the generalized eigenproblems built on them: the sharp
//! L² stability eigenvalue and adversarial lower bounds on `β(s)`.
//!
//! In 1D both forms are tridiagonal. In 2D they are Kronecker sums of the
//! axis forms, and solves go through fast diagonalization.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::functionals::TestFunction;
use crate::measures::{Measure, PotentialSpec, ProductMeasure, CURVATURE_FLOOR};
use crate::quad::{compensated_sum, gauss_legendre};

pub const MIN_MESH_1D: usize = 64;
pub const MAX_MESH_1D: usize = 8192;
pub const MIN_MESH_2D: usize = 32;
pub const MAX_MESH_2D: usize = 256;
/// Largest problem handed to the dense generalized eigensolver.
pub const DENSE_LIMIT: usize = 512;
const SHIFT: f64 = 1.0;
const ELEMENT_ORDER: usize = 4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpectralError {
    #[error("mesh size {got} outside [{min}, {max}]")]
    MeshSize { got: usize, min: usize, max: usize },
    #[error("1/V'' is not integrable or V'' = {value:e} below the floor near x = {x}")]
    SingularWeight { x: f64, value: f64 },
    #[error("eigensolver failed: {0}")]
    EigenFailure(String),
    #[error("operation supports dimension {supported}, got {got}")]
    DimensionCap { supported: usize, got: usize },
    #[error("s = {0} must be ≥ 1")]
    InvalidS(f64),
}

/// Symmetric tridiagonal matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tridiag {
    pub diag: Vec<f64>,
    /// `off[i]` couples `i` and `i + 1`.
    pub off: Vec<f64>,
}

impl Tridiag {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = self.diag[i] * x[i];
            if i > 0 {
                s += self.off[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                s += self.off[i] * x[i + 1];
            }
            y[i] = s;
        }
        y
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.mul(x))
    }

    /// `self + c·other`.
    pub fn plus(&self, c: f64, other: &Tridiag) -> Tridiag {
        Tridiag {
            diag: self.diag.iter().zip(&other.diag).map(|(a, b)| a + c * b).collect(),
            off: self.off.iter().zip(&other.off).map(|(a, b)| a + c * b).collect(),
        }
    }

    /// Principal submatrix on sorted indices; entries between indices that
    /// are not mesh neighbours vanish.
    pub fn restrict(&self, idx: &[usize]) -> Tridiag {
        let diag = idx.iter().map(|&i| self.diag[i]).collect();
        let off = idx
            .windows(2)
            .map(|w| if w[1] == w[0] + 1 { self.off[w[0]] } else { 0.0 })
            .collect();
        Tridiag { diag, off }
    }

    /// Thomas algorithm; the matrix must be positive definite.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>, SpectralError> {
        let n = self.len();
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut piv = self.diag[0];
        if !(piv > 0.0) {
            return Err(SpectralError::EigenFailure("non-positive pivot".into()));
        }
        c[0] = if n > 1 { self.off[0] / piv } else { 0.0 };
        d[0] = rhs[0] / piv;
        for i in 1..n {
            piv = self.diag[i] - self.off[i - 1] * c[i - 1];
            if !(piv > 0.0) {
                return Err(SpectralError::EigenFailure("non-positive pivot".into()));
            }
            c[i] = if i + 1 < n { self.off[i] / piv } else { 0.0 };
            d[i] = (rhs[i] - self.off[i - 1] * d[i - 1]) / piv;
        }
        for i in (0..n - 1).rev() {
            d[i] -= c[i] * d[i + 1];
        }
        Ok(d)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            a[(i, i)] = self.diag[i];
            if i + 1 < n {
                a[(i, i + 1)] = self.off[i];
                a[(i + 1, i)] = self.off[i];
            }
        }
        a
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    compensated_sum(a.iter().zip(b).map(|(x, y)| x * y))
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += a * xi);
}

/// Forms on a uniform 1D mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forms1D {
    pub label: String,
    pub mesh: Vec<f64>,
    /// `∫ φ_i' φ_j' / V'' dμ`.
    pub energy: Tridiag,
    /// `∫ φ_i φ_j dμ`.
    pub mass: Tridiag,
    /// `∫ φ_i dμ`.
    pub u: Vec<f64>,
    /// Nodal values of `V'`.
    pub v: Vec<f64>,
}

impl Forms1D {
    pub fn n(&self) -> usize {
        self.mesh.len()
    }

    pub fn total(&self) -> f64 {
        compensated_sum(self.u.iter().copied())
    }

    /// `fᵀ(M - uuᵀ/Σu) f`.
    pub fn var_form(&self, f: &[f64]) -> f64 {
        let m = dot(&self.u, f);
        self.mass.quad_form(f) - m * m / self.total()
    }

    /// Nodal interpolant of a function of one variable.
    pub fn interpolate<F: Fn(f64) -> f64>(&self, f: F) -> Vec<f64> {
        self.mesh.iter().map(|&x| f(x)).collect()
    }
}

/// Forms on a 1D mesh or a 2D tensor mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DiscretizedForms {
    One(Forms1D),
    Two(Forms1D, Forms1D),
}

fn singular_spec(m: &Measure) -> bool {
    // |x|^p with p ≥ 3 has 1/V'' ~ |x|^{2-p}, not integrable at 0.
    matches!(m.potential().spec(), Some(PotentialSpec::Power { p, r }) if r == 0.0 && p >= 3.0)
        && m.support().0 < 0.0 + f64::EPSILON
        && m.support().1 > 0.0
}

/// Assembles the 1D forms on `n` uniform nodes spanning the support.
pub fn discretize_forms(m: &Measure, n: usize) -> Result<Forms1D, SpectralError> {
    if !(MIN_MESH_1D..=MAX_MESH_1D).contains(&n) {
        return Err(SpectralError::MeshSize { got: n, min: MIN_MESH_1D, max: MAX_MESH_1D });
    }
    assemble(m, n)
}

fn assemble(m: &Measure, n: usize) -> Result<Forms1D, SpectralError> {
    if singular_spec(m) {
        return Err(SpectralError::SingularWeight { x: 0.0, value: 0.0 });
    }
    let (lo, hi) = m.support();
    let mesh: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    let pot = m.potential();
    let (gx, gw) = gauss_legendre(ELEMENT_ORDER);
    // Per element: [m_ll, m_lr, m_rr, e, u_l, u_r].
    let elems: Vec<Result<[f64; 6], SpectralError>> = mesh
        .par_windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let h = b - a;
            let mut acc = [0.0; 6];
            for (t, wt) in gx.iter().zip(&gw) {
                let x = 0.5 * (a + b) + 0.5 * h * t;
                let wq = 0.5 * h * wt;
                let rho = m.density(x);
                let v2 = pot.second(x);
                if !(v2 >= CURVATURE_FLOOR) {
                    return Err(SpectralError::SingularWeight { x, value: v2 });
                }
                let (pl, pr) = ((b - x) / h, (x - a) / h);
                acc[0] += wq * rho * pl * pl;
                acc[1] += wq * rho * pl * pr;
                acc[2] += wq * rho * pr * pr;
                acc[3] += wq * rho / v2 / (h * h);
                acc[4] += wq * rho * pl;
                acc[5] += wq * rho * pr;
            }
            Ok(acc)
        })
        .collect();
    let mut mass = Tridiag { diag: vec![0.0; n], off: vec![0.0; n - 1] };
    let mut energy = Tridiag { diag: vec![0.0; n], off: vec![0.0; n - 1] };
    let mut u = vec![0.0; n];
    for (k, e) in elems.into_iter().enumerate() {
        let e = e?;
        mass.diag[k] += e[0];
        mass.off[k] += e[1];
        mass.diag[k + 1] += e[2];
        energy.diag[k] += e[3];
        energy.off[k] -= e[3];
        energy.diag[k + 1] += e[3];
        u[k] += e[4];
        u[k + 1] += e[5];
    }
    let v = mesh.iter().map(|&x| pot.first(x)).collect();
    Ok(Forms1D { label: m.label(), mesh, energy, mass, u, v })
}

/// Tensor forms with `n` nodes per axis.
pub fn discretize_forms_2d(m1: &Measure, m2: &Measure, n: usize) -> Result<DiscretizedForms, SpectralError> {
    if !(MIN_MESH_2D..=MAX_MESH_2D).contains(&n) {
        return Err(SpectralError::MeshSize { got: n, min: MIN_MESH_2D, max: MAX_MESH_2D });
    }
    Ok(DiscretizedForms::Two(assemble(m1, n)?, assemble(m2, n)?))
}

/// 1D forms for one factor, 2D tensor forms for two (`mesh_size` then
/// counts all nodes and must be a perfect square).
pub fn discretize_product(pm: &ProductMeasure, mesh_size: usize) -> Result<DiscretizedForms, SpectralError> {
    match pm.factors() {
        [m] => Ok(DiscretizedForms::One(discretize_forms(m, mesh_size)?)),
        [a, b] => {
            let n = (mesh_size as f64).sqrt().round() as usize;
            if n * n != mesh_size {
                return Err(SpectralError::MeshSize {
                    got: mesh_size,
                    min: MIN_MESH_2D * MIN_MESH_2D,
                    max: MAX_MESH_2D * MAX_MESH_2D,
                });
            }
            discretize_forms_2d(a, b, n)
        }
        f => Err(SpectralError::DimensionCap { supported: 2, got: f.len() }),
    }
}

impl DiscretizedForms {
    pub fn dim(&self) -> usize {
        match self {
            DiscretizedForms::One(_) => 1,
            DiscretizedForms::Two(..) => 2,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            DiscretizedForms::One(f) => f.n(),
            DiscretizedForms::Two(a, b) => a.n() * b.n(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mass_mul(&self, x: &[f64]) -> Vec<f64> {
        match self {
            DiscretizedForms::One(f) => f.mass.mul(x),
            DiscretizedForms::Two(a, b) => kron_mul(&a.mass, &b.mass, x),
        }
    }

    pub fn energy_mul(&self, x: &[f64]) -> Vec<f64> {
        match self {
            DiscretizedForms::One(f) => f.energy.mul(x),
            DiscretizedForms::Two(a, b) => {
                let mut y = kron_mul(&a.energy, &b.mass, x);
                axpy(&mut y, 1.0, &kron_mul(&a.mass, &b.energy, x));
                y
            }
        }
    }

    /// `∫ φ_i dμ`.
    pub fn mean_vector(&self) -> Vec<f64> {
        match self {
            DiscretizedForms::One(f) => f.u.clone(),
            DiscretizedForms::Two(a, b) => kron_vec(&a.u, &b.u),
        }
    }

    /// Coefficients of `V'_j`, one vector per coordinate.
    pub fn extremiser_vectors(&self) -> Vec<Vec<f64>> {
        match self {
            DiscretizedForms::One(f) => vec![f.v.clone()],
            DiscretizedForms::Two(a, b) => vec![
                kron_vec(&a.v, &vec![1.0; b.n()]),
                kron_vec(&vec![1.0; a.n()], &b.v),
            ],
        }
    }

    pub fn mass_form(&self, f: &[f64]) -> f64 {
        dot(f, &self.mass_mul(f))
    }

    pub fn energy_form(&self, f: &[f64]) -> f64 {
        dot(f, &self.energy_mul(f))
    }

    /// `fᵀ(Mass - uuᵀ/Σu)f`.
    pub fn var_form(&self, f: &[f64]) -> f64 {
        let u = self.mean_vector();
        let t = compensated_sum(u.iter().copied());
        let m = dot(&u, f);
        self.mass_form(f) - m * m / t
    }

    /// `‖VarForm·1‖∞`, zero for consistent forms.
    pub fn constant_kernel_residual(&self) -> f64 {
        let one = vec![1.0; self.len()];
        let u = self.mean_vector();
        let t = compensated_sum(u.iter().copied());
        let m1 = self.mass_mul(&one);
        m1.iter().zip(&u).map(|(a, b)| (a - b * dot(&u, &one) / t).abs()).fold(0.0, f64::max)
    }

    fn constraints(&self) -> Vec<Vec<f64>> {
        let mut c = vec![vec![1.0; self.len()]];
        c.extend(self.extremiser_vectors());
        c
    }

    pub fn to_dense(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        match self {
            DiscretizedForms::One(f) => (f.energy.to_dense(), f.mass.to_dense()),
            DiscretizedForms::Two(a, b) => {
                let (ea, ma, eb, mb) = (a.energy.to_dense(), a.mass.to_dense(), b.energy.to_dense(), b.mass.to_dense());
                (ea.kronecker(&mb) + ma.kronecker(&eb), ma.kronecker(&mb))
            }
        }
    }
}

fn kron_vec(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().flat_map(|&x| b.iter().map(move |&y| x * y)).collect()
}

/// `(A ⊗ B) x` with `x` stored row-major as an `n_a × n_b` array.
fn kron_mul(a: &Tridiag, b: &Tridiag, x: &[f64]) -> Vec<f64> {
    let (na, nb) = (a.len(), b.len());
    let mut tmp = vec![0.0; na * nb];
    for i in 0..na {
        let row = b.mul(&x[i * nb..(i + 1) * nb]);
        tmp[i * nb..(i + 1) * nb].copy_from_slice(&row);
    }
    let mut out = vec![0.0; na * nb];
    let mut col = vec![0.0; na];
    for j in 0..nb {
        for i in 0..na {
            col[i] = tmp[i * nb + j];
        }
        let r = a.mul(&col);
        for i in 0..na {
            out[i * nb + j] = r[i];
        }
    }
    out
}

/// Largest Ritz pair of an operator self-adjoint in the given inner
/// product, by Lanczos with full reorthogonalization.
#[derive(Debug, Clone)]
struct Ritz {
    value: f64,
    vector: Vec<f64>,
    iterations: usize,
    residual: f64,
}

fn lanczos_largest<A, I>(apply: A, inner: I, start: Vec<f64>, max_iter: usize, tol: f64) -> Result<Ritz, SpectralError>
where
    A: Fn(&[f64]) -> Result<Vec<f64>, SpectralError>,
    I: Fn(&[f64], &[f64]) -> f64,
{
    let nrm = inner(&start, &start).sqrt();
    if !(nrm > 0.0 && nrm.is_finite()) {
        return Err(SpectralError::EigenFailure("zero start vector".into()));
    }
    let mut q: Vec<f64> = start.iter().map(|x| x / nrm).collect();
    let mut qs: Vec<Vec<f64>> = Vec::new();
    let (mut alpha, mut beta) = (Vec::new(), Vec::new());
    let max_iter = max_iter.max(1);
    for j in 0..max_iter {
        qs.push(q.clone());
        let mut w = apply(&q)?;
        let a = inner(&q, &w);
        for _ in 0..2 {
            for qi in &qs {
                let c = inner(qi, &w);
                axpy(&mut w, -c, qi);
            }
        }
        alpha.push(a);
        let b = inner(&w, &w).sqrt();
        let k = j + 1;
        let breakdown = !(b > 1e-14 * a.abs().max(1e-300));
        if k % 4 == 0 || breakdown || k == max_iter {
            let mut t = DMatrix::<f64>::zeros(k, k);
            for i in 0..k {
                t[(i, i)] = alpha[i];
                if i + 1 < k {
                    t[(i, i + 1)] = beta[i];
                    t[(i + 1, i)] = beta[i];
                }
            }
            let eig = t.symmetric_eigen();
            let (imax, theta) = eig
                .eigenvalues
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
            let y = eig.eigenvectors.column(imax);
            let resid = b * y[k - 1].abs();
            if breakdown || resid <= tol * theta.abs().max(1e-300) || k == max_iter {
                if !breakdown && resid > 1e3 * tol * theta.abs().max(1e-300) {
                    return Err(SpectralError::EigenFailure(format!(
                        "Lanczos stalled after {k} steps (residual {resid:e})"
                    )));
                }
                let mut v = vec![0.0; q.len()];
                for (i, qi) in qs.iter().enumerate() {
                    axpy(&mut v, y[i], qi);
                }
                return Ok(Ritz { value: theta, vector: v, iterations: k, residual: resid });
            }
        }
        beta.push(b);
        q = w.iter().map(|x| x / b).collect();
    }
    unreachable!("loop returns at max_iter")
}

fn seeded_vector(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Result of a constrained generalized eigen-solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityEigen {
    /// Smallest eigenvalue of `E - Var` against `Mass` on the complement of
    /// `span{1, V'_j}`.
    pub lambda: f64,
    /// `1/λ`, the sharp L² stability constant on this mesh.
    pub sharp_c2: f64,
    pub method: String,
    pub iterations: usize,
    pub residual: f64,
    /// Nodal values of the minimizer.
    pub eigenvector: Vec<f64>,
}

/// Dispatches to the dense solver for small problems and to constrained
/// shift-invert Lanczos otherwise.
pub fn stability_eigenvalue(df: &DiscretizedForms) -> Result<StabilityEigen, SpectralError> {
    if df.len() <= DENSE_LIMIT {
        stability_eigenvalue_dense(df)
    } else {
        stability_eigenvalue_lanczos(df)
    }
}

fn finish(mu: f64, method: &str, iterations: usize, residual: f64, eigenvector: Vec<f64>) -> StabilityEigen {
    // On the complement of the constants, Var = Mass, so E - Var ↦ μ - 1.
    let lambda = mu - 1.0;
    StabilityEigen { lambda, sharp_c2: 1.0 / lambda, method: method.into(), iterations, residual, eigenvector }
}

/// Dense route: orthonormal basis of `{f : Cᵀ Mass f = 0}`, then a
/// Cholesky-reduced symmetric eigenproblem.
pub fn stability_eigenvalue_dense(df: &DiscretizedForms) -> Result<StabilityEigen, SpectralError> {
    let n = df.len();
    let (e, m) = df.to_dense();
    // The density spans many orders of magnitude over the mesh; work in
    // Jacobi-scaled coordinates f = D g with diag(D M D) = 1.
    let d = jacobi_scaling(&m)?;
    let e = scale_both(&e, &d);
    let m = scale_both(&m, &d);
    let cons = df.constraints();
    let k = cons.len();
    let mut mc = DMatrix::<f64>::zeros(n, k);
    for (j, c) in cons.iter().enumerate() {
        let col = df.mass_mul(c);
        for i in 0..n {
            mc[(i, j)] = col[i] * d[i];
        }
    }
    // Eigenvectors of the Euclidean projector onto span(D M C)^⊥ with
    // eigenvalue 1 span the feasible set.
    let g = mc.transpose() * &mc;
    let ginv = g.try_inverse().ok_or_else(|| SpectralError::EigenFailure("dependent constraints".into()))?;
    let proj = DMatrix::<f64>::identity(n, n) - &mc * ginv * mc.transpose();
    let pe = proj.symmetric_eigen();
    let mut cols: Vec<usize> = (0..n).collect();
    cols.sort_by(|&a, &b| pe.eigenvalues[b].total_cmp(&pe.eigenvalues[a]));
    let q = DMatrix::from_fn(n, n - k, |i, j| pe.eigenvectors[(i, cols[j])]);
    let a = q.transpose() * &e * &q;
    let b = q.transpose() * &m * &q;
    let (vals, vecs) = reduce_pencil(&a, &b)?;
    let (imin, mu) =
        vals.iter().enumerate().fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
    let g = &q * vecs.column(imin);
    let f: Vec<f64> = g.iter().zip(&d).map(|(x, di)| x * di).collect();
    Ok(finish(mu, "dense", 0, 0.0, f))
}

fn jacobi_scaling(m: &DMatrix<f64>) -> Result<Vec<f64>, SpectralError> {
    (0..m.nrows())
        .map(|i| {
            let v = m[(i, i)];
            if v > 0.0 && v.is_finite() {
                Ok(1.0 / v.sqrt())
            } else {
                Err(SpectralError::EigenFailure("mass has a non-positive diagonal".into()))
            }
        })
        .collect()
}

fn scale_both(a: &DMatrix<f64>, d: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * d[i] * d[j])
}

/// All eigenpairs of `A x = λ B x` with `B` positive definite, normalized
/// so that `Xᵀ B X = I`.
fn reduce_pencil(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>), SpectralError> {
    let d = jacobi_scaling(b)?;
    let a = scale_both(a, &d);
    let b = scale_both(b, &d);
    let chol = b.cholesky().ok_or_else(|| SpectralError::EigenFailure("mass not positive definite".into()))?;
    let linv = chol.l().try_inverse().ok_or_else(|| SpectralError::EigenFailure("singular factor".into()))?;
    let c = &linv * a * linv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let eig = c.symmetric_eigen();
    let mut x = linv.transpose() * eig.eigenvectors;
    for i in 0..x.nrows() {
        x.row_mut(i).scale_mut(d[i]);
    }
    Ok((eig.eigenvalues.iter().copied().collect(), x))
}

/// Applies `K⁻¹` with `K = E + σ Mass`.
enum ShiftSolver {
    One(Tridiag),
    Two { phi_a: DMatrix<f64>, phi_b: DMatrix<f64>, lam_a: Vec<f64>, lam_b: Vec<f64> },
}

/// `E Φ = M Φ Λ` with `Φᵀ M Φ = I`, dense.
fn generalized_eigen(e: &Tridiag, m: &Tridiag) -> Result<(DMatrix<f64>, Vec<f64>), SpectralError> {
    let (vals, vecs) = reduce_pencil(&e.to_dense(), &m.to_dense())?;
    Ok((vecs, vals))
}

impl ShiftSolver {
    fn new(df: &DiscretizedForms) -> Result<Self, SpectralError> {
        match df {
            DiscretizedForms::One(f) => Ok(ShiftSolver::One(f.energy.plus(SHIFT, &f.mass))),
            DiscretizedForms::Two(a, b) => {
                let (phi_a, lam_a) = generalized_eigen(&a.energy, &a.mass)?;
                let (phi_b, lam_b) = generalized_eigen(&b.energy, &b.mass)?;
                Ok(ShiftSolver::Two { phi_a, phi_b, lam_a, lam_b })
            }
        }
    }

    fn solve(&self, r: &[f64]) -> Result<Vec<f64>, SpectralError> {
        match self {
            ShiftSolver::One(k) => k.solve(r),
            ShiftSolver::Two { phi_a, phi_b, lam_a, lam_b } => {
                let (na, nb) = (lam_a.len(), lam_b.len());
                let x = DMatrix::from_row_slice(na, nb, r);
                let mut y = phi_a.transpose() * x * phi_b;
                for i in 0..na {
                    for j in 0..nb {
                        y[(i, j)] /= lam_a[i] + lam_b[j] + SHIFT;
                    }
                }
                let z = phi_a * y * phi_b.transpose();
                Ok((0..na).flat_map(|i| (0..nb).map(move |j| (i, j))).map(|(i, j)| z[(i, j)]).collect())
            }
        }
    }
}

/// Constrained shift-invert Lanczos: eigenvalues of `K⁻¹ Mass` restricted
/// to the Mass-orthogonal complement of the constraints are `1/(μ + σ)`.
pub fn stability_eigenvalue_lanczos(df: &DiscretizedForms) -> Result<StabilityEigen, SpectralError> {
    let n = df.len();
    let solver = ShiftSolver::new(df)?;
    let cons = df.constraints();
    let k = cons.len();
    let mc: Vec<Vec<f64>> = cons.iter().map(|c| df.mass_mul(c)).collect();
    let kmc: Vec<Vec<f64>> = mc.iter().map(|c| solver.solve(c)).collect::<Result<_, _>>()?;
    // Schur complement S = (MC)ᵀ K⁻¹ (MC) and the Gram matrix (MC)ᵀ C.
    let s = DMatrix::from_fn(k, k, |i, j| dot(&mc[i], &kmc[j]));
    let s_chol = s.cholesky().ok_or_else(|| SpectralError::EigenFailure("singular constraint Schur complement".into()))?;
    let g = DMatrix::from_fn(k, k, |i, j| dot(&mc[i], &cons[j]));
    let g_lu = g.lu();
    let project = |x: &mut Vec<f64>| {
        let r = DVector::from_iterator(k, mc.iter().map(|c| dot(c, x)));
        if let Some(y) = g_lu.solve(&r) {
            for j in 0..k {
                axpy(x, -y[j], &cons[j]);
            }
        }
    };
    let apply = |b: &[f64]| -> Result<Vec<f64>, SpectralError> {
        let mut x = solver.solve(&df.mass_mul(b))?;
        let r = DVector::from_iterator(k, mc.iter().map(|c| dot(c, &x)));
        let y = s_chol.solve(&r);
        for j in 0..k {
            axpy(&mut x, -y[j], &kmc[j]);
        }
        project(&mut x);
        Ok(x)
    };
    let inner = |a: &[f64], b: &[f64]| dot(a, &df.mass_mul(b));
    let mut start = seeded_vector(n, 0x5eed);
    project(&mut start);
    let ritz = lanczos_largest(apply, inner, start, 300.min(n - k), 1e-13)?;
    let mu = 1.0 / ritz.value - SHIFT;
    Ok(finish(mu, "lanczos", ritz.iterations, ritz.residual, ritz.vector))
}

/// One candidate in the β search and the support it lives on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstBeta {
    pub s: f64,
    /// Best true objective found (a lower bound on the smallest admissible β).
    pub beta_lower: f64,
    /// Running best after each iteration; non-decreasing.
    pub trace: Vec<f64>,
    pub witness: Vec<f64>,
    pub mesh: Vec<f64>,
    pub support: String,
}

/// `(fᵀ Mass f - s(Σ u_i |f_i|)²) / fᵀ E f`. The lumped `Σ u_i|f_i|`
/// bounds `∫|f_h| dμ` from above, so this never overstates the objective
/// of the piecewise-linear function `f_h`.
pub fn beta_objective(f1: &Forms1D, f: &[f64], s: f64) -> Option<f64> {
    let e = f1.energy.quad_form(f);
    if !(e >= crate::superbl::ENERGY_FLOOR) {
        return None;
    }
    let l1 = compensated_sum(f1.u.iter().zip(f).map(|(u, x)| u * x.abs()));
    Some((f1.mass.quad_form(f) - s * l1 * l1) / e)
}

/// Candidate supports: right tail, left tail and both tails beyond a
/// ladder of tail masses, plus the whole mesh.
fn supports(f1: &Forms1D, rungs: usize) -> Vec<(String, Vec<usize>)> {
    let n = f1.n();
    let mut right = vec![0.0; n + 1];
    for i in (0..n).rev() {
        right[i] = right[i + 1] + f1.u[i];
    }
    let mut left = vec![0.0; n + 1];
    for i in 0..n {
        left[i + 1] = left[i] + f1.u[i];
    }
    let total = right[0];
    let mut out = vec![("all".to_string(), (0..n).collect::<Vec<_>>())];
    let masses = crate::superbl::log_grid(0.5, 1e-12, rungs.max(2));
    for t in masses {
        // First index whose right-tail mass drops below t·total.
        let r = (0..n).find(|&i| right[i] <= t * total).unwrap_or(n);
        let l = (0..=n).rev().find(|&i| left[i] <= t * total).unwrap_or(0);
        if r + 2 < n {
            out.push((format!("[{:.4}, R]", f1.mesh[r - 1]), (r..n).collect()));
        }
        if l > 2 {
            out.push((format!("[-R, {:.4}]", f1.mesh[l]), (0..l).collect()));
        }
        if r + 2 < n && l > 2 && l < r {
            let both: Vec<usize> = (0..l).chain(r..n).collect();
            out.push((format!("|x| beyond {:.4}/{:.4}", f1.mesh[l], f1.mesh[r - 1]), both));
        }
    }
    out.dedup_by(|a, b| a.1 == b.1);
    out
}

/// Largest eigenpair of `E_S⁻¹ B` on a node subset, where `B` is the
/// restricted mass minus `s·wwᵀ` (`s = 0` gives the Perron vector).
fn restricted_top(f1: &Forms1D, idx: &[usize], s: f64, seed: u64) -> Result<Vec<f64>, SpectralError> {
    let m = f1.mass.restrict(idx);
    let mut e = f1.energy.restrict(idx);
    let w: Vec<f64> = idx.iter().map(|&i| f1.u[i]).collect();
    if idx.len() == f1.n() {
        // Whole line: constants are in the kernel; a tiny mass shift keeps
        // the solve definite without moving the top of the spectrum much.
        e = e.plus(1e-10, &m);
    }
    let apply = |x: &[f64]| -> Result<Vec<f64>, SpectralError> {
        let mut b = m.mul(x);
        if s > 0.0 {
            let c = s * dot(&w, x);
            axpy(&mut b, -c, &w);
        }
        e.solve(&b)
    };
    let inner = |a: &[f64], b: &[f64]| dot(a, &e.mul(b));
    let start: Vec<f64> = seeded_vector(idx.len(), seed).iter().map(|x| 1.5 + x).collect();
    let r = lanczos_largest(apply, inner, start, 120.min(idx.len()), 1e-10)?;
    Ok(r.vector)
}

fn embed(n: usize, idx: &[usize], x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (&i, &v) in idx.iter().zip(x) {
        out[i] = v;
    }
    out
}

/// Sign/support-pattern search for functions with a large
/// `(∫f² - s(∫|f|)²)/E(f)`.
///
/// Each iteration solves, on a candidate support with zero Dirichlet data
/// at its inner ends, the relaxation where `(∫|f|)²` is replaced by the
/// squared lumped mean (the two agree for `f ≥ 0`), as well as the plain
/// Perron problem. Every eigenvector, and its positive and negative parts,
/// is scored with the true objective; the supports of the best positive
/// and negative parts seed the next sign pattern.
pub fn worst_beta_eigen(df: &DiscretizedForms, s: f64, iters: usize) -> Result<WorstBeta, SpectralError> {
    let f1 = match df {
        DiscretizedForms::One(f) => f,
        other => return Err(SpectralError::DimensionCap { supported: 1, got: other.dim() }),
    };
    if !(s >= 1.0) {
        return Err(SpectralError::InvalidS(s));
    }
    let n = f1.n();
    let iters = iters.max(1);
    let ladder = supports(f1, iters);
    let score = |f: &[f64]| beta_objective(f1, f, s);
    let evaluate = |name: &str, idx: &[usize], seed: u64| -> Vec<(f64, Vec<f64>, String)> {
        let mut cands = Vec::new();
        for shift in [s, 0.0] {
            if let Ok(v) = restricted_top(f1, idx, shift, seed) {
                let full = embed(n, idx, &v);
                let pos: Vec<f64> = full.iter().map(|x| x.max(0.0)).collect();
                let neg: Vec<f64> = full.iter().map(|x| (-x).max(0.0)).collect();
                for (tag, g) in [("", full), ("+", pos), ("-", neg)] {
                    if let Some(j) = score(&g) {
                        cands.push((j, g, format!("{name}{tag}")));
                    }
                }
            }
        }
        cands
    };
    // Iteration k visits ladder entries in parallel chunks, then a sign
    // update from the running best.
    let chunk = ladder.len().div_ceil(iters);
    let mut best = (0.0f64, vec![0.0; n], String::from("-"));
    let mut trace = Vec::with_capacity(iters);
    for (k, part) in ladder.chunks(chunk.max(1)).enumerate() {
        let found: Vec<Vec<(f64, Vec<f64>, String)>> =
            part.par_iter().enumerate().map(|(j, (name, idx))| evaluate(name, idx, (k * 1000 + j) as u64)).collect();
        for c in found.into_iter().flatten() {
            if c.0 > best.0 {
                best = c;
            }
        }
        // Sign update: re-solve on the support of the best candidate.
        let idx: Vec<usize> = (0..n).filter(|&i| best.1[i] != 0.0).collect();
        if idx.len() > 3 && idx.len() < n {
            let name = format!("sign update on [{:.4}, {:.4}]", f1.mesh[idx[0]], f1.mesh[idx[idx.len() - 1]]);
            for c in evaluate(&name, &idx, 7_000 + k as u64) {
                if c.0 > best.0 {
                    best = c;
                }
            }
        }
        trace.push(best.0);
    }
    while trace.len() < iters {
        trace.push(best.0);
    }
    debug_assert!(trace.windows(2).all(|w| w[1] >= w[0]));
    Ok(WorstBeta { s, beta_lower: best.0, trace, witness: best.1, mesh: f1.mesh.clone(), support: best.2 })
}

/// The piecewise-linear interpolant of nodal values as a test function
/// (constant extension outside the mesh).
pub fn grid_function(name: impl Into<String>, mesh: Vec<f64>, values: Vec<f64>) -> TestFunction {
    let (m1, v1) = (mesh.clone(), values.clone());
    let locate = |mesh: &[f64], x: f64| -> Option<usize> {
        if x <= mesh[0] || x >= mesh[mesh.len() - 1] {
            return None;
        }
        let k = mesh.partition_point(|&t| t <= x);
        Some(k - 1)
    };
    TestFunction::univariate(
        name,
        move |x| match locate(&m1, x) {
            None => {
                if x <= m1[0] {
                    v1[0]
                } else {
                    v1[v1.len() - 1]
                }
            }
            Some(k) => {
                let t = (x - m1[k]) / (m1[k + 1] - m1[k]);
                v1[k] + t * (v1[k + 1] - v1[k])
            }
        },
        move |x| match locate(&mesh, x) {
            None => 0.0,
            Some(k) => (values[k + 1] - values[k]) / (mesh[k + 1] - mesh[k]),
        },
    )
}

/// Exponent `p` in `err ≈ C h^p` from errors on meshes refined by 2.
pub fn convergence_order(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

/// The measures the spectral suites run on. `|x|³` itself is excluded since
/// `1/V''` is not integrable at the origin.
pub fn builtin_spectral_specs() -> Vec<PotentialSpec> {
    vec![
        PotentialSpec::gaussian(1.0),
        PotentialSpec::power(2.0, 0.0),
        PotentialSpec::power(1.5, 0.1),
        PotentialSpec::power(3.0, 0.1),
    ]
}
