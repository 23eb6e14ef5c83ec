mod common;

use bllab::functionals::{DistanceOrder, Evaluator, TestFunction};
use bllab::measures::{Measure, PotentialSpec, ProductMeasure};
use bllab::muckenhoupt::{b_log, capacity};
use bllab::quad::DEFAULT_LEVEL;
use bllab::spectral::*;
use bllab::superbl::*;
use common::*;

fn gaussian() -> Measure {
    Measure::from_spec(&PotentialSpec::gaussian(1.0), false).unwrap()
}

fn ev(m: &Measure) -> Evaluator {
    Evaluator::new(m, DEFAULT_LEVEL).unwrap()
}

#[test]
fn hermite_moments_match_brute_force() {
    let e = ev(&gaussian());
    for k in 1..=5 {
        let var_bf = gauss_expect(|x| hermite(k, x).powi(2));
        let energy_bf = gauss_expect(|x| (k as f64 * hermite(k - 1, x)).powi(2));
        assert!((var_bf / factorial(k) - 1.0).abs() < 1e-10);
        assert!((energy_bf / (k as f64 * factorial(k)) - 1.0).abs() < 1e-10);
        let h = TestFunction::hermite(k);
        let r = e.deficit(&h).unwrap();
        assert!((r.variance.value / var_bf - 1.0).abs() < 1e-9, "k={k}");
        assert!((r.energy.value / energy_bf - 1.0).abs() < 1e-9, "k={k}");
        if k > 1 {
            let d = (k as f64 - 1.0) * factorial(k);
            assert!((r.deficit.value / d - 1.0).abs() < 1e-9, "k={k}");
        }
    }
}

#[test]
fn regularized_normalization_matches_trapezoid() {
    let spec = PotentialSpec::power(1.5, 0.1);
    let m = Measure::from_spec(&spec, false).unwrap();
    let z = trapezoid(|x: f64| (-(x * x + 0.01).powf(0.75)).exp(), -60.0, 60.0, 1_000_000);
    assert!((m.z() / z - 1.0).abs() < 1e-9, "{} vs {z}", m.z());
}

#[test]
fn gaussian_tail_at_one() {
    // 1 - Φ(1) to 17 digits; the trapezoid carries its own O(h²) error.
    let exact = 0.15865525393145707;
    let t = trapezoid(phi, 1.0, 14.0, 1_000_000);
    assert!((t - exact).abs() < 1e-10);
    assert!((gaussian().tail_mass(1.0) - exact).abs() < 1e-12);
}

#[test]
fn entropy_examples() {
    let e = ev(&gaussian());
    let g = TestFunction::polynomial(vec![1.0, 0.01]);
    let bf = entropy_of_square(|x| 1.0 + 0.01 * x, phi, -12.0, 12.0, 1_000_000);
    assert!((e.entropy(&g).unwrap().value - bf).abs() < 1e-8);
    // g² ∝ e^x: the entropy of a normalized e^{λx} under γ is λ²/2.
    let h = TestFunction::exp_linear(vec![0.5]);
    assert!((e.entropy(&h).unwrap().value / e.second_moment(&h).unwrap().value - 0.5).abs() < 1e-8);
}

#[test]
fn super_bl_residual_of_h2() {
    let e = ev(&gaussian());
    let beta = BetaCurve::log();
    let l1 = 4.0 * phi(1.0);
    let l1_bf = gauss_expect(|x| (x * x - 1.0).abs());
    assert!((l1 - l1_bf).abs() < 1e-9);
    let exact = beta.eval(10.0) * 4.0 + 10.0 * l1 * l1 - 2.0;
    let r = super_bl_residual(&e, &TestFunction::hermite(2), 10.0, &beta).unwrap();
    assert!((r - exact).abs() < 1e-8, "{r} vs {exact}");
}

#[test]
fn rothaus_on_affine_function() {
    let e = ev(&gaussian());
    let var = 0.25;
    let ent_f = entropy_of_square(|x| 1.0 + 0.5 * x, phi, -12.0, 12.0, 1_000_000);
    let ent_ft = entropy_of_square(|x| 0.5 * x, phi, -12.0, 12.0, 1_000_000);
    let bf = 2.0 * var + ent_ft - ent_f;
    let r = rothaus_residual(&e, &TestFunction::polynomial(vec![1.0, 0.5])).unwrap();
    assert!(r >= 0.0);
    assert!((r - bf).abs() < 1e-8, "{r} vs {bf}");
}

#[test]
fn cutoff_item_residual_matches_brute_force() {
    let e = ev(&gaussian());
    let f = dyadic_cutoff(&TestFunction::hermite(3), 2);
    let (a, b) = (2f64.sqrt(), 2.0);
    let fv = |x: f64| ((hermite(3, x).abs() - a) / (b - a)).clamp(0.0, 1.0);
    let fd = |x: f64| {
        let h = hermite(3, x);
        if h.abs() > a && h.abs() < b {
            h.signum() * (3.0 * x * x - 3.0) / (b - a)
        } else {
            0.0
        }
    };
    // The energy integrand jumps where |H₃| crosses a or b.
    let mut breaks = roots(|x| hermite(3, x).abs() - a, -12.0, 12.0, 100_000);
    breaks.extend(roots(|x| hermite(3, x).abs() - b, -12.0, 12.0, 100_000));
    // |H₃| only touches 2 at x = ±1, where H₃' = 0 anyway.
    assert_eq!(breaks.len(), 8);
    let n = 200_000;
    let l2 = piecewise_midpoint(|x| fv(x).powi(2) * phi(x), -12.0, 12.0, &breaks, n);
    let l1 = piecewise_midpoint(|x| fv(x) * phi(x), -12.0, 12.0, &breaks, n);
    let en = piecewise_midpoint(|x| fd(x).powi(2) * phi(x), -12.0, 12.0, &breaks, n);
    let beta = BetaCurve::log();
    let bf = 8.0 * beta.eval(2.0) * en + 2.0 * l1 * l1 - l2;
    let st = FamilyStats::of(&e, &f).unwrap();
    let r = 8.0 * beta.eval(2.0) * st.energy + 2.0 * st.l1 * st.l1 - st.l2sq;
    assert!((r - bf).abs() < 1e-8, "{r} vs {bf}");
}

#[test]
fn bgg_examples() {
    let e = ev(&gaussian());
    let x = TestFunction::polynomial(vec![0.0, 1.0]);
    assert!(e.bgg_bound(&x).unwrap().value.abs() < 1e-9);
    let h2 = TestFunction::hermite(2);
    let b = e.bgg_bound(&h2).unwrap().value;
    assert!((b - 2.0).abs() < 1e-7);
    assert!(b <= e.deficit(&h2).unwrap().deficit.value + 1e-9);
    assert_eq!(e.bgg_bound(&TestFunction::constant(1, 0.0)).unwrap().value, 0.0);
}

#[test]
fn best_theta_and_distances() {
    let e = ev(&gaussian());
    let x3 = TestFunction::polynomial(vec![0.0, 0.0, 0.0, 1.0]);
    assert!((e.best_theta(&x3).unwrap()[0] - 3.0).abs() < 1e-9);
    let h2 = TestFunction::hermite(2);
    assert!(e.best_theta(&h2).unwrap()[0].abs() < 1e-10);
    let d = e.lp_dist_to_extremiser(&h2, &[0.0], DistanceOrder::L2).unwrap().value;
    assert!((d - 2.0).abs() < 1e-8);
    let x = TestFunction::polynomial(vec![0.0, 1.0]);
    assert!(e.lp_dist_to_extremiser(&x, &[1.0], DistanceOrder::L1).unwrap().value < 1e-10);
}

#[test]
fn capacity_matches_series() {
    // ∫₀¹ e^{t²/2} dt = Σ 1/(2^k k! (2k+1)).
    let series: f64 = (0..30).map(|k| 1.0 / (2f64.powi(k) * factorial(k as usize) * (2 * k + 1) as f64)).sum();
    assert!((capacity(&gaussian(), 1.0).unwrap() - 1.0 / series).abs() < 1e-13);
    assert!((1.0 / series - 0.83685).abs() < 1e-5);
}

#[test]
fn b_log_scan_is_resolution_stable() {
    // Doubling the scan density cannot move the sup: check against a dense
    // direct scan of the same integrand.
    let m = gaussian();
    let r = b_log(&m).unwrap();
    let edge = m.support().1;
    let dense = log_grid(1e-4, edge, 4096)
        .into_iter()
        .map(|x| bllab::muckenhoupt::b_log_integrand(&m, x))
        .fold(0.0, f64::max);
    assert!(r.value >= dense * (1.0 - 1e-12));
    assert!((r.value - dense).abs() / r.value < 1e-5);
}

#[test]
fn tensor_exponential_ratio() {
    let m = gaussian();
    let pm = ProductMeasure::new(vec![m.clone(), m]).unwrap();
    let e2 = Evaluator::product(&pm, 6).unwrap();
    let g = TestFunction::exp_linear(vec![0.25, 0.25]);
    let r = tensor_check(&e2, &PhiFunction::log(), 2.0, 2.0, &[g]).unwrap();
    // Brute force: g² = e^{(x₁+x₂)/2} factorizes, and so does the entropy.
    let n = 200_000;
    let m2 = trapezoid(|x| (0.5 * x).exp() * phi(x), -12.0, 12.0, n).powi(2);
    let ent = 2.0 * entropy_of_square(|x| (0.25 * x).exp(), phi, -12.0, 12.0, n) * m2.sqrt();
    let en = 2.0 * 0.0625 * m2;
    assert!((r.worst_ratio - ent / en).abs() < 1e-6);
    assert!((r.worst_ratio - 2.0).abs() < 1e-6);
}

fn forms(spec: PotentialSpec, n: usize) -> Forms1D {
    discretize_forms(&Measure::from_spec(&spec, false).unwrap(), n).unwrap()
}

#[test]
fn discrete_extremiser_and_kernel() {
    let f = forms(PotentialSpec::gaussian(1.0), 1024);
    let x = f.interpolate(|x| x);
    assert!((f.energy.quad_form(&x) / f.var_form(&x) - 1.0).abs() < 1e-4);
    let df = DiscretizedForms::One(f);
    assert!(df.constant_kernel_residual() <= 1e-10);
}

#[test]
fn h2_discrete_deficit_converges_at_second_order() {
    let mut errs = Vec::new();
    for n in [512, 1024, 2048] {
        let f = forms(PotentialSpec::gaussian(1.0), n);
        let h2 = f.interpolate(|x| x * x - 1.0);
        errs.push((f.energy.quad_form(&h2) - f.var_form(&h2) - 2.0).abs());
    }
    for p in convergence_order(&errs) {
        assert!((1.7..=2.3).contains(&p), "{errs:?}");
    }
}

#[test]
fn dense_oracle_for_quadratic_potential() {
    let df = DiscretizedForms::One(forms(PotentialSpec::power(2.0, 0.0), 256));
    let d = stability_eigenvalue_dense(&df).unwrap();
    let l = stability_eigenvalue_lanczos(&df).unwrap();
    assert!((d.lambda - l.lambda).abs() < 1e-6);
}

#[test]
fn pencil_is_nonnegative_and_converged() {
    for spec in builtin_spectral_specs() {
        let a = stability_eigenvalue(&DiscretizedForms::One(forms(spec.clone(), 2048))).unwrap();
        let b = stability_eigenvalue(&DiscretizedForms::One(forms(spec.clone(), 4096))).unwrap();
        assert!(a.lambda >= -1e-8 && b.lambda >= -1e-8);
        assert!((a.lambda - b.lambda).abs() < 1e-3, "{spec:?}");
    }
}

#[test]
fn hermite_diagonalization_fixes_gaussian_gap() {
    // On the complement of {1, x} the Rayleigh quotient (E - Var)/‖·‖² is
    // (k-1)k!/k!, minimized by H₂.
    let f = forms(PotentialSpec::gaussian(1.0), 4096);
    let r = stability_eigenvalue(&DiscretizedForms::One(f.clone())).unwrap();
    assert!((r.lambda - 1.0).abs() < 1e-3);
    let h2 = f.interpolate(|x| x * x - 1.0);
    let q = (f.energy.quad_form(&h2) - f.var_form(&h2)) / f.mass.quad_form(&h2);
    assert!(q >= r.lambda - 1e-9 && (q - 1.0).abs() < 1e-3);
}

#[test]
fn eigen_search_dominates_cutoffs_at_s10() {
    let m = gaussian();
    let e = ev(&m);
    let mut cuts = Vec::new();
    for k in 1..=5 {
        let h = TestFunction::hermite(k).scaled(1.0 / factorial(k).sqrt());
        cuts.extend(dyadic_cutoffs(&h, &(-4..=8).collect::<Vec<_>>()));
    }
    let best = family_stats(&e, &cuts).unwrap().iter().filter_map(|s| s.ratio(10.0)).fold(0.0, f64::max);
    let df = DiscretizedForms::One(discretize_forms(&m, 2048).unwrap());
    let w = worst_beta_eigen(&df, 10.0, 12).unwrap();
    assert!(w.beta_lower >= best - 1e-8, "{} < {best}", w.beta_lower);
    assert!(w.beta_lower <= 1.0 + 1e-6);
    // The witness, read back through quadrature, reproduces its score.
    let g = grid_function("w", w.mesh.clone(), w.witness.clone());
    let st = FamilyStats::of(&e, &g).unwrap();
    assert!(st.ratio(10.0).unwrap() >= w.beta_lower - 1e-3);
}

#[test]
fn large_s_suppresses_all_candidates() {
    let df = DiscretizedForms::One(forms(PotentialSpec::gaussian(1.0), 512));
    let a = worst_beta_eigen(&df, 1.0, 8).unwrap();
    let b = worst_beta_eigen(&df, 1e12, 8).unwrap();
    assert!(b.beta_lower < 0.1 * a.beta_lower);
}

#[test]
fn refinement_stays_within_error_estimate() {
    for spec in bllab::battery::builtin_specs() {
        let m = Measure::from_spec(&spec, false).unwrap();
        for level in 2..=8 {
            let (lo, hi) = (bllab::quad::build_rule(&m, level).unwrap(), bllab::quad::build_rule(&m, level + 2).unwrap());
            for k in 0..=8 {
                let f = |x: f64| x.powi(k) * (-0.5 * x * x).exp();
                let a = lo.integrate_dx(f).unwrap();
                let b = hi.integrate_dx(f).unwrap();
                assert!((a.value - b.value).abs() <= a.err_est, "{spec:?} level {level} k {k}: {a:?} vs {b:?}");
            }
        }
    }
}

#[test]
fn measures_integrate_to_one() {
    for spec in bllab::battery::builtin_specs() {
        for half in [false, true] {
            let m = Measure::from_spec(&spec, half).unwrap();
            for level in [4, 8, 10] {
                let rule = bllab::quad::build_rule(&m, level).unwrap();
                let one = bllab::quad::integrate(&rule, &m, |_| 1.0).unwrap();
                assert!((one.value - 1.0).abs() <= m.truncation_tol().max(1e-13), "{spec:?} {half} {level}: {one:?}");
            }
        }
    }
}
