use std::sync::OnceLock;

use bllab::battery::builtin_measures;
use bllab::functionals::{DistanceOrder, Evaluator, TestFunction};
use bllab::measures::{Measure, PotentialSpec};
use bllab::quad::DEFAULT_LEVEL;
use bllab::spectral::Tridiag;
use bllab::stability::{stability_constants, StabilityInputs};
use bllab::superbl::*;
use proptest::prelude::*;

fn evaluators() -> &'static Vec<Evaluator> {
    static EV: OnceLock<Vec<Evaluator>> = OnceLock::new();
    EV.get_or_init(|| builtin_measures().unwrap().iter().map(|m| Evaluator::new(m, DEFAULT_LEVEL).unwrap()).collect())
}

fn gaussian_ev() -> &'static Evaluator {
    &evaluators()[0]
}

/// A random polynomial times a bump, scaled to the measure's spread.
fn poly_bump(coeffs: &[f64], radius: f64) -> TestFunction {
    TestFunction::polynomial(coeffs.to_vec()).times_bump(0.0, radius)
}

fn coeffs() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 2..7)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, ..ProptestConfig::default() })]

    #[test]
    fn deficit_ignores_constants_and_scales_quadratically(
        c in coeffs(), shift in -5.0f64..5.0, lambda in 0.1f64..10.0, k in 0usize..4, r in 0.5f64..3.0
    ) {
        let ev = &evaluators()[k];
        let f = poly_bump(&c, r);
        let d = ev.deficit(&f).unwrap().deficit.value;
        prop_assume!(d > 1e-6);
        let ds = ev.deficit(&f.shifted(shift)).unwrap().deficit.value;
        let dl = ev.deficit(&f.scaled(lambda)).unwrap().deficit.value;
        prop_assert!(rel(ds, d) < 1e-9, "{ds} vs {d}");
        prop_assert!(rel(dl, lambda * lambda * d) < 1e-9, "{dl} vs {}", lambda * lambda * d);
    }

    #[test]
    fn deficit_report_json_reloads_bit_exactly(c in coeffs(), k in 0usize..4, r in 0.5f64..3.0) {
        let rep = evaluators()[k].deficit(&poly_bump(&c, r)).unwrap();
        let text = serde_json::to_string(&rep).unwrap();
        let back: bllab::functionals::DeficitReport = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(serde_json::to_string(&back).unwrap(), text);
        prop_assert_eq!(back.deficit.value.to_bits(), rep.deficit.value.to_bits());
        prop_assert_eq!(back, rep);
    }

    #[test]
    fn extremisers_have_no_deficit_and_own_barycentre(theta in -10.0f64..10.0, k in 0usize..4) {
        let ev = &evaluators()[k];
        let f = ev.extremiser(&[theta]).unwrap();
        let d = ev.deficit(&f).unwrap().deficit.value;
        prop_assert!(d.abs() <= 1e-8 * (1.0 + theta * theta), "{d}");
        let b = ev.barycentre(&f).unwrap()[0].value;
        prop_assert!((b - theta).abs() <= 1e-8 * (1.0 + theta.abs()), "{b} vs {theta}");
    }

    #[test]
    fn best_theta_minimizes_l2_distance(c in coeffs(), k in 0usize..4, deltas in prop::collection::vec(-0.5f64..0.5, 20)) {
        let ev = &evaluators()[k];
        let f = poly_bump(&c, 2.0);
        let th = ev.best_theta(&f).unwrap()[0];
        let best = ev.lp_dist_to_extremiser(&f, &[th], DistanceOrder::L2).unwrap().value;
        for dlt in deltas {
            let other = ev.lp_dist_to_extremiser(&f, &[th + dlt], DistanceOrder::L2).unwrap().value;
            prop_assert!(best <= other + 1e-12 * other.max(1.0));
        }
    }

    #[test]
    fn deficit_is_nonnegative_and_dominates_bgg(c in coeffs(), k in 0usize..4, r in 0.3f64..3.0) {
        let ev = &evaluators()[k];
        let f = poly_bump(&c, r);
        let rep = ev.deficit(&f).unwrap();
        prop_assert!(rep.deficit.value >= -10.0 * rep.deficit.err_est);
        let b = ev.bgg_bound(&f).unwrap();
        prop_assert!(b.value >= 0.0);
        prop_assert!(b.value <= rep.deficit.value + 10.0 * (rep.deficit.err_est + b.err_est) + 1e-12);
    }

    #[test]
    fn energy_matches_variance_plus_deficit(c in coeffs(), k in 0usize..4) {
        let ev = &evaluators()[k];
        let rep = ev.deficit(&poly_bump(&c, 1.5)).unwrap();
        prop_assert_eq!(rep.deficit.value, rep.energy.value - rep.variance.value);
    }

    #[test]
    fn tail_mass_is_monotone(a in -8.0f64..8.0, b in -8.0f64..8.0, k in 0usize..4) {
        let m = &builtin_measures().unwrap()[k];
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let (tl, th) = (m.tail_mass(lo), m.tail_mass(hi));
        prop_assert!(th <= tl + 1e-15);
        prop_assert!((0.0..=1.0).contains(&tl));
    }

    #[test]
    fn stability_constants_are_monotone(
        delta in 0.01f64..0.98, dd in 0.0f64..0.01, c0 in 0.1f64..10.0, c1 in 0.1f64..10.0, dc in 0.0f64..5.0,
        m2 in 0.1f64..5.0, m1v in 0.1f64..5.0
    ) {
        let base = StabilityInputs { delta, c0, c1, m2, m1v };
        let k = stability_constants(&base).unwrap();
        let k1 = stability_constants(&StabilityInputs { c1: c1 + dc, ..base }).unwrap();
        let kd = stability_constants(&StabilityInputs { delta: delta + dd, ..base }).unwrap();
        prop_assert!(k1.c2 >= k.c2 && kd.c2 >= k.c2);
        prop_assert!(k.c3 >= c1);
        prop_assert!(k.c4 >= k.c2);
    }

    #[test]
    fn phi_inverse_round_trips(x in 1e-6f64..1e6) {
        for phi in [PhiFunction::log(), PhiFunction::one_plus_log()] {
            let v = phi.eval(x);
            if v >= 0.0 {
                prop_assert!((phi.positive_inverse(v) / x - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn cutoffs_are_bounded_with_exact_midpoint(n in -6i32..10, x in -6.0f64..6.0, c in coeffs()) {
        let f = TestFunction::polynomial(c);
        let g = dyadic_cutoff(&f, n);
        let v = g.eval(&[x]);
        prop_assert!((0.0..=1.0).contains(&v));
        let (a, b) = (2f64.powf((n - 1) as f64 / 2.0), 2f64.powf(n as f64 / 2.0));
        let fx = f.eval(&[x]).abs();
        if fx <= a {
            prop_assert_eq!(v, 0.0);
        }
        if fx >= b {
            prop_assert_eq!(v, 1.0);
        }
        let mid = dyadic_cutoff(&TestFunction::constant(1, 0.5 * (a + b)), n);
        prop_assert!((mid.eval(&[x]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn markov_bound_holds(c in coeffs(), k in 0usize..4) {
        let ev = &evaluators()[k];
        let f = poly_bump(&c, 2.0);
        for chk in markov_check(ev, &f, &(-4..=8).collect::<Vec<_>>()).unwrap() {
            prop_assert!(chk.holds, "{chk:?}");
        }
    }

    #[test]
    fn lambda_transfer_scales(lambda in 0.01f64..100.0, s in 1.0f64..1e6) {
        let b = lambda_transfer(lambda, &BetaCurve::log()).unwrap();
        prop_assert!((b.eval(s) - lambda * BetaCurve::log().eval(s)).abs() < 1e-14 * lambda);
    }

    #[test]
    fn rothaus_residual_is_nonnegative(c in coeffs(), k in 0usize..4, r in 0.3f64..3.0) {
        let ev = &evaluators()[k];
        let f = poly_bump(&c, r).shifted(c[0]);
        if let Ok(v) = rothaus_residual(ev, &f) {
            prop_assert!(v >= -1e-8);
        }
    }

    #[test]
    fn third_constant_pointwise_bound(p in 2.0f64..3.0, seed in 0u64..1000) {
        let r = pointwise_spot_check(p, 200, seed);
        prop_assert_eq!(r.violations_third, 0);
    }

    #[test]
    fn constant_function_gives_residual_s_minus_one(s in 1.0f64..1e4) {
        let ev = gaussian_ev();
        let r = super_bl_residual(ev, &TestFunction::constant(1, 1.0), s, &BetaCurve::log()).unwrap();
        prop_assert!((r - (s - 1.0)).abs() < 1e-9 * s);
    }

    #[test]
    fn beta_one_residual_is_admissible(c in coeffs(), k in 0usize..4) {
        let ev = &evaluators()[k];
        let r = super_bl_residual(ev, &poly_bump(&c, 2.0), 1.0, &BetaCurve::constant(1.0)).unwrap();
        prop_assert!(r >= -1e-9);
    }

    #[test]
    fn gradients_agree_with_differences(c in coeffs(), r in 0.5f64..3.0) {
        let f = poly_bump(&c, r);
        let pts: Vec<Vec<f64>> = (0..21).map(|i| vec![-r + 2.0 * r * (i as f64 + 0.5) / 21.0]).collect();
        prop_assert!(f.check_gradient(&pts, 1e-5).is_ok());
    }

    #[test]
    fn thomas_solves_diagonally_dominant_systems(
        off in prop::collection::vec(-1.0f64..1.0, 1..40), extra in 0.01f64..2.0
    ) {
        let n = off.len() + 1;
        let diag: Vec<f64> = (0..n).map(|i| {
            let l = if i > 0 { off[i - 1].abs() } else { 0.0 };
            let r = if i + 1 < n { off[i].abs() } else { 0.0 };
            l + r + extra
        }).collect();
        let t = Tridiag { diag, off };
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let x = t.solve(&b).unwrap();
        for (u, v) in t.mul(&x).iter().zip(&b) {
            prop_assert!((u - v).abs() < 1e-12);
        }
    }
}

#[test]
fn beta_profile_stays_below_one_and_monotone() {
    let ev = gaussian_ev();
    let mut fam: Vec<TestFunction> = (1..=5).map(TestFunction::hermite).collect();
    fam.push(TestFunction::constant(1, 1.0));
    let grid = log_grid(1.0, 1e6, 25);
    let p = beta_profile(ev, &grid, &fam).unwrap();
    assert!(p.is_non_increasing());
    assert!(p.beta.iter().all(|&b| b <= 1.0 + 1e-6));
}

#[test]
fn round_trip_curve_is_admissible_on_battery() {
    // φ = 1 + log x with the converted constant: the resulting β must hold
    // for every battery function at ten values of s ≥ s₀.
    let conv = beta_to_phi(&BetaCurve::log(), &PhiFunction::one_plus_log()).unwrap();
    let (info, beta) = phi_to_beta(&PhiFunction::one_plus_log(), conv.c_phi).unwrap();
    let m = Measure::from_spec(&PotentialSpec::gaussian(1.0), false).unwrap();
    let fam = bllab::battery::generate(&m, &Default::default()).unwrap();
    for s in log_grid(info.s0, info.s0 * 1e4, 10) {
        for f in &fam {
            assert!(super_bl_residual(gaussian_ev(), f, s, &beta).unwrap() >= -1e-9);
        }
    }
}
