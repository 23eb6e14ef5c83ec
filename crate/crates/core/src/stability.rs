//! The L¹/L² stability constant chain, its verification on individual
//! functions, and the exact energy identity used as a consistency oracle.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::functionals::{DistanceOrder, Evaluator, FunctionalError, TestFunction};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StabilityError {
    #[error("{name} = {value} is out of range ({expected})")]
    OutOfRange { name: &'static str, value: f64, expected: &'static str },
    #[error("deficit {deficit:e} is below 100 x err_est ({err_est:e}); f is an extremiser")]
    ZeroDeficit { deficit: f64, err_est: f64 },
    #[error(transparent)]
    Functional(#[from] FunctionalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityInputs {
    pub delta: f64,
    pub c0: f64,
    pub c1: f64,
    /// `E|x|²`.
    pub m2: f64,
    /// `E|V'|`.
    pub m1v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityConstants {
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
}

impl StabilityInputs {
    pub fn validate(&self) -> Result<(), StabilityError> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(StabilityError::OutOfRange {
                name: "delta",
                value: self.delta,
                expected: "0 < delta < 1",
            });
        }
        for (name, value) in [("C0", self.c0), ("C1", self.c1), ("m2", self.m2), ("m1V", self.m1v)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(StabilityError::OutOfRange { name, value, expected: "finite and > 0" });
            }
        }
        Ok(())
    }
}

/// `C2 = (δ + C0 C1²)/(1-δ)`, `C3 = C1 + √(C2 m2)·m1V`, `C4 = (δ + C0 C3²)/(1-δ)`.
pub fn stability_constants(inp: &StabilityInputs) -> Result<StabilityConstants, StabilityError> {
    inp.validate()?;
    let c2 = (inp.delta + inp.c0 * inp.c1 * inp.c1) / (1.0 - inp.delta);
    let c3 = inp.c1 + (c2 * inp.m2).sqrt() * inp.m1v;
    let c4 = (inp.delta + inp.c0 * c3 * c3) / (1.0 - inp.delta);
    Ok(StabilityConstants { c2, c3, c4 })
}

/// `E|x|²` and `E|V'|` summed over coordinates, for feeding
/// [`StabilityInputs`].
pub fn measure_moments(ev: &Evaluator) -> Result<(f64, f64), FunctionalError> {
    let lvl = &ev.grid().fine;
    let d = lvl.dim;
    let sq: Vec<f64> =
        (0..lvl.len()).map(|i| lvl.point(i).iter().map(|x| x * x).sum::<f64>()).collect();
    let abs_v1: Vec<f64> = (0..lvl.len())
        .map(|i| (0..d).map(|k| lvl.first[i * d + k].powi(2)).sum::<f64>().sqrt())
        .collect();
    Ok((lvl.sum(&sq), lvl.sum(&abs_v1)))
}

/// `|LHS - RHS| / max(1, |LHS|)` for
/// `∫⟨(V'')^{-1}(f' - f_θ'), f' - f_θ'⟩ dμ = Var(f - f_θ) + ε(f)`.
pub fn lemma_identity_residual(
    ev: &Evaluator,
    f: &TestFunction,
    theta: &[f64],
) -> Result<f64, FunctionalError> {
    let mean = ev.mean(f)?.value;
    let fc = f.shifted(-mean);
    let ft = ev.extremiser(theta)?;
    let diff = fc.minus(&ft);
    let lhs = ev.bl_energy(&diff)?.value;
    let eps = ev.bl_energy(&fc)?.value - ev.variance(&fc)?.value;
    let rhs = ev.variance(&diff)?.value + eps;
    Ok((lhs - rhs).abs() / lhs.abs().max(1.0))
}

/// One inequality: `lhs ≤ rhs`, with `margin = rhs - lhs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub holds: bool,
}

impl Check {
    fn new(lhs: f64, rhs: f64) -> Self {
        Check { lhs, rhs, margin: rhs - lhs, holds: lhs <= rhs }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub function: String,
    pub deficit: f64,
    pub deficit_err: f64,
    pub best_theta: Vec<f64>,
    pub barycentre: Vec<f64>,
    pub inputs: StabilityInputs,
    pub constants: StabilityConstants,
    /// `∫|f - f_θ̂|² ≤ C2 ε`.
    pub l2_best: Check,
    /// `∫|f - f_θ*| ≤ C3 √ε`.
    pub l1_barycentre: Check,
    /// `∫|f - f_θ*|² ≤ C4 ε`.
    pub l2_barycentre: Check,
}

impl StabilityReport {
    pub fn all_hold(&self) -> bool {
        self.l2_best.holds && self.l1_barycentre.holds && self.l2_barycentre.holds
    }
}

pub fn verify_stability(
    ev: &Evaluator,
    f: &TestFunction,
    inputs: &StabilityInputs,
) -> Result<StabilityReport, StabilityError> {
    let constants = stability_constants(inputs)?;
    let rep = ev.deficit(f)?;
    let eps = rep.deficit.value;
    if eps < 100.0 * rep.deficit.err_est {
        return Err(StabilityError::ZeroDeficit { deficit: eps, err_est: rep.deficit.err_est });
    }
    Ok(StabilityReport {
        function: rep.function,
        deficit: eps,
        deficit_err: rep.deficit.err_est,
        best_theta: rep.best_theta,
        barycentre: rep.barycentre,
        inputs: *inputs,
        constants,
        l2_best: Check::new(rep.l2_dist, constants.c2 * eps),
        l1_barycentre: Check::new(rep.l1_dist_barycentre, constants.c3 * eps.sqrt()),
        l2_barycentre: Check::new(rep.l2_dist_barycentre, constants.c4 * eps),
    })
}

/// Smallest `C1` consistent with `∫|f - f_θ̂| ≤ C1 √ε` over `family`;
/// functions whose deficit is indistinguishable from zero are skipped.
pub fn fit_c1(ev: &Evaluator, family: &[TestFunction]) -> Result<f64, FunctionalError> {
    let mut best = 0.0f64;
    for f in family {
        let mean = ev.mean(f)?.value;
        let fc = f.shifted(-mean);
        let var = ev.variance(&fc)?;
        let en = ev.bl_energy(&fc)?;
        let eps = en.value - var.value;
        if eps < 100.0 * (en.err_est + var.err_est) {
            continue;
        }
        let theta = ev.best_theta(&fc)?;
        let l1 = ev.lp_dist_to_extremiser(&fc, &theta, DistanceOrder::L1)?.value;
        best = best.max(l1 / eps.sqrt());
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{Measure, PotentialSpec};
    use crate::quad::DEFAULT_LEVEL;

    fn gaussian() -> Evaluator {
        let m = Measure::from_spec(&PotentialSpec::gaussian(1.0), false).unwrap();
        Evaluator::new(&m, DEFAULT_LEVEL).unwrap()
    }

    fn unit(delta: f64) -> StabilityInputs {
        StabilityInputs { delta, c0: 1.0, c1: 1.0, m2: 1.0, m1v: 1.0 }
    }

    #[test]
    fn constants_by_hand() {
        let c = stability_constants(&unit(0.5)).unwrap();
        assert!((c.c2 - 3.0).abs() < 1e-15);
        assert!((c.c3 - (1.0 + 3f64.sqrt())).abs() < 1e-15);
        assert!((c.c4 - 15.928203230275509).abs() < 1e-12);
        let c = stability_constants(&unit(1e-12)).unwrap();
        assert!((c.c2 - 1.0).abs() < 1e-11);
        assert!(stability_constants(&unit(1.0)).is_err());
        assert!(stability_constants(&unit(0.0)).is_err());
    }

    #[test]
    fn gaussian_moments_feed_through() {
        let ev = gaussian();
        let (m2, m1v) = measure_moments(&ev).unwrap();
        assert!((m2 - 1.0).abs() < 1e-10);
        let exact = (2.0 / std::f64::consts::PI).sqrt();
        assert!((m1v - exact).abs() < 1e-9);
        let c = stability_constants(&StabilityInputs { m2, m1v, ..unit(0.5) }).unwrap();
        assert!((c.c3 - (1.0 + 3f64.sqrt() * exact)).abs() < 1e-8);
    }

    #[test]
    fn identity_is_tight() {
        let ev = gaussian();
        let h3 = TestFunction::hermite(3);
        assert!(lemma_identity_residual(&ev, &h3, &[2.0]).unwrap() <= 1e-8);
        assert!(lemma_identity_residual(&ev, &h3, &[0.0]).unwrap() < 1e-14);
        let ft = ev.extremiser(&[1.7]).unwrap();
        assert!(lemma_identity_residual(&ev, &ft, &[1.7]).unwrap() <= 1e-10);
    }

    #[test]
    fn h2_passes_with_fitted_c1() {
        let ev = gaussian();
        let h2 = TestFunction::hermite(2);
        let c1 = fit_c1(&ev, &[h2.clone(), TestFunction::hermite(3)]).unwrap();
        assert!(c1 > 0.0);
        let (m2, m1v) = measure_moments(&ev).unwrap();
        let inp = StabilityInputs { delta: 0.5, c0: 1.0, c1, m2, m1v };
        let r = verify_stability(&ev, &h2, &inp).unwrap();
        assert!(r.all_hold(), "{r:?}");
        assert!(r.l2_best.margin > 0.0);
    }

    #[test]
    fn perturbation_scales_quadratically() {
        let ev = gaussian();
        let base = ev.extremiser(&[0.8]).unwrap();
        let h2 = TestFunction::hermite(2);
        let r1 = ev.deficit(&base.combine(1.0, &h2, 1e-1)).unwrap();
        let r2 = ev.deficit(&base.combine(1.0, &h2, 1e-3)).unwrap();
        let ratio_eps = r1.deficit.value / r2.deficit.value;
        let ratio_l2 = r1.l2_dist / r2.l2_dist;
        assert!((ratio_eps / 1e4 - 1.0).abs() < 1e-6);
        assert!((ratio_l2 / 1e4 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn extremiser_has_zero_deficit() {
        let ev = gaussian();
        let f = ev.extremiser(&[1.0]).unwrap();
        let inp = StabilityInputs { c1: 1.0, ..unit(0.5) };
        assert!(matches!(verify_stability(&ev, &f, &inp), Err(StabilityError::ZeroDeficit { .. })));
    }
}
