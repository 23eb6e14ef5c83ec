//! The invariant suite behind `bllab selftest`. Every check is phrased as
//! `value ≤ bound`, so the CSV reads uniformly.

use bllab::battery::{builtin_measures, generate};
use bllab::functionals::{Evaluator, TestFunction};
use bllab::measures::{Measure, PotentialSpec, ProductMeasure};
use bllab::muckenhoupt::{b_log, factor_two_check};
use bllab::spectral::{discretize_forms, stability_eigenvalue, worst_beta_eigen, DiscretizedForms};
use bllab::stability::{lemma_identity_residual, stability_constants, StabilityInputs};
use bllab::superbl::{
    beta_profile_from_stats, beta_to_phi, c_phi_formula, compute_d, cutoff_family, entropic_check, family_stats,
    log_grid, markov_check, rothaus_residual, tensor_check, BetaCurve, PhiFunction,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::output::{num, Artifacts};
use crate::CliError;

const THETAS: [f64; 4] = [-2.0, -0.5, 0.75, 3.0];
const SPECTRAL_MESH: usize = 1024;
const CUTOFF_LEVELS: std::ops::RangeInclusive<i32> = -4..=8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfCheck {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelftestRun {
    pub checks: Vec<SelfCheck>,
}

impl SelftestRun {
    fn push(&mut self, name: impl Into<String>, value: f64, bound: f64) {
        self.checks.push(SelfCheck { name: name.into(), value, bound, holds: value <= bound });
    }

    pub fn all_hold(&self) -> bool {
        self.checks.iter().all(|c| c.holds)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

fn per_measure(run: &mut SelftestRun, cfg: &ExperimentConfig, m: &Measure) -> Result<(), CliError> {
    let tol = &cfg.tolerances;
    let label = m.label();
    let ev = Evaluator::new(m, cfg.level)?;
    let fam = generate(m, &cfg.battery)?;
    let identity = fam
        .par_iter()
        .map(|f| THETAS.iter().map(|&t| lemma_identity_residual(&ev, f, &[t])).try_fold(0.0f64, |a, r| r.map(|r| a.max(r))))
        .collect::<Result<Vec<_>, _>>()?;
    run.push(format!("energy identity [{label}]"), identity.into_iter().fold(0.0, f64::max), tol.identity);
    let (mut neg, mut bgg) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for f in &fam {
        let r = ev.deficit(f)?;
        let b = ev.bgg_bound(f)?;
        neg = neg.max(-(r.deficit.value + 10.0 * r.deficit.err_est));
        bgg = bgg.max(b.value - r.deficit.value - 10.0 * r.deficit.err_est);
    }
    run.push(format!("deficit nonnegative [{label}]"), neg, 0.0);
    run.push(format!("BGG below deficit [{label}]"), bgg, 0.0);
    let (mut vanish, mut bary) = (0.0f64, 0.0f64);
    for &t in &THETAS {
        let f = ev.extremiser(&[t])?;
        vanish = vanish.max(ev.deficit(&f)?.deficit.value.abs() / (1.0 + t * t));
        bary = bary.max((ev.barycentre(&f)?[0].value - t).abs());
    }
    run.push(format!("extremiser deficit [{label}]"), vanish, tol.identity);
    run.push(format!("barycentre identity [{label}]"), bary, tol.identity);
    let stats = family_stats(&ev, &fam)?;
    let p = beta_profile_from_stats(&log_grid(1.0, 1e6, 13), &stats)?;
    run.push(format!("beta admissible [{label}]"), p.beta.iter().copied().fold(0.0, f64::max), 1.0 + tol.admissibility);
    let levels: Vec<i32> = CUTOFF_LEVELS.collect();
    let mut markov_fail = 0usize;
    for f in &fam {
        markov_fail += markov_check(&ev, f, &levels)?.iter().filter(|c| !c.holds).count();
    }
    run.push(format!("Markov bound failures [{label}]"), markov_fail as f64, 0.0);
    Ok(())
}

pub fn selftest_run(cfg: &ExperimentConfig) -> Result<SelftestRun, CliError> {
    let tol = &cfg.tolerances;
    let mut run = SelftestRun { checks: Vec::new() };

    let k = stability_constants(&StabilityInputs { delta: 0.5, c0: 1.0, c1: 1.0, m2: 1.0, m1v: 1.0 })?;
    let s3 = 3f64.sqrt();
    run.push("stability constants", (k.c2 - 3.0).abs() + (k.c3 - 1.0 - s3).abs() + (k.c4 - 9.0 - 4.0 * s3).abs(), 1e-12);

    let conv = beta_to_phi(&BetaCurve::log(), &PhiFunction::one_plus_log())?;
    let direct = 8.0 / (2f64.sqrt() - 1.0).powi(2) * (1.0 + 8f64.ln()) + 2.0 * (1.0 + 8f64.sqrt()).powi(2);
    run.push("C_phi matches direct arithmetic", rel(conv.c_phi, direct), 1e-9);
    run.push("C_phi near 173", (conv.c_phi - 173.0).abs(), 0.5);
    run.push("C_phi formula", rel(c_phi_formula(1.0, 1.0 + 8f64.ln(), -1.0, 1.0, 1.0), direct), 1e-12);
    let (d, _) = compute_d(&PhiFunction::log())?;
    run.push("D for log", (d - (-1f64).exp()).abs(), 1e-10);

    let g = Measure::from_spec(&PotentialSpec::gaussian(1.0), false)?;
    let ev = Evaluator::new(&g, cfg.level)?;
    let mut herm = 0.0f64;
    for k in 1..=5 {
        let r = ev.deficit(&TestFunction::hermite(k))?;
        let kf = factorial(k);
        herm = herm
            .max(rel(r.variance.value, kf))
            .max(rel(r.energy.value, k as f64 * kf))
            .max(if k == 1 { r.deficit.value.abs() } else { rel(r.deficit.value, (k - 1) as f64 * kf) });
    }
    run.push("Hermite oracle", herm, 1e-6);

    for m in builtin_measures()? {
        per_measure(&mut run, cfg, &m)?;
    }

    let forms = discretize_forms(&g, SPECTRAL_MESH)?;
    let lam = stability_eigenvalue(&DiscretizedForms::One(forms.clone()))?.lambda;
    run.push("Gaussian stability eigenvalue", (lam - 1.0).abs(), 1e-3);
    let fam = generate(&g, &cfg.battery)?;
    let cuts = cutoff_family(&ev, &fam, &CUTOFF_LEVELS.collect::<Vec<_>>())?;
    let s = 10.0;
    let cut_best = beta_profile_from_stats(&[s], &family_stats(&ev, &cuts)?)?.raw[0];
    let eig = worst_beta_eigen(&DiscretizedForms::One(forms), s, 8)?.beta_lower;
    run.push("eigen search vs cutoffs at s = 10", cut_best - eig, tol.eigen_vs_cutoff);

    let bl = b_log(&g)?;
    run.push("B_log stabilizes", bl.last_change, 1e-4);
    let xs: Vec<f64> = bl.trace.iter().map(|p| p.0).collect();
    let f2 = factor_two_check(&g, &xs).iter().map(|f| f.lhs / f.rhs - 1.0).fold(f64::NEG_INFINITY, f64::max);
    run.push("factor-2 bound", f2, 1e-12);

    let roth = fam.iter().map(|f| rothaus_residual(&ev, f)).collect::<Result<Vec<_>, _>>()?;
    run.push("Rothaus residual", -roth.into_iter().fold(f64::INFINITY, f64::min), tol.rothaus);

    let half = Measure::from_spec(&PotentialSpec::power(2.0, 0.0), true)?;
    let evh = Evaluator::new(&half, cfg.level)?;
    let famh = generate(&half, &cfg.battery)?;
    let ent = entropic_check(&evh, std::slice::from_ref(&half), &famh)?;
    run.push("entropic ratio on the half-line", ent.worst_ratio, ent.bound + tol.admissibility);

    let pm = ProductMeasure::new(vec![g.clone(), g])?;
    let ev2 = Evaluator::product(&pm, 6)?;
    let t = tensor_check(&ev2, &PhiFunction::log(), 2.0, 2.0, &[TestFunction::exp_linear(vec![0.25, 0.25])])?;
    run.push("tensor exponential ratio", (t.worst_ratio - 2.0).abs(), 1e-6);
    Ok(run)
}

pub fn selftest(cfg: &ExperimentConfig, a: &mut Artifacts) -> Result<(), CliError> {
    let run = selftest_run(cfg)?;
    for c in run.checks.iter().filter(|c| !c.holds) {
        a.violations.push(format!("{}: {} > {}", c.name, c.value, c.bound));
    }
    let passed = run.checks.iter().filter(|c| c.holds).count();
    a.summary.push(format!("selftest: {passed}/{} checks pass", run.checks.len()));
    a.json("selftest.json", &run)?;
    let rows: Vec<Vec<String>> =
        run.checks.iter().map(|c| vec![c.name.clone(), num(c.value), num(c.bound), c.holds.to_string()]).collect();
    a.csv("selftest.csv", &["check", "value", "bound", "holds"], &rows)
}
