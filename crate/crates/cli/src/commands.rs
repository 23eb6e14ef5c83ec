//! One typed run per subcommand, plus its report files. The `*_run`
//! functions are public so tests can check numbers without parsing files.

use bllab::battery::{generate, generate_product};
use bllab::functionals::{DeficitReport, Evaluator, FunctionalError, TestFunction};
use bllab::measures::{Measure, ProductMeasure};
use bllab::muckenhoupt::{b_beta, b_log, b_s, factor_two_check, FactorTwo, MuckenhouptReport};
use bllab::quad::Estimate;
use bllab::spectral::{
    discretize_forms, discretize_product, stability_eigenvalue, worst_beta_eigen, DiscretizedForms, SpectralError,
    WorstBeta,
};
use bllab::stability::{
    fit_c1, measure_moments, stability_constants, verify_stability, StabilityConstants, StabilityError,
    StabilityInputs, StabilityReport,
};
use bllab::superbl::{
    beta_profile_from_stats, beta_to_phi, cutoff_family, entropic_check, family_stats, log_grid, markov_check,
    one_dim_ratio, phi_to_beta, pointwise_spot_check, rothaus_residual, slice_ratios, tensor_check, BetaCurve,
    BetaProfile, BetaSpec, BetaToPhi, FamilyStats, PhiFunction, PhiToBeta, PointwiseReport, RatioReport,
    SuperBlError,
};
use bllab::measures::PotentialSpec;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::output::{num, nums, opt, Artifacts};
use crate::svg::{Plot, Series};
use crate::CliError;

/// Samples of the pointwise entropic bound per exponent.
const POINTWISE_SAMPLES: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeficitRun {
    pub measure: String,
    pub level: u32,
    pub reports: Vec<DeficitReport>,
    pub bgg: Vec<Estimate>,
}

pub fn deficit_run(cfg: &ExperimentConfig) -> Result<DeficitRun, CliError> {
    let m = cfg.measure.build()?;
    let ev = Evaluator::new(&m, cfg.level)?;
    let fam = generate(&m, &cfg.battery)?;
    let rows: Vec<(DeficitReport, Estimate)> = fam
        .par_iter()
        .map(|f| Ok((ev.deficit(f)?, ev.bgg_bound(f)?)))
        .collect::<Result<_, FunctionalError>>()?;
    let (reports, bgg) = rows.into_iter().unzip();
    Ok(DeficitRun { measure: m.label(), level: cfg.level, reports, bgg })
}

pub fn deficit(cfg: &ExperimentConfig, a: &mut Artifacts) -> Result<(), CliError> {
    let run = deficit_run(cfg)?;
    let mut rows = Vec::new();
    let mut min_def = f64::INFINITY;
    for (r, b) in run.reports.iter().zip(&run.bgg) {
        min_def = min_def.min(r.deficit.value);
        if b.value > r.deficit.value + 10.0 * r.deficit.err_est {
            a.violations.push(format!("BGG bound {} exceeds deficit {} for {}", b.value, r.deficit.value, r.function));
        }
        rows.push(vec![
            r.function.clone(),
            num(r.mean),
            num(r.variance.value),
            num(r.variance.err_est),
            num(r.energy.value),
            num(r.energy.err_est),
            num(r.deficit.value),
            num(r.deficit.err_est),
            num(b.value),
            num(b.err_est),
            nums(&r.best_theta),
            nums(&r.barycentre),
            num(r.l1_dist),
            num(r.l2_dist),
            num(r.l1_dist_barycentre),
            num(r.l2_dist_barycentre),
        ]);
    }
    a.summary.push(format!("{}: {} functions, smallest deficit {}", run.measure, run.reports.len(), num(min_def)));
    a.json("deficit.json", &run)?;
    a.csv(
        "deficit.csv",
        &[
            "function", "mean", "variance", "variance_err", "energy", "energy_err", "deficit", "deficit_err", "bgg",
            "bgg_err", "best_theta", "barycentre", "l1_dist", "l2_dist", "l1_dist_barycentre", "l2_dist_barycentre",
        ],
        &rows,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityRun {
    pub measure: String,
    pub inputs: StabilityInputs,
    pub c1_fitted: bool,
    pub constants: StabilityConstants,
    pub reports: Vec<StabilityReport>,
    /// Functions whose deficit is indistinguishable from zero.
    pub skipped: Vec<String>,
}

pub fn stability_run(cfg: &ExperimentConfig) -> Result<StabilityRun, CliError> {
    let m = cfg.measure.build()?;
    let ev = Evaluator::new(&m, cfg.level)?;
    let fam = generate(&m, &cfg.battery)?;
    let (m2, m1v) = measure_moments(&ev)?;
    let (c1, c1_fitted) = match cfg.stability.c1 {
        Some(c) => (c, false),
        None => (fit_c1(&ev, &fam)?, true),
    };
    let inputs = StabilityInputs { delta: cfg.stability.delta, c0: cfg.stability.c0, c1, m2, m1v };
    let constants = stability_constants(&inputs)?;
    let out: Vec<Result<StabilityReport, String>> = fam
        .par_iter()
        .map(|f| match verify_stability(&ev, f, &inputs) {
            Ok(r) => Ok(Ok(r)),
            Err(StabilityError::ZeroDeficit { .. }) => Ok(Err(f.name().to_string())),
            Err(e) => Err(e),
        })
        .collect::<Result<_, StabilityError>>()?;
    let mut reports = Vec::new();
    let mut skipped = Vec::new();
    for o in out {
        match o {
            Ok(r) => reports.push(r),
            Err(n) => skipped.push(n),
        }
    }
    Ok(StabilityRun { measure: m.label(), inputs, c1_fitted, constants, reports, skipped })
}

pub fn stability(cfg: &ExperimentConfig, a: &mut Artifacts) -> Result<(), CliError> {
    let run = stability_run(cfg)?;
    let mut rows = Vec::new();
    for r in &run.reports {
        if !r.all_hold() {
            a.violations.push(format!("stability bound fails for {}", r.function));
        }
        let mut row = vec![r.function.clone(), num(r.deficit), num(r.deficit_err)];
        for c in [&r.l2_best, &r.l1_barycentre, &r.l2_barycentre] {
            row.extend([num(c.lhs), num(c.rhs), num(c.margin)]);
        }
        row.push(r.all_hold().to_string());
        rows.push(row);
    }
    let k = &run.constants;
    a.summary.push(format!(
        "{}: C1 = {}{}, C2 = {}, C3 = {}, C4 = {}; {} verified, {} skipped",
        run.measure,
        num(run.inputs.c1),
        if run.c1_fitted { " (fitted)" } else { "" },
        num(k.c2),
        num(k.c3),
        num(k.c4),
        run.reports.len(),
        run.skipped.len()
    ));
    a.json("stability.json", &run)?;
    a.csv(
        "stability.csv",
        &[
            "function", "deficit", "deficit_err", "l2_best_lhs", "l2_best_rhs", "l2_best_margin", "l1_barycentre_lhs",
            "l1_barycentre_rhs", "l1_barycentre_margin", "l2_barycentre_lhs", "l2_barycentre_rhs",
            "l2_barycentre_margin", "holds",
        ],
        &rows,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaRun {
    pub measure: String,
    /// Isotonic profile over battery, cutoffs and eigen adversaries.
    pub profile: BetaProfile,
    pub battery_best: Vec<f64>,
    pub cutoff_best: Vec<f64>,
    /// `None` where the eigen search did not run.
    pub eigen_lower: Vec<Option<f64>>,
    pub eigen_note: Option<String>,
    pub markov_checked: usize,
    pub markov_failures: Vec<String>,
}

fn best_ratios(grid: &[f64], stats: &[FamilyStats]) -> Result<Vec<f64>, CliError> {
    match beta_profile_from_stats(grid, stats) {
        Ok(p) => Ok(p.raw),
        Err(SuperBlError::EmptyFamily) => Ok(vec![0.0; grid.len()]),
        Err(e) => Err(e.into()),
    }
}

/// Adversarial eigen lower bounds at every `s`, or the reason they are
/// unavailable for this measure.
pub fn eigen_lower_bounds(m: &Measure, grid: &[f64], mesh: usize, iters: usize) -> Result<Result<Vec<WorstBeta>, String>, CliError> {
    let forms = match discretize_forms(m, mesh) {
        Ok(f) => f,
        Err(e @ SpectralError::SingularWeight { .. }) => return Ok(Err(e.to_string())),
        Err(e) => return Err(e.into()),
    };
    let df = DiscretizedForms::One(forms);
    let out = grid.par_iter().map(|&s| worst_beta_eigen(&df, s, iters)).collect::<Result<Vec<_>, _>>()?;
    Ok(Ok(out))
}

pub fn beta_run(cfg: &ExperimentConfig) -> Result<BetaRun, CliError> {
    let bp = &cfg.beta_profile;
    let m = cfg.measure.build()?;
    let ev = Evaluator::new(&m, cfg.level)?;
    let fam = generate(&m, &cfg.battery)?;
    let grid = bp.grid();
    let cuts = cutoff_family(&ev, &fam, &bp.cutoff_levels)?;
    let bat_stats = family_stats(&ev, &fam)?;
    let cut_stats = family_stats(&ev, &cuts)?;
    let battery_best = best_ratios(&grid, &bat_stats)?;
    let cutoff_best = best_ratios(&grid, &cut_stats)?;
    let all: Vec<FamilyStats> = bat_stats.into_iter().chain(cut_stats).collect();
    let mut profile = beta_profile_from_stats(&grid, &all)?;
    let (eigen_lower, eigen_note) = if !bp.eigen {
        (vec![None; grid.len()], Some("eigen search disabled".to_string()))
    } else if m.is_half_line() {
        (vec![None; grid.len()], Some("eigen search needs a whole-line measure".to_string()))
    } else {
        match eigen_lower_bounds(&m, &grid, bp.eigen_mesh, bp.eigen_iters)? {
            Ok(w) => (w.iter().map(|w| Some(w.beta_lower)).collect(), None),
            Err(why) => (vec![None; grid.len()], Some(why)),
        }
    };
    let extra: Vec<f64> = eigen_lower.iter().map(|e| e.unwrap_or(0.0)).collect();
    profile.merge(&extra, "eigen");
    let checks = fam
        .par_iter()
        .map(|f| markov_check(&ev, f, &bp.cutoff_levels).map(|c| (f.name().to_string(), c)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut markov_checked = 0;
    let mut markov_failures = Vec::new();
    for (name, cs) in checks {
        for c in cs {
            markov_checked += 1;
            if !c.holds {
                markov_failures.push(format!("{name} at n = {}", c.n));
            }
        }
    }
    Ok(BetaRun { measure: m.label(), profile, battery_best, cutoff_best, eigen_lower, eigen_note, markov_checked, markov_failures })
}

/// The invariant checks of a β profile run.
pub fn beta_violations(run: &BetaRun, admissibility: f64, eigen_tol: f64) -> Vec<String> {
    let mut v = Vec::new();
    let p = &run.profile;
    for (s, b) in p.s.iter().zip(&p.beta) {
        if *b > 1.0 + admissibility {
            v.push(format!("β̂({s}) = {b} exceeds 1"));
        }
    }
    if !p.is_non_increasing() {
        v.push("β̂ is not non-increasing".into());
    }
    for ((s, e), c) in p.s.iter().zip(&run.eigen_lower).zip(&run.cutoff_best) {
        if let Some(e) = e {
            if *e < c - eigen_tol {
                v.push(format!("eigen bound {e} below cutoff ratio {c} at s = {s}"));
            }
        }
    }
    v.extend(run.markov_failures.iter().map(|f| format!("Markov bound fails for {f}")));
    v
}

pub fn beta_profile(cfg: &ExperimentConfig, a: &mut Artifacts) -> Result<(), CliError> {
    let run = beta_run(cfg)?;
    a.violations.extend(beta_violations(&run, cfg.tolerances.admissibility, cfg.tolerances.eigen_vs_cutoff));
    let p = &run.profile;
    let rows: Vec<Vec<String>> = (0..p.s.len())
        .map(|i| {
            vec![
                num(p.s[i]),
                num(p.beta[i]),
                num(p.raw[i]),
                p.argmax[i].clone(),
                num(run.battery_best[i]),
                num(run.cutoff_best[i]),
                opt(run.eigen_lower[i]),
            ]
        })
        .collect();
    if let (Some(first), Some(last)) = (p.beta.first(), p.beta.last()) {
        a.summary.push(format!("{}: β̂ from {} to {} over {} values of s", run.measure, num(*first), num(*last), p.s.len()));
    }
    if let Some(n) = &run.eigen_note {
        a.summary.push(format!("eigen search skipped: {n}"));
    }
    a.json("beta_profile.json", &run)?;
    a.csv("beta_profile.csv", &["s", "beta", "raw", "argmax", "battery_best", "cutoff_best", "eigen_lower"], &rows)?;
    let pts = |ys: &[f64]| p.s.iter().copied().zip(ys.iter().copied()).collect::<Vec<_>>();
    let mut series = vec![Series::new("beta (isotonic)", pts(&p.beta)), Series::new("cutoffs", pts(&run.cutoff_best))];
    let eig: Vec<(f64, f64)> = p.s.iter().zip(&run.eigen_lower).filter_map(|(s, e)| e.map(|e| (*s, e))).collect();
    if !eig.is_empty() {
        series.push(Series::new("eigen", eig));
    }
    a.svg(
        "beta_profile.svg",
        &Plot { title: format!("β̂(s) on {}", run.measure), x_label: "s".into(), y_label: "β".into(), log_x: true, series },
    );
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvertPhiRun {
    pub info: PhiToBeta,
    pub beta_s0: f64,
    /// `(s, β(s))` on a log grid from `s0`.
    pub samples: Vec<(f64, f64)>,
    pub hypothesis_notes: Vec<String>,
}

pub fn convert_phi_run(cfg: &ExperimentConfig) -> Result<ConvertPhiRun, CliError> {
    let c = &cfg.convert_phi;
    let phi = PhiFunction::from_spec(&c.phi)?;
    let (info, curve) = phi_to_beta(&phi, c.c_phi)?;
    let grid = if c.points == 0 { Vec::new() } else { log_grid(curve.s0, curve.s0 * 1e6, c.points) };
    let samples = grid.iter().map(|&s| (s, curve.eval(s))).collect();
    Ok(ConvertPhiRun { beta_s0: curve.s0, info, samples, hypothesis_notes: phi.hypothesis_violations() })
}

pub fn convert_phi(cfg: &ExperimentConfig, a: &mut Artifacts) -> Result<(), CliError> {
    let run = convert_phi_run(cfg)?;
    a.summary.push(format!(
        "{}: D = {}, s0 = {} (alternate {}), C_phi = {}",
        run.info.phi,
        num(run.info.d),
        num(run.info.s0),
        num(run.info.s0_alternate),
        num(run.info.c_phi)
    ));
    a.json("convert_phi.json", &run)?;
    let rows: Vec<Vec<String>> = run.samples.iter().map(|&(s, b)| vec![num(s), num(b)]).collect();
    a.csv("convert_phi.csv", &["s", "beta"], &rows)?;
    a.svg(
        "convert_phi.svg",
        &Plot {
            title: format!("β from φ = {}", run.info.phi),
            x_label: "s".into(),
            y_label: "β".into(),
            log_x: true,
            series: vec![Series::new("β", run.samples.clone())],
        },
    );
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvertBetaRun {
    pub info: BetaToPhi,
}

pub fn convert_beta_run(cfg: &ExperimentConfig) -> Result<ConvertBetaRun, CliError> {
    let beta = BetaCurve::from_spec(&cfg.convert_beta.beta)?;
    let phi = PhiFunction::from_spec(&cfg.convert_beta.phi)?;
    Ok(ConvertBetaRun { info: beta_to_phi(&beta, &phi)? })
}

pub fn convert_beta(cfg: &ExperimentConfig, a: &mut Artifacts) -> Result<(), CliError> {
    let run = convert_beta_run(cfg)?;
    a.summary.push(format!("β = {}, φ = {}: C_phi = {}", run.info.beta, run.info.phi, num(run.info.c_phi)));
    a.json("convert_beta.json", &run)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuckenhouptRun {
    pub measure: String,
    pub b_log: MuckenhouptReport,
    pub b_beta: MuckenhouptReport,
    /// `|B_log - B(β)|/B_log`, when β is the log profile.
    pub identity_gap: Option<f64>,
    pub b_s: Vec<MuckenhouptReport>,
    pub b_s_non_increasing: bool,
    /// Factor-2 comparison at every x of the `B_log` scan.
    pub factor_two: Vec<FactorTwo>,
    pub factor_two_holds: bool,
}

pub fn muckenhoupt_run(cfg: &ExperimentConfig) -> Result<MuckenhouptRun, CliError> {
    let mc = &cfg.muckenhoupt;
    let m = cfg.measure.build()?;
    let beta = BetaCurve::from_spec(&mc.beta)?;
    let bl = b_log(&m)?;
    let bb = b_beta(&m, &beta)?;
    let identity_gap = (mc.beta == BetaSpec::Log).then(|| (bl.value - bb.value).abs() / bl.value);
    let mut s_sorted = mc.s_values.clone();
    s_sorted.sort_by(f64::total_cmp);
    let bs = s_sorted.par_iter().map(|&s| b_s(&m, s)).collect::<Result<Vec<_>, _>>()?;
    let b_s_non_increasing = bs.windows(2).all(|w| w[1].value <= w[0].value);
    let xs: Vec<f64> = bl.trace.iter().map(|p| p.0).collect();
    let factor_two = factor_two_check(&m, &xs);
    let factor_two_holds = factor_two.iter().all(|f| f.lhs <= f.rhs * (1.0 + 1e-12));
    Ok(MuckenhouptRun {
        measure: m.label(),
        b_log: bl,
        b_beta: bb,
        identity_gap,
        b_s: bs,
        b_s_non_increasing,
        factor_two,
        factor_two_holds,
    })
}

pub fn muckenhoupt(cfg: &ExperimentConfig, a: &mut Artifacts) -> Result<(), CliError> {
    let run = muckenhoupt_run(cfg)?;
    if !run.factor_two_holds {
        a.violations.push("factor-2 inner-sup bound fails".into());
    }
    if !run.b_s_non_increasing {
        a.violations.push("B_s is not non-increasing in s".into());
    }
    if let Some(g) = run.identity_gap {
        if g > 1e-10 {
            a.violations.push(format!("B_log and B(β_log) differ by {g:e}"));
        }
    }
    a.summary.push(format!(
        "{}: B_log = {} (stabilized = {}, infinite = {}), {} = {}",
        run.measure,
        num(run.b_log.value),
        run.b_log.stabilized,
        run.b_log.infinite,
        run.b_beta.quantity,
        num(run.b_beta.value)
    ));
    a.json("muckenhoupt.json", &run)?;
    let rows: Vec<Vec<String>> = run
        .b_log
        .trace
        .iter()
        .zip(&run.factor_two)
        .map(|(&(x, v), f)| vec![num(x), num(v), num(f.tail), num(f.lhs), num(f.rhs)])
        .collect();
    a.csv("muckenhoupt_trace.csv", &["x", "b_log_integrand", "tail", "factor_two_lhs", "factor_two_rhs"], &rows)?;
    a.svg(
        "muckenhoupt_trace.svg",
        &Plot {
            title: format!("B_log scan on {}", run.measure),
            x_label: "x".into(),
            y_label: "integrand".into(),
            log_x: true,
            series: vec![Series::new("B_log", run.b_log.trace.clone())],
        },
    );
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralRow {
    pub mesh_size: usize,
    pub lambda: f64,
    pub sharp_c2: f64,
    pub method: String,
    pub iterations: usize,
    pub residual: f64,
    /// `|λ - λ_prev|`.
    pub change: Option<f64>,
    /// Order fitted from consecutive changes.
    pub order: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralRun {
    pub measure: String,
    pub dim: usize,
    pub rows: Vec<SpectralRow>,
    /// Finest-mesh minimizer (1D only), normalized to max |·| = 1.
    pub eigenvector_mesh: Vec<f64>,
    pub eigenvector: Vec<f64>,
    pub witnesses: Vec<WorstBeta>,
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let (mut big, mut sign) = (0.0f64, 1.0);
    for &x in v {
        if x.abs() > big {
            big = x.abs();
            sign = x.signum();
        }
    }
    if big == 0.0 {
        return v.to_vec();
    }
    v.iter().map(|x| sign * x / big).collect()
}

pub fn spectral_run(cfg: &ExperimentConfig) -> Result<SpectralRun, CliError> {
    let sc = &cfg.spectral;
    let mut factors = vec![cfg.measure.build()?];
    if let Some(f2) = &sc.second_factor {
        factors.push(f2.build()?);
    }
    let pm = ProductMeasure::new(factors)?;
    let dim = pm.dimension();
    let axis_nodes = |n: usize| if dim == 2 { (n as f64).sqrt() } else { n as f64 };
    let mut rows: Vec<SpectralRow> = Vec::new();
    let mut finest: Option<DiscretizedForms> = None;
    let mut eigenvector = Vec::new();
    for &n in &sc.meshes {
        let df = discretize_product(&pm, n)?;
        let e = stability_eigenvalue(&df)?;
        let change = rows.last().map(|r| (e.lambda - r.lambda).abs());
        let order = match (rows.last(), rows.len().checked_sub(2).map(|i| &rows[i])) {
            (Some(prev), Some(_)) => match (prev.change, change) {
                (Some(c0), Some(c1)) if c0 > 0.0 && c1 > 0.0 => {
                    Some((c0 / c1).ln() / (axis_nodes(n) / axis_nodes(prev.mesh_size)).ln())
                }
                _ => None,
            },
            _ => None,
        };
        rows.push(SpectralRow {
            mesh_size: n,
            lambda: e.lambda,
            sharp_c2: e.sharp_c2,
            method: e.method,
            iterations: e.iterations,
            residual: e.residual,
            change,
            order,
        });
        eigenvector = e.eigenvector;
        finest = Some(df);
    }
    let df = finest.expect("meshes validated non-empty");
    let (eigenvector_mesh, eigenvector, witnesses) = match &df {
        DiscretizedForms::One(f) => {
            let w = sc.beta_s.par_iter().map(|&s| worst_beta_eigen(&df, s, sc.beta_iters)).collect::<Result<Vec<_>, _>>()?;
            (f.mesh.clone(), normalized(&eigenvector), w)
        }
        DiscretizedForms::Two(..) => (Vec::new(), Vec::new(), Vec::new()),
    };
    Ok(SpectralRun { measure: pm.label(), dim, rows, eigenvector_mesh, eigenvector, witnesses })
}

pub fn spectral(cfg: &ExperimentConfig, a: &mut Artifacts) -> Result<(), CliError> {
    let run = spectral_run(cfg)?;
    for r in &run.rows {
        if r.lambda < -1e-8 {
            a.violations.push(format!("negative stability eigenvalue {} at mesh {}", r.lambda, r.mesh_size));
        }
    }
    for w in &run.witnesses {
        if !w.trace.windows(2).all(|p| p[1] >= p[0]) {
            a.violations.push(format!("eigen β trace decreases at s = {}", w.s));
        }
    }
    if let Some(r) = run.rows.last() {
        a.summary.push(format!("{}: λ = {} (sharp C2 = {}) at {} nodes", run.measure, num(r.lambda), num(r.sharp_c2), r.mesh_size));
    }
    for w in &run.witnesses {
        a.summary.push(format!("s = {}: β lower bound {} ({})", num(w.s), num(w.beta_lower), w.support));
    }
    a.json("spectral.json", &run)?;
    let rows: Vec<Vec<String>> = run
        .rows
        .iter()
        .map(|r| {
            vec![
                r.mesh_size.to_string(),
                num(r.lambda),
                num(r.sharp_c2),
                r.method.clone(),
                r.iterations.to_string(),
                num(r.residual),
                opt(r.change),
                opt(r.order),
            ]
        })
        .collect();
    a.csv("spectral_convergence.csv", &["mesh", "lambda", "sharp_c2", "method", "iterations", "residual", "change", "order"], &rows)?;
    if run.dim == 1 {
        let wit: Vec<Vec<f64>> = run.witnesses.iter().map(|w| normalized(&w.witness)).collect();
        let mut header = vec!["x".to_string(), "stability_eigenvector".to_string()];
        header.extend(run.witnesses.iter().map(|w| format!("beta_witness_s={}", num(w.s))));
        let rows: Vec<Vec<String>> = (0..run.eigenvector_mesh.len())
            .map(|i| {
                let mut r = vec![num(run.eigenvector_mesh[i]), num(run.eigenvector[i])];
                r.extend(wit.iter().map(|w| num(w[i])));
                r
            })
            .collect();
        let h: Vec<&str> = header.iter().map(String::as_str).collect();
        a.csv("spectral_witness.csv", &h, &rows)?;
        let trace_rows: Vec<Vec<String>> = run
            .witnesses
            .iter()
            .flat_map(|w| w.trace.iter().enumerate().map(move |(k, b)| vec![num(w.s), k.to_string(), num(*b)]))
            .collect();
        a.csv("spectral_beta_trace.csv", &["s", "iteration", "beta_lower"], &trace_rows)?;
        let xy = |v: &[f64]| run.eigenvector_mesh.iter().copied().zip(v.iter().copied()).collect::<Vec<_>>();
        let mut series = vec![Series::new("stability minimizer", xy(&run.eigenvector))];
        for (w, v) in run.witnesses.iter().zip(&wit) {
            series.push(Series::new(format!("β witness s={}", num(w.s)), xy(v)));
        }
        a.svg(
            "spectral_witness.svg",
            &Plot { title: format!("witnesses on {}", run.measure), x_label: "x".into(), y_label: "normalized value".into(), log_x: false, series },
        );
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRun {
    pub factors: Vec<String>,
    pub phi: String,
    pub level: u32,
    /// Worst ratio of each factor's own 1D battery.
    pub one_dim: [f64; 2],
    /// Worst ratio over slices and marginals of the 2D family, per axis.
    pub slice: [f64; 2],
    /// The 2D family against `max(slice)`.
    pub report: RatioReport,
    /// Largest `|ratio(g(x_k)) - ratio_1D(g)|` over lifted 1D functions.
    pub separable_gap: f64,
}

pub fn tensor_run(cfg: &ExperimentConfig) -> Result<TensorRun, CliError> {
    let tc = &cfg.tensor;
    let ms = tc.factors.iter().map(|f| f.build()).collect::<Result<Vec<_>, _>>()?;
    let pm = ProductMeasure::new(ms.clone())?;
    let phi = PhiFunction::from_spec(&tc.phi)?;
    let ev2 = Evaluator::product(&pm, tc.level)?;
    let fam2 = generate_product(&pm, &cfg.battery)?;
    let slice = slice_ratios(&ev2, &phi, &fam2)?;
    let report = tensor_check(&ev2, &phi, slice[0], slice[1], &fam2)?;
    let mut one_dim = [0.0; 2];
    let mut separable_gap = 0.0f64;
    for (k, m) in ms.iter().enumerate() {
        let ev1 = Evaluator::new(m, tc.level)?;
        let fam1 = generate(m, &cfg.battery)?;
        let r1 = one_dim_ratio(&ev1, &phi, &fam1)?;
        one_dim[k] = r1.worst_ratio;
        let lifted: Vec<TestFunction> = fam1.iter().map(|g| TestFunction::on_axis(g.clone(), 2, k)).collect();
        let r2 = one_dim_ratio(&ev2, &phi, &lifted)?;
        if r1.ratios.len() != r2.ratios.len() {
            separable_gap = f64::INFINITY;
        }
        for (a, b) in r1.ratios.iter().zip(&r2.ratios) {
            separable_gap = separable_gap.max((a.1 - b.1).abs());
        }
    }
    Ok(TensorRun { factors: pm.factors().iter().map(Measure::label).collect(), phi: phi.name().to_string(), level: tc.level, one_dim, slice, report, separable_gap })
}

pub fn tensor(cfg: &ExperimentConfig, a: &mut Artifacts) -> Result<(), CliError> {
    let run = tensor_run(cfg)?;
    if !run.report.holds {
        a.violations.push(format!("2D ratio {} exceeds max slice ratio {}", run.report.worst_ratio, run.report.bound));
    }
    if !(run.separable_gap <= 1e-9) {
        a.violations.push(format!("separable functions miss their 1D ratio by {:e}", run.separable_gap));
    }
    a.summary.push(format!(
        "{}: worst 2D ratio {} ≤ {} (1D batteries {} and {}), separable gap {:e}",
        run.factors.join(" x "),
        num(run.report.worst_ratio),
        num(run.report.bound),
        num(run.one_dim[0]),
        num(run.one_dim[1]),
        run.separable_gap
    ));
    a.json("tensor_check.json", &run)?;
    let rows: Vec<Vec<String>> = run.report.ratios.iter().map(|(n, r)| vec![n.clone(), num(*r)]).collect();
    a.csv("tensor_check.csv", &["function", "ratio"], &rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropicRun {
    pub factors: Vec<String>,
    pub report: RatioReport,
    pub rothaus_min: f64,
    pub rothaus_worst: String,
    pub rothaus: Vec<(String, f64)>,
    /// Proof-internal pointwise bound, one report per exponent.
    pub pointwise: Vec<PointwiseReport>,
}

pub fn entropic_run(cfg: &ExperimentConfig) -> Result<EntropicRun, CliError> {
    let ec = &cfg.entropic;
    let ms = ec.factors.iter().map(|f| f.build()).collect::<Result<Vec<_>, _>>()?;
    let pm = ProductMeasure::new(ms.clone())?;
    let ev = Evaluator::product(&pm, ec.level)?;
    let fam = generate_product(&pm, &cfg.battery)?;
    let report = entropic_check(&ev, &ms, &fam)?;
    let res: Vec<Option<f64>> = fam
        .par_iter()
        .map(|f| match rothaus_residual(&ev, f) {
            Ok(v) => Ok(Some(v)),
            Err(SuperBlError::Functional(FunctionalError::DegenerateFunction(_))) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<_, _>>()?;
    let rothaus: Vec<(String, f64)> =
        fam.iter().zip(res).filter_map(|(f, r)| r.map(|r| (f.name().to_string(), r))).collect();
    let (rothaus_worst, rothaus_min) =
        rothaus.iter().fold((String::from("-"), f64::INFINITY), |acc, (n, r)| if *r < acc.1 { (n.clone(), *r) } else { acc });
    let mut ps: Vec<f64> = ec
        .factors
        .iter()
        .filter_map(|f| match f.potential {
            PotentialSpec::Power { p, .. } => Some(p),
            _ => None,
        })
        .collect();
    ps.sort_by(f64::total_cmp);
    ps.dedup();
    let pointwise = ps.iter().map(|&p| pointwise_spot_check(p, POINTWISE_SAMPLES, cfg.battery.seed)).collect();
    Ok(EntropicRun { factors: pm.factors().iter().map(Measure::label).collect(), report, rothaus_min, rothaus_worst, rothaus, pointwise })
}

pub fn entropic(cfg: &ExperimentConfig, a: &mut Artifacts) -> Result<(), CliError> {
    let run = entropic_run(cfg)?;
    if !run.report.holds {
        a.violations.push(format!("entropic ratio {} exceeds {}", run.report.worst_ratio, run.report.bound));
    }
    if run.rothaus_min < -cfg.tolerances.rothaus {
        a.violations.push(format!("Rothaus residual {} for {}", run.rothaus_min, run.rothaus_worst));
    }
    a.summary.push(format!(
        "{}: worst Ent/E ratio {} against {}, smallest Rothaus residual {}",
        run.factors.join(" x "),
        num(run.report.worst_ratio),
        num(run.report.bound),
        num(run.rothaus_min)
    ));
    a.json("entropic_check.json", &run)?;
    let rows: Vec<Vec<String>> = run
        .report
        .ratios
        .iter()
        .map(|(n, r)| {
            let ro = run.rothaus.iter().find(|(m, _)| m == n).map(|x| num(x.1)).unwrap_or_default();
            vec![n.clone(), num(*r), ro]
        })
        .collect();
    a.csv("entropic_check.csv", &["function", "ratio", "rothaus_residual"], &rows)
}
