//! Experiment configuration. One TOML file describes a run; every field has
//! a default so an empty file (or no file) is a valid configuration.

use std::path::Path;

use bllab::battery::BatterySpec;
use bllab::measures::{Measure, PotentialSpec, ProductMeasure};
use bllab::quad::{DEFAULT_LEVEL, MAX_LEVEL};
use bllab::superbl::{BetaSpec, PhiSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// A built-in potential plus the half-line flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureConfig {
    #[serde(flatten)]
    pub potential: PotentialSpec,
    #[serde(default)]
    pub half_line: bool,
}

impl MeasureConfig {
    pub fn new(potential: PotentialSpec, half_line: bool) -> Self {
        MeasureConfig { potential, half_line }
    }

    pub fn build(&self) -> Result<Measure, CliError> {
        Ok(Measure::from_spec(&self.potential, self.half_line)?)
    }

    /// Parses `gaussian`, `gaussian(2)`, `power(3)`, `power(3,0)`; a
    /// trailing `+` selects the half-line.
    pub fn parse(s: &str) -> Result<Self, CliError> {
        let s = s.trim();
        let (body, half_line) = match s.strip_suffix('+') {
            Some(b) => (b.trim(), true),
            None => (s, false),
        };
        let (name, args) = split_call(body)?;
        let potential = match (name, args.as_slice()) {
            ("gaussian", []) => PotentialSpec::gaussian(1.0),
            ("gaussian", [a]) => PotentialSpec::gaussian(*a),
            ("power", [p]) => PotentialSpec::Power { p: *p, r: bllab::measures::DEFAULT_REGULARIZATION },
            ("power", [p, r]) => PotentialSpec::power(*p, *r),
            _ => return Err(CliError::Config(format!("cannot parse measure '{s}'"))),
        };
        Ok(MeasureConfig { potential, half_line })
    }
}

impl Default for MeasureConfig {
    fn default() -> Self {
        MeasureConfig::new(PotentialSpec::gaussian(1.0), false)
    }
}

/// `name` or `name(a, b, ...)` with numeric arguments.
fn split_call(s: &str) -> Result<(&str, Vec<f64>), CliError> {
    let bad = || CliError::Config(format!("cannot parse '{s}'"));
    let Some(open) = s.find('(') else {
        return Ok((s, Vec::new()));
    };
    let inner = s[open + 1..].strip_suffix(')').ok_or_else(bad)?;
    let args = inner
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((s[..open].trim(), args))
}

/// `log` or `const(c)`.
pub fn parse_beta(s: &str) -> Result<BetaSpec, CliError> {
    match split_call(s.trim())? {
        ("log", a) if a.is_empty() => Ok(BetaSpec::Log),
        ("const", a) if a.len() == 1 => Ok(BetaSpec::Constant { c: a[0] }),
        _ => Err(CliError::Config(format!("unknown beta '{s}' (expected log or const(c))"))),
    }
}

/// `log`, `one_plus_log` or `affine_log(a,b)`.
pub fn parse_phi(s: &str) -> Result<PhiSpec, CliError> {
    match split_call(s.trim())? {
        ("log", a) if a.is_empty() => Ok(PhiSpec::Log),
        ("one_plus_log", a) if a.is_empty() => Ok(PhiSpec::OnePlusLog),
        ("affine_log", a) if a.len() == 2 => Ok(PhiSpec::AffineLog { a: a[0], b: a[1] }),
        _ => Err(CliError::Config(format!(
            "unknown phi '{s}' (expected log, one_plus_log or affine_log(a,b))"
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Energy identity and extremiser checks.
    pub identity: f64,
    /// Slack on `β̂ ≤ 1` and on ratio bounds.
    pub admissibility: f64,
    /// Rothaus residual floor.
    pub rothaus: f64,
    /// Eigen search versus dyadic cutoffs.
    pub eigen_vs_cutoff: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { identity: 1e-8, admissibility: 1e-6, rothaus: 1e-8, eigen_vs_cutoff: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilitySection {
    pub delta: f64,
    pub c0: f64,
    /// Fitted on the battery when absent.
    pub c1: Option<f64>,
}

impl Default for StabilitySection {
    fn default() -> Self {
        StabilitySection { delta: 0.5, c0: 1.0, c1: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BetaProfileSection {
    /// Explicit grid; replaces `s_min`, `s_max`, `points` when present.
    pub s_grid: Option<Vec<f64>>,
    pub s_min: f64,
    pub s_max: f64,
    pub points: usize,
    pub cutoff_levels: Vec<i32>,
    pub eigen: bool,
    pub eigen_mesh: usize,
    pub eigen_iters: usize,
}

impl Default for BetaProfileSection {
    fn default() -> Self {
        BetaProfileSection {
            s_grid: None,
            s_min: 1.0,
            s_max: 1e6,
            points: 25,
            cutoff_levels: (-4..=8).collect(),
            eigen: true,
            eigen_mesh: 2048,
            eigen_iters: 12,
        }
    }
}

impl BetaProfileSection {
    pub fn grid(&self) -> Vec<f64> {
        match &self.s_grid {
            Some(g) => g.clone(),
            None if self.points == 0 => Vec::new(),
            None => bllab::superbl::log_grid(self.s_min, self.s_max, self.points),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvertPhiSection {
    pub phi: PhiSpec,
    pub c_phi: f64,
    /// Samples of the resulting β on `[s0, 1e6·s0]`.
    pub points: usize,
}

impl Default for ConvertPhiSection {
    fn default() -> Self {
        ConvertPhiSection { phi: PhiSpec::Log, c_phi: 1.0, points: 25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvertBetaSection {
    pub beta: BetaSpec,
    /// Extension of `1/β` below `s0`.
    pub phi: PhiSpec,
}

impl Default for ConvertBetaSection {
    fn default() -> Self {
        ConvertBetaSection { beta: BetaSpec::Log, phi: PhiSpec::OnePlusLog }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MuckenhouptSection {
    pub beta: BetaSpec,
    pub s_values: Vec<f64>,
}

impl Default for MuckenhouptSection {
    fn default() -> Self {
        MuckenhouptSection { beta: BetaSpec::Log, s_values: vec![1.0, 2.0, 10.0, 100.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralSection {
    /// Node counts; in 2D the total count, which must be a perfect square.
    pub meshes: Vec<usize>,
    /// Makes the problem two-dimensional: `measure ⊗ second_factor`.
    pub second_factor: Option<MeasureConfig>,
    /// `s` values for the adversarial β search on the finest mesh (1D only).
    pub beta_s: Vec<f64>,
    pub beta_iters: usize,
}

impl Default for SpectralSection {
    fn default() -> Self {
        SpectralSection { meshes: vec![1024, 2048, 4096], second_factor: None, beta_s: vec![10.0], beta_iters: 12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TensorSection {
    pub factors: Vec<MeasureConfig>,
    pub phi: PhiSpec,
    pub level: u32,
}

impl Default for TensorSection {
    fn default() -> Self {
        TensorSection { factors: vec![MeasureConfig::default(), MeasureConfig::default()], phi: PhiSpec::Log, level: 6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntropicSection {
    /// Product factors, each `|x|^p` with `p ≥ 2` and `r = 0`.
    pub factors: Vec<MeasureConfig>,
    pub level: u32,
}

impl Default for EntropicSection {
    fn default() -> Self {
        EntropicSection { factors: vec![MeasureConfig::new(PotentialSpec::power(2.0, 0.0), true)], level: DEFAULT_LEVEL }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Quadrature level.
    pub level: u32,
    /// Not part of the config hash.
    #[serde(skip_serializing)]
    pub out_dir: Option<String>,
    pub measure: MeasureConfig,
    pub battery: BatterySpec,
    pub tolerances: Tolerances,
    pub stability: StabilitySection,
    pub beta_profile: BetaProfileSection,
    pub convert_phi: ConvertPhiSection,
    pub convert_beta: ConvertBetaSection,
    pub muckenhoupt: MuckenhouptSection,
    pub spectral: SpectralSection,
    pub tensor: TensorSection,
    pub entropic: EntropicSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            level: DEFAULT_LEVEL,
            out_dir: None,
            measure: MeasureConfig::default(),
            battery: BatterySpec::default(),
            tolerances: Tolerances::default(),
            stability: StabilitySection::default(),
            beta_profile: BetaProfileSection::default(),
            convert_phi: ConvertPhiSection::default(),
            convert_beta: ConvertBetaSection::default(),
            muckenhoupt: MuckenhouptSection::default(),
            spectral: SpectralSection::default(),
            tensor: TensorSection::default(),
            entropic: EntropicSection::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub level: Option<u32>,
    pub seed: Option<u64>,
    pub mesh: Option<Vec<usize>>,
    pub measure: Option<String>,
    pub beta: Option<String>,
    pub phi: Option<String>,
    pub c_phi: Option<f64>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if let Some(l) = o.level {
            self.level = l;
        }
        if let Some(s) = o.seed {
            self.battery.seed = s;
        }
        if let Some(m) = &o.mesh {
            if let Some(&last) = m.last() {
                self.beta_profile.eigen_mesh = last;
            }
            self.spectral.meshes = m.clone();
        }
        if let Some(m) = &o.measure {
            self.measure = MeasureConfig::parse(m)?;
        }
        if let Some(b) = &o.beta {
            let b = parse_beta(b)?;
            self.muckenhoupt.beta = b;
            self.convert_beta.beta = b;
        }
        if let Some(p) = &o.phi {
            let p = parse_phi(p)?;
            self.convert_phi.phi = p;
            self.convert_beta.phi = p;
            self.tensor.phi = p;
        }
        if let Some(c) = o.c_phi {
            self.convert_phi.c_phi = c;
        }
        self.validate()
    }

    /// Checks everything that does not need numerics.
    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |m: String| Err(CliError::Config(m));
        for (name, l) in [("level", self.level), ("tensor.level", self.tensor.level), ("entropic.level", self.entropic.level)] {
            if !(1..=MAX_LEVEL).contains(&l) {
                return cfg(format!("{name} = {l} outside 1..={MAX_LEVEL}"));
            }
        }
        self.battery.validate().map_err(CliError::Config)?;
        let t = &self.tolerances;
        if [t.identity, t.admissibility, t.rothaus, t.eigen_vs_cutoff].iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return cfg("tolerances must be finite and ≥ 0".into());
        }
        let bp = &self.beta_profile;
        if bp.s_grid.is_none() && bp.points > 0 && !(bp.s_min >= 1.0 && bp.s_max >= bp.s_min && bp.s_max <= 1e6) {
            return cfg(format!("beta_profile needs 1 ≤ s_min ≤ s_max ≤ 1e6, got [{}, {}]", bp.s_min, bp.s_max));
        }
        if bp.grid().iter().any(|s| !(1.0..=1e6).contains(s)) {
            return cfg("beta_profile.s_grid must lie in [1, 1e6]".into());
        }
        if bp.eigen_iters == 0 || self.spectral.beta_iters == 0 {
            return cfg("eigen iteration counts must be ≥ 1".into());
        }
        if self.spectral.meshes.is_empty() {
            return cfg("spectral.meshes is empty".into());
        }
        if self.spectral.beta_s.iter().chain(&self.muckenhoupt.s_values).any(|s| !(*s >= 1.0)) {
            return cfg("s values must be ≥ 1".into());
        }
        if self.tensor.factors.len() != 2 {
            return cfg(format!("tensor.factors needs 2 entries, got {}", self.tensor.factors.len()));
        }
        if !(1..=2).contains(&self.entropic.factors.len()) {
            return cfg(format!("entropic.factors needs 1 or 2 entries, got {}", self.entropic.factors.len()));
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))[..16].to_string()
    }

    pub fn product(factors: &[MeasureConfig]) -> Result<ProductMeasure, CliError> {
        let ms = factors.iter().map(MeasureConfig::build).collect::<Result<Vec<_>, _>>()?;
        Ok(ProductMeasure::new(ms)?)
    }
}
