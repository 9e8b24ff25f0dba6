//! Scenario configuration: one TOML file, every table closed to unknown keys.

use std::path::Path;

use dsswave_core::resolvent::{ResidueConfig, StripConfig};
use dsswave_core::{
    ChartConfig, CutoffConfig, EvolutionConfig, FitConfig, Geometry, GeometryConfig, MellinConfig, RadialGrid,
    SearchBox, SearchConfig, SpacetimeParams,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// Seed for jittered sample points.
    pub seed: u64,
    pub spacetime: SpacetimeParams,
    pub geometry: GeometryConfig,
    pub charts: ChartConfig,
    pub grid: GridSpec,
    pub evolution: EvolutionConfig,
    pub initial: InitialData,
    pub fit: FitConfig,
    pub resonances: ResonanceSpec,
    pub strip: StripSpec,
    pub mellin: MellinSpec,
    pub acceptance: AcceptanceConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 20_240_917,
            spacetime: SpacetimeParams::new(1.0, 0.02),
            geometry: GeometryConfig::default(),
            charts: ChartConfig::default(),
            grid: GridSpec::default(),
            evolution: EvolutionConfig::default(),
            initial: InitialData::default(),
            fit: FitConfig::default(),
            resonances: ResonanceSpec::default(),
            strip: StripSpec::default(),
            mellin: MellinSpec::default(),
            acceptance: AcceptanceConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    /// `kappa_bh r_* >= -extent` and `kappa_dS r_* <= extent`.
    Normalized,
    /// `r_*` in the interval `r_star`.
    Uniform,
}

/// Radial grid; the spacing is `evolution.spacing`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub kind: GridKind,
    pub extent: f64,
    pub r_star: [f64; 2],
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { kind: GridKind::Normalized, extent: 80.0, r_star: [-80.0, 80.0] }
    }
}

impl GridSpec {
    pub fn build(&self, geom: &Geometry, spacing: f64) -> dsswave_core::Result<RadialGrid> {
        match self.kind {
            GridKind::Normalized => RadialGrid::surface_gravity_normalized(geom, self.extent, spacing),
            GridKind::Uniform => RadialGrid::uniform(geom, self.r_star[0], self.r_star[1], spacing),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Velocity {
    /// `pi = 0`.
    Zero,
    /// `pi = phi`.
    Phi,
    /// Profile moving towards the black hole.
    Ingoing,
    /// Profile moving towards the cosmological horizon.
    Outgoing,
}

/// Gaussian `amplitude exp(-((r_* - center) / width)^2)` with a velocity rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Profile {
    pub center: f64,
    pub width: f64,
    pub amplitude: f64,
    pub velocity: Velocity,
}

impl Default for Profile {
    fn default() -> Self {
        Self { center: 0.0, width: 3.0, amplitude: 1.0, velocity: Velocity::Phi }
    }
}

impl Profile {
    pub fn phi(&self, r_star: f64) -> f64 {
        self.amplitude * (-((r_star - self.center) / self.width).powi(2)).exp()
    }

    pub fn pi(&self, r_star: f64) -> f64 {
        let slope = -2.0 * (r_star - self.center) / (self.width * self.width) * self.phi(r_star);
        match self.velocity {
            Velocity::Zero => 0.0,
            Velocity::Phi => self.phi(r_star),
            Velocity::Ingoing => slope,
            Velocity::Outgoing => -slope,
        }
    }

    pub fn state(&self, grid: &RadialGrid, ell: u32) -> dsswave_core::WaveState {
        let mut s = dsswave_core::WaveState::from_fn(grid, ell, |x| self.phi(x));
        s.pi = grid.nodes.iter().map(|n| if n.r == 0.0 { 0.0 } else { self.pi(n.r_star) }).collect();
        s
    }

    fn validate(&self, what: &str) -> Result<()> {
        if !(self.width > 0.0) || !self.center.is_finite() || !self.amplitude.is_finite() {
            return Err(CliError::Config(format!("{what}: width must be positive and all values finite")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    /// The profile in every channel of `channels`.
    Mode,
    /// Full field `u = profile(r_*) (1 + dipole cos theta) / r`, projected on `l <= l_max`.
    Field,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialData {
    pub kind: InitialKind,
    pub channels: Vec<u32>,
    pub profile: Profile,
    pub l_max: usize,
    pub dipole: f64,
    /// Field points `(r_*, theta, phi)`; each `r_*` must be an evolution probe.
    pub points: Vec<[f64; 3]>,
    pub quadrature_threshold: f64,
}

impl Default for InitialData {
    fn default() -> Self {
        Self {
            kind: InitialKind::Mode,
            channels: vec![0],
            profile: Profile::default(),
            l_max: 2,
            dipole: 0.5,
            points: vec![[0.0, 0.5, 0.0]],
            quadrature_threshold: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub ell: u32,
    pub re: [f64; 2],
    pub im: [f64; 2],
}

impl BoxSpec {
    pub fn search_box(&self) -> SearchBox {
        SearchBox::new(self.re, self.im)
    }

    fn validate(&self) -> Result<()> {
        if !(self.re[1] > self.re[0]) || !(self.im[1] > self.im[0]) {
            return Err(CliError::Config(format!("empty search box {:?} x {:?}", self.re, self.im)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResonanceSpec {
    pub boxes: Vec<BoxSpec>,
    pub search: SearchConfig,
}

impl Default for ResonanceSpec {
    fn default() -> Self {
        Self {
            boxes: vec![
                BoxSpec { ell: 0, re: [-0.2, 0.2], im: [-0.05, 0.12] },
                BoxSpec { ell: 1, re: [-0.4, 0.4], im: [-0.05, 0.15] },
            ],
            search: SearchConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StripSpec {
    pub ells: Vec<u32>,
    /// Values of `Im sigma` scanned.
    pub heights: Vec<f64>,
    pub re_range: [f64; 2],
    pub count: usize,
    pub delta: f64,
    pub scan: StripConfig,
}

impl Default for StripSpec {
    fn default() -> Self {
        Self {
            ells: vec![0, 1],
            heights: vec![-0.5, 0.04],
            re_range: [0.5, 10.0],
            count: 6,
            delta: 0.05,
            scan: StripConfig::default(),
        }
    }
}

/// Cut-off run and contour reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MellinSpec {
    pub ell: u32,
    /// Normalized extent of the run grid.
    pub extent: f64,
    pub profile: Profile,
    pub probes: Vec<f64>,
    pub t_end: f64,
    pub cutoff: CutoffConfig,
    pub reconstruction: MellinConfig,
}

impl Default for MellinSpec {
    fn default() -> Self {
        Self {
            ell: 0,
            extent: 20.0,
            profile: Profile::default(),
            probes: vec![-20.0, 0.0, 20.0],
            t_end: 300.0,
            cutoff: CutoffConfig::default(),
            reconstruction: MellinConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeFit {
    pub r_star: f64,
    pub window: [f64; 2],
}

/// One channel evolved on the normalized desk-scale grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TailRun {
    pub profile: Profile,
    pub t_end: f64,
    pub probes: Vec<ProbeFit>,
}

impl Default for TailRun {
    fn default() -> Self {
        Self { profile: Profile::default(), t_end: 300.0, probes: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryChecks {
    pub extremal_lambda: f64,
    pub schwarzschild_lambda: f64,
    pub schwarzschild_tol: f64,
    pub root_sum_tol: f64,
}

impl Default for GeometryChecks {
    fn default() -> Self {
        Self { extremal_lambda: 1.0 / 9.0, schwarzschild_lambda: 1e-6, schwarzschild_tol: 1e-4, root_sum_tol: 1e-12 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChartChecks {
    /// Largest `mu` of the Richardson sequence `mu0 / 2^j`.
    pub mu0: f64,
    pub richardson_tol: f64,
    pub coefficient_tol: f64,
    /// Negative control uses `lambda_bh * control_factor`.
    pub control_factor: f64,
    /// Admissible relative error of the `mu^{-1}` coefficient in the control.
    pub control_tol: f64,
    pub null_tol: f64,
    /// `|s_+ s_- - mu| <= product_ulps * eps * mu`.
    pub product_ulps: f64,
    pub pushforward_samples: usize,
    pub pushforward_tol: f64,
}

impl Default for ChartChecks {
    fn default() -> Self {
        Self {
            mu0: 1e-3,
            richardson_tol: 1e-6,
            coefficient_tol: 1e-9,
            control_factor: 1.1,
            control_tol: 0.05,
            null_tol: 1e-10,
            product_ulps: 4.0,
            pushforward_samples: 64,
            pushforward_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModeChecks {
    pub params: Vec<[f64; 2]>,
    pub l_max: u32,
    pub tol: f64,
}

impl Default for ModeChecks {
    fn default() -> Self {
        Self { params: vec![[1.0, 0.02], [1.0, 0.1], [0.5, 0.01]], l_max: 5, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheoremChecks {
    /// Normalized extent of the desk-scale grid.
    pub extent: f64,
    /// l = 0 run; the first probe is on the black-hole side, the last on the dS side.
    pub ell0: TailRun,
    /// Run for the lowest l = 1 resonance.
    pub ell1: TailRun,
    /// Channels that must converge to zero, evolved with the `ell1` data.
    pub zero_channels: Vec<u32>,
    pub zero_tol: f64,
    pub snapshot_every: f64,
    pub uniformity_region: [f64; 2],
    pub uniformity_start: f64,
    pub rate_agreement: f64,
    pub resonance_agreement: f64,
    pub triangle_tol: f64,
    /// Contour of the residue at zero on the desk-scale grid; its radius keeps
    /// the growth `exp(radius L)` over the grid length `L` moderate.
    pub residue: ResidueConfig,
    /// Gap box for l = 0 is `[-gap_re, gap_re] x [-gap_re / 2, gap_im_frac kappa_min]`.
    pub gap_re: f64,
    pub gap_im_frac: f64,
    /// Channels scanned pole free in `|Re|, |Im| < exclusion_frac kappa_min`.
    pub exclusion_ells: Vec<u32>,
    pub exclusion_frac: f64,
    pub zero_resonance_tol: f64,
    pub symmetry_tol: f64,
}

impl Default for TheoremChecks {
    fn default() -> Self {
        Self {
            extent: 80.0,
            ell0: TailRun {
                profile: Profile::default(),
                t_end: 300.0,
                probes: vec![
                    ProbeFit { r_star: -40.0, window: [100.0, 300.0] },
                    ProbeFit { r_star: 0.0, window: [100.0, 300.0] },
                    ProbeFit { r_star: 120.0, window: [150.0, 300.0] },
                ],
            },
            ell1: TailRun {
                profile: Profile { center: 70.0, width: 30.0, amplitude: 1.0, velocity: Velocity::Zero },
                t_end: 350.0,
                probes: vec![ProbeFit { r_star: 0.0, window: [220.0, 350.0] }],
            },
            zero_channels: vec![1, 2],
            zero_tol: 1e-6,
            snapshot_every: 10.0,
            uniformity_region: [-40.0, 120.0],
            uniformity_start: 100.0,
            rate_agreement: 0.1,
            resonance_agreement: 0.02,
            triangle_tol: 0.01,
            residue: ResidueConfig { radius: 1e-3, ..ResidueConfig::default() },
            gap_re: 0.1,
            gap_im_frac: 0.3,
            exclusion_ells: vec![1],
            exclusion_frac: 0.1,
            zero_resonance_tol: 1e-10,
            symmetry_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeSitterChecks {
    pub lambda: f64,
    pub ells: [u32; 2],
    pub ladder_terms: usize,
    pub ladder_max: usize,
    pub ladder_tol: f64,
    pub real_part_tol: f64,
    pub r_star_max: f64,
    pub spacing: f64,
    pub profile: Profile,
    pub probes: [f64; 2],
    pub t_end: f64,
    pub window: [f64; 2],
    pub fit: FitConfig,
    pub constant_tol: f64,
    pub rate_tol: f64,
}

impl Default for DeSitterChecks {
    fn default() -> Self {
        Self {
            lambda: 3.0,
            ells: [0, 2],
            ladder_terms: 60,
            ladder_max: 6,
            ladder_tol: 1e-4,
            real_part_tol: 1e-8,
            r_star_max: 30.0,
            spacing: 0.02,
            profile: Profile { center: 1.5, width: 0.3, amplitude: 1.0, velocity: Velocity::Phi },
            probes: [0.5, 1.5],
            t_end: 20.0,
            window: [8.0, 16.0],
            fit: FitConfig { nu_range: [0.01, 6.0], ..FitConfig::default() },
            constant_tol: 1e-6,
            rate_tol: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverChecks {
    pub order_spacings: [f64; 3],
    pub order_target: f64,
    pub order_tol: f64,
    pub energy_steps: usize,
    pub energy_tol: f64,
    pub dependence_tol: f64,
}

impl Default for SolverChecks {
    fn default() -> Self {
        Self {
            order_spacings: [0.2, 0.1, 0.05],
            order_target: 2.0,
            order_tol: 0.2,
            energy_steps: 10_000,
            energy_tol: 1e-4,
            dependence_tol: 1e-8,
        }
    }
}

/// Thresholds and set-ups of the acceptance battery.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcceptanceConfig {
    pub geometry: GeometryChecks,
    pub charts: ChartChecks,
    pub modes: ModeChecks,
    pub theorem: TheoremChecks,
    pub de_sitter: DeSitterChecks,
    pub solver: SolverChecks,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<(Self, Vec<u8>)> {
        let bytes =
            std::fs::read(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let text = std::str::from_utf8(&bytes).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Ok((Self::from_toml(text)?, bytes))
    }

    pub fn geometry(&self) -> dsswave_core::Result<Geometry> {
        Geometry::with_config(self.spacetime, &self.geometry)
    }

    /// Checks preconditions that do not require a run.
    pub fn validate(&self) -> Result<()> {
        let geom = self.geometry()?;
        let evo = &self.evolution;
        if !(evo.spacing > 0.0) || !(evo.cfl > 0.0) || !(evo.t_end > 0.0) || !(evo.record_every > 0.0) {
            return Err(CliError::Config("evolution: spacing, cfl, t_end and record_every must be positive".into()));
        }
        if evo.cfl > 1.0 {
            return Err(dsswave_core::Error::CflViolation { ratio: evo.cfl }.into());
        }
        if self.grid.kind == GridKind::Normalized && !(self.grid.extent > 0.0) {
            return Err(CliError::Config("grid: extent must be positive".into()));
        }
        if self.grid.kind == GridKind::Uniform && !(self.grid.r_star[1] > self.grid.r_star[0]) {
            return Err(CliError::Config("grid: r_star must be increasing".into()));
        }
        self.initial.profile.validate("initial.profile")?;
        if self.initial.kind == InitialKind::Mode && self.initial.channels.is_empty() {
            return Err(CliError::Config("initial: no channels".into()));
        }
        if geom.is_de_sitter() && self.initial.kind == InitialKind::Field {
            return Err(CliError::Config("initial: field data needs a black-hole geometry".into()));
        }
        let f = &self.fit;
        if !(f.nu_range[0] > 0.0 && f.nu_range[1] > f.nu_range[0]) || f.nested == 0 {
            return Err(CliError::Config("fit: nu_range must be positive and increasing, nested >= 1".into()));
        }
        for b in &self.resonances.boxes {
            b.validate()?;
        }
        if self.strip.count == 0 || !(self.strip.re_range[1] >= self.strip.re_range[0]) {
            return Err(CliError::Config("strip: count must be positive and re_range ordered".into()));
        }
        let m = &self.mellin;
        m.profile.validate("mellin.profile")?;
        if !(m.extent > 0.0) || !(m.t_end > 0.0) || m.probes.is_empty() {
            return Err(CliError::Config("mellin: extent, t_end and probes must be set".into()));
        }
        for &s in &m.reconstruction.heights {
            if !(s < 0.0) {
                return Err(dsswave_core::Error::ContourOutsideAnalyticity { height: s }.into());
            }
        }
        if m.reconstruction.window[1] > m.t_end || m.reconstruction.period < m.t_end {
            return Err(CliError::Config("mellin: window must end before t_end and period must exceed t_end".into()));
        }
        let th = &self.acceptance.theorem;
        for (name, run) in [("ell0", &th.ell0), ("ell1", &th.ell1)] {
            run.profile.validate(name)?;
            if run.probes.is_empty() {
                return Err(CliError::Config(format!("acceptance.theorem.{name}: no probes")));
            }
            for p in &run.probes {
                if !(p.window[0] < p.window[1] && p.window[1] <= run.t_end) {
                    return Err(CliError::Config(format!("acceptance.theorem.{name}: window {:?}", p.window)));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(ScenarioConfig::from_toml("").unwrap(), ScenarioConfig::default());
    }

    #[test]
    fn resolved_json_round_trips() {
        let cfg = ScenarioConfig::default();
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ScenarioConfig>(&json).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected_at_every_level() {
        for text in ["sed = 1", "[grid]\nextend = 3.0", "[acceptance.theorem.ell0.profile]\nwidht = 1.0", "[fit]\nnu = 1.0"] {
            assert!(ScenarioConfig::from_toml(text).is_err(), "{text}");
        }
    }

    #[test]
    fn profile_velocities() {
        let p = Profile { center: 1.0, width: 2.0, amplitude: 3.0, velocity: Velocity::Ingoing };
        let h = 1e-6;
        let slope = (p.phi(2.0 + h) - p.phi(2.0 - h)) / (2.0 * h);
        assert!((p.pi(2.0) - slope).abs() < 1e-8);
        let q = Profile { velocity: Velocity::Outgoing, ..p };
        assert_eq!(q.pi(2.0), -p.pi(2.0));
        let z = Profile { velocity: Velocity::Zero, ..p };
        assert_eq!(z.pi(2.0), 0.0);
    }

    #[test]
    fn validation_catches_bad_windows() {
        let mut cfg = ScenarioConfig::default();
        cfg.acceptance.theorem.ell1.probes[0].window = [220.0, 400.0];
        assert!(cfg.validate().is_err());
        let mut cfg = ScenarioConfig::default();
        cfg.initial.profile.width = 0.0;
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
    }
}
