use std::f64::consts::TAU;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use bews_core::analysis::{BodeGrid, IdentificationSettings};
use bews_core::estimators::{EstimateLimits, EstimatorGains, FeedbackSign, GainName};
use bews_core::sim::{EstimatorChoice, Scenario};
use bews_core::turbine::{
    default_surface, ConeCoefficientSurface, Harmonic, RotorParams, SurrogateCoefficients,
    WindFieldConfig,
};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub rotor: RotorSection,
    pub surface: SurfaceSection,
    pub wind: WindSection,
    pub estimator: EstimatorSection,
    pub simulation: SimulationSection,
    pub bode: BodeSection,
    pub verify: VerifySection,
    pub compare: CompareSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RotorSection {
    /// m
    pub radius: f64,
    /// kg/m^3
    pub air_density: f64,
    /// rad/s
    pub rotor_speed: f64,
}

impl Default for RotorSection {
    fn default() -> Self {
        let p = RotorParams::default();
        Self {
            radius: p.radius,
            air_density: p.air_density,
            rotor_speed: p.rotor_speed,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurfaceSection {
    /// Cone-coefficient table, relative to the config file.
    pub table: Option<PathBuf>,
    pub surrogate: Option<SurrogateSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateSection {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub azimuth_amplitude: f64,
}

impl Default for SurrogateSection {
    fn default() -> Self {
        let s = SurrogateCoefficients::default();
        Self {
            c0: s.c0,
            c1: s.c1,
            c2: s.c2,
            azimuth_amplitude: s.azimuth_amplitude,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindSection {
    pub mean: f64,
    pub shear: f64,
    pub tower_shadow: f64,
    pub tower_shadow_width: f64,
    pub harmonics: Vec<HarmonicSection>,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for WindSection {
    fn default() -> Self {
        let w = WindFieldConfig::default();
        Self {
            mean: w.mean,
            shear: w.shear,
            tower_shadow: w.tower_shadow,
            tower_shadow_width: w.tower_shadow_width,
            harmonics: Vec::new(),
            noise_std: w.noise_std,
            seed: w.seed,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarmonicSection {
    pub multiple: u32,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorSection {
    pub choice: EstimatorChoice,
    pub k_col: f64,
    pub k_0: f64,
    /// Defaults to the value mapped from `k_0`.
    pub k_p: Option<f64>,
    /// Defaults to the value mapped from `k_col`.
    pub k_i: Option<f64>,
    pub feedback_sign: FeedbackSign,
    /// m/s
    pub initial_estimate: f64,
    pub min_estimate: f64,
    pub max_estimate: f64,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        Self {
            choice: EstimatorChoice::Both,
            k_col: 0.6,
            k_0: 1.2,
            k_p: None,
            k_i: None,
            feedback_sign: FeedbackSign::Negative,
            initial_estimate: 8.0,
            min_estimate: EstimateLimits::DEFAULT.min,
            max_estimate: EstimateLimits::DEFAULT.max,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    /// s
    pub dt: f64,
    /// s; defaults to 60 revolutions.
    pub duration: Option<f64>,
    /// rad
    pub initial_azimuth: f64,
    /// Nm per m/s; defaults to the nominal moment sensitivity.
    pub residual_scale: Option<f64>,
    pub divergence_revolutions: f64,
    /// Revolutions at the end of the run used for metrics.
    pub metrics_window_revolutions: f64,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            dt: 0.005,
            duration: None,
            initial_azimuth: 0.0,
            residual_scale: None,
            divergence_revolutions: 5.0,
            metrics_window_revolutions: 10.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BodeSection {
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub points: usize,
    pub peak_offsets: Vec<f64>,
    pub diagonal_only: bool,
    /// Also export the PIN transfer matrix.
    pub include_pin: bool,
}

impl Default for BodeSection {
    fn default() -> Self {
        let g = BodeGrid::default();
        Self {
            min_ratio: g.min_ratio,
            max_ratio: g.max_ratio,
            points: g.points,
            peak_offsets: g.peak_offsets,
            diagonal_only: false,
            include_pin: false,
        }
    }
}

impl BodeSection {
    pub fn grid(&self) -> BodeGrid {
        BodeGrid {
            min_ratio: self.min_ratio,
            max_ratio: self.max_ratio,
            points: self.points,
            peak_offsets: self.peak_offsets.clone(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub equivalence_points: usize,
    pub equivalence_tolerance: f64,
    pub grid_min_ratio: f64,
    pub grid_max_ratio: f64,
    pub grid_points: usize,
    pub magnitude_tolerance: f64,
    pub phase_tolerance_deg: f64,
    pub amplitude: f64,
    pub cycles: usize,
    pub transient_cycles: usize,
    pub steps_per_period: usize,
}

impl Default for VerifySection {
    fn default() -> Self {
        let s = IdentificationSettings::default();
        Self {
            equivalence_points: 1000,
            equivalence_tolerance: 1e-12,
            grid_min_ratio: 0.05,
            grid_max_ratio: 5.0,
            grid_points: 20,
            magnitude_tolerance: 0.01,
            phase_tolerance_deg: 1.0,
            amplitude: s.amplitude,
            cycles: s.cycles,
            transient_cycles: s.transient_cycles,
            steps_per_period: s.steps_per_period,
        }
    }
}

impl VerifySection {
    pub fn identification(&self) -> IdentificationSettings {
        IdentificationSettings {
            amplitude: self.amplitude,
            cycles: self.cycles,
            transient_cycles: self.transient_cycles,
            steps_per_period: self.steps_per_period,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    pub window_revolutions: f64,
    /// Shear values to sweep; empty runs the configured wind once.
    pub shear_amplitudes: Vec<f64>,
    /// Coleman may exceed PIN by this much and still count as a tie.
    pub tie_tolerance: f64,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            window_revolutions: 10.0,
            shear_amplitudes: Vec::new(),
            tie_tolerance: 1e-9,
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub perturbations: Vec<(GainName, f64)>,
}

pub fn parse_perturbation(arg: &str) -> Result<(GainName, f64), String> {
    let (name, pct) = arg
        .split_once(':')
        .ok_or_else(|| format!("expected <name>:<percent>, got '{arg}'"))?;
    let gain = name.trim().parse::<GainName>()?;
    let pct = pct
        .trim()
        .trim_end_matches('%')
        .parse::<f64>()
        .map_err(|e| format!("invalid percentage '{pct}': {e}"))?;
    if !pct.is_finite() {
        return Err(format!("invalid percentage '{pct}'"));
    }
    Ok((gain, pct))
}

/// A parsed config with everything resolved that the commands need.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: Config,
    pub scenario: Scenario,
}

impl Resolved {
    pub fn rotor_speed(&self) -> f64 {
        self.scenario.rotor.rotor_speed
    }
}

pub fn load(path: &Path, overrides: &Overrides) -> Result<Resolved, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let config: Config =
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    resolve(config, base, overrides)
}

pub fn resolve(config: Config, base: &Path, overrides: &Overrides) -> Result<Resolved, CliError> {
    let bad = |m: String| CliError::Config(m);
    let r = &config.rotor;
    let rotor =
        RotorParams::new(r.radius, r.air_density, r.rotor_speed).map_err(|e| bad(e.to_string()))?;

    let surface = match (&config.surface.table, &config.surface.surrogate) {
        (Some(_), Some(_)) => {
            return Err(bad(
                "surface: give either a table or surrogate coefficients, not both".into(),
            ))
        }
        (Some(table), None) => ConeCoefficientSurface::from_table_file(&base.join(table))
            .map_err(|e| bad(format!("surface: {e}")))?,
        (None, Some(s)) => ConeCoefficientSurface::from_surrogate(&SurrogateCoefficients {
            c0: s.c0,
            c1: s.c1,
            c2: s.c2,
            azimuth_amplitude: s.azimuth_amplitude,
        }),
        (None, None) => default_surface(),
    };

    let w = &config.wind;
    let wind = WindFieldConfig {
        mean: w.mean,
        shear: w.shear,
        tower_shadow: w.tower_shadow,
        tower_shadow_width: w.tower_shadow_width,
        harmonics: w
            .harmonics
            .iter()
            .map(|h| Harmonic {
                multiple: h.multiple,
                amplitude: h.amplitude,
                phase: h.phase,
            })
            .collect(),
        noise_std: w.noise_std,
        seed: overrides.seed.unwrap_or(w.seed),
    };

    let e = &config.estimator;
    let mapped = EstimatorGains::from_coleman(e.k_col, e.k_0, rotor.rotor_speed)
        .map_err(|e| bad(e.to_string()))?;
    let mut gains = EstimatorGains::new(
        e.k_p.unwrap_or(mapped.k_p()),
        e.k_i.unwrap_or(mapped.k_i()),
        e.k_col,
        e.k_0,
        rotor.rotor_speed,
    )
    .map_err(|e| bad(e.to_string()))?;
    for &(name, pct) in &overrides.perturbations {
        gains = gains
            .perturbed(name, pct)
            .map_err(|e| bad(format!("--perturb-gain: {e}")))?;
    }

    let s = &config.simulation;
    let mut scenario = Scenario::new(gains);
    scenario.rotor = rotor;
    scenario.surface = Arc::new(surface);
    scenario.wind = wind;
    scenario.estimator = e.choice;
    scenario.dt = s.dt;
    scenario.duration = s.duration.unwrap_or(60.0 * TAU / rotor.rotor_speed);
    scenario.initial_estimate = e.initial_estimate;
    scenario.initial_azimuth = s.initial_azimuth;
    scenario.feedback_sign = e.feedback_sign;
    scenario.residual_scale = s.residual_scale;
    scenario.limits = EstimateLimits {
        min: e.min_estimate,
        max: e.max_estimate,
    };
    scenario.divergence_revolutions = s.divergence_revolutions;
    scenario.validate().map_err(|e| bad(e.to_string()))?;

    if !(s.metrics_window_revolutions > 0.0) {
        return Err(bad(
            "simulation.metrics_window_revolutions must be positive".into(),
        ));
    }
    let b = &config.bode;
    if !(b.min_ratio > 0.0 && b.min_ratio <= b.max_ratio && b.points > 0) {
        return Err(bad(
            "bode: need 0 < min_ratio <= max_ratio and at least one point".into(),
        ));
    }
    if b.peak_offsets.iter().any(|d| !(*d > 0.0 && *d < 1.0)) {
        return Err(bad("bode.peak_offsets must lie in (0, 1)".into()));
    }
    let v = &config.verify;
    if !(v.grid_min_ratio > 0.0
        && v.grid_min_ratio <= v.grid_max_ratio
        && v.grid_points > 0
        && v.equivalence_points > 0)
    {
        return Err(bad(
            "verify: need 0 < grid_min_ratio <= grid_max_ratio and positive point counts".into(),
        ));
    }
    v.identification()
        .validate()
        .map_err(|e| bad(format!("verify: {e}")))?;
    let c = &config.compare;
    if !(c.window_revolutions > 0.0 && c.tie_tolerance >= 0.0) {
        return Err(bad(
            "compare: window_revolutions must be positive and tie_tolerance non-negative".into(),
        ));
    }
    if c.shear_amplitudes.iter().any(|s| !s.is_finite()) {
        return Err(bad("compare.shear_amplitudes must be finite".into()));
    }
    Ok(Resolved { config, scenario })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Resolved, CliError> {
        let config: Config = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        resolve(config, Path::new("."), &Overrides::default())
    }

    #[test]
    fn empty_document_gives_defaults() {
        let r = parse("").unwrap();
        assert_eq!(r.scenario.dt, 0.005);
        assert_eq!(r.scenario.gains.mapping_mismatch(), 0.0);
        assert!((r.scenario.duration - 300.0).abs() < 1e-9);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(parse("[wind]\nmeen = 3.0\n").is_err());
        assert!(parse("[extra]\n").is_err());
    }

    #[test]
    fn non_positive_step_is_rejected() {
        let err = parse("[simulation]\ndt = 0.0\n").unwrap_err();
        assert!(err.to_string().contains("dt"));
    }

    #[test]
    fn explicit_pin_gains_override_the_mapping() {
        let r = parse("[estimator]\nk_p = 0.5\n").unwrap();
        assert_eq!(r.scenario.gains.k_p(), 0.5);
        assert!(r.scenario.gains.mapping_mismatch() > 0.1);
    }

    #[test]
    fn surface_sources_are_exclusive() {
        assert!(parse("[surface]\ntable = \"x.txt\"\n[surface.surrogate]\nc0 = 0.4\n").is_err());
    }

    #[test]
    fn perturbation_argument() {
        assert_eq!(parse_perturbation("k_p:5").unwrap(), (GainName::Kp, 5.0));
        assert_eq!(
            parse_perturbation("k0:-2.5%").unwrap(),
            (GainName::K0, -2.5)
        );
        assert!(parse_perturbation("k_x:5").is_err());
        assert!(parse_perturbation("k_p").is_err());
        assert!(parse_perturbation("k_p:abc").is_err());
    }

    #[test]
    fn overrides_apply() {
        let config: Config = toml::from_str("").unwrap();
        let o = Overrides {
            seed: Some(99),
            perturbations: vec![(GainName::Ki, 10.0)],
        };
        let r = resolve(config, Path::new("."), &o).unwrap();
        assert_eq!(r.scenario.wind.seed, 99);
        assert!((r.scenario.gains.k_i() - 0.22).abs() < 1e-12);
    }
}
