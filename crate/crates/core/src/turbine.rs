//! Surrogate three-bladed rotor: per-blade wind field and the out-of-plane
//! blade root moment through a tabulated cone coefficient `C_m(lambda, psi)`.

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coleman::{AzimuthTriplet, BladeTriplet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TurbineError {
    #[error("rotor parameter {name} must be finite and strictly positive, got {value}")]
    InvalidRotorParam { name: &'static str, value: f64 },
    #[error("tip-speed ratio {lambda} outside the surface envelope [{min}, {max}]")]
    OutOfEnvelope { lambda: f64, min: f64, max: f64 },
    #[error("wind speed must be positive, blade {blade} got {value} m/s at t = {time} s")]
    NonPositiveWind { blade: usize, value: f64, time: f64 },
    #[error("invalid wind configuration: {0}")]
    InvalidWind(String),
    #[error("invalid cone coefficient surface: {0}")]
    InvalidSurface(String),
    #[error("cannot read surface table {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotorParams {
    /// m
    pub radius: f64,
    /// kg/m^3
    pub air_density: f64,
    /// rad/s
    pub rotor_speed: f64,
}

impl Default for RotorParams {
    fn default() -> Self {
        Self {
            radius: 60.0,
            air_density: 1.225,
            rotor_speed: TAU * 0.2,
        }
    }
}

impl RotorParams {
    pub fn new(radius: f64, air_density: f64, rotor_speed: f64) -> Result<Self, TurbineError> {
        let p = Self {
            radius,
            air_density,
            rotor_speed,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), TurbineError> {
        for (name, value) in [
            ("radius", self.radius),
            ("air_density", self.air_density),
            ("rotor_speed", self.rotor_speed),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(TurbineError::InvalidRotorParam { name, value });
            }
        }
        Ok(())
    }

    pub fn swept_area(&self) -> f64 {
        PI * self.radius * self.radius
    }

    /// Rotor revolution period in seconds.
    pub fn period(&self) -> f64 {
        TAU / self.rotor_speed
    }

    pub fn tip_speed_ratio(&self, rotor_speed: f64, wind: f64) -> f64 {
        rotor_speed * self.radius / wind
    }

    pub fn dynamic_pressure(&self, wind: f64) -> f64 {
        0.5 * self.air_density * wind * wind
    }
}

/// Coefficients of the analytic surrogate
/// `C_m = (c0 + c1 lambda + c2 lambda^2) (1 + a cos psi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateCoefficients {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub azimuth_amplitude: f64,
}

impl Default for SurrogateCoefficients {
    fn default() -> Self {
        Self {
            c0: 0.5,
            c1: -0.02,
            c2: 0.0004,
            azimuth_amplitude: 0.05,
        }
    }
}

impl SurrogateCoefficients {
    pub fn eval(&self, lambda: f64, psi: f64) -> f64 {
        (self.c0 + self.c1 * lambda + self.c2 * lambda * lambda)
            * (1.0 + self.azimuth_amplitude * psi.cos())
    }
}

/// Bilinear table over tip-speed ratio and azimuth. Azimuth wraps with
/// period `2pi`; tip-speed ratio is bounded by the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeCoefficientSurface {
    lambdas: Vec<f64>,
    azimuths: Vec<f64>,
    /// Row-major: `values[a * lambdas.len() + l]`.
    values: Vec<f64>,
}

pub const DEFAULT_LAMBDA_RANGE: (f64, f64) = (2.0, 20.0);
pub const DEFAULT_LAMBDA_SPACING: f64 = 0.1;
pub const DEFAULT_AZIMUTH_NODES: usize = 64;

impl ConeCoefficientSurface {
    pub fn new(
        lambdas: Vec<f64>,
        azimuths: Vec<f64>,
        values: Vec<f64>,
    ) -> Result<Self, TurbineError> {
        let bad = |m: &str| Err(TurbineError::InvalidSurface(m.to_string()));
        if lambdas.len() < 2 {
            return bad("need at least two tip-speed ratio breakpoints");
        }
        if azimuths.is_empty() {
            return bad("need at least one azimuth breakpoint");
        }
        if values.len() != lambdas.len() * azimuths.len() {
            return bad("value count does not match the grid");
        }
        if lambdas
            .iter()
            .chain(&azimuths)
            .chain(&values)
            .any(|v| !v.is_finite())
        {
            return bad("non-finite entry");
        }
        if lambdas.windows(2).any(|w| w[1] <= w[0]) || lambdas[0] <= 0.0 {
            return bad("tip-speed ratio breakpoints must be positive and strictly increasing");
        }
        if azimuths.windows(2).any(|w| w[1] <= w[0])
            || azimuths[0] < 0.0
            || *azimuths.last().unwrap() >= TAU
        {
            return bad("azimuth breakpoints must be strictly increasing within [0, 2pi)");
        }
        Ok(Self {
            lambdas,
            azimuths,
            values,
        })
    }

    /// Tabulates the analytic surrogate on the default grid.
    pub fn from_surrogate(coeffs: &SurrogateCoefficients) -> Self {
        let (lo, hi) = DEFAULT_LAMBDA_RANGE;
        let n = ((hi - lo) / DEFAULT_LAMBDA_SPACING).round() as usize + 1;
        let lambdas: Vec<f64> = (0..n)
            .map(|k| lo + k as f64 * DEFAULT_LAMBDA_SPACING)
            .collect();
        let azimuths: Vec<f64> = (0..DEFAULT_AZIMUTH_NODES)
            .map(|k| k as f64 * TAU / DEFAULT_AZIMUTH_NODES as f64)
            .collect();
        let values = azimuths
            .iter()
            .flat_map(|&psi| lambdas.iter().map(move |&l| coeffs.eval(l, psi)))
            .collect();
        Self {
            lambdas,
            azimuths,
            values,
        }
    }

    pub fn lambda_range(&self) -> (f64, f64) {
        (self.lambdas[0], *self.lambdas.last().unwrap())
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn azimuths(&self) -> &[f64] {
        &self.azimuths
    }

    pub fn node(&self, azimuth_index: usize, lambda_index: usize) -> f64 {
        self.values[azimuth_index * self.lambdas.len() + lambda_index]
    }

    /// Bilinear lookup.
    pub fn eval(&self, lambda: f64, psi: f64) -> Result<f64, TurbineError> {
        let (min, max) = self.lambda_range();
        if !(lambda >= min && lambda <= max) {
            return Err(TurbineError::OutOfEnvelope { lambda, min, max });
        }
        let nl = self.lambdas.len();
        let l1 = self
            .lambdas
            .partition_point(|&x| x <= lambda)
            .clamp(1, nl - 1);
        let l0 = l1 - 1;
        let tl = (lambda - self.lambdas[l0]) / (self.lambdas[l1] - self.lambdas[l0]);

        let na = self.azimuths.len();
        let psi = psi.rem_euclid(TAU);
        let (a0, a1, ta) = if na == 1 {
            (0, 0, 0.0)
        } else {
            let hi = self.azimuths.partition_point(|&x| x <= psi);
            if hi == 0 {
                // Before the first node: wrap from the last one.
                let lo_psi = self.azimuths[na - 1] - TAU;
                (na - 1, 0, (psi - lo_psi) / (self.azimuths[0] - lo_psi))
            } else if hi == na {
                let hi_psi = self.azimuths[0] + TAU;
                let lo_psi = self.azimuths[na - 1];
                (na - 1, 0, (psi - lo_psi) / (hi_psi - lo_psi))
            } else {
                let (lo_psi, hi_psi) = (self.azimuths[hi - 1], self.azimuths[hi]);
                (hi - 1, hi, (psi - lo_psi) / (hi_psi - lo_psi))
            }
        };
        let row = |a: usize| self.node(a, l0) * (1.0 - tl) + self.node(a, l1) * tl;
        Ok(row(a0) * (1.0 - ta) + row(a1) * ta)
    }

    /// Parses the delimited table format: the first row holds tip-speed ratio
    /// breakpoints (its first cell is a label and ignored), each following row
    /// an azimuth breakpoint in radians followed by `C_m` values. Commas or
    /// whitespace separate cells; `#` starts a comment.
    pub fn from_table_str(text: &str) -> Result<Self, TurbineError> {
        let invalid = |m: String| TurbineError::InvalidSurface(m);
        let mut rows = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .enumerate()
            .filter(|(_, l)| !l.is_empty())
            .map(|(n, l)| {
                (
                    n + 1,
                    l.split(|c: char| c == ',' || c.is_whitespace())
                        .filter(|c| !c.is_empty())
                        .collect::<Vec<_>>(),
                )
            });
        let parse = |line: usize, cell: &str| {
            cell.parse::<f64>()
                .map_err(|_| invalid(format!("line {line}: cannot parse '{cell}'")))
        };
        let (hline, header) = rows.next().ok_or_else(|| invalid("empty table".into()))?;
        let lambdas = header[1..]
            .iter()
            .map(|c| parse(hline, c))
            .collect::<Result<Vec<_>, _>>()?;
        let mut azimuths = Vec::new();
        let mut values = Vec::new();
        for (line, cells) in rows {
            if cells.len() != lambdas.len() + 1 {
                return Err(invalid(format!(
                    "line {line}: expected {} cells, found {}",
                    lambdas.len() + 1,
                    cells.len()
                )));
            }
            azimuths.push(parse(line, cells[0])?);
            for cell in &cells[1..] {
                values.push(parse(line, cell)?);
            }
        }
        Self::new(lambdas, azimuths, values)
    }

    pub fn from_table_file(path: &Path) -> Result<Self, TurbineError> {
        let text = std::fs::read_to_string(path).map_err(|e| TurbineError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_table_str(&text)
    }

    pub fn to_table_string(&self) -> String {
        let mut out = String::from("psi\\lambda");
        for l in &self.lambdas {
            let _ = write!(out, ",{l}");
        }
        out.push('\n');
        for (a, psi) in self.azimuths.iter().enumerate() {
            let _ = write!(out, "{psi}");
            for l in 0..self.lambdas.len() {
                let _ = write!(out, ",{}", self.node(a, l));
            }
            out.push('\n');
        }
        out
    }
}

/// Surrogate surface with the default coefficients.
pub fn default_surface() -> ConeCoefficientSurface {
    ConeCoefficientSurface::from_surrogate(&SurrogateCoefficients::default())
}

/// Out-of-plane blade root moment `q * pi R^2 * R * C_m(lambda, psi)` in Nm.
pub fn moment(
    params: &RotorParams,
    surface: &ConeCoefficientSurface,
    rotor_speed: f64,
    wind: f64,
    dynamic_pressure: f64,
    psi: f64,
) -> Result<f64, TurbineError> {
    if !(wind > 0.0) {
        return Err(TurbineError::NonPositiveWind {
            blade: 0,
            value: wind,
            time: f64::NAN,
        });
    }
    let lambda = params.tip_speed_ratio(rotor_speed, wind);
    let cm = surface.eval(lambda, psi)?;
    Ok(dynamic_pressure * params.swept_area() * params.radius * cm)
}

/// Moment with the dynamic pressure taken from the same wind speed.
pub fn moment_at(
    params: &RotorParams,
    surface: &ConeCoefficientSurface,
    rotor_speed: f64,
    wind: f64,
    psi: f64,
) -> Result<f64, TurbineError> {
    moment(
        params,
        surface,
        rotor_speed,
        wind,
        params.dynamic_pressure(wind),
        psi,
    )
}

/// Per-blade moments for a wind triplet.
pub fn blade_moments(
    params: &RotorParams,
    surface: &ConeCoefficientSurface,
    rotor_speed: f64,
    wind: &BladeTriplet,
    az: &AzimuthTriplet,
) -> Result<BladeTriplet, TurbineError> {
    let mut out = [0.0; 3];
    for (i, m) in out.iter_mut().enumerate() {
        *m = moment_at(params, surface, rotor_speed, wind[i], az.blade(i))?;
    }
    Ok(BladeTriplet(out))
}

/// Wind speed range that keeps the tip-speed ratio inside the surface grid.
pub fn wind_envelope(
    params: &RotorParams,
    surface: &ConeCoefficientSurface,
    rotor_speed: f64,
) -> (f64, f64) {
    let (lmin, lmax) = surface.lambda_range();
    let tip = rotor_speed * params.radius;
    (tip / lmax, tip / lmin)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    /// Multiple of the rotor frequency.
    pub multiple: u32,
    /// m/s
    pub amplitude: f64,
    /// rad
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindFieldConfig {
    /// Rotor-averaged mean wind, m/s.
    pub mean: f64,
    /// Relative 1P amplitude from vertical shear.
    pub shear: f64,
    /// Relative depth of the tower-shadow dip at `psi_i = pi`.
    pub tower_shadow: f64,
    /// Gaussian half-width of the tower-shadow dip, rad.
    pub tower_shadow_width: f64,
    pub harmonics: Vec<Harmonic>,
    /// m/s
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for WindFieldConfig {
    fn default() -> Self {
        Self::uniform(10.0)
    }
}

impl WindFieldConfig {
    pub fn uniform(mean: f64) -> Self {
        Self {
            mean,
            shear: 0.0,
            tower_shadow: 0.0,
            tower_shadow_width: 0.25,
            harmonics: Vec::new(),
            noise_std: 0.0,
            seed: 0,
        }
    }

    pub fn sheared(mean: f64, shear: f64) -> Self {
        Self {
            shear,
            ..Self::uniform(mean)
        }
    }

    pub fn validate(&self) -> Result<(), TurbineError> {
        let err = |m: &str| Err(TurbineError::InvalidWind(m.to_string()));
        if !(self.mean.is_finite() && self.mean > 0.0) {
            return err("mean wind must be finite and positive");
        }
        if !self.shear.is_finite() || !self.tower_shadow.is_finite() {
            return err("shear and tower shadow must be finite");
        }
        if !(self.tower_shadow_width.is_finite() && self.tower_shadow_width > 0.0) {
            return err("tower shadow width must be positive");
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return err("noise standard deviation must be non-negative");
        }
        if self
            .harmonics
            .iter()
            .any(|h| h.multiple == 0 || !h.amplitude.is_finite() || !h.phase.is_finite())
        {
            return err("harmonics need a positive multiple and finite amplitude and phase");
        }
        Ok(())
    }

    /// Deterministic part of the blade wind at azimuth `psi`.
    fn deterministic(&self, psi: f64) -> f64 {
        let wrapped = (psi - PI).rem_euclid(TAU);
        let offset = if wrapped > PI { wrapped - TAU } else { wrapped };
        let shadow = self.tower_shadow * (-(offset / self.tower_shadow_width).powi(2)).exp();
        let harmonics: f64 = self
            .harmonics
            .iter()
            .map(|h| h.amplitude * (h.multiple as f64 * psi + h.phase).cos())
            .sum();
        self.mean * (1.0 + self.shear * psi.cos() - shadow) + harmonics
    }
}

/// True blade-effective wind speeds at time `t`.
///
/// Noise, when enabled, is drawn from a generator keyed on the seed and the
/// bit pattern of `t`, so the result is a pure function of its inputs.
pub fn bews_true(
    cfg: &WindFieldConfig,
    az: &AzimuthTriplet,
    t: f64,
) -> Result<BladeTriplet, TurbineError> {
    let mut out = az.as_array().map(|psi| cfg.deterministic(psi));
    if cfg.noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(t.to_bits());
        for v in &mut out {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += cfg.noise_std * z;
        }
    }
    for (blade, &value) in out.iter().enumerate() {
        if !(value > 0.0) {
            return Err(TurbineError::NonPositiveWind {
                blade,
                value,
                time: t,
            });
        }
    }
    Ok(BladeTriplet(out))
}
