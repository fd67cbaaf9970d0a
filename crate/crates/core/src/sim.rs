//! Closed-loop scenario runner: wind field, turbine moments, residuals and
//! estimator(s) advanced on one fixed time grid.

use std::io::{self, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coleman::{AzimuthTriplet, BladeTriplet};
use crate::estimators::{
    residuals, ColemanEstimator, EstimateLimits, EstimatorError, EstimatorGains, FeedbackSign,
    PinEstimator,
};
use crate::turbine::{
    bews_true, blade_moments, default_surface, moment_at, wind_envelope, ConeCoefficientSurface,
    RotorParams, TurbineError, WindFieldConfig,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("{estimator} estimator became non-finite at step {step}")]
    NonFinite {
        estimator: &'static str,
        step: usize,
    },
    #[error(
        "{estimator} estimate held at a clamp bound for {revolutions} revolutions (step {step})"
    )]
    Diverged {
        estimator: &'static str,
        step: usize,
        revolutions: f64,
    },
    #[error("step {step}: {source}")]
    Turbine { step: usize, source: TurbineError },
    #[error("step {step}: {source}")]
    Estimator { step: usize, source: EstimatorError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorChoice {
    Pin,
    Coleman,
    #[default]
    Both,
}

impl EstimatorChoice {
    pub fn runs_pin(self) -> bool {
        matches!(self, Self::Pin | Self::Both)
    }

    pub fn runs_coleman(self) -> bool {
        matches!(self, Self::Coleman | Self::Both)
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub rotor: RotorParams,
    pub surface: Arc<ConeCoefficientSurface>,
    pub wind: WindFieldConfig,
    pub estimator: EstimatorChoice,
    pub gains: EstimatorGains,
    /// s
    pub dt: f64,
    /// s
    pub duration: f64,
    /// m/s, same on every blade
    pub initial_estimate: f64,
    /// rad, blade 1 at t = 0
    pub initial_azimuth: f64,
    pub feedback_sign: FeedbackSign,
    /// Nm per m/s dividing the residual before it reaches the estimator.
    /// `None` uses [`nominal_sensitivity`] at the initial estimate.
    pub residual_scale: Option<f64>,
    pub limits: EstimateLimits,
    /// Revolutions an estimate may sit at a clamp bound before the run is
    /// declared divergent.
    pub divergence_revolutions: f64,
}

impl Scenario {
    /// Default turbine, uniform 10 m/s inflow, both estimators, 60 revolutions.
    pub fn new(gains: EstimatorGains) -> Self {
        let rotor = RotorParams::default();
        Self {
            rotor,
            surface: Arc::new(default_surface()),
            wind: WindFieldConfig::uniform(10.0),
            estimator: EstimatorChoice::Both,
            gains,
            dt: 0.005,
            duration: 60.0 * rotor.period(),
            initial_estimate: 8.0,
            initial_azimuth: 0.0,
            feedback_sign: FeedbackSign::Negative,
            residual_scale: None,
            limits: EstimateLimits::DEFAULT,
            divergence_revolutions: 5.0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let invalid = |m: String| Err(SimError::InvalidScenario(m));
        if let Err(e) = self.rotor.validate() {
            return invalid(e.to_string());
        }
        if let Err(e) = self.wind.validate() {
            return invalid(e.to_string());
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return invalid(format!("dt must be positive, got {}", self.dt));
        }
        let max_dt = self.rotor.period() / 200.0;
        if self.dt > max_dt {
            return invalid(format!(
                "dt = {} exceeds one 200th of a revolution ({max_dt})",
                self.dt
            ));
        }
        if !(self.duration.is_finite() && self.duration >= 0.0) {
            return invalid(format!(
                "duration must be non-negative, got {}",
                self.duration
            ));
        }
        if !(self.initial_estimate.is_finite() && self.initial_estimate > 0.0) {
            return invalid(format!(
                "initial estimate must be positive, got {}",
                self.initial_estimate
            ));
        }
        if !self.initial_azimuth.is_finite() {
            return invalid("initial azimuth must be finite".into());
        }
        if let Some(s) = self.residual_scale {
            if !(s.is_finite() && s > 0.0) {
                return invalid(format!("residual scale must be positive, got {s}"));
            }
        }
        let limits = self.effective_limits();
        if !(limits.min < limits.max) {
            return invalid(format!(
                "estimate limits [{}, {}] do not overlap the surface envelope",
                limits.min, limits.max
            ));
        }
        if !(self.divergence_revolutions > 0.0) {
            return invalid("divergence window must be positive".into());
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn time_at(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }

    /// Unwrapped rotor azimuth, `psi0 + w t`.
    pub fn azimuth_at(&self, step: usize) -> f64 {
        self.initial_azimuth + self.rotor.rotor_speed * self.time_at(step)
    }

    /// Configured limits narrowed to the surface envelope.
    pub fn effective_limits(&self) -> EstimateLimits {
        let (lo, hi) = wind_envelope(&self.rotor, &self.surface, self.rotor.rotor_speed);
        self.limits.intersect(lo, hi)
    }

    pub fn resolved_residual_scale(&self) -> Result<f64, SimError> {
        match self.residual_scale {
            Some(s) => Ok(s),
            None => nominal_sensitivity(&self.rotor, &self.surface, self.initial_estimate)
                .map_err(|source| SimError::Turbine { step: 0, source }),
        }
    }
}

/// Azimuth-averaged `dm/dU` at wind speed `wind` (central differences).
pub fn nominal_sensitivity(
    rotor: &RotorParams,
    surface: &ConeCoefficientSurface,
    wind: f64,
) -> Result<f64, TurbineError> {
    const NODES: usize = 64;
    let h = 1e-4 * wind;
    let w = rotor.rotor_speed;
    let mut sum = 0.0;
    for k in 0..NODES {
        let psi = std::f64::consts::TAU * k as f64 / NODES as f64;
        let up = moment_at(rotor, surface, w, wind + h, psi)?;
        let dn = moment_at(rotor, surface, w, wind - h, psi)?;
        sum += (up - dn) / (2.0 * h);
    }
    Ok(sum / NODES as f64)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EstimatorTrace {
    /// Nm, before normalization.
    pub residual: Vec<BladeTriplet>,
    /// m/s
    pub estimate: Vec<BladeTriplet>,
    pub clamp_events: u64,
}

/// Samples at `t_k = k dt`. Estimates and residuals are the values used at
/// `t_k`, before that step's update.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub time: Vec<f64>,
    pub azimuth: Vec<f64>,
    pub wind: Vec<BladeTriplet>,
    pub moment: Vec<BladeTriplet>,
    pub pin: Option<EstimatorTrace>,
    pub coleman: Option<EstimatorTrace>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    fn estimator_columns(&self) -> Vec<(&'static str, &EstimatorTrace)> {
        let both = self.pin.is_some() && self.coleman.is_some();
        let mut out = Vec::new();
        if let Some(p) = &self.pin {
            out.push((if both { "_pin" } else { "" }, p));
        }
        if let Some(c) = &self.coleman {
            out.push((if both { "_coleman" } else { "" }, c));
        }
        out
    }

    pub fn header(&self) -> Vec<String> {
        let mut cols: Vec<String> = ["t", "psi", "U1", "U2", "U3", "m1", "m2", "m3"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for (suffix, _) in self.estimator_columns() {
            for name in ["eps", "Uhat"] {
                for i in 1..=3 {
                    cols.push(format!("{name}{i}{suffix}"));
                }
            }
        }
        cols
    }

    /// One header row, then one row per sample. Floats use the shortest
    /// representation that round-trips.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{}", self.header().join(","))?;
        let est = self.estimator_columns();
        let mut line = String::new();
        for k in 0..self.len() {
            line.clear();
            push_values(&mut line, &[self.time[k], self.azimuth[k]]);
            push_values(&mut line, &self.wind[k].0);
            push_values(&mut line, &self.moment[k].0);
            for (_, e) in &est {
                push_values(&mut line, &e.residual[k].0);
                push_values(&mut line, &e.estimate[k].0);
            }
            writeln!(w, "{}", &line[1..])?;
        }
        Ok(())
    }
}

fn push_values(line: &mut String, values: &[f64]) {
    use std::fmt::Write as _;
    for v in values {
        let _ = write!(line, ",{v}");
    }
}

struct Loop<E> {
    name: &'static str,
    estimator: E,
    trace: EstimatorTrace,
}

/// Runs the closed loop for `scenario.steps()` samples.
pub fn run(scenario: &Scenario) -> Result<Trace, SimError> {
    scenario.validate()?;
    let n = scenario.steps();
    let scale = scenario.resolved_residual_scale()?;
    let gain = 1.0 / scale;
    let limits = scenario.effective_limits();
    let w = scenario.rotor.rotor_speed;
    let dt = scenario.dt;
    let pinned_limit =
        (scenario.divergence_revolutions * scenario.rotor.period() / dt).ceil() as u64;
    let est_err = |step: usize| move |source: EstimatorError| SimError::Estimator { step, source };

    let with_capacity = || EstimatorTrace {
        residual: Vec::with_capacity(n),
        estimate: Vec::with_capacity(n),
        clamp_events: 0,
    };
    let mut pin = if scenario.estimator.runs_pin() {
        Some(Loop {
            name: "pin",
            estimator: PinEstimator::from_gains(&scenario.gains, scenario.initial_estimate)
                .map_err(est_err(0))?
                .with_sign(scenario.feedback_sign)
                .with_limits(limits),
            trace: with_capacity(),
        })
    } else {
        None
    };
    let mut coleman = if scenario.estimator.runs_coleman() {
        Some(Loop {
            name: "coleman",
            estimator: ColemanEstimator::from_gains(&scenario.gains, scenario.initial_estimate)
                .map_err(est_err(0))?
                .with_sign(scenario.feedback_sign)
                .with_limits(limits),
            trace: with_capacity(),
        })
    } else {
        None
    };

    let mut trace = Trace {
        time: Vec::with_capacity(n),
        azimuth: Vec::with_capacity(n),
        wind: Vec::with_capacity(n),
        moment: Vec::with_capacity(n),
        ..Default::default()
    };

    let diverged = |name: &'static str, step: usize, pinned: [u64; 3]| {
        if pinned.iter().any(|&p| p >= pinned_limit) {
            Err(SimError::Diverged {
                estimator: name,
                step,
                revolutions: scenario.divergence_revolutions,
            })
        } else {
            Ok(())
        }
    };
    let non_finite = |name: &'static str, step: usize| {
        move |e: EstimatorError| match e {
            EstimatorError::NonFinite => SimError::NonFinite {
                estimator: name,
                step,
            },
            source => SimError::Estimator { step, source },
        }
    };

    for k in 0..n {
        let t = scenario.time_at(k);
        let psi = scenario.azimuth_at(k);
        let az = AzimuthTriplet::from_rotor(psi);
        let wind = bews_true(&scenario.wind, &az, t)
            .map_err(|source| SimError::Turbine { step: k, source })?;
        let moments = blade_moments(&scenario.rotor, &scenario.surface, w, &wind, &az)
            .map_err(|source| SimError::Turbine { step: k, source })?;
        trace.time.push(t);
        trace.azimuth.push(psi);
        trace.wind.push(wind);
        trace.moment.push(moments);

        if let Some(l) = pin.as_mut() {
            let estimate = l.estimator.estimate();
            let eps = residuals(
                &scenario.rotor,
                &scenario.surface,
                w,
                &estimate,
                &az,
                &moments,
            )
            .map_err(est_err(k))?;
            l.trace.residual.push(eps);
            l.trace.estimate.push(estimate);
            l.estimator
                .step(&(eps * gain), w, dt)
                .map_err(non_finite(l.name, k))?;
            diverged(l.name, k, l.estimator.pinned_steps())?;
        }
        if let Some(l) = coleman.as_mut() {
            let estimate = l.estimator.estimate();
            let eps = residuals(
                &scenario.rotor,
                &scenario.surface,
                w,
                &estimate,
                &az,
                &moments,
            )
            .map_err(est_err(k))?;
            l.trace.residual.push(eps);
            l.trace.estimate.push(estimate);
            l.estimator
                .step(&(eps * gain), psi, w, dt)
                .map_err(non_finite(l.name, k))?;
            diverged(l.name, k, l.estimator.pinned_steps())?;
        }
    }

    trace.pin = pin.map(|mut l| {
        l.trace.clamp_events = l.estimator.clamp_events();
        l.trace
    });
    trace.coleman = coleman.map(|mut l| {
        l.trace.clamp_events = l.estimator.clamp_events();
        l.trace
    });
    Ok(trace)
}
