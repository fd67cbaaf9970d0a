//! Blade-effective wind speed estimators.
//!
//! Both estimators close a feedback loop around the moment residual
//! `eps_i = m_hat_i(U_hat_i) - m_i`:
//!
//! * PIN: every blade runs its own `K(s) = k_p 2w s/(s^2 + w^2) + k_i/s`.
//! * Coleman: residuals go to the non-rotating frame, through integrators
//!   `K_col/s, K_0/s, K_0/s`, and back to the blades.
//!
//! The moment map increases with wind speed, so the correction applied to
//! the estimate opposes the residual: filters are driven by `-eps`
//! ([`FeedbackSign::Negative`]). The `step_gain` methods bypass the sign and
//! apply the bare estimator gain, which is what the transfer matrices
//! [`build_c_pin`] and [`build_c_col`] describe.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coleman::{
    coleman_matrix, inverse_coleman_matrix, AzimuthTriplet, BladeTriplet, NrfTriplet,
};
use crate::tf::{RationalTf, StateSpaceSiso, TfError, TfMatrix3};
use crate::turbine::{moment, ConeCoefficientSurface, RotorParams, TurbineError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("gain {name} must be finite and {requirement}, got {value}")]
    InvalidGain {
        name: &'static str,
        value: f64,
        requirement: &'static str,
    },
    #[error("time step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("estimator state became non-finite")]
    NonFinite,
    #[error("estimate must be positive, got {0}")]
    NonPositiveEstimate(f64),
    #[error(transparent)]
    Tf(#[from] TfError),
    #[error(transparent)]
    Turbine(#[from] TurbineError),
}

fn check_gain(name: &'static str, value: f64, strict: bool) -> Result<(), EstimatorError> {
    let ok = value.is_finite() && if strict { value > 0.0 } else { value >= 0.0 };
    if ok {
        Ok(())
    } else {
        Err(EstimatorError::InvalidGain {
            name,
            value,
            requirement: if strict {
                "strictly positive"
            } else {
                "non-negative"
            },
        })
    }
}

/// PIN gains equivalent to the diagonal of the Coleman transfer matrix:
/// `(k_p, k_i) = (K_0 / (3 w0), K_col / 3)`.
pub fn theorem1_map(k_col: f64, k_0: f64, schedule_speed: f64) -> (f64, f64) {
    (k_0 / (3.0 * schedule_speed), k_col / 3.0)
}

/// Gains for both estimators plus the rotor speed they are scheduled at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorGains {
    k_p: f64,
    k_i: f64,
    k_col: f64,
    k_0: f64,
    schedule_speed: f64,
}

impl EstimatorGains {
    pub fn new(
        k_p: f64,
        k_i: f64,
        k_col: f64,
        k_0: f64,
        schedule_speed: f64,
    ) -> Result<Self, EstimatorError> {
        check_gain("k_p", k_p, true)?;
        check_gain("k_i", k_i, true)?;
        check_gain("k_col", k_col, true)?;
        check_gain("k_0", k_0, true)?;
        check_gain("schedule_speed", schedule_speed, true)?;
        Ok(Self {
            k_p,
            k_i,
            k_col,
            k_0,
            schedule_speed,
        })
    }

    /// Coleman gains with PIN gains derived through [`theorem1_map`].
    pub fn from_coleman(k_col: f64, k_0: f64, schedule_speed: f64) -> Result<Self, EstimatorError> {
        check_gain("schedule_speed", schedule_speed, true)?;
        let (k_p, k_i) = theorem1_map(k_col, k_0, schedule_speed);
        Self::new(k_p, k_i, k_col, k_0, schedule_speed)
    }

    pub fn k_p(&self) -> f64 {
        self.k_p
    }

    pub fn k_i(&self) -> f64 {
        self.k_i
    }

    pub fn k_col(&self) -> f64 {
        self.k_col
    }

    pub fn k_0(&self) -> f64 {
        self.k_0
    }

    pub fn schedule_speed(&self) -> f64 {
        self.schedule_speed
    }

    /// Relative mismatch between the PIN gains and the mapped Coleman gains.
    pub fn mapping_mismatch(&self) -> f64 {
        let (k_p, k_i) = theorem1_map(self.k_col, self.k_0, self.schedule_speed);
        ((self.k_p - k_p).abs() / k_p).max((self.k_i - k_i).abs() / k_i)
    }

    /// Copy with one gain scaled by `1 + pct/100`.
    pub fn perturbed(&self, gain: GainName, pct: f64) -> Result<Self, EstimatorError> {
        let f = 1.0 + pct / 100.0;
        let mut g = *self;
        match gain {
            GainName::Kp => g.k_p *= f,
            GainName::Ki => g.k_i *= f,
            GainName::Kcol => g.k_col *= f,
            GainName::K0 => g.k_0 *= f,
        }
        Self::new(g.k_p, g.k_i, g.k_col, g.k_0, g.schedule_speed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GainName {
    Kp,
    Ki,
    Kcol,
    K0,
}

impl std::str::FromStr for GainName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "k_p" | "kp" => Ok(Self::Kp),
            "k_i" | "ki" => Ok(Self::Ki),
            "k_col" | "kcol" => Ok(Self::Kcol),
            "k_0" | "k0" => Ok(Self::K0),
            other => Err(format!(
                "unknown gain '{other}' (expected k_p, k_i, k_col or k_0)"
            )),
        }
    }
}

/// `K(s) = k_p K_N(s) + k_i/s` over the common denominator `s(s^2 + w^2)`.
pub fn pin_gain_tf(k_p: f64, k_i: f64, rotor_speed: f64) -> RationalTf {
    RationalTf::notch_peak(rotor_speed)
        .scale(k_p)
        .tf_add(&RationalTf::integrator(k_i))
}

/// Diagonal PIN transfer matrix.
pub fn build_c_pin(gains: &EstimatorGains, rotor_speed: f64) -> TfMatrix3 {
    TfMatrix3::diagonal(pin_gain_tf(gains.k_p, gains.k_i, rotor_speed))
}

/// The three distinct entries `(K_R,a, K_R,b, K_R,c)` of the Coleman
/// transfer matrix, all over `3 s (s^2 + w0^2)`.
pub fn coleman_entries(k_col: f64, k_0: f64, w0: f64) -> [RationalTf; 3] {
    let w2 = w0 * w0;
    let den = [3.0, 0.0, 3.0 * w2, 0.0];
    let cross = k_0 * 3f64.sqrt() * w0;
    let a = RationalTf::new([2.0 * k_0 + k_col, 0.0, k_col * w2], den);
    let b = RationalTf::new([k_col - k_0, cross, k_col * w2], den);
    let c = RationalTf::new([k_col - k_0, -cross, k_col * w2], den);
    // The denominator is fixed and nonzero; construction cannot fail on finite input.
    [a, b, c].map(|tf| tf.expect("finite Coleman gains"))
}

/// Circulant LTI equivalent of the Coleman estimator at constant rotor speed `w0`.
pub fn build_c_col(gains: &EstimatorGains, w0: f64) -> TfMatrix3 {
    let [a, b, c] = coleman_entries(gains.k_col, gains.k_0, w0);
    TfMatrix3::circulant(a, b, c)
}

/// Residual `m_hat(U_hat) - m` with `q_hat = rho U_hat^2 / 2`.
pub fn residual(
    params: &RotorParams,
    surface: &ConeCoefficientSurface,
    rotor_speed: f64,
    estimate: f64,
    psi: f64,
    measured: f64,
) -> Result<f64, EstimatorError> {
    if !(estimate > 0.0) {
        return Err(EstimatorError::NonPositiveEstimate(estimate));
    }
    let q_hat = params.dynamic_pressure(estimate);
    Ok(moment(params, surface, rotor_speed, estimate, q_hat, psi)? - measured)
}

/// Per-blade residuals.
pub fn residuals(
    params: &RotorParams,
    surface: &ConeCoefficientSurface,
    rotor_speed: f64,
    estimate: &BladeTriplet,
    az: &AzimuthTriplet,
    measured: &BladeTriplet,
) -> Result<BladeTriplet, EstimatorError> {
    let mut out = [0.0; 3];
    for (i, e) in out.iter_mut().enumerate() {
        *e = residual(
            params,
            surface,
            rotor_speed,
            estimate[i],
            az.blade(i),
            measured[i],
        )?;
    }
    Ok(BladeTriplet(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackSign {
    #[default]
    Negative,
    Positive,
}

impl FeedbackSign {
    fn factor(self) -> f64 {
        match self {
            Self::Negative => -1.0,
            Self::Positive => 1.0,
        }
    }
}

/// Bounds applied to every published estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateLimits {
    pub min: f64,
    pub max: f64,
}

impl EstimateLimits {
    pub const DEFAULT: Self = Self {
        min: 0.5,
        max: 40.0,
    };

    pub fn unbounded() -> Self {
        Self {
            min: f64::NEG_INFINITY,
            max: f64::INFINITY,
        }
    }

    pub fn intersect(&self, lo: f64, hi: f64) -> Self {
        Self {
            min: self.min.max(lo),
            max: self.max.min(hi),
        }
    }
}

impl Default for EstimateLimits {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Clamp bookkeeping shared by both estimators.
#[derive(Debug, Clone, Default)]
struct ClampTracker {
    events: u64,
    /// Consecutive steps each blade has spent at a bound.
    pinned: [u64; 3],
}

impl ClampTracker {
    fn apply(&mut self, raw: [f64; 3], limits: &EstimateLimits) -> BladeTriplet {
        let mut out = raw;
        for (i, v) in out.iter_mut().enumerate() {
            let clamped = v.clamp(limits.min, limits.max);
            if clamped != *v {
                self.events += 1;
                self.pinned[i] += 1;
            } else {
                self.pinned[i] = 0;
            }
            *v = clamped;
        }
        BladeTriplet(out)
    }
}

fn check_dt(dt: f64) -> Result<(), EstimatorError> {
    if dt.is_finite() && dt > 0.0 {
        Ok(())
    } else {
        Err(EstimatorError::InvalidStep(dt))
    }
}

/// Decoupled per-blade PIN estimator.
#[derive(Debug, Clone)]
pub struct PinEstimator {
    k_p: f64,
    k_i: f64,
    scheduled_speed: f64,
    realization: StateSpaceSiso,
    states: [DVector<f64>; 3],
    initial: f64,
    estimate: BladeTriplet,
    sign: FeedbackSign,
    limits: EstimateLimits,
    clamp: ClampTracker,
}

impl PinEstimator {
    /// Filters start at rest; the estimate starts at `initial` on every blade.
    pub fn new(k_p: f64, k_i: f64, rotor_speed: f64, initial: f64) -> Result<Self, EstimatorError> {
        check_gain("k_p", k_p, false)?;
        check_gain("k_i", k_i, false)?;
        check_gain("rotor_speed", rotor_speed, true)?;
        if !initial.is_finite() {
            return Err(EstimatorError::NonFinite);
        }
        let realization = pin_gain_tf(k_p, k_i, rotor_speed).realize()?;
        let zero = realization.zero_state();
        Ok(Self {
            k_p,
            k_i,
            scheduled_speed: rotor_speed,
            realization,
            states: [zero.clone(), zero.clone(), zero],
            initial,
            estimate: BladeTriplet::splat(initial),
            sign: FeedbackSign::Negative,
            limits: EstimateLimits::unbounded(),
            clamp: ClampTracker::default(),
        })
    }

    pub fn from_gains(gains: &EstimatorGains, initial: f64) -> Result<Self, EstimatorError> {
        Self::new(gains.k_p, gains.k_i, gains.schedule_speed, initial)
    }

    pub fn with_sign(mut self, sign: FeedbackSign) -> Self {
        self.sign = sign;
        self
    }

    pub fn with_limits(mut self, limits: EstimateLimits) -> Self {
        self.limits = limits;
        self.estimate = self.clamp.apply(self.estimate.0, &limits);
        self
    }

    pub fn estimate(&self) -> BladeTriplet {
        self.estimate
    }

    pub fn clamp_events(&self) -> u64 {
        self.clamp.events
    }

    pub fn pinned_steps(&self) -> [u64; 3] {
        self.clamp.pinned
    }

    pub fn states(&self) -> &[DVector<f64>; 3] {
        &self.states
    }

    /// Closed-loop update from the moment residual.
    pub fn step(
        &mut self,
        residual: &BladeTriplet,
        rotor_speed: f64,
        dt: f64,
    ) -> Result<BladeTriplet, EstimatorError> {
        let drive = *residual * self.sign.factor();
        self.step_gain(&drive, rotor_speed, dt)
    }

    /// Advances `K(s)` on each blade with `input` held over `dt`.
    pub fn step_gain(
        &mut self,
        input: &BladeTriplet,
        rotor_speed: f64,
        dt: f64,
    ) -> Result<BladeTriplet, EstimatorError> {
        check_dt(dt)?;
        if rotor_speed != self.scheduled_speed {
            check_gain("rotor_speed", rotor_speed, true)?;
            // Same canonical structure, so the state carries over.
            self.realization = pin_gain_tf(self.k_p, self.k_i, rotor_speed).realize()?;
            self.scheduled_speed = rotor_speed;
        }
        let mut raw = [0.0; 3];
        for (i, y) in raw.iter_mut().enumerate() {
            let out = self
                .realization
                .step_in_place(&mut self.states[i], input[i], dt)
                .map_err(|e| match e {
                    TfError::NonFinite => EstimatorError::NonFinite,
                    other => other.into(),
                })?;
            *y = self.initial + out;
        }
        self.estimate = self.clamp.apply(raw, &self.limits);
        Ok(self.estimate)
    }
}

/// Coleman estimator: forward transform, integrator bank, inverse transform.
#[derive(Debug, Clone)]
pub struct ColemanEstimator {
    k_col: f64,
    k_0: f64,
    /// Collective, tilt and yaw integrator states.
    states: NrfTriplet,
    estimate: BladeTriplet,
    sign: FeedbackSign,
    limits: EstimateLimits,
    clamp: ClampTracker,
}

impl ColemanEstimator {
    /// The collective integrator starts at `initial`, tilt and yaw at zero.
    pub fn new(k_col: f64, k_0: f64, initial: f64) -> Result<Self, EstimatorError> {
        check_gain("k_col", k_col, false)?;
        check_gain("k_0", k_0, false)?;
        if !initial.is_finite() {
            return Err(EstimatorError::NonFinite);
        }
        Ok(Self {
            k_col,
            k_0,
            states: NrfTriplet::new(initial, 0.0, 0.0),
            estimate: BladeTriplet::splat(initial),
            sign: FeedbackSign::Negative,
            limits: EstimateLimits::unbounded(),
            clamp: ClampTracker::default(),
        })
    }

    pub fn from_gains(gains: &EstimatorGains, initial: f64) -> Result<Self, EstimatorError> {
        Self::new(gains.k_col, gains.k_0, initial)
    }

    pub fn with_sign(mut self, sign: FeedbackSign) -> Self {
        self.sign = sign;
        self
    }

    pub fn with_limits(mut self, limits: EstimateLimits) -> Self {
        self.limits = limits;
        self.estimate = self.clamp.apply(self.estimate.0, &limits);
        self
    }

    pub fn estimate(&self) -> BladeTriplet {
        self.estimate
    }

    /// Non-rotating-frame estimate (the integrator outputs).
    pub fn nrf_estimate(&self) -> NrfTriplet {
        self.states
    }

    pub fn clamp_events(&self) -> u64 {
        self.clamp.events
    }

    pub fn pinned_steps(&self) -> [u64; 3] {
        self.clamp.pinned
    }

    /// Closed-loop update from the moment residual at rotor azimuth `psi`.
    pub fn step(
        &mut self,
        residual: &BladeTriplet,
        psi: f64,
        rotor_speed: f64,
        dt: f64,
    ) -> Result<BladeTriplet, EstimatorError> {
        let drive = *residual * self.sign.factor();
        self.step_gain(&drive, psi, rotor_speed, dt)
    }

    /// Transforms `input` at `psi`, integrates over `dt` (exact for a held
    /// input) and projects back at `psi + rotor_speed * dt`.
    pub fn step_gain(
        &mut self,
        input: &BladeTriplet,
        psi: f64,
        rotor_speed: f64,
        dt: f64,
    ) -> Result<BladeTriplet, EstimatorError> {
        self.step_gain_between(input, psi, psi + rotor_speed * dt, dt)
    }

    /// As [`step_gain`](Self::step_gain) with explicit azimuths for the
    /// forward transform (`psi_in`) and the projection (`psi_out`).
    pub fn step_gain_between(
        &mut self,
        input: &BladeTriplet,
        psi_in: f64,
        psi_out: f64,
        dt: f64,
    ) -> Result<BladeTriplet, EstimatorError> {
        check_dt(dt)?;
        let nrf = coleman_matrix(&AzimuthTriplet::from_rotor(psi_in)) * input.as_vector();
        let x = &mut self.states;
        x.col += self.k_col * nrf[0] * dt;
        x.tilt += self.k_0 * nrf[1] * dt;
        x.yaw += self.k_0 * nrf[2] * dt;
        if !x.is_finite() {
            return Err(EstimatorError::NonFinite);
        }
        let next = AzimuthTriplet::from_rotor(psi_out);
        let blades = inverse_coleman_matrix(&next) * x.as_vector();
        self.estimate = self
            .clamp
            .apply([blades[0], blades[1], blades[2]], &self.limits);
        Ok(self.estimate)
    }
}
