//! Blade-effective wind speed estimation for three-bladed rotors.
//!
//! Two estimators are provided: a per-blade proportional-integral-notch
//! ([`estimators::PinEstimator`]) and a Coleman-frame integral estimator
//! ([`estimators::ColemanEstimator`]). The [`analysis`] module checks their
//! equivalence in the frequency domain and compares them in closed loop.

pub mod analysis;
pub mod coleman;
pub mod estimators;
pub mod sim;
pub mod tf;
pub mod turbine;

pub use coleman::{AzimuthTriplet, BladeTriplet, NrfTriplet};
pub use estimators::{ColemanEstimator, EstimatorGains, PinEstimator};
pub use sim::{run, EstimatorChoice, Scenario, Trace};
pub use tf::{RationalTf, TfMatrix3};
pub use turbine::{ConeCoefficientSurface, RotorParams, WindFieldConfig};
