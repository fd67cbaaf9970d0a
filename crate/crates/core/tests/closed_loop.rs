use std::f64::consts::TAU;
use std::sync::Arc;

use bews_core::analysis::{error_metrics, EstimatorKind};
use bews_core::coleman::{AzimuthTriplet, BLADE_SPACING};
use bews_core::estimators::{residuals, ColemanEstimator, PinEstimator};
use bews_core::sim::{nominal_sensitivity, SimError};
use bews_core::turbine::{bews_true, blade_moments, ConeCoefficientSurface, SurrogateCoefficients};
use bews_core::*;

const W0: f64 = TAU * 0.2;

fn gains() -> EstimatorGains {
    EstimatorGains::from_coleman(0.6, 1.2, W0).unwrap()
}

/// Last sample index at which any blade is outside the 1% band, if any.
fn last_outside(est: &[BladeTriplet], wind: &[BladeTriplet], mean: f64) -> Option<usize> {
    (0..est.len())
        .rev()
        .find(|&k| (0..3).any(|b| (est[k][b] - wind[k][b]).abs() > 0.01 * mean))
}

#[test]
fn both_estimators_converge_on_uniform_wind_from_either_side() {
    for (mean, initial) in [(10.0, 8.0), (10.0, 12.5), (7.0, 9.0), (14.0, 11.0)] {
        let mut s = Scenario::new(gains());
        s.wind = WindFieldConfig::uniform(mean);
        s.initial_estimate = initial;
        let trace = run(&s).unwrap();
        let hold = (5.0 * s.rotor.period() / s.dt).round() as usize;
        for est in [&trace.pin, &trace.coleman] {
            let est = &est.as_ref().unwrap().estimate;
            let settled = last_outside(est, &trace.wind, mean).map_or(0, |k| k + 1);
            assert!(
                settled + hold <= trace.len(),
                "U = {mean}, start {initial}: settled at sample {settled} of {}",
                trace.len()
            );
        }
    }
}

#[test]
fn estimators_converge_from_arbitrary_azimuth() {
    let mut s = Scenario::new(gains());
    s.initial_azimuth = 2.1;
    let trace = run(&s).unwrap();
    let m = error_metrics(&trace, EstimatorKind::Coleman, 0.0, 10.0).unwrap();
    assert!(m.settling_time.unwrap() < 0.5 * s.duration);
}

#[test]
fn collective_only_coleman_matches_integral_only_pin() {
    // With K0 = 0 the Coleman estimator integrates only the blade-mean residual.
    // On uniform inflow with an azimuth-free surface every blade sees the same
    // residual, so this matches a per-blade integrator with the same gain.
    let rotor = RotorParams::default();
    let surface = ConeCoefficientSurface::from_surrogate(&SurrogateCoefficients {
        azimuth_amplitude: 0.0,
        ..Default::default()
    });
    let wind_cfg = WindFieldConfig::uniform(10.0);
    let k_col = 0.6;
    let dt = 0.005;
    let scale = nominal_sensitivity(&rotor, &surface, 8.0).unwrap();
    let mut col = ColemanEstimator::new(k_col, 0.0, 8.0).unwrap();
    let mut pin = PinEstimator::new(0.0, k_col, W0, 8.0).unwrap();
    let mut worst: f64 = 0.0;
    for k in 0..6000 {
        let t = k as f64 * dt;
        let psi = W0 * t;
        let az = AzimuthTriplet::from_rotor(psi);
        let wind = bews_true(&wind_cfg, &az, t).unwrap();
        let m = blade_moments(&rotor, &surface, W0, &wind, &az).unwrap();
        let e_col = residuals(&rotor, &surface, W0, &col.estimate(), &az, &m).unwrap();
        let e_pin = residuals(&rotor, &surface, W0, &pin.estimate(), &az, &m).unwrap();
        let a = col.step(&(e_col * (1.0 / scale)), psi, W0, dt).unwrap();
        let b = pin.step(&(e_pin * (1.0 / scale)), W0, dt).unwrap();
        for i in 0..3 {
            worst = worst.max((a[i] - b[i]).abs());
        }
    }
    assert!((col.estimate()[0] - 10.0).abs() < 1e-3);
    assert!(worst < 1e-9, "max blade difference {worst:e}");
}

#[test]
fn advancing_initial_azimuth_by_a_third_relabels_blades() {
    let mut a = Scenario::new(gains());
    a.wind = WindFieldConfig::sheared(10.0, 0.1);
    a.duration = 20.0 * a.rotor.period();
    let mut b = a.clone();
    b.initial_azimuth = BLADE_SPACING;
    let ta = run(&a).unwrap();
    let tb = run(&b).unwrap();
    let mut worst: f64 = 0.0;
    for (ea, eb) in [(&ta.pin, &tb.pin), (&ta.coleman, &tb.coleman)] {
        let (ea, eb) = (ea.as_ref().unwrap(), eb.as_ref().unwrap());
        for k in 0..ta.len() {
            let shifted = ea.estimate[k].rotate(1);
            for i in 0..3 {
                worst = worst.max((eb.estimate[k][i] - shifted[i]).abs());
            }
        }
    }
    for k in 0..ta.len() {
        assert_eq!(
            tb.wind[k].0.map(|v| (v * 1e9).round()),
            ta.wind[k].rotate(1).0.map(|v| (v * 1e9).round())
        );
    }
    assert!(worst < 1e-9, "{worst:e}");
}

#[test]
fn halving_the_step_shrinks_the_discretization_error() {
    let run_with = |dt: f64| {
        let mut s = Scenario::new(gains());
        s.wind = WindFieldConfig::sheared(10.0, 0.1);
        s.dt = dt;
        s.duration = 10.0 * s.rotor.period();
        let t = run(&s).unwrap();
        (t.coleman.unwrap().estimate, t.pin.unwrap().estimate)
    };
    let base = 0.004;
    let coarse = run_with(base);
    let mid = run_with(base / 2.0);
    let fine = run_with(base / 8.0);
    let stride = |f: usize, est: &[BladeTriplet]| -> Vec<BladeTriplet> {
        est.iter().step_by(f).copied().collect()
    };
    let err = |a: &[BladeTriplet], b: &[BladeTriplet]| {
        a.iter()
            .zip(b)
            .flat_map(|(x, y)| (0..3).map(move |i| (x[i] - y[i]).abs()))
            .fold(0.0f64, f64::max)
    };
    for (c, m, f) in [(&coarse.0, &mid.0, &fine.0), (&coarse.1, &mid.1, &fine.1)] {
        let e1 = err(c, &stride(8, f));
        let e2 = err(&stride(2, m), &stride(8, f));
        assert!(e1 > 0.0 && e2 < 0.7 * e1, "coarse {e1:e}, half step {e2:e}");
    }
}

#[test]
fn flipped_feedback_sign_is_reported_as_divergence() {
    let mut s = Scenario::new(gains());
    s.feedback_sign = bews_core::estimators::FeedbackSign::Positive;
    s.estimator = EstimatorChoice::Coleman;
    assert!(matches!(
        run(&s),
        Err(SimError::Diverged {
            estimator: "coleman",
            ..
        })
    ));
    s.estimator = EstimatorChoice::Pin;
    assert!(matches!(
        run(&s),
        Err(SimError::Diverged {
            estimator: "pin",
            ..
        })
    ));
}

#[test]
fn shared_surface_is_not_copied_between_runs() {
    let s = Scenario::new(gains());
    let c = s.clone();
    assert!(Arc::ptr_eq(&s.surface, &c.surface));
}

#[test]
fn halving_the_step_barely_moves_the_final_estimate() {
    let estimates = |dt: f64| {
        let mut s = Scenario::new(gains());
        s.wind = WindFieldConfig::sheared(10.0, 0.1);
        s.dt = dt;
        let t = run(&s).unwrap();
        (t.pin.unwrap().estimate, t.coleman.unwrap().estimate)
    };
    let (p1, c1) = estimates(0.005);
    let (p2, c2) = estimates(0.0025);
    // Last sample the two grids share.
    let k = p1.len() - 1;
    for i in 0..3 {
        let (a, b) = (p1[k][i], p2[2 * k][i]);
        assert!((a - b).abs() / b < 1e-4, "pin blade {i}: {a} vs {b}");
        let (a, b) = (c1[k][i], c2[2 * k][i]);
        assert!((a - b).abs() / b < 1e-4, "coleman blade {i}: {a} vs {b}");
    }
}

#[test]
fn recorded_wind_matches_offline_regeneration() {
    let mut s = Scenario::new(gains());
    s.wind = WindFieldConfig::sheared(10.0, 0.1);
    s.wind.noise_std = 0.3;
    s.wind.seed = 5;
    s.wind.tower_shadow = 0.1;
    s.duration = 10.0;
    let trace = run(&s).unwrap();
    for k in 0..trace.len() {
        let az = AzimuthTriplet::from_rotor(s.azimuth_at(k));
        assert_eq!(
            trace.wind[k],
            bews_true(&s.wind, &az, s.time_at(k)).unwrap()
        );
    }
}

#[test]
fn reruns_are_bit_identical() {
    let mut s = Scenario::new(gains());
    s.wind.noise_std = 0.4;
    s.wind.seed = 21;
    s.duration = 20.0;
    assert_eq!(run(&s).unwrap(), run(&s).unwrap());
    let mut a = Vec::new();
    let mut b = Vec::new();
    run(&s).unwrap().write_csv(&mut a).unwrap();
    run(&s).unwrap().write_csv(&mut b).unwrap();
    assert_eq!(a, b);
}

#[test]
fn compare_is_deterministic_and_label_symmetric() {
    use bews_core::analysis::compare_estimators;
    let mut s = Scenario::new(gains());
    s.wind = WindFieldConfig::sheared(10.0, 0.1);
    s.wind.noise_std = 0.2;
    s.wind.seed = 3;
    s.duration = 30.0 * s.rotor.period();
    let first = compare_estimators(&s, 5.0).unwrap();
    assert_eq!(first, compare_estimators(&s, 5.0).unwrap());

    // Advancing the azimuth by a third relabels blades; without noise the
    // per-blade metrics rotate with them.
    s.wind.noise_std = 0.0;
    let (pa, ca) = compare_estimators(&s, 5.0).unwrap();
    s.initial_azimuth = BLADE_SPACING;
    let (pb, cb) = compare_estimators(&s, 5.0).unwrap();
    for (a, b) in [(pa, pb), (ca, cb)] {
        for i in 0..3 {
            assert!((b.rmse[i] - a.rmse[(i + 1) % 3]).abs() < 1e-9);
            assert!((b.amp_error_1p[i] - a.amp_error_1p[(i + 1) % 3]).abs() < 1e-9);
        }
    }
}

#[test]
fn sheared_inflow_is_tracked_by_both_estimators() {
    let mut s = Scenario::new(gains());
    s.wind = WindFieldConfig::sheared(10.0, 0.15);
    let (pin, col) = bews_core::analysis::compare_estimators(&s, 10.0).unwrap();
    assert!(pin.max_rmse() < 0.01 * 10.0);
    assert!(col.max_rmse() < 0.01 * 10.0);
}
