use std::f64::consts::{PI, TAU};

use bews_core::coleman::AzimuthTriplet;
use bews_core::turbine::{bews_true, Harmonic, WindFieldConfig};
use num_complex::Complex64;

const W0: f64 = TAU * 0.2;
const N: usize = 512;

/// Blade-1 wind over one revolution.
fn one_rev(cfg: &WindFieldConfig) -> Vec<f64> {
    let period = TAU / W0;
    (0..N)
        .map(|k| {
            let t = period * k as f64 / N as f64;
            bews_true(cfg, &AzimuthTriplet::from_rotor(W0 * t), t).unwrap()[0]
        })
        .collect()
}

/// Plain O(N^2) DFT bin `m`, normalized to a one-sided amplitude.
fn dft_amplitude(x: &[f64], m: usize) -> Complex64 {
    let n = x.len() as f64;
    let s: Complex64 = x
        .iter()
        .enumerate()
        .map(|(k, &v)| v * Complex64::from_polar(1.0, -TAU * (m * k) as f64 / n))
        .sum();
    if m == 0 {
        s / n
    } else {
        s * 2.0 / n
    }
}

#[test]
fn shear_is_a_pure_one_p_component() {
    let x = one_rev(&WindFieldConfig::sheared(10.0, 0.15));
    assert!((dft_amplitude(&x, 0).re - 10.0).abs() < 1e-12);
    let one_p = dft_amplitude(&x, 1);
    assert!((one_p.norm() - 1.5).abs() < 1e-12);
    assert!(one_p.im.abs() < 1e-12);
    for m in 2..20 {
        assert!(dft_amplitude(&x, m).norm() < 1e-12, "bin {m}");
    }
}

#[test]
fn harmonics_land_in_their_bins() {
    let mut cfg = WindFieldConfig::uniform(9.0);
    cfg.harmonics = vec![
        Harmonic {
            multiple: 3,
            amplitude: 0.4,
            phase: 0.3,
        },
        Harmonic {
            multiple: 6,
            amplitude: 0.1,
            phase: -1.0,
        },
    ];
    let x = one_rev(&cfg);
    let b3 = dft_amplitude(&x, 3);
    let b6 = dft_amplitude(&x, 6);
    assert!((b3.norm() - 0.4).abs() < 1e-12 && (b3.arg() - 0.3).abs() < 1e-10);
    assert!((b6.norm() - 0.1).abs() < 1e-12 && (b6.arg() + 1.0).abs() < 1e-10);
    assert!(dft_amplitude(&x, 1).norm() < 1e-12);
}

#[test]
fn tower_shadow_dips_at_the_bottom_of_the_revolution() {
    let mut cfg = WindFieldConfig::uniform(10.0);
    cfg.tower_shadow = 0.2;
    let x = one_rev(&cfg);
    let (k_min, v_min) =
        x.iter().enumerate().fold(
            (0, f64::INFINITY),
            |acc, (k, &v)| if v < acc.1 { (k, v) } else { acc },
        );
    assert_eq!(k_min, N / 2);
    assert!((v_min - 8.0).abs() < 1e-12);
    assert!((x[0] - 10.0 * (1.0 - 0.2 * (-(PI / 0.25f64).powi(2)).exp())).abs() < 1e-12);
}

#[test]
fn later_blades_see_earlier_wind_a_third_of_a_revolution_ahead() {
    let mut cfg = WindFieldConfig::sheared(10.0, 0.2);
    cfg.tower_shadow = 0.1;
    let third = TAU / W0 / 3.0;
    for k in 0..200 {
        let t = 0.037 * k as f64;
        let now = bews_true(&cfg, &AzimuthTriplet::from_rotor(W0 * t), t).unwrap();
        let ahead = bews_true(
            &cfg,
            &AzimuthTriplet::from_rotor(W0 * (t + third)),
            t + third,
        )
        .unwrap();
        let ahead2 =
            bews_true(&cfg, &AzimuthTriplet::from_rotor(W0 * (t + 2.0 * third)), t).unwrap();
        assert!((now[1] - ahead[0]).abs() < 1e-10);
        assert!((now[2] - ahead2[0]).abs() < 1e-10);
    }
}

#[test]
fn noise_is_reproducible_and_seeded() {
    let mut cfg = WindFieldConfig::uniform(10.0);
    cfg.noise_std = 0.5;
    cfg.seed = 7;
    let az = AzimuthTriplet::from_rotor(0.4);
    let a = bews_true(&cfg, &az, 1.25).unwrap();
    assert_eq!(a, bews_true(&cfg, &az, 1.25).unwrap());
    assert_ne!(a, bews_true(&cfg, &az, 1.3).unwrap());
    cfg.seed = 8;
    assert_ne!(a, bews_true(&cfg, &az, 1.25).unwrap());

    cfg.seed = 7;
    let samples: Vec<f64> = (0..20_000)
        .flat_map(|k| bews_true(&cfg, &az, k as f64 * 0.01).unwrap().0)
        .map(|v| v - 10.0)
        .collect();
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    assert!(mean.abs() < 0.02, "{mean}");
    assert!((var.sqrt() - 0.5).abs() < 0.01, "{}", var.sqrt());
}

#[test]
fn uniform_inflow_moments_are_shifted_copies() {
    use bews_core::turbine::{
        blade_moments, default_surface, ConeCoefficientSurface, RotorParams, SurrogateCoefficients,
    };
    let rotor = RotorParams::default();
    let cfg = WindFieldConfig::uniform(10.0);
    let third = TAU / W0 / 3.0;
    let moments = |surface: &ConeCoefficientSurface, t: f64| {
        let az = AzimuthTriplet::from_rotor(W0 * t);
        blade_moments(&rotor, surface, W0, &bews_true(&cfg, &az, t).unwrap(), &az).unwrap()
    };
    let flat = ConeCoefficientSurface::from_surrogate(&SurrogateCoefficients {
        azimuth_amplitude: 0.0,
        ..Default::default()
    });
    let tilted = default_surface();
    let mut spread: f64 = 0.0;
    for k in 0..100 {
        let t = 0.051 * k as f64;
        let m = moments(&flat, t);
        assert!((m[0] - m[1]).abs() <= 1e-9 * m[0] && (m[0] - m[2]).abs() <= 1e-9 * m[0]);
        let now = moments(&tilted, t);
        let ahead = moments(&tilted, t + third);
        assert!((now[1] - ahead[0]).abs() <= 1e-9 * now[1]);
        spread = spread.max((now[0] - now[1]).abs() / now[0]);
    }
    assert!(spread > 0.01);
}
