use std::f64::consts::TAU;

use bews_core::analysis::*;
use bews_core::estimators::{build_c_col, build_c_pin, coleman_entries, GainName};
use bews_core::EstimatorGains;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const W0: f64 = TAU * 0.2;

/// Closed-form circulant entries written out directly.
fn oracle_entries(k_col: f64, k_0: f64, w: f64, s: Complex64) -> [Complex64; 3] {
    let den = 3.0 * s * (s * s + w * w);
    let r3 = 3f64.sqrt();
    [
        ((2.0 * k_0 + k_col) * s * s + k_col * w * w) / den,
        ((k_col - k_0) * s * s + r3 * k_0 * w * s + k_col * w * w) / den,
        ((k_col - k_0) * s * s - r3 * k_0 * w * s + k_col * w * w) / den,
    ]
}

#[test]
fn entries_match_written_out_formulas() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let (kc, k0) = (rng.random_range(0.1..3.0), rng.random_range(0.1..3.0));
        let s = Complex64::new(rng.random_range(-2.0..2.0), rng.random_range(-4.0..4.0));
        let got = coleman_entries(kc, k0, W0).map(|tf| tf.eval(s).unwrap());
        let want = oracle_entries(kc, k0, W0, s);
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).norm() <= 1e-12 * w.norm());
        }
    }
}

#[test]
fn each_circulant_entry_follows_the_blade_phase_difference() {
    // C(i, j) = Kcol/(3s) + 2K0/3 (s cos d - w sin d)/(s^2 + w^2), d = 2pi(i - j)/3
    let g = EstimatorGains::from_coleman(0.6, 1.2, W0).unwrap();
    let c = build_c_col(&g, W0);
    let s = Complex64::new(0.2, 0.9);
    let got = c.eval(s).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            let d = TAU * (i as f64 - j as f64) / 3.0;
            let want = 0.6 / (3.0 * s) + 0.8 * (s * d.cos() - W0 * d.sin()) / (s * s + W0 * W0);
            assert!(
                (got[(i, j)] - want).norm() < 1e-12 * want.norm(),
                "({i}, {j})"
            );
        }
    }
}

#[test]
fn pin_and_coleman_diagonals_agree_but_pin_is_diagonal() {
    let g = EstimatorGains::from_coleman(0.9, 0.4, W0).unwrap();
    let pin = build_c_pin(&g, W0);
    let col = build_c_col(&g, W0);
    for w in log_space(0.02, 20.0, 57) {
        let p = pin.eval_jw(w).unwrap();
        let c = col.eval_jw(w).unwrap();
        assert!((p[(1, 1)] - c[(1, 1)]).norm() < 1e-12 * c[(1, 1)].norm());
        assert_eq!(p[(0, 1)], Complex64::new(0.0, 0.0));
        assert!(c[(0, 1)].norm() > 0.0);
    }
}

#[test]
fn equivalence_holds_across_random_gains_and_speeds() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let w = rng.random_range(0.5..3.0);
        let g = EstimatorGains::from_coleman(
            rng.random_range(0.05..5.0),
            rng.random_range(0.05..5.0),
            w,
        )
        .unwrap();
        assert!(verify_theorem1(&g, w, 1000).unwrap() < 1e-12);
    }
}

#[test]
fn unmapped_gains_break_equivalence() {
    let g = EstimatorGains::from_coleman(0.6, 1.2, W0).unwrap();
    for name in [GainName::Kp, GainName::Ki, GainName::Kcol, GainName::K0] {
        let p = g.perturbed(name, 1.0).unwrap();
        assert!(verify_theorem1(&p, W0, 1000).unwrap() > 1e-4, "{name:?}");
    }
}

#[test]
fn identification_detects_a_wrong_reference() {
    // Simulate with K0 perturbed; the closed form uses the nominal gains.
    let nominal = EstimatorGains::from_coleman(0.6, 1.2, W0).unwrap();
    let perturbed = nominal.perturbed(GainName::K0, 10.0).unwrap();
    let samples =
        identify_coleman_response(&perturbed, W0, &[0.3 * W0, 2.0 * W0], &Default::default())
            .unwrap();
    let c_nom = build_c_col(&nominal, W0);
    for s in samples {
        let h_nom = c_nom.eval_jw(s.omega).unwrap();
        let off = (0..3)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .map(|(i, j)| {
                ((s.h[(i, j)].norm() - h_nom[(i, j)].norm()) / h_nom[(i, j)].norm()).abs()
            })
            .fold(0.0, f64::max);
        assert!(off > 0.01, "omega {} off {off}", s.omega);
        assert!(s.max_magnitude_error() < 0.01);
    }
}

#[test]
fn identified_response_is_circulant() {
    let g = EstimatorGains::from_coleman(0.6, 1.2, W0).unwrap();
    let samples =
        identify_coleman_response(&g, W0, &[0.1 * W0, 0.7 * W0, 3.0 * W0], &Default::default())
            .unwrap();
    for s in samples {
        assert!(s.circulant_spread() < 1e-6, "{}", s.circulant_spread());
        assert!(s.fit_residual < 1e-3);
    }
}

#[test]
fn off_diagonals_share_magnitude_and_mirror_phase() {
    // b(jw) = -conj(c(jw)): equal magnitudes, phases mirrored about 90 degrees.
    let [_, b, c] = coleman_entries(0.6, 1.2, W0);
    for w in log_space(0.01, 30.0, 200) {
        if (w - W0).abs() < 1e-6 {
            continue;
        }
        let (hb, hc) = (b.eval_jw(w).unwrap(), c.eval_jw(w).unwrap());
        assert!((hb + hc.conj()).norm() <= 1e-12 * hb.norm());
        assert!((hb.norm() - hc.norm()).abs() <= 1e-12 * hb.norm());
    }
}

#[test]
fn identified_off_diagonal_difference_at_ten_times_one_p() {
    // With K0 = Kcol the s^2 terms of b and c vanish and b - c is carried
    // entirely by the cross terms: b - c = 2 sqrt(3) K0 w0 / (3 (s^2 + w0^2)).
    let k = 0.8;
    let g = EstimatorGains::from_coleman(k, k, W0).unwrap();
    let w = 10.0 * W0;
    let s = &identify_coleman_response(&g, W0, &[w], &Default::default()).unwrap()[0];
    let jw = Complex64::new(0.0, w);
    let want = 2.0 * 3f64.sqrt() * k * W0 / (3.0 * (jw * jw + W0 * W0));
    let diff = s.h[(0, 1)] - s.h[(0, 2)];
    assert!(
        (diff - want).norm() < 0.01 * want.norm(),
        "{diff} vs {want}"
    );
    let sum = s.h[(0, 1)] + s.h[(0, 2)];
    assert!(diff.norm() > 10.0 * sum.norm());
    // Numerators are conjugate, so the phases mirror about the shared denominator.
    let den_phase = (jw * (jw * jw + W0 * W0)).arg();
    let pb = (s.h[(0, 1)].arg() + den_phase).rem_euclid(TAU);
    let pc = (s.h[(0, 2)].arg() + den_phase).rem_euclid(TAU);
    assert!(((pb + pc).rem_euclid(TAU)).min(TAU - (pb + pc).rem_euclid(TAU)) < 1e-3);
}
