use std::f64::consts::TAU;

use bews_core::coleman::*;
use nalgebra::Matrix3;
use proptest::prelude::*;

fn triplet() -> impl Strategy<Value = BladeTriplet> {
    prop::array::uniform3(-50.0f64..50.0).prop_map(BladeTriplet)
}

proptest! {
    #[test]
    fn inverse_pair_round_trips(psi in -100.0f64..100.0, u in triplet()) {
        let az = AzimuthTriplet::from_rotor(psi);
        let back = inverse_coleman(&az, &forward_coleman(&az, &u));
        for i in 0..3 {
            prop_assert!((back[i] - u[i]).abs() <= 1e-12 * (1.0 + u[i].abs()));
        }
    }

    #[test]
    fn transforms_are_linear(psi in 0.0f64..TAU, a in triplet(), b in triplet(), k in -3.0f64..3.0) {
        let az = AzimuthTriplet::from_rotor(psi);
        let lhs = forward_coleman(&az, &(a + b * k)).as_vector();
        let rhs = forward_coleman(&az, &a).as_vector() + forward_coleman(&az, &b).as_vector() * k;
        prop_assert!((lhs - rhs).amax() <= 1e-12 * (1.0 + rhs.amax()));
    }

    #[test]
    fn transforms_are_two_pi_periodic(psi in -20.0f64..20.0, turns in -5i32..5) {
        let a = coleman_matrix(&AzimuthTriplet::from_rotor(psi));
        let b = coleman_matrix(&AzimuthTriplet::from_rotor(psi + TAU * turns as f64));
        prop_assert!((a - b).amax() < 1e-12);
    }

    #[test]
    fn relabelling_blades_advances_azimuth_by_a_third(psi in 0.0f64..TAU, u in triplet()) {
        // Advancing the rotor by 2pi/3 moves blade i+1 into blade i's slot.
        let a = forward_coleman(&AzimuthTriplet::from_rotor(psi), &u);
        let b = forward_coleman(&AzimuthTriplet::from_rotor(psi + BLADE_SPACING), &u.rotate(1));
        prop_assert!((a.as_vector() - b.as_vector()).amax() <= 1e-12 * (1.0 + u.0.iter().fold(0.0f64, |m, v| m.max(v.abs()))));
    }

    #[test]
    fn decomposition_reconstructs_both_transforms(psi in -10.0f64..10.0) {
        let az = AzimuthTriplet::from_rotor(psi);
        let inv = reconstruct_inverse_from_decomp(psi).unwrap();
        let fwd = reconstruct_forward_from_decomp(psi).unwrap();
        prop_assert!((inv - inverse_coleman_matrix(&az)).amax() < 1e-13);
        prop_assert!((fwd - coleman_matrix(&az)).amax() < 1e-13);
    }
}

#[test]
fn collective_channel_is_the_blade_mean() {
    let u = BladeTriplet::new(3.0, 5.0, 10.0);
    for k in 0..12 {
        let nrf = forward_coleman(&AzimuthTriplet::from_rotor(0.5 * k as f64), &u);
        assert!((nrf.col - 6.0).abs() < 1e-13);
    }
}

#[test]
fn rotating_one_p_maps_to_constant_tilt_and_yaw() {
    // u_i = A sin(psi_i) + B cos(psi_i) is seen as tilt A and yaw B at every azimuth.
    let (a, b) = (0.7, -1.9);
    for k in 0..50 {
        let psi = 0.13 * k as f64;
        let az = AzimuthTriplet::from_rotor(psi);
        let u = BladeTriplet(az.as_array().map(|p| a * p.sin() + b * p.cos()));
        let nrf = forward_coleman(&az, &u);
        assert!(nrf.col.abs() < 1e-13);
        assert!((nrf.tilt - a).abs() < 1e-13);
        assert!((nrf.yaw - b).abs() < 1e-13);
    }
}

#[test]
fn cross_products_of_minus_and_plus_do_not_vanish() {
    let d = decomp_matrices();
    let m: Matrix3<_> = d.minus.transpose() * d.plus;
    assert!(m.iter().any(|v| v.norm() > 0.1));
    assert!(d.orthogonality_residual() < 1e-15);
}
