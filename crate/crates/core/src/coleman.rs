//! Azimuth bookkeeping and the Coleman (multi-blade coordinate) transform
//! between per-blade quantities and collective/tilt/yaw quantities.
//!
//! Blade `i` (zero-based) sits at `psi + 2*pi*i/3`. Rows of the inverse
//! transform are `[1, sin psi_i, cos psi_i]`.
//!
//! The decomposition matrices `C-`, `C+` and `Ccol` express the same
//! transforms through `e^{+-j psi}` modulation, which is what turns the
//! time-varying estimator into an LTI transfer matrix at constant rotor speed.

use std::f64::consts::{PI, TAU};
use std::ops::{Add, Index, Mul, Sub};

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const BLADE_SPACING: f64 = TAU / 3.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ColemanError {
    #[error(
        "decomposition reconstruction mismatch at psi = {psi}: imaginary residue {imaginary:e}, deviation {deviation:e}"
    )]
    ReconstructionMismatch {
        psi: f64,
        imaginary: f64,
        deviation: f64,
    },
}

/// Azimuths of the three equally spaced blades.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AzimuthTriplet([f64; 3]);

impl AzimuthTriplet {
    /// From the rotor (blade 1) azimuth. The value is wrapped into `[0, 2pi)`.
    pub fn from_rotor(psi: f64) -> Self {
        let psi = psi.rem_euclid(TAU);
        Self([psi, psi + BLADE_SPACING, psi + 2.0 * BLADE_SPACING])
    }

    pub fn rotor(&self) -> f64 {
        self.0[0]
    }

    pub fn blade(&self, i: usize) -> f64 {
        self.0[i]
    }

    pub fn as_array(&self) -> [f64; 3] {
        self.0
    }
}

/// One sample per blade (rotating frame).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BladeTriplet(pub [f64; 3]);

impl BladeTriplet {
    pub const ZERO: Self = Self([0.0; 3]);

    pub fn new(b1: f64, b2: f64, b3: f64) -> Self {
        Self([b1, b2, b3])
    }

    pub fn splat(v: f64) -> Self {
        Self([v; 3])
    }

    pub fn map(self, f: impl Fn(f64) -> f64) -> Self {
        Self(self.0.map(f))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::from(self.0)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self([v[0], v[1], v[2]])
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().copied()
    }

    /// Cyclic relabel: blade `i` of the result is blade `i + shift` of `self`.
    pub fn rotate(self, shift: usize) -> Self {
        let mut out = self.0;
        out.rotate_left(shift % 3);
        Self(out)
    }
}

impl Index<usize> for BladeTriplet {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl Add for BladeTriplet {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        Self([
            self.0[0] + rhs.0[0],
            self.0[1] + rhs.0[1],
            self.0[2] + rhs.0[2],
        ])
    }
}

impl Sub for BladeTriplet {
    type Output = Self;

    fn sub(self, rhs: Self) -> Self {
        Self([
            self.0[0] - rhs.0[0],
            self.0[1] - rhs.0[1],
            self.0[2] - rhs.0[2],
        ])
    }
}

impl Mul<f64> for BladeTriplet {
    type Output = Self;

    fn mul(self, k: f64) -> Self {
        self.map(|v| v * k)
    }
}

/// Collective, tilt and yaw components (non-rotating frame).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NrfTriplet {
    pub col: f64,
    pub tilt: f64,
    pub yaw: f64,
}

impl NrfTriplet {
    pub fn new(col: f64, tilt: f64, yaw: f64) -> Self {
        Self { col, tilt, yaw }
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.col, self.tilt, self.yaw)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn is_finite(&self) -> bool {
        self.col.is_finite() && self.tilt.is_finite() && self.yaw.is_finite()
    }
}

/// Forward transform `T_cm(psi)`.
pub fn coleman_matrix(az: &AzimuthTriplet) -> Matrix3<f64> {
    let [p1, p2, p3] = az.0;
    Matrix3::new(
        0.5,
        0.5,
        0.5,
        p1.sin(),
        p2.sin(),
        p3.sin(),
        p1.cos(),
        p2.cos(),
        p3.cos(),
    ) * (2.0 / 3.0)
}

/// Inverse transform `T_cm_inv(psi)`.
pub fn inverse_coleman_matrix(az: &AzimuthTriplet) -> Matrix3<f64> {
    let [p1, p2, p3] = az.0;
    Matrix3::new(
        1.0,
        p1.sin(),
        p1.cos(),
        1.0,
        p2.sin(),
        p2.cos(),
        1.0,
        p3.sin(),
        p3.cos(),
    )
}

pub fn forward_coleman(az: &AzimuthTriplet, blades: &BladeTriplet) -> NrfTriplet {
    NrfTriplet::from_vector(&(coleman_matrix(az) * blades.as_vector()))
}

pub fn inverse_coleman(az: &AzimuthTriplet, nrf: &NrfTriplet) -> BladeTriplet {
    BladeTriplet::from_vector(&(inverse_coleman_matrix(az) * nrf.as_vector()))
}

/// Complex decomposition matrices `C-`, `C+` and `Ccol`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompMatrices {
    pub minus: Matrix3<Complex64>,
    pub plus: Matrix3<Complex64>,
    pub col: Matrix3<Complex64>,
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn to_complex(m: &Matrix3<f64>) -> Matrix3<Complex64> {
    m.map(|v| c(v, 0.0))
}

/// Builds the three matrices from their factored definitions:
/// `C- = 1/2 [[0,0,0],[0,1,j],[0,-j,1]] * Trig`, `C+` the same with `j -> -j`,
/// where `Trig` has a zero first row, then `cos` and `sin` of the blade
/// offsets `0, 2pi/3, 4pi/3`.
pub fn decomp_matrices() -> DecompMatrices {
    let z = c(0.0, 0.0);
    let one = c(1.0, 0.0);
    let jj = c(0.0, 1.0);
    let mix_minus = Matrix3::new(z, z, z, z, one, jj, z, -jj, one);
    let mix_plus = Matrix3::new(z, z, z, z, one, -jj, z, jj, one);
    let offsets = [0.0, 2.0 * PI / 3.0, 4.0 * PI / 3.0];
    let trig = to_complex(&Matrix3::new(
        0.0,
        0.0,
        0.0,
        offsets[0].cos(),
        offsets[1].cos(),
        offsets[2].cos(),
        offsets[0].sin(),
        offsets[1].sin(),
        offsets[2].sin(),
    ));
    let half = c(0.5, 0.0);
    DecompMatrices {
        minus: mix_minus * trig * half,
        plus: mix_plus * trig * half,
        col: to_complex(&Matrix3::new(1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)),
    }
}

impl DecompMatrices {
    /// `C-ᵀC-, C+ᵀC+, C-ᵀCcol, C+ᵀCcol, CcolᵀC-, CcolᵀC+` (plain transposes).
    pub fn orthogonality_products(&self) -> [Matrix3<Complex64>; 6] {
        let (m, p, k) = (&self.minus, &self.plus, &self.col);
        [
            m.transpose() * m,
            p.transpose() * p,
            m.transpose() * k,
            p.transpose() * k,
            k.transpose() * m,
            k.transpose() * p,
        ]
    }

    /// Largest entry magnitude over all six orthogonality products.
    pub fn orthogonality_residual(&self) -> f64 {
        self.orthogonality_products()
            .iter()
            .flat_map(|m| m.iter().map(|v| v.norm()).collect::<Vec<_>>())
            .fold(0.0, f64::max)
    }
}

/// Swaps the tilt and yaw channels. The decomposition's trigonometric
/// factor lists `cos` before `sin`, the transform matrices `sin` before `cos`.
pub fn tilt_yaw_swap() -> Matrix3<f64> {
    Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0)
}

fn modulated_inverse(d: &DecompMatrices, psi: f64, scale: f64) -> Matrix3<Complex64> {
    let rot = c(psi.cos(), psi.sin());
    let swap = to_complex(&tilt_yaw_swap());
    d.col.transpose()
        + (d.minus.transpose() * rot + d.plus.transpose() * rot.conj()) * swap * c(scale, 0.0)
}

/// Scalar on the modulated `C-`/`C+` terms, fixed by least-squares matching
/// of the reconstruction against `T_cm_inv(0)`. Evaluates to exactly 1.
pub fn reconstruction_scale() -> f64 {
    let d = decomp_matrices();
    let basis = modulated_inverse(&d, 0.0, 1.0) - d.col.transpose();
    let target =
        to_complex(&inverse_coleman_matrix(&AzimuthTriplet::from_rotor(0.0))) - d.col.transpose();
    let num: f64 = basis
        .iter()
        .zip(target.iter())
        .map(|(b, t)| (b.conj() * t).re)
        .sum();
    let den: f64 = basis.iter().map(|b| b.norm_sqr()).sum();
    num / den
}

/// Rebuilds `T_cm_inv(psi)` as `Ccolᵀ + a (e^{j psi} C-ᵀ + e^{-j psi} C+ᵀ) P`
/// with `P` the tilt/yaw swap and `a` from [`reconstruction_scale`].
pub fn reconstruct_inverse_from_decomp(psi: f64) -> Result<Matrix3<f64>, ColemanError> {
    let d = decomp_matrices();
    let m = modulated_inverse(&d, psi, reconstruction_scale());
    let real = m.map(|v| v.re);
    let imaginary = m.iter().map(|v| v.im.abs()).fold(0.0, f64::max);
    let deviation = (real - inverse_coleman_matrix(&AzimuthTriplet::from_rotor(psi))).amax();
    if imaginary > 1e-12 || deviation > 1e-13 {
        return Err(ColemanError::ReconstructionMismatch {
            psi,
            imaginary,
            deviation,
        });
    }
    Ok(real)
}

/// Forward counterpart: `P (2/3 (e^{j psi} C- + e^{-j psi} C+) + 1/3 Ccol)`.
pub fn reconstruct_forward_from_decomp(psi: f64) -> Result<Matrix3<f64>, ColemanError> {
    let d = decomp_matrices();
    let rot = c(psi.cos(), psi.sin());
    let swap = to_complex(&tilt_yaw_swap());
    let m = swap
        * ((d.minus * rot + d.plus * rot.conj()) * c(2.0 / 3.0, 0.0) + d.col * c(1.0 / 3.0, 0.0));
    let real = m.map(|v| v.re);
    let imaginary = m.iter().map(|v| v.im.abs()).fold(0.0, f64::max);
    let deviation = (real - coleman_matrix(&AzimuthTriplet::from_rotor(psi))).amax();
    if imaginary > 1e-12 || deviation > 1e-13 {
        return Err(ColemanError::ReconstructionMismatch {
            psi,
            imaginary,
            deviation,
        });
    }
    Ok(real)
}
