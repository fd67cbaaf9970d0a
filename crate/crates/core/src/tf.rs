//! Rational transfer functions in the Laplace variable.
//!
//! Polynomials are stored in descending powers of `s`:
//! `[a_n, a_{n-1}, ..., a_0]` represents `a_n s^n + ... + a_0`.
//!
//! Arithmetic is exact polynomial cross-multiplication. Common factors are
//! never cancelled, so `1/s + 1/s` is `2s/s^2`. Equivalence checks elsewhere
//! in the crate compare values, not coefficient forms.

use std::fmt;
use std::ops::{Add, Mul, Neg};

use nalgebra::{DMatrix, DVector, Matrix3};
use num_complex::Complex64;
use thiserror::Error;

/// Relative pole-proximity radius used to filter Bode grids.
pub const BODE_POLE_EXCLUSION: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TfError {
    #[error("denominator has no nonzero coefficient")]
    ZeroDenominator,
    #[error("coefficient list contains a non-finite value")]
    NonFiniteCoefficient,
    #[error("evaluation at s = {s} hits a pole (|den(s)| = {magnitude:e})")]
    NearPole { s: Complex64, magnitude: f64 },
    #[error("root finding did not converge for a degree-{degree} polynomial")]
    ConvergenceFailure { degree: usize },
    #[error("improper transfer function: numerator degree {num} exceeds denominator degree {den}")]
    ImproperTf { num: usize, den: usize },
    #[error("state-space integration produced a non-finite value")]
    NonFinite,
    #[error("state vector has length {got}, realization has order {expected}")]
    StateDimension { expected: usize, got: usize },
}

fn trim_leading_zeros(coeffs: &[f64]) -> Vec<f64> {
    let first = coeffs.iter().position(|&c| c != 0.0);
    match first {
        Some(i) => coeffs[i..].to_vec(),
        None => vec![0.0],
    }
}

fn poly_eval(coeffs: &[f64], s: Complex64) -> Complex64 {
    coeffs
        .iter()
        .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * s + c)
}

/// Sum of `|a_k| |s|^k`, the natural magnitude scale of `p(s)`.
fn poly_scale(coeffs: &[f64], s: Complex64) -> f64 {
    let r = s.norm();
    coeffs.iter().fold(0.0, |acc, &c| acc * r + c.abs())
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_add(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len().max(b.len());
    let mut out = vec![0.0; n];
    for (k, &x) in a.iter().rev().enumerate() {
        out[n - 1 - k] += x;
    }
    for (k, &y) in b.iter().rev().enumerate() {
        out[n - 1 - k] += y;
    }
    out
}

fn poly_derivative(coeffs: &[f64]) -> Vec<f64> {
    let n = coeffs.len() - 1;
    if n == 0 {
        return vec![0.0];
    }
    coeffs[..n]
        .iter()
        .enumerate()
        .map(|(i, &c)| c * (n - i) as f64)
        .collect()
}

/// Roots of a real polynomial (descending coefficients, leading term nonzero).
pub fn poly_roots(coeffs: &[f64]) -> Result<Vec<Complex64>, TfError> {
    let coeffs = trim_leading_zeros(coeffs);
    let degree = coeffs.len() - 1;
    // Exact zero roots come off first so the companion matrix stays well scaled.
    let zeros = coeffs
        .iter()
        .rev()
        .take_while(|&&c| c == 0.0)
        .count()
        .min(degree);
    let reduced = &coeffs[..coeffs.len() - zeros];
    let mut roots = vec![Complex64::new(0.0, 0.0); zeros];
    let n = reduced.len() - 1;
    match n {
        0 => {}
        1 => roots.push(Complex64::new(-reduced[1] / reduced[0], 0.0)),
        _ => {
            let lead = reduced[0];
            let mut companion = DMatrix::<f64>::zeros(n, n);
            for j in 0..n {
                companion[(0, j)] = -reduced[j + 1] / lead;
            }
            for i in 1..n {
                companion[(i, i - 1)] = 1.0;
            }
            let schur = nalgebra::linalg::Schur::try_new(companion, f64::EPSILON, 10_000)
                .ok_or(TfError::ConvergenceFailure { degree })?;
            let deriv = poly_derivative(reduced);
            for mut z in schur.complex_eigenvalues().iter().copied() {
                // A couple of Newton steps against the original coefficients.
                for _ in 0..3 {
                    let d = poly_eval(&deriv, z);
                    if d.norm() == 0.0 {
                        break;
                    }
                    let step = poly_eval(reduced, z) / d;
                    if !step.is_finite() {
                        break;
                    }
                    z -= step;
                }
                if !z.is_finite() {
                    return Err(TfError::ConvergenceFailure { degree });
                }
                roots.push(z);
            }
        }
    }
    Ok(roots)
}

/// SISO rational transfer function `num(s) / den(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RationalTf {
    num: Vec<f64>,
    den: Vec<f64>,
}

impl RationalTf {
    pub fn new(num: impl Into<Vec<f64>>, den: impl Into<Vec<f64>>) -> Result<Self, TfError> {
        let num = num.into();
        let den = den.into();
        if num.iter().chain(den.iter()).any(|c| !c.is_finite()) {
            return Err(TfError::NonFiniteCoefficient);
        }
        let den = trim_leading_zeros(&den);
        if den == [0.0] {
            return Err(TfError::ZeroDenominator);
        }
        Ok(Self {
            num: trim_leading_zeros(&num),
            den,
        })
    }

    pub fn zero() -> Self {
        Self {
            num: vec![0.0],
            den: vec![1.0],
        }
    }

    pub fn constant(gain: f64) -> Self {
        Self {
            num: vec![gain],
            den: vec![1.0],
        }
    }

    /// `gain / s`
    pub fn integrator(gain: f64) -> Self {
        Self {
            num: vec![gain],
            den: vec![1.0, 0.0],
        }
    }

    /// Rotor-speed scheduled resonator `2 w s / (s^2 + w^2)`.
    pub fn notch_peak(rotor_speed: f64) -> Self {
        Self {
            num: vec![2.0 * rotor_speed, 0.0],
            den: vec![1.0, 0.0, rotor_speed * rotor_speed],
        }
    }

    pub fn num(&self) -> &[f64] {
        &self.num
    }

    pub fn den(&self) -> &[f64] {
        &self.den
    }

    pub fn num_degree(&self) -> usize {
        self.num.len() - 1
    }

    pub fn den_degree(&self) -> usize {
        self.den.len() - 1
    }

    pub fn is_zero(&self) -> bool {
        self.num.iter().all(|&c| c == 0.0)
    }

    pub fn is_proper(&self) -> bool {
        self.is_zero() || self.num_degree() <= self.den_degree()
    }

    pub fn is_strictly_proper(&self) -> bool {
        self.is_zero() || self.num_degree() < self.den_degree()
    }

    /// Horner evaluation of `num(s)/den(s)`.
    pub fn eval(&self, s: Complex64) -> Result<Complex64, TfError> {
        let den = poly_eval(&self.den, s);
        let magnitude = den.norm();
        if magnitude <= 1e-300 * poly_scale(&self.den, s) {
            return Err(TfError::NearPole { s, magnitude });
        }
        Ok(poly_eval(&self.num, s) / den)
    }

    /// Frequency response at `s = j omega`.
    pub fn eval_jw(&self, omega: f64) -> Result<Complex64, TfError> {
        self.eval(Complex64::new(0.0, omega))
    }

    pub fn poles(&self) -> Result<Vec<Complex64>, TfError> {
        poly_roots(&self.den)
    }

    pub fn zeros(&self) -> Result<Vec<Complex64>, TfError> {
        if self.is_zero() {
            return Ok(Vec::new());
        }
        poly_roots(&self.num)
    }

    pub fn scale(&self, k: f64) -> Self {
        Self {
            num: trim_leading_zeros(&self.num.iter().map(|c| c * k).collect::<Vec<_>>()),
            den: self.den.clone(),
        }
    }

    /// Sum over the common denominator `a.den * b.den`, no cancellation.
    pub fn tf_add(&self, other: &Self) -> Self {
        let num = poly_add(
            &poly_mul(&self.num, &other.den),
            &poly_mul(&other.num, &self.den),
        );
        Self {
            num: trim_leading_zeros(&num),
            den: poly_mul(&self.den, &other.den),
        }
    }

    pub fn tf_mul(&self, other: &Self) -> Self {
        Self {
            num: trim_leading_zeros(&poly_mul(&self.num, &other.num)),
            den: poly_mul(&self.den, &other.den),
        }
    }

    /// Controllable canonical realization.
    pub fn realize(&self) -> Result<StateSpaceSiso, TfError> {
        StateSpaceSiso::from_tf(self)
    }
}

impl Add for &RationalTf {
    type Output = RationalTf;

    fn add(self, rhs: &RationalTf) -> RationalTf {
        self.tf_add(rhs)
    }
}

impl Mul for &RationalTf {
    type Output = RationalTf;

    fn mul(self, rhs: &RationalTf) -> RationalTf {
        self.tf_mul(rhs)
    }
}

impl Neg for &RationalTf {
    type Output = RationalTf;

    fn neg(self) -> RationalTf {
        self.scale(-1.0)
    }
}

fn fmt_poly(coeffs: &[f64], f: &mut fmt::Formatter<'_>) -> fmt::Result {
    let n = coeffs.len() - 1;
    let mut first = true;
    for (i, &c) in coeffs.iter().enumerate() {
        if c == 0.0 && n > 0 {
            continue;
        }
        if !first {
            write!(f, " + ")?;
        }
        first = false;
        match n - i {
            0 => write!(f, "{c}")?,
            1 => write!(f, "{c} s")?,
            p => write!(f, "{c} s^{p}")?,
        }
    }
    if first {
        write!(f, "0")?;
    }
    Ok(())
}

impl fmt::Display for RationalTf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        fmt_poly(&self.num, f)?;
        write!(f, ") / (")?;
        fmt_poly(&self.den, f)?;
        write!(f, ")")
    }
}

/// Continuous-time SISO state-space model `x' = Ax + Bu`, `y = Cx + Du`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceSiso {
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: DVector<f64>,
    d: f64,
}

impl StateSpaceSiso {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, c: DVector<f64>, d: f64) -> Self {
        let n = a.nrows();
        assert!(a.is_square(), "A must be square");
        assert_eq!(b.len(), n, "B must have one row per state");
        assert_eq!(c.len(), n, "C must have one column per state");
        Self { a, b, c, d }
    }

    fn from_tf(tf: &RationalTf) -> Result<Self, TfError> {
        if !tf.is_proper() {
            return Err(TfError::ImproperTf {
                num: tf.num_degree(),
                den: tf.den_degree(),
            });
        }
        let n = tf.den_degree();
        let lead = tf.den[0];
        let den: Vec<f64> = tf.den.iter().map(|c| c / lead).collect();
        let mut num = vec![0.0; n + 1];
        if !tf.is_zero() {
            let offset = n - tf.num_degree();
            for (k, &c) in tf.num.iter().enumerate() {
                num[offset + k] = c / lead;
            }
        }
        let d = num[0];
        let mut a = DMatrix::zeros(n, n);
        let mut b = DVector::zeros(n);
        let mut c = DVector::zeros(n);
        if n > 0 {
            for j in 0..n {
                a[(0, j)] = -den[j + 1];
                c[j] = num[j + 1] - d * den[j + 1];
            }
            for i in 1..n {
                a[(i, i - 1)] = 1.0;
            }
            b[0] = 1.0;
        }
        Ok(Self { a, b, c, d })
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn zero_state(&self) -> DVector<f64> {
        DVector::zeros(self.order())
    }

    /// `C (sI - A)^{-1} B + D`
    pub fn eval(&self, s: Complex64) -> Result<Complex64, TfError> {
        let n = self.order();
        if n == 0 {
            return Ok(Complex64::new(self.d, 0.0));
        }
        let mut m =
            DMatrix::<Complex64>::from_fn(n, n, |i, j| Complex64::new(-self.a[(i, j)], 0.0));
        for i in 0..n {
            m[(i, i)] += s;
        }
        let rhs = DVector::<Complex64>::from_fn(n, |i, _| Complex64::new(self.b[i], 0.0));
        let x = m
            .lu()
            .solve(&rhs)
            .ok_or(TfError::NearPole { s, magnitude: 0.0 })?;
        let y = (0..n).fold(Complex64::new(self.d, 0.0), |acc, i| acc + x[i] * self.c[i]);
        Ok(y)
    }

    fn derivative(&self, x: &DVector<f64>, u: f64) -> DVector<f64> {
        &self.a * x + &self.b * u
    }

    /// One RK4 step with `u` held over the interval. Returns the output at the
    /// new state.
    pub fn step_in_place(&self, state: &mut DVector<f64>, u: f64, dt: f64) -> Result<f64, TfError> {
        if state.len() != self.order() {
            return Err(TfError::StateDimension {
                expected: self.order(),
                got: state.len(),
            });
        }
        if self.order() > 0 {
            let k1 = self.derivative(state, u);
            let k2 = self.derivative(&(&*state + &k1 * (0.5 * dt)), u);
            let k3 = self.derivative(&(&*state + &k2 * (0.5 * dt)), u);
            let k4 = self.derivative(&(&*state + &k3 * dt), u);
            *state += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        }
        let y = self.c.dot(state) + self.d * u;
        if !y.is_finite() || state.iter().any(|v| !v.is_finite()) {
            return Err(TfError::NonFinite);
        }
        Ok(y)
    }

    pub fn step_state(
        &self,
        state: &DVector<f64>,
        u: f64,
        dt: f64,
    ) -> Result<(DVector<f64>, f64), TfError> {
        let mut next = state.clone();
        let y = self.step_in_place(&mut next, u, dt)?;
        Ok((next, y))
    }
}

/// 3x3 matrix of transfer functions, indexed `[row][col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TfMatrix3 {
    entries: [[RationalTf; 3]; 3],
}

impl TfMatrix3 {
    pub fn new(entries: [[RationalTf; 3]; 3]) -> Self {
        Self { entries }
    }

    pub fn diagonal(tf: RationalTf) -> Self {
        let z = RationalTf::zero;
        Self {
            entries: [
                [tf.clone(), z(), z()],
                [z(), tf.clone(), z()],
                [z(), z(), tf],
            ],
        }
    }

    /// `[[a, b, c], [c, a, b], [b, c, a]]`
    pub fn circulant(a: RationalTf, b: RationalTf, c: RationalTf) -> Self {
        Self {
            entries: [
                [a.clone(), b.clone(), c.clone()],
                [c.clone(), a.clone(), b.clone()],
                [b, c, a],
            ],
        }
    }

    pub fn entry(&self, row: usize, col: usize) -> &RationalTf {
        &self.entries[row][col]
    }

    pub fn entries(&self) -> &[[RationalTf; 3]; 3] {
        &self.entries
    }

    pub fn eval(&self, s: Complex64) -> Result<Matrix3<Complex64>, TfError> {
        let mut out = Matrix3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                out[(i, j)] = self.entries[i][j].eval(s)?;
            }
        }
        Ok(out)
    }

    pub fn eval_jw(&self, omega: f64) -> Result<Matrix3<Complex64>, TfError> {
        self.eval(Complex64::new(0.0, omega))
    }
}

/// True when `j omega` lies within relative distance `radius` of any pole.
pub fn near_pole(omega: f64, poles: &[Complex64], radius: f64) -> bool {
    let s = Complex64::new(0.0, omega);
    poles
        .iter()
        .any(|p| (s - p).norm() <= radius * p.norm().max(omega.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodePoint {
    pub omega: f64,
    pub magnitude_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilteredPoint {
    pub row: usize,
    pub col: usize,
    pub omega: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BodeMagnitude {
    pub entries: [[Vec<BodePoint>; 3]; 3],
    /// Grid points dropped because they sit on a pole of that entry.
    pub filtered: Vec<FilteredPoint>,
}

/// `20 log10 |entry(j omega)|` per entry, skipping points within
/// [`BODE_POLE_EXCLUSION`] of an entry's poles.
pub fn bode_mag(tfm: &TfMatrix3, freqs: &[f64]) -> Result<BodeMagnitude, TfError> {
    let mut out = BodeMagnitude::default();
    for i in 0..3 {
        for j in 0..3 {
            let tf = tfm.entry(i, j);
            let poles = tf.poles()?;
            for &omega in freqs {
                let value = if near_pole(omega, &poles, BODE_POLE_EXCLUSION) {
                    None
                } else {
                    tf.eval_jw(omega).ok()
                };
                match value {
                    Some(h) => out.entries[i][j].push(BodePoint {
                        omega,
                        magnitude_db: 20.0 * h.norm().log10(),
                    }),
                    None => out.filtered.push(FilteredPoint {
                        row: i,
                        col: j,
                        omega,
                    }),
                }
            }
        }
    }
    Ok(out)
}
