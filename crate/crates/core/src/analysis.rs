//! Verification instruments: frequency-response identification of the
//! time-domain Coleman estimator, the PIN/Coleman diagonal equivalence
//! sweep, Bode export and closed-loop error metrics.

use std::f64::consts::TAU;
use std::io::{self, Write};

use nalgebra::{Matrix3, SMatrix, SVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coleman::{decomp_matrices, BladeTriplet};
use crate::estimators::{
    build_c_col, build_c_pin, coleman_entries, ColemanEstimator, EstimatorError, EstimatorGains,
};
use crate::sim::{run, EstimatorChoice, Scenario, SimError, Trace};
use crate::tf::{bode_mag, near_pole, TfError, TfMatrix3, BODE_POLE_EXCLUSION};

/// Relative pole-exclusion radius for time-domain identification.
pub const IDENTIFICATION_POLE_EXCLUSION: f64 = 1e-3;
/// Largest acceptable fit residual relative to the fitted output amplitude.
pub const MAX_FIT_RESIDUAL: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("test frequency {omega} rad/s is within the pole exclusion radius")]
    PoleProximity { omega: f64 },
    #[error(
        "sine fit residual {ratio:.3e} at {omega} rad/s (input {input}, output {output}) exceeds the limit"
    )]
    FitResidualTooLarge {
        omega: f64,
        input: usize,
        output: usize,
        ratio: f64,
    },
    #[error("invalid analysis settings: {0}")]
    InvalidSettings(String),
    #[error("PIN gains differ from the mapped Coleman gains by {0:e} (relative)")]
    InconsistentGains(f64),
    #[error("trace has no {0} estimator")]
    MissingEstimator(&'static str),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Tf(#[from] TfError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n)
                .map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp())
                .collect()
        }
    }
}

fn coleman_poles(w0: f64) -> [Complex64; 3] {
    [
        Complex64::new(0.0, 0.0),
        Complex64::new(0.0, w0),
        Complex64::new(0.0, -w0),
    ]
}

/// Accumulated normal equations for a fixed-size linear least-squares fit.
#[derive(Debug, Clone)]
struct LeastSquares<const N: usize> {
    xtx: SMatrix<f64, N, N>,
    xty: SVector<f64, N>,
    yty: f64,
    count: usize,
}

impl<const N: usize> LeastSquares<N> {
    fn new() -> Self {
        Self {
            xtx: SMatrix::zeros(),
            xty: SVector::zeros(),
            yty: 0.0,
            count: 0,
        }
    }

    fn push(&mut self, x: &SVector<f64, N>, y: f64) {
        self.xtx += x * x.transpose();
        self.xty += x * y;
        self.yty += y * y;
        self.count += 1;
    }

    /// Coefficients and residual RMS.
    fn solve(&self) -> Option<(SVector<f64, N>, f64)> {
        let beta = self.xtx.cholesky()?.solve(&self.xty);
        let ss = (self.yty - beta.dot(&self.xty)).max(0.0);
        Some((beta, (ss / self.count as f64).sqrt()))
    }
}

/// Settings for [`identify_coleman_response`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentificationSettings {
    /// Injected sine amplitude.
    pub amplitude: f64,
    /// Fit window, in periods of the slower of the test and rotor frequencies.
    pub cycles: usize,
    /// Discarded lead-in, same unit as `cycles`.
    pub transient_cycles: usize,
    /// Integration steps per period of the faster of the two frequencies.
    pub steps_per_period: usize,
}

impl Default for IdentificationSettings {
    fn default() -> Self {
        Self {
            amplitude: 1.0,
            cycles: 20,
            transient_cycles: 10,
            steps_per_period: 2000,
        }
    }
}

impl IdentificationSettings {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        let bad = |m: &str| Err(AnalysisError::InvalidSettings(m.to_string()));
        if !(self.amplitude.is_finite() && self.amplitude > 0.0) {
            return bad("amplitude must be positive");
        }
        if self.cycles < 20 {
            return bad("at least 20 fit cycles are required");
        }
        if self.transient_cycles < 10 {
            return bad("at least 10 transient cycles must be discarded");
        }
        if self.steps_per_period < 100 {
            return bad("at least 100 steps per period are required");
        }
        Ok(())
    }
}

/// Identified and closed-form transfer matrices at one frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqResponseSample {
    /// rad/s
    pub omega: f64,
    pub h: Matrix3<Complex64>,
    pub h_ref: Matrix3<Complex64>,
    /// Worst fit residual over the nine entries, relative to output amplitude.
    pub fit_residual: f64,
}

impl FreqResponseSample {
    /// `| |H| - |H_ref| | / |H_ref|` per entry.
    pub fn magnitude_errors(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| {
            let r = self.h_ref[(i, j)].norm();
            (self.h[(i, j)].norm() - r).abs() / r
        })
    }

    /// `|arg(H / H_ref)|` in degrees per entry.
    pub fn phase_errors_deg(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| {
            (self.h[(i, j)] / self.h_ref[(i, j)])
                .arg()
                .abs()
                .to_degrees()
        })
    }

    pub fn max_magnitude_error(&self) -> f64 {
        self.magnitude_errors().max()
    }

    pub fn max_phase_error_deg(&self) -> f64 {
        self.phase_errors_deg().max()
    }

    /// Largest spread within the three circulant classes of the identified
    /// matrix, relative to the largest entry magnitude.
    pub fn circulant_spread(&self) -> f64 {
        let scale = self.h.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let mut worst: f64 = 0.0;
        for shift in 0..3 {
            let first = self.h[(0, shift)];
            for k in 1..3 {
                let other = self.h[(k, (k + shift) % 3)];
                worst = worst.max((other - first).norm());
            }
        }
        worst / scale
    }
}

/// Standard identification grid: `points` log-spaced frequencies over
/// `[lo, hi] * w0` with pole neighbourhoods removed.
pub fn identification_grid(w0: f64, lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let poles = coleman_poles(w0);
    log_space(lo * w0, hi * w0, points)
        .into_iter()
        .filter(|&w| !near_pole(w, &poles, IDENTIFICATION_POLE_EXCLUSION))
        .collect()
}

/// Drives the open-loop time-domain Coleman estimator (transform, integrate,
/// transform back; no turbine) with `A sin(w t)` on one blade at a time and
/// fits the blade outputs at `w`. Pairs each identified column with
/// [`build_c_col`].
///
/// The integrators are marginally stable, so starting from rest leaves a
/// constant and a 1P component in the outputs; both are fitted alongside
/// the response at `w`.
pub fn identify_coleman_response(
    gains: &EstimatorGains,
    w0: f64,
    freqs: &[f64],
    settings: &IdentificationSettings,
) -> Result<Vec<FreqResponseSample>, AnalysisError> {
    settings.validate()?;
    let poles = coleman_poles(w0);
    if let Some(&omega) = freqs
        .iter()
        .find(|&&w| !(w > 0.0) || near_pole(w, &poles, IDENTIFICATION_POLE_EXCLUSION))
    {
        return Err(AnalysisError::PoleProximity { omega });
    }
    let c_col = build_c_col(gains, w0);
    freqs
        .par_iter()
        .map(|&omega| identify_at(gains, w0, omega, settings, &c_col))
        .collect()
}

fn identify_at(
    gains: &EstimatorGains,
    w0: f64,
    omega: f64,
    settings: &IdentificationSettings,
    c_col: &TfMatrix3,
) -> Result<FreqResponseSample, AnalysisError> {
    let slow = TAU / omega.min(w0);
    let fast = TAU / omega.max(w0);
    let dt = fast / settings.steps_per_period as f64;
    let skip = (settings.transient_cycles as f64 * slow / dt).ceil() as usize;
    let total = skip + (settings.cycles as f64 * slow / dt).ceil() as usize;
    let amp = settings.amplitude;

    let mut h = Matrix3::zeros();
    let mut fit_residual: f64 = 0.0;
    for input in 0..3 {
        let mut est = ColemanEstimator::new(gains.k_col(), gains.k_0(), 0.0)?;
        let mut fits = [
            LeastSquares::<5>::new(),
            LeastSquares::new(),
            LeastSquares::new(),
        ];
        let mut drive = [0.0; 3];
        for k in 0..total {
            // Midpoint sampling keeps the held-input integration second order.
            let t_mid = (k as f64 + 0.5) * dt;
            let t_out = (k + 1) as f64 * dt;
            drive[input] = amp * (omega * t_mid).sin();
            let out = est.step_gain_between(&BladeTriplet(drive), w0 * t_mid, w0 * t_out, dt)?;
            if k >= skip {
                let (s, c) = (omega * t_out).sin_cos();
                let (s0, c0) = (w0 * t_out).sin_cos();
                let x = SVector::<f64, 5>::from([s, c, 1.0, s0, c0]);
                for (fit, y) in fits.iter_mut().zip(out.iter()) {
                    fit.push(&x, y);
                }
            }
        }
        for (output, fit) in fits.iter().enumerate() {
            let (beta, rms) = fit.solve().ok_or(AnalysisError::InvalidSettings(
                "singular fit; window too short".into(),
            ))?;
            // y = |H| A sin(w t + arg H) = a sin + b cos  =>  H = (a + j b) / A
            let phasor = Complex64::new(beta[0], beta[1]) / amp;
            let ratio = rms / (phasor.norm() * amp / 2f64.sqrt());
            if !(ratio <= MAX_FIT_RESIDUAL) {
                return Err(AnalysisError::FitResidualTooLarge {
                    omega,
                    input,
                    output,
                    ratio,
                });
            }
            fit_residual = fit_residual.max(ratio);
            h[(output, input)] = phasor;
        }
    }
    Ok(FreqResponseSample {
        omega,
        h,
        h_ref: c_col.eval_jw(omega)?,
        fit_residual,
    })
}

/// Log-spaced grid over `[1e-3, 1e2] * w0` minus `1e-6`-relative pole
/// neighbourhoods of the Coleman entries.
pub fn equivalence_grid(w0: f64, points: usize) -> Vec<f64> {
    let poles = coleman_poles(w0);
    log_space(1e-3 * w0, 1e2 * w0, points)
        .into_iter()
        .filter(|&w| !near_pole(w, &poles, BODE_POLE_EXCLUSION))
        .collect()
}

/// Worst relative difference between the PIN diagonal entry `K(jw)` built
/// from `gains.k_p, gains.k_i` and `K_R,a(jw)` built from `gains.k_col,
/// gains.k_0`, over [`equivalence_grid`].
pub fn verify_theorem1(
    gains: &EstimatorGains,
    w0: f64,
    points: usize,
) -> Result<f64, AnalysisError> {
    Ok(equivalence_errors(gains, w0, points)?
        .into_iter()
        .map(|(_, e)| e)
        .fold(0.0, f64::max))
}

/// Per-frequency relative errors behind [`verify_theorem1`].
pub fn equivalence_errors(
    gains: &EstimatorGains,
    w0: f64,
    points: usize,
) -> Result<Vec<(f64, f64)>, AnalysisError> {
    let pin = build_c_pin(gains, w0);
    let [k_ra, _, _] = coleman_entries(gains.k_col(), gains.k_0(), w0);
    equivalence_grid(w0, points)
        .into_iter()
        .map(|w| {
            let k = pin.entry(0, 0).eval_jw(w)?;
            let r = k_ra.eval_jw(w)?;
            Ok((w, (k - r).norm() / r.norm()))
        })
        .collect()
}

/// The Coleman transfer matrix assembled from the decomposition matrices:
/// `2/3 C-ᵀ Ccm(s - j w0) C+ + 2/3 C+ᵀ Ccm(s + j w0) C- + 1/3 Ccolᵀ Ccm(s) Ccol`.
pub fn c_col_from_decomposition(k_col: f64, k_0: f64, w0: f64, s: Complex64) -> Matrix3<Complex64> {
    let d = decomp_matrices();
    let jw = Complex64::new(0.0, w0);
    let ccm =
        |s: Complex64| Matrix3::from_diagonal(&nalgebra::Vector3::new(k_col / s, k_0 / s, k_0 / s));
    let two_thirds = Complex64::new(2.0 / 3.0, 0.0);
    let third = Complex64::new(1.0 / 3.0, 0.0);
    d.minus.transpose() * ccm(s - jw) * d.plus * two_thirds
        + d.plus.transpose() * ccm(s + jw) * d.minus * two_thirds
        + d.col.transpose() * ccm(s) * d.col * third
}

/// Frequency grid for Bode export: log-spaced points plus pairs hugging the
/// 1P frequency at the given relative offsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodeGrid {
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub points: usize,
    pub peak_offsets: Vec<f64>,
}

impl Default for BodeGrid {
    fn default() -> Self {
        Self {
            min_ratio: 1e-2,
            max_ratio: 1e2,
            points: 400,
            peak_offsets: vec![1e-2, 1e-3, 1e-4, 1e-5],
        }
    }
}

impl BodeGrid {
    pub fn frequencies(&self, w0: f64) -> Vec<f64> {
        let mut freqs = log_space(self.min_ratio * w0, self.max_ratio * w0, self.points);
        for &d in &self.peak_offsets {
            freqs.push(w0 * (1.0 - d));
            freqs.push(w0 * (1.0 + d));
        }
        freqs.sort_by(f64::total_cmp);
        freqs.dedup();
        freqs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BodeRecord {
    pub omega: f64,
    /// 1-based
    pub row: usize,
    /// 1-based
    pub col: usize,
    pub magnitude_db: f64,
    /// The 1P frequency, repeated on every row for plotting the marker line.
    pub omega_1p: f64,
}

pub const BODE_CSV_HEADER: &str = "omega,row,col,magnitude_db,omega_1p";

/// Pole-filtered magnitude records ordered by frequency, then row, then column.
pub fn export_bode(
    tfm: &TfMatrix3,
    freqs: &[f64],
    w0: f64,
    diagonal_only: bool,
) -> Result<Vec<BodeRecord>, AnalysisError> {
    let bode = bode_mag(tfm, freqs)?;
    let mut records = Vec::new();
    for i in 0..3 {
        for j in 0..3 {
            if diagonal_only && i != j {
                continue;
            }
            records.extend(bode.entries[i][j].iter().map(|p| BodeRecord {
                omega: p.omega,
                row: i + 1,
                col: j + 1,
                magnitude_db: p.magnitude_db,
                omega_1p: w0,
            }));
        }
    }
    records.sort_by(|a, b| {
        a.omega
            .total_cmp(&b.omega)
            .then(a.row.cmp(&b.row))
            .then(a.col.cmp(&b.col))
    });
    Ok(records)
}

pub fn write_bode_csv<W: Write>(records: &[BodeRecord], mut w: W) -> io::Result<()> {
    writeln!(w, "{BODE_CSV_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.omega, r.row, r.col, r.magnitude_db, r.omega_1p
        )?;
    }
    Ok(())
}

/// Tracking-quality summary for one estimator over a window of a trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    /// m/s, per blade
    pub rmse: [f64; 3],
    /// Amplitude of the 1P component of `U_hat_i - U_i`, divided by the
    /// mean wind.
    pub amp_error_1p: [f64; 3],
    /// s; first time after which every blade stays within 1% of the mean
    /// wind. `None` if the final sample is still outside.
    pub settling_time: Option<f64>,
}

impl ErrorMetrics {
    pub fn max_rmse(&self) -> f64 {
        self.rmse.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_amp_error_1p(&self) -> f64 {
        self.amp_error_1p.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Pin,
    Coleman,
}

/// Metrics over samples with `t >= window_start`.
pub fn error_metrics(
    trace: &Trace,
    kind: EstimatorKind,
    window_start: f64,
    mean_wind: f64,
) -> Result<ErrorMetrics, AnalysisError> {
    let est = match kind {
        EstimatorKind::Pin => trace
            .pin
            .as_ref()
            .ok_or(AnalysisError::MissingEstimator("pin"))?,
        EstimatorKind::Coleman => trace
            .coleman
            .as_ref()
            .ok_or(AnalysisError::MissingEstimator("coleman"))?,
    };
    let start = trace.time.partition_point(|&t| t < window_start);
    let n = trace.len() - start;
    if n == 0 {
        return Err(AnalysisError::InvalidSettings(
            "empty metrics window".into(),
        ));
    }
    let mut rmse = [0.0; 3];
    let mut amp = [0.0; 3];
    for blade in 0..3 {
        let mut fit = LeastSquares::<3>::new();
        let mut ss = 0.0;
        for k in start..trace.len() {
            let e = est.estimate[k][blade] - trace.wind[k][blade];
            ss += e * e;
            let (s, c) = trace.azimuth[k].sin_cos();
            fit.push(&SVector::<f64, 3>::from([s, c, 1.0]), e);
        }
        rmse[blade] = (ss / n as f64).sqrt();
        amp[blade] = match fit.solve() {
            Some((beta, _)) => beta[0].hypot(beta[1]) / mean_wind,
            None => 0.0,
        };
    }
    let band = 0.01 * mean_wind;
    let last_outside = (0..trace.len())
        .rev()
        .find(|&k| (0..3).any(|b| (est.estimate[k][b] - trace.wind[k][b]).abs() > band));
    let settling_time = match last_outside {
        None => Some(0.0),
        Some(k) if k + 1 < trace.len() => Some(trace.time[k + 1]),
        Some(_) => None,
    };
    Ok(ErrorMetrics {
        rmse,
        amp_error_1p: amp,
        settling_time,
    })
}

/// PIN and Coleman metrics from one closed-loop run on a shared wind
/// realization, measured over the last `window_revolutions` revolutions.
/// The scenario gains must satisfy the diagonal-equivalence mapping.
pub fn compare_estimators(
    scenario: &Scenario,
    window_revolutions: f64,
) -> Result<(ErrorMetrics, ErrorMetrics), AnalysisError> {
    let mismatch = scenario.gains.mapping_mismatch();
    if !(mismatch <= 1e-12) {
        return Err(AnalysisError::InconsistentGains(mismatch));
    }
    let mut s = scenario.clone();
    s.estimator = EstimatorChoice::Both;
    let trace = run(&s)?;
    let window_start = s.duration - window_revolutions * s.rotor.period();
    let pin = error_metrics(&trace, EstimatorKind::Pin, window_start, s.wind.mean)?;
    let col = error_metrics(&trace, EstimatorKind::Coleman, window_start, s.wind.mean)?;
    Ok((pin, col))
}
