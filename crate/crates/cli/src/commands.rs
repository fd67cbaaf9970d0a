use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use bews_core::analysis::{
    compare_estimators, equivalence_errors, error_metrics, export_bode, identification_grid,
    identify_coleman_response, write_bode_csv, AnalysisError, ErrorMetrics, EstimatorKind,
};
use bews_core::estimators::{build_c_col, build_c_pin};
use bews_core::sim::{run, EstimatorTrace, SimError};
use bews_core::BladeTriplet;
use log::{info, warn};
use serde::Serialize;

use crate::config::Resolved;
use crate::CliError;

fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Output(format!("{}: {e}", dir.display())))
}

fn write_file(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<(), CliError> {
    let out = |e: std::io::Error| CliError::Output(format!("{}: {e}", path.display()));
    let mut w = BufWriter::new(File::create(path).map_err(out)?);
    body(&mut w).map_err(out)?;
    w.flush().map_err(out)?;
    info!("wrote {}", path.display());
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write_file(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)
    })
}

fn sim_error(e: SimError) -> CliError {
    match e {
        SimError::InvalidScenario(m) => CliError::Config(m),
        other => CliError::Runtime(other.to_string()),
    }
}

fn analysis_error(e: AnalysisError) -> CliError {
    match e {
        AnalysisError::Sim(s) => sim_error(s),
        AnalysisError::InconsistentGains(_)
        | AnalysisError::InvalidSettings(_)
        | AnalysisError::PoleProximity { .. } => CliError::Config(e.to_string()),
        other => CliError::Runtime(other.to_string()),
    }
}

#[derive(Debug, Serialize)]
struct EstimatorSummary {
    #[serde(flatten)]
    metrics: Option<ErrorMetrics>,
    clamp_events: u64,
    final_estimate: Option<BladeTriplet>,
}

#[derive(Debug, Serialize)]
struct SimulationSummary {
    steps: usize,
    dt: f64,
    duration: f64,
    residual_scale: f64,
    metrics_window_start: f64,
    pin: Option<EstimatorSummary>,
    coleman: Option<EstimatorSummary>,
}

pub fn simulate(r: &Resolved, out: &Path) -> Result<(), CliError> {
    prepare_dir(out)?;
    let s = &r.scenario;
    info!("simulating {} steps", s.steps());
    let trace = run(s).map_err(sim_error)?;
    write_file(&out.join("trace.csv"), |w| trace.write_csv(w))?;

    let window = r.config.simulation.metrics_window_revolutions * s.rotor.period();
    let window_start = (s.duration - window).max(0.0);
    let summarize = |kind: EstimatorKind,
                     t: &Option<EstimatorTrace>|
     -> Result<Option<EstimatorSummary>, CliError> {
        let Some(t) = t else { return Ok(None) };
        let metrics = if trace.is_empty() {
            None
        } else {
            Some(error_metrics(&trace, kind, window_start, s.wind.mean).map_err(analysis_error)?)
        };
        Ok(Some(EstimatorSummary {
            metrics,
            clamp_events: t.clamp_events,
            final_estimate: t.estimate.last().copied(),
        }))
    };
    let summary = SimulationSummary {
        steps: trace.len(),
        dt: s.dt,
        duration: s.duration,
        residual_scale: s.resolved_residual_scale().map_err(sim_error)?,
        metrics_window_start: window_start,
        pin: summarize(EstimatorKind::Pin, &trace.pin)?,
        coleman: summarize(EstimatorKind::Coleman, &trace.coleman)?,
    };
    write_json(&out.join("metrics.json"), &summary)
}

pub fn bode(r: &Resolved, out: &Path) -> Result<(), CliError> {
    prepare_dir(out)?;
    let b = &r.config.bode;
    let w0 = r.rotor_speed();
    let freqs = b.grid().frequencies(w0);
    let g = &r.scenario.gains;
    let mut targets = vec![("bode.csv", build_c_col(g, w0))];
    if b.include_pin {
        targets.push(("bode_pin.csv", build_c_pin(g, w0)));
    }
    for (name, tfm) in targets {
        let records = export_bode(&tfm, &freqs, w0, b.diagonal_only).map_err(analysis_error)?;
        write_file(&out.join(name), |w| write_bode_csv(&records, w))?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct EquivalenceVerdict {
    pass: bool,
    max_relative_error: f64,
    worst_omega: f64,
    tolerance: f64,
    points: usize,
}

#[derive(Debug, Serialize)]
struct IdentificationVerdict {
    pass: bool,
    max_magnitude_error: f64,
    max_phase_error_deg: f64,
    worst_omega: f64,
    magnitude_tolerance: f64,
    phase_tolerance_deg: f64,
    frequencies: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct Verdict {
    pub pass: bool,
    diagonal_equivalence: EquivalenceVerdict,
    identification: IdentificationVerdict,
}

pub fn verify(r: &Resolved, out: Option<&Path>) -> Result<Verdict, CliError> {
    let v = &r.config.verify;
    let w0 = r.rotor_speed();
    let g = &r.scenario.gains;

    let errs = equivalence_errors(g, w0, v.equivalence_points).map_err(analysis_error)?;
    let (worst_omega, max_err) =
        errs.iter().copied().fold(
            (f64::NAN, 0.0),
            |acc, (w, e)| if e > acc.1 { (w, e) } else { acc },
        );
    let diagonal_equivalence = EquivalenceVerdict {
        pass: max_err < v.equivalence_tolerance,
        max_relative_error: max_err,
        worst_omega,
        tolerance: v.equivalence_tolerance,
        points: errs.len(),
    };

    let freqs = identification_grid(w0, v.grid_min_ratio, v.grid_max_ratio, v.grid_points);
    info!("identifying at {} frequencies", freqs.len());
    let samples =
        identify_coleman_response(g, w0, &freqs, &v.identification()).map_err(analysis_error)?;
    let mut ident = IdentificationVerdict {
        pass: true,
        max_magnitude_error: 0.0,
        max_phase_error_deg: 0.0,
        worst_omega: f64::NAN,
        magnitude_tolerance: v.magnitude_tolerance,
        phase_tolerance_deg: v.phase_tolerance_deg,
        frequencies: freqs,
    };
    let mut worst_score = 0.0;
    for s in &samples {
        let (m, p) = (s.max_magnitude_error(), s.max_phase_error_deg());
        ident.max_magnitude_error = ident.max_magnitude_error.max(m);
        ident.max_phase_error_deg = ident.max_phase_error_deg.max(p);
        let score = (m / v.magnitude_tolerance).max(p / v.phase_tolerance_deg);
        if score >= worst_score {
            worst_score = score;
            ident.worst_omega = s.omega;
        }
    }
    ident.pass = ident.max_magnitude_error < v.magnitude_tolerance
        && ident.max_phase_error_deg < v.phase_tolerance_deg;

    let verdict = Verdict {
        pass: diagonal_equivalence.pass && ident.pass,
        diagonal_equivalence,
        identification: ident,
    };
    if !verdict.diagonal_equivalence.pass {
        warn!(
            "diagonal equivalence fails: relative error {:e} at {} rad/s",
            verdict.diagonal_equivalence.max_relative_error,
            verdict.diagonal_equivalence.worst_omega
        );
    }
    if !verdict.identification.pass {
        warn!(
            "identified response deviates from the closed form, worst at {} rad/s",
            verdict.identification.worst_omega
        );
    }
    if let Some(dir) = out {
        prepare_dir(dir)?;
        write_json(&dir.join("verdict.json"), &verdict)?;
    }
    Ok(verdict)
}

#[derive(Debug, Serialize)]
struct ComparisonCase {
    shear: f64,
    pin: ErrorMetrics,
    coleman: ErrorMetrics,
    /// `None` when the inflow has no shear and no ordering is expected.
    ordering_holds: Option<bool>,
}

#[derive(Debug, Serialize)]
pub struct Comparison {
    pub pass: bool,
    window_revolutions: f64,
    tie_tolerance: f64,
    cases: Vec<ComparisonCase>,
}

pub fn compare(r: &Resolved, out: &Path) -> Result<Comparison, CliError> {
    prepare_dir(out)?;
    let c = &r.config.compare;
    let shears = if c.shear_amplitudes.is_empty() {
        vec![r.scenario.wind.shear]
    } else {
        c.shear_amplitudes.clone()
    };
    let mut cases = Vec::new();
    for shear in shears {
        let mut s = r.scenario.clone();
        s.wind.shear = shear;
        info!("comparing estimators at shear {shear}");
        let (pin, coleman) =
            compare_estimators(&s, c.window_revolutions).map_err(analysis_error)?;
        let ordering_holds = (shear != 0.0)
            .then(|| coleman.max_amp_error_1p() <= pin.max_amp_error_1p() + c.tie_tolerance);
        if ordering_holds == Some(false) {
            warn!(
                "shear {shear}: Coleman 1P error {:e} exceeds PIN {:e}",
                coleman.max_amp_error_1p(),
                pin.max_amp_error_1p()
            );
        }
        cases.push(ComparisonCase {
            shear,
            pin,
            coleman,
            ordering_holds,
        });
    }
    let report = Comparison {
        pass: cases.iter().all(|c| c.ordering_holds != Some(false)),
        window_revolutions: c.window_revolutions,
        tie_tolerance: c.tie_tolerance,
        cases,
    };
    write_json(&out.join("compare.json"), &report)?;
    Ok(report)
}

pub fn default_out() -> PathBuf {
    PathBuf::from("bews-out")
}
