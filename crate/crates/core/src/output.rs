//! CSV artifacts and run summaries.
//!
//! Every CSV starts with a `# schema_version=1` comment line followed by a
//! header row. Floats use the shortest representation that round-trips,
//! so identical runs produce identical files.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dae::Trajectory;
use crate::error::{Error, Result};
use crate::hybrid::HybridModel;
use crate::psys::PowerSystem;
use crate::sens::{FdColumn, SensitivityTrajectory};
use crate::tuner::TuningResult;

pub const CSV_SCHEMA_VERSION: u32 = 1;

fn header(columns: &[String]) -> String {
    format!("# schema_version={CSV_SCHEMA_VERSION}\n{}\n", columns.join(","))
}

fn row(out: &mut String, fields: impl IntoIterator<Item = String>) {
    let line: Vec<String> = fields.into_iter().collect();
    out.push_str(&line.join(","));
    out.push('\n');
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.display().to_string(),
            source,
        })?;
    }
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Angles of every other machine relative to the first one, named
/// `delta_<g><ref>` (e.g. `delta_21`).
pub fn relative_angles(model: &PowerSystem, traj: &Trajectory) -> Vec<(String, Vec<f64>)> {
    let ids = model.machine_ids();
    let Some(&reference) = ids.first() else {
        return Vec::new();
    };
    let r = model.delta_index(reference).expect("machine exists");
    ids[1..]
        .iter()
        .map(|&g| {
            let i = model.delta_index(g).expect("machine exists");
            let series = traj.states.iter().map(|x| x[i] - x[r]).collect();
            (format!("delta_{g}{reference}"), series)
        })
        .collect()
}

/// Trajectory CSV: time, mode, every state, every algebraic variable and
/// the relative rotor angles.
pub fn trajectory_csv(model: &PowerSystem, traj: &Trajectory) -> String {
    let rel = relative_angles(model, traj);
    let mut cols = vec!["t".to_string(), "mode".to_string()];
    cols.extend(model.state_names());
    cols.extend(model.algebraic_names());
    cols.extend(rel.iter().map(|(n, _)| n.clone()));
    let mut out = header(&cols);
    for k in 0..traj.len() {
        let mut f = vec![num(traj.times[k]), traj.modes[k].to_string()];
        f.extend(traj.states[k].iter().map(|&v| num(v)));
        f.extend(traj.algebraics[k].iter().map(|&v| num(v)));
        f.extend(rel.iter().map(|(_, s)| num(s[k])));
        row(&mut out, f);
    }
    out
}

pub fn junctions_csv(traj: &Trajectory) -> String {
    let cols = ["event", "t_j", "pre_mode", "post_mode", "sample_minus", "sample_plus"].map(String::from);
    let mut out = header(&cols);
    for (e, j) in traj.junctions.iter().enumerate() {
        row(
            &mut out,
            [
                e.to_string(),
                num(j.t_j),
                j.pre_mode.to_string(),
                j.post_mode.to_string(),
                (j.index - 1).to_string(),
                j.index.to_string(),
            ],
        );
    }
    out
}

/// One row per (time, output, parameter) pair comparing propagated and
/// finite-difference sensitivities.
pub fn sensitivity_csv(names: &[String], rows: &[usize], sens: &SensitivityTrajectory, fd: &[FdColumn]) -> String {
    let cols = [
        "t",
        "output",
        "parameter",
        "propagated",
        "finite_difference",
        "abs_error",
    ]
    .map(String::from);
    let mut out = header(&cols);
    for (k, &t) in sens.times.iter().enumerate() {
        for &r in rows {
            for col in fd {
                let c = sens.column_of(col.index).expect("column tracked");
                let p = sens.pairs[k].phi_x[(r, c)];
                let f = col.dx[k][r];
                row(
                    &mut out,
                    [
                        num(t),
                        names[r].clone(),
                        names[col.index].clone(),
                        num(p),
                        num(f),
                        num((p - f).abs()),
                    ],
                );
            }
        }
    }
    out
}

/// Tuning trace: one row per iterate.
pub fn tuning_csv(result: &TuningResult, parameter_names: &[String]) -> String {
    let mut cols: Vec<String> = ["iter", "J", "grad_norm", "alpha", "beta", "reset", "m"]
        .map(String::from)
        .to_vec();
    cols.extend(parameter_names.iter().cloned());
    let mut out = header(&cols);
    for it in &result.iterates {
        let opt = |v: Option<String>| v.unwrap_or_default();
        let s = it.step.as_ref();
        let mut f = vec![
            it.iter.to_string(),
            num(it.value),
            num(it.grad_norm),
            opt(s.map(|s| num(s.alpha))),
            opt(s.map(|s| num(s.beta))),
            opt(s.map(|s| u8::from(s.reset).to_string())),
            opt(s.map(|s| s.m.to_string())),
        ];
        f.extend(it.lambda.iter().map(|&v| num(v)));
        row(&mut out, f);
    }
    out
}

/// Peak deviation from the final value over `[a, b]`.
pub fn envelope(times: &[f64], series: &[f64], a: f64, b: f64) -> f64 {
    let Some(&last) = series.last() else {
        return 0.0;
    };
    times
        .iter()
        .zip(series)
        .filter(|(t, _)| **t >= a && **t <= b)
        .map(|(_, v)| (v - last).abs())
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleSummary {
    pub name: String,
    pub peak_abs: f64,
    pub early_envelope: f64,
    pub late_envelope: f64,
    /// Late-window envelope strictly below the early one.
    pub decaying: bool,
}

/// Early window `[0.05 T, 0.5 T]`, late window `[0.5 T, T]` where
/// `T = tf - t0`; for a 10 s run these are `[0.5, 5]` and `[5, 10]`.
pub fn envelope_windows(t0: f64, tf: f64) -> ((f64, f64), (f64, f64)) {
    let span = tf - t0;
    ((t0 + 0.05 * span, t0 + 0.5 * span), (t0 + 0.5 * span, tf))
}

pub fn angle_summaries(model: &PowerSystem, traj: &Trajectory) -> Vec<AngleSummary> {
    let t0 = traj.times[0];
    let tf = *traj.times.last().expect("non-empty trajectory");
    let ((ea, eb), (la, lb)) = envelope_windows(t0, tf);
    relative_angles(model, traj)
        .into_iter()
        .map(|(name, s)| {
            let early = envelope(&traj.times, &s, ea, eb);
            let late = envelope(&traj.times, &s, la, lb);
            AngleSummary {
                name,
                peak_abs: s.iter().fold(0.0, |m, v| m.max(v.abs())),
                early_envelope: early,
                late_envelope: late,
                decaying: late < early,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub scenario: String,
    pub objective: f64,
    pub samples: usize,
    pub junctions: usize,
    pub angles: Vec<AngleSummary>,
    /// Some relative angle fails to decay (late envelope >= early).
    pub non_decaying_oscillation: bool,
}

impl SimulationSummary {
    pub fn new(scenario: &str, objective: f64, model: &PowerSystem, traj: &Trajectory) -> Self {
        let angles = angle_summaries(model, traj);
        Self {
            scenario: scenario.to_string(),
            objective,
            samples: traj.len(),
            junctions: traj.junctions.len(),
            non_decaying_oscillation: angles.iter().any(|a| !a.decaying),
            angles,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

/// Human-readable one-line-per-field rendering.
pub fn describe(summary: &SimulationSummary) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "scenario {}: J = {:e}", summary.scenario, summary.objective);
    for a in &summary.angles {
        let _ = writeln!(
            s,
            "  {}: peak {:.4} rad, envelope {:.4e} -> {:.4e} ({})",
            a.name,
            a.peak_abs,
            a.early_envelope,
            a.late_envelope,
            if a.decaying { "decaying" } else { "not decaying" }
        );
    }
    s
}
