//! Command-line front end.
//!
//! Exit statuses: 0 success, 1 invalid input, 2 numerical failure,
//! 3 failed verification. Errors are also written to stderr as a single
//! JSON object `{"error": kind, "message": ..., "exit_code": n}`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::dae::{simulate, IntegratorConfig, Schedule};
use crate::error::{Error, Result};
use crate::hybrid::HybridModel;
use crate::output::{self, write_file, SimulationSummary};
use crate::scenario::Scenario;
use crate::sens::{fd_sensitivity, simulate_with_sensitivities, FdColumn, SensitivityTrajectory};
use crate::tuner::{objective_from_trajectory, tune, PssObjective, TuningStatus};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_CHECK_FAILED: i32 = 3;

/// Newton tolerance used by `verify-sens` unless overridden; the
/// finite-difference oracle carries an error of roughly `tol / h`.
pub const VERIFY_NEWTON_TOL: f64 = 1e-10;

#[derive(Debug, Parser)]
#[command(
    name = "pss-tune",
    version,
    about = "Hybrid power-system simulation, trajectory sensitivities and PSS tuning"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Overrides {
    /// Output directory (overrides the scenario's `output_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Integration step in seconds.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Newton convergence tolerance (max-norm).
    #[arg(long)]
    pub newton_tol: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a scenario and write its trajectory and summary files.
    Simulate {
        scenario: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Compare propagated parameter sensitivities with central differences.
    VerifySens {
        scenario: PathBuf,
        /// Finite-difference step.
        #[arg(long, default_value_t = 1e-6)]
        h: f64,
        /// Largest admissible relative error.
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        /// Samples with |FD| at or below this are skipped.
        #[arg(long, default_value_t = 1e-6)]
        floor: f64,
        /// Start of the compared time window in seconds.
        #[arg(long, default_value_t = 0.2)]
        t_min: f64,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Tune the stabilizer parameters of a scenario.
    Tune {
        scenario: PathBuf,
        /// Gradient-norm stopping threshold.
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        max_iter: Option<usize>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run one command over many scenarios in parallel; the list file holds
    /// one scenario path per line (`#` starts a comment).
    Batch {
        list: PathBuf,
        #[arg(long, value_enum, default_value_t = BatchCommand::Simulate)]
        command: BatchCommand,
        /// Parent directory; each scenario writes into `<out>/<file stem>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BatchCommand {
    Simulate,
    Tune,
}

#[derive(Debug, Serialize)]
struct ErrorRecord<'a> {
    error: &'a str,
    message: String,
    exit_code: i32,
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_INVALID
    }
}

pub fn error_record(err: &Error) -> String {
    serde_json::to_string(&ErrorRecord {
        error: err.kind(),
        message: err.to_string(),
        exit_code: exit_code(err),
    })
    .expect("error record serializes")
}

/// Parses arguments, runs the command and returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", error_record(&e));
            exit_code(&e)
        }
    }
}

pub fn run(command: &Command) -> Result<i32> {
    match command {
        Command::Simulate { scenario, overrides } => {
            let s = load(scenario, overrides)?;
            let out = cmd_simulate(&s, &output_dir(&s, overrides, scenario))?;
            print!("{}", output::describe(&out));
            Ok(EXIT_OK)
        }
        Command::VerifySens {
            scenario,
            h,
            tol,
            floor,
            t_min,
            overrides,
        } => {
            let mut s = load(scenario, overrides)?;
            if overrides.newton_tol.is_none() {
                s.integrator.newton_tol = s.integrator.newton_tol.min(VERIFY_NEWTON_TOL);
            }
            let opts = VerifyOptions {
                h: *h,
                tol: *tol,
                floor: *floor,
                t_min: *t_min,
            };
            let report = cmd_verify_sens(&s, &opts, &output_dir(&s, overrides, scenario))?;
            print!("{}", report.describe());
            Ok(if report.pass { EXIT_OK } else { EXIT_CHECK_FAILED })
        }
        Command::Tune {
            scenario,
            epsilon,
            max_iter,
            overrides,
        } => {
            let mut s = load(scenario, overrides)?;
            if let Some(e) = epsilon {
                s.tuner.epsilon = *e;
            }
            if let Some(m) = max_iter {
                s.tuner.max_iter = *m;
            }
            let summary = cmd_tune(&s, &output_dir(&s, overrides, scenario))?;
            println!(
                "{}",
                serde_json::to_string_pretty(&summary).expect("summary serializes")
            );
            Ok(match summary.status {
                TuningStatus::LineSearchFailure => EXIT_NUMERICAL,
                _ => EXIT_OK,
            })
        }
        Command::Batch { list, command, out } => cmd_batch(list, *command, out.as_deref()),
    }
}

fn load(path: &Path, overrides: &Overrides) -> Result<Scenario> {
    let mut s = Scenario::load(path)?;
    if let Some(dt) = overrides.dt {
        s.integrator.dt = dt;
    }
    if let Some(tol) = overrides.newton_tol {
        s.integrator.newton_tol = tol;
    }
    Ok(s)
}

fn output_dir(s: &Scenario, overrides: &Overrides, scenario_path: &Path) -> PathBuf {
    if let Some(o) = &overrides.out {
        return o.clone();
    }
    match (&s.output_dir, &s.base_dir) {
        (Some(o), Some(base)) if o.is_relative() => base.join(o),
        (Some(o), _) => o.clone(),
        _ => {
            let stem = scenario_path
                .file_stem()
                .map_or_else(|| "scenario".into(), |s| s.to_string_lossy().into_owned());
            scenario_path.with_file_name(format!("{stem}-out"))
        }
    }
}

fn scenario_name(s: &Scenario) -> &str {
    if s.name.is_empty() {
        "scenario"
    } else {
        &s.name
    }
}

/// Simulates, writes `trajectory.csv`, `junctions.csv` and `summary.json`.
pub fn cmd_simulate(s: &Scenario, out: &Path) -> Result<SimulationSummary> {
    let built = s.build()?;
    let traj = simulate(&built.model, &built.x0, &built.y0, &built.schedule, &s.integrator)?;
    let rows = objective_rows(s, &built)?;
    let j = objective_from_trajectory(&traj, &rows, s.objective.weight);
    let summary = SimulationSummary::new(scenario_name(s), j, &built.model, &traj);
    write_file(
        &out.join("trajectory.csv"),
        &output::trajectory_csv(&built.model, &traj),
    )?;
    write_file(&out.join("junctions.csv"), &output::junctions_csv(&traj))?;
    write_file(&out.join("summary.json"), &summary.to_json())?;
    Ok(summary)
}

fn objective_rows(s: &Scenario, built: &crate::psys::BuiltSystem) -> Result<Vec<usize>> {
    let ids = s
        .objective
        .machines
        .clone()
        .unwrap_or_else(|| built.model.machine_ids());
    ids.iter()
        .map(|&id| {
            built
                .model
                .omega_index(id)
                .ok_or_else(|| Error::config(format!("objective references unknown machine {id}")))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VerifyOptions {
    pub h: f64,
    pub tol: f64,
    pub floor: f64,
    pub t_min: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            h: 1e-6,
            tol: 1e-3,
            floor: 1e-6,
            t_min: 0.2,
        }
    }
}

impl VerifyOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::config(format!(
                "finite-difference step must be positive, got {}",
                self.h
            )));
        }
        if !(self.tol > 0.0 && self.floor >= 0.0) {
            return Err(Error::config("tolerance must be positive and floor nonnegative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParameterCheck {
    pub parameter: String,
    pub index: usize,
    pub max_rel_error: f64,
    /// Samples where `|FD|` exceeded the floor.
    pub checked: usize,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub h: f64,
    pub tol: f64,
    pub checks: Vec<ParameterCheck>,
    pub pass: bool,
}

impl VerifyReport {
    pub fn describe(&self) -> String {
        let mut s = format!("sensitivity check, h = {:e}, tolerance {:e}\n", self.h, self.tol);
        for c in &self.checks {
            s.push_str(&format!(
                "  {:<10} max rel error {:.3e} over {} samples  {}\n",
                c.parameter,
                c.max_rel_error,
                c.checked,
                if c.pass { "ok" } else { "FAIL" }
            ));
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("# schema_version=1\nparameter,max_rel_error,samples,pass\n");
        for c in &self.checks {
            s.push_str(&format!(
                "{},{:?},{},{}\n",
                c.parameter,
                c.max_rel_error,
                c.checked,
                u8::from(c.pass)
            ));
        }
        s
    }
}

/// Propagated sensitivities of `outputs` to the `params` entries of the
/// augmented state, checked against central differences.
#[allow(clippy::too_many_arguments)]
pub fn verify_sensitivities<M: HybridModel + ?Sized>(
    model: &M,
    x0: &[f64],
    y0: &[f64],
    schedule: &Schedule,
    config: &IntegratorConfig,
    outputs: &[usize],
    params: &[usize],
    opts: &VerifyOptions,
) -> Result<(VerifyReport, SensitivityTrajectory, Vec<FdColumn>)> {
    opts.validate()?;
    let (_, sens) = simulate_with_sensitivities(model, x0, y0, schedule, config, Some(params))?;
    let fd: Vec<FdColumn> = params
        .par_iter()
        .map(|&p| fd_sensitivity(model, x0, y0, schedule, config, p, opts.h))
        .collect::<Result<_>>()?;
    let names = model.state_names();
    let checks = fd
        .iter()
        .map(|col| {
            let c = sens.column_of(col.index).expect("tracked column");
            let (mut worst, mut checked) = (0.0f64, 0);
            for (k, &t) in sens.times.iter().enumerate() {
                if t < opts.t_min - 1e-12 {
                    continue;
                }
                for &r in outputs {
                    let f = col.dx[k][r];
                    if f.abs() <= opts.floor {
                        continue;
                    }
                    checked += 1;
                    worst = worst.max((sens.pairs[k].phi_x[(r, c)] - f).abs() / f.abs());
                }
            }
            ParameterCheck {
                parameter: names[col.index].clone(),
                index: col.index,
                max_rel_error: worst,
                checked,
                pass: worst <= opts.tol,
            }
        })
        .collect::<Vec<_>>();
    let pass = checks.iter().all(|c| c.pass);
    Ok((
        VerifyReport {
            h: opts.h,
            tol: opts.tol,
            checks,
            pass,
        },
        sens,
        fd,
    ))
}

/// Checks every stabilizer parameter against central differences of all
/// machine speeds; writes `sensitivity_check.csv` and `sensitivities.csv`.
pub fn cmd_verify_sens(s: &Scenario, opts: &VerifyOptions, out: &Path) -> Result<VerifyReport> {
    opts.validate()?;
    let built = s.build()?;
    let dims = built.model.dims();
    if dims.p == 0 {
        return Err(Error::config("scenario has no stabilizer parameters"));
    }
    let outputs: Vec<usize> = built
        .model
        .machine_ids()
        .iter()
        .filter_map(|&g| built.model.omega_index(g))
        .collect();
    let params: Vec<usize> = dims.lambda_range().collect();
    let (report, sens, fd) = verify_sensitivities(
        &built.model,
        &built.x0,
        &built.y0,
        &built.schedule,
        &s.integrator,
        &outputs,
        &params,
        opts,
    )?;
    write_file(&out.join("sensitivity_check.csv"), &report.to_csv())?;
    write_file(
        &out.join("sensitivities.csv"),
        &output::sensitivity_csv(&built.model.state_names(), &outputs, &sens, &fd),
    )?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TuneSummary {
    pub scenario: String,
    pub status: TuningStatus,
    pub iterations: usize,
    pub parameters: Vec<String>,
    pub lambda_initial: Vec<f64>,
    pub lambda_star: Vec<f64>,
    pub objective_before: f64,
    pub objective_after: f64,
    pub failure: Option<String>,
}

/// Tunes, then writes the trace, the tuned scenario and before/after
/// trajectories. Artifacts are written for every terminal status.
pub fn cmd_tune(s: &Scenario, out: &Path) -> Result<TuneSummary> {
    let built = s.build()?;
    let bounds = s.bounds_for(&built)?;
    let objective = PssObjective::new(&built, s.integrator.clone(), s.objective.clone())?;
    let lambda0 = built.lambda0();
    let result = tune(&objective, &lambda0, &bounds, &s.tuner)?;
    let names: Vec<String> = built.model.parameter_slots().iter().map(|p| p.label()).collect();

    write_file(&out.join("tuning_trace.csv"), &output::tuning_csv(&result, &names))?;
    let tuned = s.with_lambda(&built, &result.lambda_star)?;
    write_file(&out.join("tuned_scenario.toml"), &tuned.to_toml_string())?;
    for (file, lambda) in [
        ("trajectory_before.csv", &lambda0),
        ("trajectory_after.csv", &result.lambda_star),
    ] {
        let x0 = built.x0_with_lambda(lambda)?;
        let traj = simulate(&built.model, &x0, &built.y0, &built.schedule, &s.integrator)?;
        write_file(&out.join(file), &output::trajectory_csv(&built.model, &traj))?;
    }
    let summary = TuneSummary {
        scenario: scenario_name(s).to_string(),
        status: result.status,
        iterations: result.iterations(),
        parameters: names,
        lambda_initial: lambda0,
        lambda_star: result.lambda_star.clone(),
        objective_before: result.initial_value(),
        objective_after: result.value_star,
        failure: result.failure.clone(),
    };
    write_file(
        &out.join("tune_summary.json"),
        &serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    Ok(summary)
}

fn read_list(list: &Path) -> Result<Vec<PathBuf>> {
    let text = std::fs::read_to_string(list).map_err(|source| Error::Io {
        path: list.display().to_string(),
        source,
    })?;
    let base = list.parent().unwrap_or(Path::new("."));
    Ok(text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(|l| base.join(l))
        .collect())
}

/// Runs every listed scenario in parallel; returns the worst exit status.
pub fn cmd_batch(list: &Path, command: BatchCommand, out: Option<&Path>) -> Result<i32> {
    let paths = read_list(list)?;
    if paths.is_empty() {
        return Err(Error::config(format!("batch list {} is empty", list.display())));
    }
    let codes: Vec<(PathBuf, i32)> = paths
        .par_iter()
        .map(|path| {
            let overrides = Overrides {
                out: out.map(|o| {
                    o.join(
                        path.file_stem()
                            .map_or_else(|| "scenario".into(), |s| s.to_string_lossy().into_owned()),
                    )
                }),
                dt: None,
                newton_tol: None,
            };
            let res = load(path, &overrides).and_then(|s| {
                let dir = output_dir(&s, &overrides, path);
                match command {
                    BatchCommand::Simulate => cmd_simulate(&s, &dir).map(|_| EXIT_OK),
                    BatchCommand::Tune => cmd_tune(&s, &dir).map(|t| match t.status {
                        TuningStatus::LineSearchFailure => EXIT_NUMERICAL,
                        _ => EXIT_OK,
                    }),
                }
            });
            match res {
                Ok(code) => (path.clone(), code),
                Err(e) => {
                    eprintln!("{}", error_record(&e));
                    (path.clone(), exit_code(&e))
                }
            }
        })
        .collect();
    for (path, code) in &codes {
        println!("{}\t{}", path.display(), code);
    }
    Ok(codes.iter().map(|(_, c)| *c).max().unwrap_or(EXIT_OK))
}
