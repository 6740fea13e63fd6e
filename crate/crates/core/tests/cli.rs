//! Command-line contract tests.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::DMatrix;
use pss_tune::cli::{verify_sensitivities, VerifyOptions, VERIFY_NEWTON_TOL};
use pss_tune::hybrid::{Dims, HybridModel, ModeId};
use pss_tune::output::SimulationSummary;
use pss_tune::psys::PowerSystem;
use pss_tune::scenario::Scenario;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pss-tune"))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn read(dir: &Path, file: &str) -> String {
    std::fs::read_to_string(dir.join(file)).unwrap_or_else(|e| panic!("{file}: {e}"))
}

fn assert_csv_shape(text: &str) {
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# schema_version=1"));
    let header = lines.next().expect("header row");
    let cols = header.split(',').count();
    assert!(cols > 1 && !header.chars().next().unwrap().is_ascii_digit());
    for l in lines {
        assert_eq!(l.split(',').count(), cols, "ragged row {l}");
    }
}

fn error_json(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("error record on stderr");
    serde_json::from_str(line).expect("error record is JSON")
}

#[test]
fn simulate_writes_deterministic_artifacts() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let s = scenario("nominal.toml");
    for dir in [&a, &b] {
        let out = run(&["simulate", s.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for file in ["trajectory.csv", "junctions.csv", "summary.json"] {
        assert_eq!(
            read(a.path(), file),
            read(b.path(), file),
            "{file} differs between runs"
        );
    }
    let traj = read(a.path(), "trajectory.csv");
    assert_csv_shape(&traj);
    let header = traj.lines().nth(1).unwrap();
    assert!(header.starts_with("t,mode,delta_G1,omega_G1"));
    assert!(header.ends_with("delta_21,delta_31"));
    assert_csv_shape(&read(a.path(), "junctions.csv"));
    assert_eq!(read(a.path(), "junctions.csv").lines().count(), 4);

    let summary: SimulationSummary = serde_json::from_str(&read(a.path(), "summary.json")).unwrap();
    assert_eq!(summary.angles.len(), 2);
    assert!(summary.objective > 0.0);
}

#[test]
fn summary_flag_agrees_with_envelopes() {
    let dir = TempDir::new().unwrap();
    let mut ratios = Vec::new();
    for name in ["no_pss.toml", "nominal.toml"] {
        let out_dir = dir.path().join(name);
        let out = run(&[
            "simulate",
            scenario(name).to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0));
        let summary: SimulationSummary = serde_json::from_str(&read(&out_dir, "summary.json")).unwrap();
        let undamped = summary.angles.iter().any(|a| a.late_envelope >= a.early_envelope);
        assert_eq!(summary.non_decaying_oscillation, undamped);
        ratios.push(
            summary
                .angles
                .iter()
                .map(|a| a.late_envelope / a.early_envelope)
                .fold(0.0, f64::max),
        );
    }
    // the stabilizer damps the swing relative to the unstabilized run
    assert!(ratios[1] < ratios[0], "{ratios:?}");
}

#[test]
fn missing_scenario_gives_an_io_error_record() {
    let out = run(&["simulate", "/nonexistent/scenario.toml"]);
    assert_eq!(out.status.code(), Some(1));
    let rec = error_json(&out);
    assert_eq!(rec["error"], "io");
    assert_eq!(rec["exit_code"], 1);
    assert!(rec["message"].as_str().unwrap().contains("/nonexistent/scenario.toml"));
}

#[test]
fn zero_fd_step_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let out = run(&[
        "verify-sens",
        scenario("nominal.toml").to_str().unwrap(),
        "--h",
        "0",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"], "config");
}

#[test]
fn misaligned_fault_is_rejected_before_running() {
    let dir = TempDir::new().unwrap();
    let text = std::fs::read_to_string(scenario("nominal.toml"))
        .unwrap()
        .replace("t_off_s = 0.1", "t_off_s = 0.105");
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, text).unwrap();
    let out = run(&[
        "simulate",
        path.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn verify_sens_passes_on_the_nominal_scenario() {
    let dir = TempDir::new().unwrap();
    let out = run(&[
        "verify-sens",
        scenario("nominal.toml").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let check = read(dir.path(), "sensitivity_check.csv");
    assert_csv_shape(&check);
    assert_eq!(check.lines().count(), 2 + 6);
    assert_csv_shape(&read(dir.path(), "sensitivities.csv"));
}

/// Delegates to the 9-bus model but scales `d flow / d lambda`, which only
/// the sensitivity propagation sees.
struct CorruptedJacobian(PowerSystem);

impl HybridModel for CorruptedJacobian {
    fn dims(&self) -> Dims {
        self.0.dims()
    }
    fn has_mode(&self, mode: ModeId) -> bool {
        self.0.has_mode(mode)
    }
    fn flow(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        self.0.flow(x, y, out)
    }
    fn algebraic(&self, mode: ModeId, x: &[f64], y: &[f64], out: &mut [f64]) {
        self.0.algebraic(mode, x, y, out)
    }
    fn flow_jacobian(&self, x: &[f64], y: &[f64], fx: &mut DMatrix<f64>, fy: &mut DMatrix<f64>) {
        self.0.flow_jacobian(x, y, fx, fy);
        for c in self.dims().lambda_range() {
            fx.column_mut(c).scale_mut(1.2);
        }
    }
    fn algebraic_jacobian(&self, mode: ModeId, x: &[f64], y: &[f64], gx: &mut DMatrix<f64>, gy: &mut DMatrix<f64>) {
        self.0.algebraic_jacobian(mode, x, y, gx, gy)
    }
    fn canonicalize_algebraic(&self, y: &mut [f64]) {
        self.0.canonicalize_algebraic(y)
    }
}

#[test]
fn corrupted_jacobian_fails_the_sensitivity_check() {
    let mut s = Scenario::load(&scenario("nominal.toml")).unwrap();
    s.integrator.newton_tol = VERIFY_NEWTON_TOL;
    let built = s.build().unwrap();
    let outputs: Vec<usize> = built
        .model
        .machine_ids()
        .iter()
        .map(|&g| built.model.omega_index(g).unwrap())
        .collect();
    let params: Vec<usize> = built.model.dims().lambda_range().collect();
    let opts = VerifyOptions::default();
    let run_check = |model: &dyn HybridModel| {
        verify_sensitivities(
            model,
            &built.x0,
            &built.y0,
            &built.schedule,
            &s.integrator,
            &outputs,
            &params,
            &opts,
        )
        .unwrap()
        .0
    };
    assert!(run_check(&built.model).pass);
    let bad = run_check(&CorruptedJacobian(built.model.clone()));
    assert!(!bad.pass);
    assert!(bad.checks.iter().all(|c| c.max_rel_error > 0.1));
}

#[test]
fn tune_lowers_the_objective_and_writes_artifacts() {
    let dir = TempDir::new().unwrap();
    let out = run(&[
        "tune",
        scenario("nominal.toml").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_str(&read(dir.path(), "tune_summary.json")).unwrap();
    let before = summary["objective_before"].as_f64().unwrap();
    let after = summary["objective_after"].as_f64().unwrap();
    assert!(after < before, "{after} !< {before}");
    assert_eq!(summary["status"], "converged");
    for file in ["tuning_trace.csv", "trajectory_before.csv", "trajectory_after.csv"] {
        assert_csv_shape(&read(dir.path(), file));
    }
    let trace = read(dir.path(), "tuning_trace.csv");
    assert!(trace
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("iter,J,grad_norm,alpha,beta,reset,m,G2_Ks,G2_T1,G2_T2,G3_Ks"));

    // the tuned scenario reloads and reproduces the tuned objective
    let tuned = dir.path().join("tuned_scenario.toml");
    let sim_dir = dir.path().join("resim");
    let out = run(&["simulate", tuned.to_str().unwrap(), "--out", sim_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let resim: SimulationSummary = serde_json::from_str(&read(&sim_dir, "summary.json")).unwrap();
    assert!((resim.objective - after).abs() <= 1e-12 * after);
    assert!(!resim.non_decaying_oscillation);
}

#[test]
fn batch_simulates_every_listed_scenario() {
    let dir = TempDir::new().unwrap();
    let out = run(&[
        "batch",
        scenario("all.txt").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for stem in ["no_pss", "nominal", "clear_150ms", "bus4", "bus7", "bus8"] {
        assert_csv_shape(&read(&dir.path().join(stem), "trajectory.csv"));
    }
}

#[test]
fn unknown_subcommand_is_invalid() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}
