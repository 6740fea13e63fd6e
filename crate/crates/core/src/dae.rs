//! Fixed-step implicit trapezoidal integration of hybrid DAE models.
//!
//! Each step solves the coupled system
//!
//! ```text
//! x_c' - x_c - dt/2 (f(x, y) + f(x', y')) = 0
//!                             g(x', y') = 0
//! ```
//!
//! for `(x_c', y')` by Newton's method with a dense LU of the bordered
//! matrix. Discrete states and parameters are copied, never integrated.
//! Switching events fire on grid points: the continuous state is held and
//! the algebraic state is re-solved under the post-event equation set, so
//! every junction produces two samples (`t_J-` and `t_J+`) at the same time.

use nalgebra::{DMatrix, DVector, Dyn, LU};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hybrid::{
    eval_trigger, AugmentedState, Dims, EventKind, EventSpec, HybridModel, Jacobians, ModeId, Trigger, BASE_MODE,
};

/// Relative slack used when checking that event times sit on the grid.
const GRID_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub t0: f64,
    pub tf: f64,
    /// Max-norm of the Newton residual.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            t0: 0.0,
            tf: 10.0,
            newton_tol: 1e-8,
            newton_max_iter: 20,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.tf > self.t0) {
            return Err(Error::config(format!("tf ({}) must exceed t0 ({})", self.tf, self.t0)));
        }
        if !(self.newton_tol > 0.0) {
            return Err(Error::config("newton_tol must be positive"));
        }
        if self.newton_max_iter == 0 {
            return Err(Error::config("newton_max_iter must be at least 1"));
        }
        self.grid_index(self.tf)
            .map(|_| ())
            .ok_or_else(|| Error::config("tf - t0 must be an integer multiple of dt"))
    }

    pub fn steps(&self) -> usize {
        ((self.tf - self.t0) / self.dt).round() as usize
    }

    pub fn time_at(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    /// Grid index of `t`, if `t` lies on the integration grid.
    pub fn grid_index(&self, t: f64) -> Option<usize> {
        let r = (t - self.t0) / self.dt;
        let k = r.round();
        if k < 0.0 || (r - k).abs() > GRID_SLACK * r.abs().max(1.0) {
            None
        } else {
            Some(k as usize)
        }
    }
}

/// Ordered list of events for one simulation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Schedule {
    pub events: Vec<EventSpec>,
}

impl Schedule {
    pub fn new(events: Vec<EventSpec>) -> Self {
        Self { events }
    }

    /// Mode active at `t0`.
    pub fn initial_mode(&self) -> ModeId {
        self.events.first().map_or(BASE_MODE, |e| e.pre_mode)
    }

    /// Checks that events chain the modes in time order, and that every
    /// time-triggered event lies on the integration grid inside the horizon.
    pub fn validate<M: HybridModel + ?Sized>(&self, model: &M, config: &IntegratorConfig) -> Result<()> {
        config.validate()?;
        let mut mode = self.initial_mode();
        if !model.has_mode(mode) {
            return Err(Error::config(format!(
                "initial mode {mode} is not defined by the model"
            )));
        }
        let mut last_t = f64::NEG_INFINITY;
        for (i, ev) in self.events.iter().enumerate() {
            if ev.pre_mode != mode {
                return Err(Error::config(format!(
                    "event {i} expects pre-mode {} but mode {} is active",
                    ev.pre_mode, mode
                )));
            }
            if !model.has_mode(ev.post_mode) {
                return Err(Error::config(format!("event {i}: unknown post-mode {}", ev.post_mode)));
            }
            if let EventKind::Reset(j) = ev.kind {
                if model.dims().l == 0 {
                    return Err(Error::config(format!(
                        "event {i} resets map {j} but the model has no discrete states"
                    )));
                }
            }
            if let Trigger::Time(t_j) = ev.trigger {
                if t_j < config.t0 || t_j > config.tf {
                    return Err(Error::config(format!(
                        "event {i} at t = {t_j} lies outside [{}, {}]",
                        config.t0, config.tf
                    )));
                }
                if t_j <= last_t {
                    return Err(Error::config(format!(
                        "event {i} at t = {t_j} is not after the previous event"
                    )));
                }
                if config.grid_index(t_j).is_none() {
                    return Err(Error::config(format!(
                        "event {i} at t = {t_j} is not on the integration grid (dt = {})",
                        config.dt
                    )));
                }
                last_t = t_j;
            }
            mode = ev.post_mode;
        }
        Ok(())
    }
}

/// Data recorded at a junction.
#[derive(Clone, Debug, PartialEq)]
pub struct JunctionRecord {
    pub t_j: f64,
    pub event: EventSpec,
    /// Full vector field (length `n + l + p`) just before the junction.
    pub f_minus: Vec<f64>,
    /// Full vector field just after the junction.
    pub f_plus: Vec<f64>,
    pub y_minus: Vec<f64>,
    pub y_plus: Vec<f64>,
    pub pre_mode: ModeId,
    pub post_mode: ModeId,
    /// Trajectory index of the `t_J+` sample.
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub dims: Dims,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub algebraics: Vec<Vec<f64>>,
    pub modes: Vec<ModeId>,
    pub junctions: Vec<JunctionRecord>,
}

impl Trajectory {
    fn new(dims: Dims) -> Self {
        Self {
            dims,
            times: Vec::new(),
            states: Vec::new(),
            algebraics: Vec::new(),
            modes: Vec::new(),
            junctions: Vec::new(),
        }
    }

    fn push(&mut self, t: f64, x: &[f64], y: &[f64], mode: ModeId) {
        self.times.push(t);
        self.states.push(x.to_vec());
        self.algebraics.push(y.to_vec());
        self.modes.push(mode);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, k: usize) -> AugmentedState {
        AugmentedState::from_flat(self.dims, &self.states[k]).expect("stored states match dims")
    }

    /// Time series of one augmented-state entry.
    pub fn state_series(&self, index: usize) -> Vec<f64> {
        self.states.iter().map(|x| x[index]).collect()
    }

    pub fn algebraic_series(&self, index: usize) -> Vec<f64> {
        self.algebraics.iter().map(|y| y[index]).collect()
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Result of an algebraic-only Newton solve.
#[derive(Clone, Debug, PartialEq)]
pub struct AlgebraicSolve {
    pub y: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter()
        .fold(0.0, |a, b| if b.is_nan() { f64::NAN } else { a.max(b.abs()) })
}

fn lu_solve(lu: &LU<f64, Dyn, Dyn>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    lu.solve(rhs).filter(|s| s.iter().all(|v| v.is_finite()))
}

/// Newton solve of `g(mode)(x, y) = 0` for `y` with `x` held fixed.
fn solve_algebraic<M: HybridModel + ?Sized>(
    model: &M,
    mode: ModeId,
    x: &[f64],
    y_guess: &[f64],
    tol: f64,
    max_iter: usize,
) -> std::result::Result<AlgebraicSolve, (String, f64)> {
    let dims = model.dims();
    let mut y = y_guess.to_vec();
    let mut g = vec![0.0; dims.m];
    let mut jac = Jacobians::zeros(dims);
    model.algebraic(mode, x, &y, &mut g);
    let mut res = max_norm(&g);
    let mut iterations = 0;
    while !(res <= tol) {
        if iterations >= max_iter || !res.is_finite() {
            return Err((format!("no convergence after {iterations} iterations"), res));
        }
        jac.evaluate_into(model, mode, x, &y);
        let lu = jac.gy.clone().lu();
        let rhs = DVector::from_column_slice(&g);
        let delta = lu_solve(&lu, &rhs).ok_or_else(|| ("singular algebraic Jacobian".to_string(), res))?;
        for (yi, d) in y.iter_mut().zip(delta.iter()) {
            *yi -= d;
        }
        iterations += 1;
        model.algebraic(mode, x, &y, &mut g);
        res = max_norm(&g);
    }
    model.canonicalize_algebraic(&mut y);
    Ok(AlgebraicSolve {
        y,
        iterations,
        residual: res,
    })
}

/// Solves the initial algebraic equations `0 = g(x0, y0)` from a guess.
pub fn solve_initial_algebraic<M: HybridModel + ?Sized>(
    model: &M,
    x0: &[f64],
    mode: ModeId,
    y_guess: &[f64],
    config: &IntegratorConfig,
) -> Result<AlgebraicSolve> {
    let dims = model.dims();
    if x0.len() != dims.augmented() || y_guess.len() != dims.m {
        return Err(Error::structure("initial point does not match model dims"));
    }
    if !model.has_mode(mode) {
        return Err(Error::structure(format!("unknown mode {mode}")));
    }
    solve_algebraic(model, mode, x0, y_guess, config.newton_tol, config.newton_max_iter)
        .map_err(|(message, residual)| Error::Initialization { message, residual })
}

/// Factorized trapezoidal Newton matrix at a converged point.
pub struct NewtonMatrix {
    pub mode: ModeId,
    pub lu: LU<f64, Dyn, Dyn>,
}

/// Assembles `[I - dt/2 f_xc, -dt/2 f_y; g_xc, g_y]`.
pub fn newton_matrix(dims: Dims, jac: &Jacobians, dt: f64) -> DMatrix<f64> {
    let (n, m) = (dims.n, dims.m);
    let mut a = DMatrix::zeros(n + m, n + m);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = -0.5 * dt * jac.fx[(i, j)];
        }
        a[(i, i)] += 1.0;
        for j in 0..m {
            a[(i, n + j)] = -0.5 * dt * jac.fy[(i, j)];
        }
    }
    for i in 0..m {
        for j in 0..n {
            a[(n + i, j)] = jac.gx[(i, j)];
        }
        for j in 0..m {
            a[(n + i, n + j)] = jac.gy[(i, j)];
        }
    }
    a
}

/// Data handed to a [`StepObserver`] after each accepted step.
pub struct StepContext<'a> {
    pub t_prev: f64,
    pub t: f64,
    pub dt: f64,
    pub mode: ModeId,
    /// Jacobians at the start of the step.
    pub jac_prev: &'a Jacobians,
    /// Jacobians at the accepted end point.
    pub jac: &'a Jacobians,
    /// Factorized Newton matrix at the accepted end point.
    pub newton: &'a NewtonMatrix,
}

pub struct JunctionContext<'a> {
    pub record: &'a JunctionRecord,
    /// Augmented state at `t_J+`.
    pub x: &'a [f64],
    /// Post-mode Jacobians at `(x, y+)`.
    pub jac_plus: &'a Jacobians,
}

/// Hook for computations that ride along an integration (sensitivities).
/// Each callback corresponds to exactly one new trajectory sample.
pub trait StepObserver {
    fn start(&mut self, t: f64, mode: ModeId, x: &[f64], y: &[f64], jac: &Jacobians) -> Result<()>;
    fn junction(&mut self, ctx: &JunctionContext<'_>) -> Result<()>;
    fn step(&mut self, ctx: &StepContext<'_>) -> Result<()>;
}

impl StepObserver for () {
    fn start(&mut self, _: f64, _: ModeId, _: &[f64], _: &[f64], _: &Jacobians) -> Result<()> {
        Ok(())
    }
    fn junction(&mut self, _: &JunctionContext<'_>) -> Result<()> {
        Ok(())
    }
    fn step(&mut self, _: &StepContext<'_>) -> Result<()> {
        Ok(())
    }
}

/// Integrator state for one run: the current point with its Jacobians and
/// Newton factorization, reused as the first Newton matrix of the next step.
struct Stepper<'m, M: HybridModel + ?Sized> {
    model: &'m M,
    dims: Dims,
    config: IntegratorConfig,
    mode: ModeId,
    x: Vec<f64>,
    y: Vec<f64>,
    f: Vec<f64>,
    jac: Jacobians,
    jac_next: Jacobians,
    newton: Option<NewtonMatrix>,
}

impl<'m, M: HybridModel + ?Sized> Stepper<'m, M> {
    fn new(model: &'m M, config: &IntegratorConfig, mode: ModeId, x: Vec<f64>, y: Vec<f64>) -> Self {
        let dims = model.dims();
        let mut f = vec![0.0; dims.n];
        model.flow(&x, &y, &mut f);
        let mut jac = Jacobians::zeros(dims);
        jac.evaluate_into(model, mode, &x, &y);
        Self {
            model,
            dims,
            config: config.clone(),
            mode,
            x,
            y,
            f,
            jac,
            jac_next: Jacobians::zeros(dims),
            newton: None,
        }
    }

    fn factor_current(&mut self) -> Option<()> {
        let a = newton_matrix(self.dims, &self.jac, self.config.dt);
        let lu = a.lu();
        if !lu.is_invertible() {
            return None;
        }
        self.newton = Some(NewtonMatrix { mode: self.mode, lu });
        Some(())
    }

    fn residual(&self, xn: &[f64], yn: &[f64], fn_: &mut [f64], out: &mut [f64]) {
        let (n, dt) = (self.dims.n, self.config.dt);
        self.model.flow(xn, yn, fn_);
        for i in 0..n {
            out[i] = xn[i] - self.x[i] - 0.5 * dt * (self.f[i] + fn_[i]);
        }
        self.model.algebraic(self.mode, xn, yn, &mut out[n..]);
    }

    /// Advances one step of length `dt` to time `t_new`.
    fn step(&mut self, t_new: f64) -> Result<()> {
        let (n, m) = (self.dims.n, self.dims.m);
        let mode = self.mode;
        let fail = move |message: String, residual: f64| Error::Step {
            t: t_new,
            mode,
            message,
            residual,
        };

        let mut xn = self.x.clone();
        let mut yn = self.y.clone();
        let mut fn_ = vec![0.0; n];
        let mut r = vec![0.0; n + m];
        self.residual(&xn, &yn, &mut fn_, &mut r);
        let mut res = max_norm(&r);
        let mut iterations = 0;
        let mut at_start = true;
        while !(res <= self.config.newton_tol) {
            if iterations >= self.config.newton_max_iter || !res.is_finite() {
                return Err(fail(format!("no convergence after {iterations} iterations"), res));
            }
            let reuse = at_start && self.newton.as_ref().is_some_and(|nm| nm.mode == self.mode);
            let delta = if reuse {
                lu_solve(&self.newton.as_ref().unwrap().lu, &DVector::from_column_slice(&r))
            } else {
                self.jac_next.evaluate_into(self.model, self.mode, &xn, &yn);
                let lu = newton_matrix(self.dims, &self.jac_next, self.config.dt).lu();
                lu_solve(&lu, &DVector::from_column_slice(&r))
            };
            let delta = delta.ok_or_else(|| fail("singular Newton matrix".into(), res))?;
            for i in 0..n {
                xn[i] -= delta[i];
            }
            for i in 0..m {
                yn[i] -= delta[n + i];
            }
            at_start = false;
            iterations += 1;
            self.residual(&xn, &yn, &mut fn_, &mut r);
            res = max_norm(&r);
        }

        // keep the start-of-step Jacobians in `jac_next` for observers
        std::mem::swap(&mut self.jac, &mut self.jac_next);
        self.x = xn;
        self.y = yn;
        self.f = fn_;
        self.jac.evaluate_into(self.model, self.mode, &self.x, &self.y);
        self.factor_current()
            .ok_or_else(|| fail("singular Newton matrix at accepted point".into(), res))?;
        Ok(())
    }

    /// Fires `event` at the current point and returns its junction record.
    fn junction(&mut self, event: &EventSpec, t_j: f64, index: usize) -> Result<JunctionRecord> {
        let record = switch_mode_inner(self.model, event, &mut self.x, &self.y, t_j, &self.config, index)?;
        self.mode = event.post_mode;
        self.y = record.y_plus.clone();
        self.f.copy_from_slice(&record.f_plus[..self.dims.n]);
        self.jac.evaluate_into(self.model, self.mode, &self.x, &self.y);
        self.newton = None;
        self.factor_current().ok_or_else(|| Error::Junction {
            t: t_j,
            pre_mode: event.pre_mode,
            post_mode: event.post_mode,
            message: "singular Newton matrix after junction".into(),
            residual: 0.0,
        })?;
        Ok(record)
    }
}

fn switch_mode_inner<M: HybridModel + ?Sized>(
    model: &M,
    event: &EventSpec,
    x: &mut [f64],
    y_minus: &[f64],
    t_j: f64,
    config: &IntegratorConfig,
    index: usize,
) -> Result<JunctionRecord> {
    let dims = model.dims();
    let big_n = dims.augmented();
    let fail = |message: String, residual: f64| Error::Junction {
        t: t_j,
        pre_mode: event.pre_mode,
        post_mode: event.post_mode,
        message,
        residual,
    };
    if !model.has_mode(event.post_mode) {
        return Err(fail(format!("unknown post-mode {}", event.post_mode), f64::NAN));
    }
    let mut f_minus = vec![0.0; big_n];
    model.flow(x, y_minus, &mut f_minus[..dims.n]);
    if let EventKind::Reset(j) = event.kind {
        let z = model
            .reset(j, x, y_minus)
            .ok_or_else(|| fail(format!("unknown reset map {j}"), f64::NAN))?;
        if z.len() != dims.l {
            return Err(fail(
                format!("reset map {j} returned the wrong number of states"),
                f64::NAN,
            ));
        }
        x[dims.z_range()].copy_from_slice(&z);
    }
    let solve = solve_algebraic(
        model,
        event.post_mode,
        x,
        y_minus,
        config.newton_tol,
        config.newton_max_iter,
    )
    .map_err(|(message, residual)| fail(message, residual))?;
    let mut f_plus = vec![0.0; big_n];
    model.flow(x, &solve.y, &mut f_plus[..dims.n]);
    Ok(JunctionRecord {
        t_j,
        event: *event,
        f_minus,
        f_plus,
        y_minus: y_minus.to_vec(),
        y_plus: solve.y,
        pre_mode: event.pre_mode,
        post_mode: event.post_mode,
        index,
    })
}

/// Solves the post-event algebraic equations at a junction with the
/// continuous state held fixed. Reset events also replace `z` in `x`.
pub fn switch_mode<M: HybridModel + ?Sized>(
    model: &M,
    event: &EventSpec,
    x: &mut [f64],
    y_minus: &[f64],
    t_j: f64,
    config: &IntegratorConfig,
) -> Result<JunctionRecord> {
    let dims = model.dims();
    if x.len() != dims.augmented() || y_minus.len() != dims.m {
        return Err(Error::structure("junction point does not match model dims"));
    }
    switch_mode_inner(model, event, x, y_minus, t_j, config, 0)
}

/// One trapezoidal step from a consistent point `(x_k, y_k)`.
pub fn trapezoidal_step<M: HybridModel + ?Sized>(
    model: &M,
    mode: ModeId,
    x_k: &[f64],
    y_k: &[f64],
    t_k: f64,
    dt: f64,
    config: &IntegratorConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let dims = model.dims();
    if x_k.len() != dims.augmented() || y_k.len() != dims.m {
        return Err(Error::structure("step point does not match model dims"));
    }
    if !model.has_mode(mode) {
        return Err(Error::structure(format!("unknown mode {mode}")));
    }
    let cfg = IntegratorConfig { dt, ..config.clone() };
    let mut stepper = Stepper::new(model, &cfg, mode, x_k.to_vec(), y_k.to_vec());
    stepper.step(t_k + dt)?;
    Ok((stepper.x, stepper.y))
}

/// Simulates over `[t0, tf]` through the scheduled events.
pub fn simulate<M: HybridModel + ?Sized>(
    model: &M,
    x0: &[f64],
    y_guess: &[f64],
    schedule: &Schedule,
    config: &IntegratorConfig,
) -> Result<Trajectory> {
    simulate_observed(model, x0, y_guess, schedule, config, &mut ())
}

/// [`simulate`] with an observer called at every new trajectory sample.
pub fn simulate_observed<M: HybridModel + ?Sized, O: StepObserver + ?Sized>(
    model: &M,
    x0: &[f64],
    y_guess: &[f64],
    schedule: &Schedule,
    config: &IntegratorConfig,
    observer: &mut O,
) -> Result<Trajectory> {
    let dims = model.dims();
    if x0.len() != dims.augmented() || y_guess.len() != dims.m {
        return Err(Error::structure("initial point does not match model dims"));
    }
    schedule.validate(model, config)?;

    let mode0 = schedule.initial_mode();
    let init = solve_initial_algebraic(model, x0, mode0, y_guess, config)?;
    let mut stepper = Stepper::new(model, config, mode0, x0.to_vec(), init.y);
    stepper.factor_current().ok_or_else(|| Error::Initialization {
        message: "singular Newton matrix at the initial point".into(),
        residual: init.residual,
    })?;

    let mut traj = Trajectory::new(dims);
    traj.push(config.t0, &stepper.x, &stepper.y, stepper.mode);
    observer.start(config.t0, stepper.mode, &stepper.x, &stepper.y, &stepper.jac)?;

    let mut pending = 0;
    let steps = config.steps();
    for k in 0..=steps {
        let t = config.time_at(k);
        if k > 0 {
            let t_prev = config.time_at(k - 1);
            stepper.step(t)?;
            traj.push(t, &stepper.x, &stepper.y, stepper.mode);
            observer.step(&StepContext {
                t_prev,
                t,
                dt: config.dt,
                mode: stepper.mode,
                jac_prev: &stepper.jac_next,
                jac: &stepper.jac,
                newton: stepper.newton.as_ref().expect("factorized after step"),
            })?;
        }
        while let Some(ev) = schedule.events.get(pending) {
            let fires = match ev.trigger {
                Trigger::Time(t_j) => config.grid_index(t_j) == Some(k),
                Trigger::State(_) => eval_trigger(model, ev, t, &stepper.x, &stepper.y)? <= 0.0,
            };
            if !fires {
                break;
            }
            let record = stepper.junction(ev, t, traj.len())?;
            traj.push(t, &stepper.x, &stepper.y, stepper.mode);
            observer.junction(&JunctionContext {
                record: &record,
                x: &stepper.x,
                jac_plus: &stepper.jac,
            })?;
            traj.junctions.push(record);
            pending += 1;
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybrid::test_models::{ScalarGrowth, TapModel};
    use crate::hybrid::EventKind;

    #[test]
    fn linear_initial_algebraic() {
        let cfg = IntegratorConfig::default();
        let sol = solve_initial_algebraic(&ScalarGrowth, &[3.0, 0.5], 0, &[0.0], &cfg).unwrap();
        assert!((sol.y[0] - 6.0).abs() < 1e-12);
        assert_eq!(sol.iterations, 1);
    }

    struct Singular;
    impl HybridModel for Singular {
        fn dims(&self) -> Dims {
            Dims::new(1, 0, 0, 2)
        }
        fn has_mode(&self, m: ModeId) -> bool {
            m == 0
        }
        fn flow(&self, _x: &[f64], _y: &[f64], out: &mut [f64]) {
            out[0] = 0.0;
        }
        fn algebraic(&self, _m: ModeId, x: &[f64], y: &[f64], out: &mut [f64]) {
            out[0] = y[0] + y[1] - x[0];
            out[1] = 2.0 * y[0] + 2.0 * y[1] - 1.0;
        }
        fn flow_jacobian(&self, _: &[f64], _: &[f64], _: &mut DMatrix<f64>, _: &mut DMatrix<f64>) {}
        fn algebraic_jacobian(&self, _: ModeId, _: &[f64], _: &[f64], gx: &mut DMatrix<f64>, gy: &mut DMatrix<f64>) {
            gx[(0, 0)] = -1.0;
            gy[(0, 0)] = 1.0;
            gy[(0, 1)] = 1.0;
            gy[(1, 0)] = 2.0;
            gy[(1, 1)] = 2.0;
        }
    }

    #[test]
    fn singular_algebraic_jacobian_is_an_error() {
        let cfg = IntegratorConfig::default();
        let err = solve_initial_algebraic(&Singular, &[1.0], 0, &[0.0, 0.0], &cfg).unwrap_err();
        assert!(matches!(err, Error::Initialization { .. }), "{err}");
    }

    #[test]
    fn closed_form_linear_step() {
        let cfg = IntegratorConfig::default();
        let (x, y) = trapezoidal_step(&ScalarGrowth, 0, &[1.0, -1.0], &[2.0], 0.0, 0.01, &cfg).unwrap();
        let expected = (1.0 - 0.005) / (1.0 + 0.005);
        assert!((x[0] - expected).abs() < 1e-12);
        assert!((y[0] - 2.0 * expected).abs() < 1e-8);
        // parameter bitwise unchanged
        assert_eq!(x[1].to_bits(), (-1.0f64).to_bits());
    }

    #[test]
    fn misaligned_event_rejected() {
        let cfg = IntegratorConfig {
            tf: 1.0,
            ..Default::default()
        };
        let sched = Schedule::new(vec![EventSpec::switching_at(0.1234, 0, 0)]);
        assert!(matches!(sched.validate(&ScalarGrowth, &cfg), Err(Error::Config(_))));
        let sched = Schedule::new(vec![
            EventSpec::switching_at(0.2, 0, 0),
            EventSpec::switching_at(0.1, 0, 0),
        ]);
        assert!(sched.validate(&ScalarGrowth, &cfg).is_err());
        let sched = Schedule::new(vec![EventSpec::switching_at(1.5, 0, 0)]);
        assert!(sched.validate(&ScalarGrowth, &cfg).is_err());
        let sched = Schedule::new(vec![EventSpec::switching_at(0.3, 0, 0)]);
        assert!(sched.validate(&ScalarGrowth, &cfg).is_ok());
    }

    #[test]
    fn bad_config_rejected() {
        assert!(IntegratorConfig {
            dt: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(IntegratorConfig {
            tf: -1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(IntegratorConfig {
            newton_tol: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(IntegratorConfig {
            dt: 0.003,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn identity_junction() {
        let cfg = IntegratorConfig::default();
        let mut x = vec![1.5, 0.3];
        let y = vec![3.0];
        let rec = switch_mode(
            &ScalarGrowth,
            &EventSpec::switching_at(0.5, 0, 0),
            &mut x,
            &y,
            0.5,
            &cfg,
        )
        .unwrap();
        assert_eq!(rec.y_plus, rec.y_minus);
        assert_eq!(rec.f_plus, rec.f_minus);
    }

    #[test]
    fn junction_samples_are_duplicated_and_continuous() {
        let cfg = IntegratorConfig {
            tf: 0.5,
            dt: 0.05,
            ..Default::default()
        };
        let sched = Schedule::new(vec![EventSpec::switching_at(0.2, 0, 0)]);
        let traj = simulate(&ScalarGrowth, &[1.0, -0.4], &[2.0], &sched, &cfg).unwrap();
        assert_eq!(traj.len(), 12);
        let j = &traj.junctions[0];
        assert_eq!(traj.times[j.index], traj.times[j.index - 1]);
        assert_eq!(traj.states[j.index], traj.states[j.index - 1]);
        for w in traj.times.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn state_triggered_reset_fires_once() {
        let cfg = IntegratorConfig {
            tf: 3.0,
            dt: 0.01,
            ..Default::default()
        };
        let sched = Schedule::new(vec![EventSpec {
            kind: EventKind::Reset(1),
            trigger: Trigger::State(0),
            pre_mode: 0,
            post_mode: 0,
        }]);
        // x' = -x + z from x = 1, z = 0: x crosses 0.5 at t = ln 2
        let traj = simulate(&TapModel, &[1.0, 0.0], &[0.0], &sched, &cfg).unwrap();
        assert_eq!(traj.junctions.len(), 1);
        let j = &traj.junctions[0];
        assert!((j.t_j - std::f64::consts::LN_2).abs() < 0.011, "{}", j.t_j);
        assert_eq!(traj.states[j.index][1], 1.0);
        assert_eq!(traj.states[j.index][0], traj.states[j.index - 1][0]);
        // z is piecewise constant
        assert!(traj.states[..j.index].iter().all(|x| x[1] == 0.0));
        assert!(traj.states[j.index..].iter().all(|x| x[1] == 1.0));
    }

    #[test]
    fn deterministic_runs() {
        let cfg = IntegratorConfig {
            tf: 1.0,
            ..Default::default()
        };
        let sched = Schedule::new(vec![EventSpec::switching_at(0.3, 0, 0)]);
        let a = simulate(&ScalarGrowth, &[1.0, 0.7], &[2.0], &sched, &cfg).unwrap();
        let b = simulate(&ScalarGrowth, &[1.0, 0.7], &[2.0], &sched, &cfg).unwrap();
        assert_eq!(a, b);
    }
}
