//! Tuning objective with its gradient, and box-constrained conjugate-gradient
//! minimization.
//!
//! The objective is the integrated squared speed deviation
//! `J = w * sum_i int omega_i^2 dt`, evaluated by the trapezoid rule on the
//! simulation grid. Its gradient uses the same quadrature applied to
//! `2 omega_i d(omega_i)/d(lambda)` from the propagated sensitivities.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dae::{simulate, IntegratorConfig, Trajectory};
use crate::error::{Error, Result};
use crate::hybrid::HybridModel;
use crate::psys::BuiltSystem;
use crate::sens::simulate_with_sensitivities;

pub const MAX_BACKTRACKS: usize = 60;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveConfig {
    /// Machines in the sum; `None` sums over every machine.
    pub machines: Option<Vec<usize>>,
    /// Uniform quadrature weight.
    pub weight: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            machines: None,
            weight: 1.0,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self, system: &BuiltSystem, integrator: &IntegratorConfig) -> Result<()> {
        if !(self.weight > 0.0 && self.weight.is_finite()) {
            return Err(Error::config(format!(
                "objective weight must be positive, got {}",
                self.weight
            )));
        }
        let ids = system.model.machine_ids();
        if let Some(ms) = &self.machines {
            if ms.is_empty() {
                return Err(Error::config("objective machine set is empty"));
            }
            if let Some(m) = ms.iter().find(|m| !ids.contains(m)) {
                return Err(Error::config(format!("objective references unknown machine {m}")));
            }
        }
        if let Some(last) = system.schedule.events.iter().filter_map(|e| e.time()).reduce(f64::max) {
            if !(integrator.tf > last) {
                return Err(Error::config(format!(
                    "objective horizon tf = {} must extend past the last event at {last}",
                    integrator.tf
                )));
            }
        }
        Ok(())
    }

    fn omega_rows(&self, system: &BuiltSystem) -> Vec<usize> {
        let ids = self.machines.clone().unwrap_or_else(|| system.model.machine_ids());
        ids.iter().filter_map(|&id| system.model.omega_index(id)).collect()
    }
}

/// Trapezoid rule on a (possibly non-uniform) grid. Duplicate junction
/// samples contribute nothing.
pub fn trapezoid(times: &[f64], values: &[f64]) -> f64 {
    times
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum()
}

fn speed_energy(traj: &Trajectory, rows: &[usize]) -> Vec<f64> {
    traj.states
        .iter()
        .map(|x| rows.iter().map(|&r| x[r] * x[r]).sum())
        .collect()
}

/// `J` along an already simulated trajectory.
pub fn objective_from_trajectory(traj: &Trajectory, omega_rows: &[usize], weight: f64) -> f64 {
    weight * trapezoid(&traj.times, &speed_energy(traj, omega_rows))
}

pub fn evaluate_objective(
    system: &BuiltSystem,
    lambda: &[f64],
    integrator: &IntegratorConfig,
    config: &ObjectiveConfig,
) -> Result<f64> {
    let x0 = system.x0_with_lambda(lambda)?;
    let traj = simulate(&system.model, &x0, &system.y0, &system.schedule, integrator)?;
    Ok(objective_from_trajectory(
        &traj,
        &config.omega_rows(system),
        config.weight,
    ))
}

/// `J` and its gradient from one simulation with sensitivity propagation.
pub fn evaluate_gradient(
    system: &BuiltSystem,
    lambda: &[f64],
    integrator: &IntegratorConfig,
    config: &ObjectiveConfig,
) -> Result<(f64, Vec<f64>)> {
    let dims = system.model.dims();
    let x0 = system.x0_with_lambda(lambda)?;
    let cols: Vec<usize> = dims.lambda_range().collect();
    let (traj, sens) = simulate_with_sensitivities(
        &system.model,
        &x0,
        &system.y0,
        &system.schedule,
        integrator,
        Some(&cols),
    )?;
    let rows = config.omega_rows(system);
    let value = objective_from_trajectory(&traj, &rows, config.weight);
    let mut grad = vec![0.0; cols.len()];
    for (c, g) in grad.iter_mut().enumerate() {
        let integrand: Vec<f64> = traj
            .states
            .iter()
            .zip(&sens.pairs)
            .map(|(x, pair)| rows.iter().map(|&r| 2.0 * x[r] * pair.phi_x[(r, c)]).sum())
            .collect();
        *g = config.weight * trapezoid(&traj.times, &integrand);
    }
    Ok((value, grad))
}

/// Smooth scalar objective over a parameter vector.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn value(&self, lambda: &[f64]) -> Result<f64>;
    fn value_and_gradient(&self, lambda: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// Damping objective of a power-system scenario.
pub struct PssObjective<'a> {
    pub system: &'a BuiltSystem,
    pub integrator: IntegratorConfig,
    pub config: ObjectiveConfig,
}

impl<'a> PssObjective<'a> {
    pub fn new(system: &'a BuiltSystem, integrator: IntegratorConfig, config: ObjectiveConfig) -> Result<Self> {
        integrator.validate()?;
        config.validate(system, &integrator)?;
        if system.model.dims().p == 0 {
            return Err(Error::config("scenario has no stabilizer parameters to tune"));
        }
        Ok(Self {
            system,
            integrator,
            config,
        })
    }
}

impl Objective for PssObjective<'_> {
    fn dim(&self) -> usize {
        self.system.model.dims().p
    }

    fn value(&self, lambda: &[f64]) -> Result<f64> {
        evaluate_objective(self.system, lambda, &self.integrator, &self.config)
    }

    fn value_and_gradient(&self, lambda: &[f64]) -> Result<(f64, Vec<f64>)> {
        evaluate_gradient(self.system, lambda, &self.integrator, &self.config)
    }
}

/// `J = 0.5 l' A l - b' l`, used to exercise the optimizer.
#[derive(Clone, Debug)]
pub struct QuadraticObjective {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl QuadraticObjective {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if !a.is_square() || a.nrows() != b.len() {
            return Err(Error::structure("quadratic objective needs square A matching b"));
        }
        if a.clone().cholesky().is_none() {
            return Err(Error::config(
                "quadratic objective needs a symmetric positive definite A",
            ));
        }
        Ok(Self { a, b })
    }

    pub fn minimizer(&self) -> Vec<f64> {
        let x = self
            .a
            .clone()
            .cholesky()
            .expect("checked at construction")
            .solve(&self.b);
        x.as_slice().to_vec()
    }
}

impl Objective for QuadraticObjective {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn value(&self, lambda: &[f64]) -> Result<f64> {
        let l = DVector::from_column_slice(lambda);
        Ok(0.5 * l.dot(&(&self.a * &l)) - self.b.dot(&l))
    }

    fn value_and_gradient(&self, lambda: &[f64]) -> Result<(f64, Vec<f64>)> {
        let l = DVector::from_column_slice(lambda);
        let g = &self.a * &l - &self.b;
        Ok((0.5 * l.dot(&(&self.a * &l)) - self.b.dot(&l), g.as_slice().to_vec()))
    }
}

/// Box constraints `lower <= lambda <= upper`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Default per-stabilizer ranges for `(K_s, T1, T2)`.
pub const DEFAULT_PSS_BOUNDS: [(f64, f64); 3] = [(0.1, 50.0), (0.01, 1.5), (0.01, 0.2)];

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let b = Self { lower, upper };
        b.validate()?;
        Ok(b)
    }

    /// Default box for `count` stabilizers.
    pub fn pss_default(count: usize) -> Self {
        let (lower, upper) = (0..count).flat_map(|_| DEFAULT_PSS_BOUNDS).unzip();
        Self { lower, upper }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.len() != self.upper.len() {
            return Err(Error::structure("bounds have mismatched lengths"));
        }
        for (i, (lo, hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::config(format!(
                    "bound {i} needs finite lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, lambda: &[f64]) -> bool {
        lambda.len() == self.dim()
            && lambda
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(l, (lo, hi))| lo <= l && l <= hi)
    }

    /// Entrywise clip; the flag reports whether any entry moved.
    pub fn project(&self, lambda: &[f64]) -> (Vec<f64>, bool) {
        let mut active = false;
        let p = lambda
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&l, (&lo, &hi))| {
                let c = l.clamp(lo, hi);
                active |= c != l;
                c
            })
            .collect();
        (p, active)
    }

    /// Gradient with components removed where descent would leave the box.
    pub fn projected_gradient(&self, lambda: &[f64], grad: &[f64]) -> Vec<f64> {
        grad.iter()
            .enumerate()
            .map(|(i, &g)| {
                let blocked = (lambda[i] <= self.lower[i] && g > 0.0) || (lambda[i] >= self.upper[i] && g < 0.0);
                if blocked {
                    0.0
                } else {
                    g
                }
            })
            .collect()
    }

    /// Zeroes direction components pointing out of the box at active bounds.
    fn mask_direction(&self, lambda: &[f64], d: &mut [f64]) {
        for (i, di) in d.iter_mut().enumerate() {
            if (lambda[i] <= self.lower[i] && *di < 0.0) || (lambda[i] >= self.upper[i] && *di > 0.0) {
                *di = 0.0;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaRule {
    /// `g1'(g1 - g0) / g0'g0`.
    #[default]
    PolakRibiere,
    /// `g1'(g1 - g0) / g1'g0`, the mixed denominator variant.
    MixedDenominator,
}

/// Step the Armijo backtracking starts from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseStep {
    /// `alpha = rho^m`.
    Unit,
    /// `alpha = s rho^m` with `s` the minimizer of a quadratic fitted along
    /// the direction from one probe evaluation.
    #[default]
    QuadraticFit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CgmConfig {
    pub rho: f64,
    pub sigma: f64,
    pub epsilon: f64,
    pub max_iter: usize,
    pub max_backtracks: usize,
    pub beta_rule: BetaRule,
    pub base_step: BaseStep,
    /// Probe length of the quadratic fit as a fraction of the box width
    /// along the direction.
    pub probe_fraction: f64,
}

impl Default for CgmConfig {
    fn default() -> Self {
        Self {
            rho: 0.5,
            sigma: 1e-4,
            epsilon: 1e-4,
            max_iter: 100,
            max_backtracks: MAX_BACKTRACKS,
            beta_rule: BetaRule::default(),
            base_step: BaseStep::default(),
            probe_fraction: 0.05,
        }
    }
}

impl CgmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::config(format!("rho must lie in (0, 1), got {}", self.rho)));
        }
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(Error::config(format!("sigma must lie in (0, 1), got {}", self.sigma)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("epsilon must be positive"));
        }
        if self.max_backtracks == 0 || self.max_backtracks > MAX_BACKTRACKS {
            return Err(Error::config(format!(
                "max_backtracks must lie in 1..={MAX_BACKTRACKS}"
            )));
        }
        if !(self.probe_fraction > 0.0 && self.probe_fraction <= 1.0) {
            return Err(Error::config("probe_fraction must lie in (0, 1]"));
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Direction {
    pub d: Vec<f64>,
    pub beta: f64,
    /// True when the direction fell back to steepest descent.
    pub reset: bool,
}

/// Smallest cosine between a conjugate direction and `-g` accepted before
/// falling back to steepest descent. Guards against the blow-up of the
/// mixed-denominator beta when successive gradients are nearly orthogonal.
pub const MIN_DESCENT_COSINE: f64 = 1e-3;

/// Conjugate direction `-g1 + beta d0`, falling back to `-g1` when beta is
/// negative or undefined or the result is not a sufficiently steep descent
/// direction.
pub fn cgm_direction(grad_new: &[f64], grad_old: &[f64], d_old: &[f64], rule: BetaRule) -> Result<Direction> {
    if grad_old.len() != grad_new.len() || d_old.len() != grad_new.len() {
        return Err(Error::structure("direction update needs vectors of equal length"));
    }
    let steepest = || Direction {
        d: grad_new.iter().map(|g| -g).collect(),
        beta: 0.0,
        reset: true,
    };
    let num: f64 = grad_new.iter().zip(grad_old).map(|(a, b)| a * (a - b)).sum();
    let den = match rule {
        BetaRule::PolakRibiere => dot(grad_old, grad_old),
        BetaRule::MixedDenominator => dot(grad_new, grad_old),
    };
    if den == 0.0 || !den.is_finite() {
        return Ok(steepest());
    }
    let beta = num / den;
    if !(beta >= 0.0) {
        return Ok(steepest());
    }
    let d: Vec<f64> = grad_new.iter().zip(d_old).map(|(g, d)| -g + beta * d).collect();
    if !(-dot(grad_new, &d) > MIN_DESCENT_COSINE * norm(grad_new) * norm(&d)) {
        return Ok(steepest());
    }
    Ok(Direction { d, beta, reset: false })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trial {
    pub m: usize,
    pub alpha: f64,
    /// `None` when the objective could not be evaluated.
    pub value: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LineSearch {
    pub base_step: f64,
    pub m: usize,
    pub alpha: f64,
    pub lambda: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    /// The accepted trial point was clipped to the box.
    pub projected: bool,
    pub trials: Vec<Trial>,
}

/// Armijo test `J0 - J(P(l + a d)) >= -sigma a g'd`.
pub fn armijo_holds(j0: f64, j_trial: f64, alpha: f64, slope: f64, sigma: f64) -> bool {
    j0 - j_trial >= -sigma * alpha * slope
}

/// Backtracking from `base_step` over `alpha = base_step * rho^m`; the first
/// `m` satisfying the Armijo test against the projected trial point wins.
#[allow(clippy::too_many_arguments)]
pub fn armijo_search(
    objective: &dyn Objective,
    lambda: &[f64],
    value: f64,
    grad: &[f64],
    d: &[f64],
    bounds: &Bounds,
    config: &CgmConfig,
    base_step: f64,
) -> Result<LineSearch> {
    config.validate()?;
    let slope = dot(grad, d);
    if !(slope < 0.0) {
        return Err(Error::config(format!(
            "line search needs a descent direction, got slope {slope:e}"
        )));
    }
    if !(base_step > 0.0 && base_step.is_finite()) {
        return Err(Error::config(format!("base step must be positive, got {base_step}")));
    }
    let mut trials = Vec::new();
    for m in 0..=config.max_backtracks {
        let alpha = base_step * config.rho.powi(m as i32);
        let raw: Vec<f64> = lambda.iter().zip(d).map(|(l, di)| l + alpha * di).collect();
        let (trial, projected) = bounds.project(&raw);
        let eval = objective.value_and_gradient(&trial).ok().filter(|(j, _)| j.is_finite());
        trials.push(Trial {
            m,
            alpha,
            value: eval.as_ref().map(|(j, _)| *j),
        });
        if let Some((j, g)) = eval {
            if armijo_holds(value, j, alpha, slope, config.sigma) {
                return Ok(LineSearch {
                    base_step,
                    m,
                    alpha,
                    lambda: trial,
                    value: j,
                    gradient: g,
                    projected,
                    trials,
                });
            }
        }
    }
    Err(Error::LineSearch {
        backtracks: config.max_backtracks,
        message: format!("no sufficient decrease from J = {value:e}"),
    })
}

/// Base step from one probe evaluation along `d`.
fn fitted_base_step(
    objective: &dyn Objective,
    lambda: &[f64],
    value: f64,
    slope: f64,
    d: &[f64],
    bounds: &Bounds,
    config: &CgmConfig,
) -> f64 {
    // largest step that stays inside the box along every moving coordinate
    let reach = d
        .iter()
        .enumerate()
        .filter(|(_, di)| **di != 0.0)
        .map(|(i, di)| (bounds.upper[i] - bounds.lower[i]) / di.abs())
        .fold(f64::INFINITY, f64::min);
    if !reach.is_finite() {
        return 1.0;
    }
    let tau = config.probe_fraction * reach;
    let (probe, _) = bounds.project(&lambda.iter().zip(d).map(|(l, di)| l + tau * di).collect::<Vec<_>>());
    match objective.value(&probe) {
        Ok(jp) if jp.is_finite() => {
            let c = (jp - value - tau * slope) / (tau * tau);
            if c > 0.0 {
                (-slope / (2.0 * c)).min(reach)
            } else {
                tau
            }
        }
        _ => tau,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuningStatus {
    Converged,
    MaxIter,
    LineSearchFailure,
}

/// Step taken from an iterate.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub direction: Vec<f64>,
    /// `g'd`, negative for every recorded step.
    pub slope: f64,
    pub beta: f64,
    pub reset: bool,
    pub base_step: f64,
    pub m: usize,
    pub alpha: f64,
    pub projected: bool,
    pub trials: Vec<Trial>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterateRecord {
    pub iter: usize,
    pub lambda: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    /// Norm of the projected gradient, the stopping quantity.
    pub grad_norm: f64,
    /// `None` for the last iterate.
    pub step: Option<StepRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuningResult {
    pub lambda_star: Vec<f64>,
    pub value_star: f64,
    pub iterates: Vec<IterateRecord>,
    pub status: TuningStatus,
    /// Message of the failure that ended a line search, if any.
    pub failure: Option<String>,
}

impl TuningResult {
    pub fn iterations(&self) -> usize {
        self.iterates.iter().filter(|it| it.step.is_some()).count()
    }

    pub fn initial_value(&self) -> f64 {
        self.iterates[0].value
    }
}

/// Projected Polak-Ribiere conjugate gradients with Armijo backtracking.
///
/// Iterates are `lambda_{k+1} = clip(lambda_k + alpha_k d_k)`. The direction
/// resets to steepest descent whenever the clip is active, and the loop stops
/// once the projected gradient norm drops below `epsilon`.
pub fn tune(objective: &dyn Objective, lambda0: &[f64], bounds: &Bounds, config: &CgmConfig) -> Result<TuningResult> {
    config.validate()?;
    bounds.validate()?;
    if bounds.dim() != objective.dim() || lambda0.len() != objective.dim() {
        return Err(Error::structure(format!(
            "objective has {} parameters, bounds {}, start point {}",
            objective.dim(),
            bounds.dim(),
            lambda0.len()
        )));
    }
    if !bounds.contains(lambda0) {
        return Err(Error::config(format!("start point {lambda0:?} is outside the bounds")));
    }
    let (mut value, mut grad) = objective.value_and_gradient(lambda0)?;
    let mut lambda = lambda0.to_vec();
    let mut iterates = Vec::new();
    let mut previous: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut force_reset = true;

    for iter in 0.. {
        let pg = bounds.projected_gradient(&lambda, &grad);
        let grad_norm = norm(&pg);
        let mut record = IterateRecord {
            iter,
            lambda: lambda.clone(),
            value,
            gradient: grad.clone(),
            grad_norm,
            step: None,
        };
        if grad_norm < config.epsilon || iter >= config.max_iter {
            iterates.push(record);
            let status = if grad_norm < config.epsilon {
                TuningStatus::Converged
            } else {
                TuningStatus::MaxIter
            };
            return Ok(TuningResult {
                lambda_star: lambda,
                value_star: value,
                iterates,
                status,
                failure: None,
            });
        }

        let steepest = || Direction {
            d: pg.iter().map(|g| -g).collect(),
            beta: 0.0,
            reset: true,
        };
        let mut dir = match (&previous, force_reset) {
            (Some((g_old, d_old)), false) => cgm_direction(&grad, g_old, d_old, config.beta_rule)?,
            _ => steepest(),
        };
        bounds.mask_direction(&lambda, &mut dir.d);
        if !(dot(&grad, &dir.d) < 0.0) {
            dir = steepest();
        }
        let slope = dot(&grad, &dir.d);
        let base = match config.base_step {
            BaseStep::Unit => 1.0,
            BaseStep::QuadraticFit => fitted_base_step(objective, &lambda, value, slope, &dir.d, bounds, config),
        };
        match armijo_search(objective, &lambda, value, &grad, &dir.d, bounds, config, base) {
            Ok(ls) => {
                record.step = Some(StepRecord {
                    direction: dir.d.clone(),
                    slope,
                    beta: dir.beta,
                    reset: dir.reset,
                    base_step: ls.base_step,
                    m: ls.m,
                    alpha: ls.alpha,
                    projected: ls.projected,
                    trials: ls.trials,
                });
                iterates.push(record);
                force_reset = ls.projected;
                previous = Some((grad, dir.d));
                lambda = ls.lambda;
                value = ls.value;
                grad = ls.gradient;
            }
            Err(e) => {
                iterates.push(record);
                return Ok(TuningResult {
                    lambda_star: lambda,
                    value_star: value,
                    iterates,
                    status: TuningStatus::LineSearchFailure,
                    failure: Some(e.to_string()),
                });
            }
        }
    }
    unreachable!("the loop returns")
}
