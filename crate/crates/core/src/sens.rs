//! Forward trajectory sensitivities.
//!
//! `Phi_x = d x(t) / d x0` and `Phi_y = d y(t) / d x0` are propagated along
//! the trapezoidal integration. On smooth intervals they satisfy the
//! trapezoidal discretization of the variational DAE
//!
//! ```text
//! Phi_x' = f_x Phi_x + f_y Phi_y,    0 = g_x Phi_x + g_y Phi_y
//! ```
//!
//! whose matrix is exactly the Newton matrix of the accepted step, so the
//! factorization from the integrator is reused. At a junction the state
//! sensitivity jumps by `-(f+ - f-) * d t_J / d x0`, which vanishes for
//! fixed-time events, and the algebraic sensitivity is re-solved under the
//! post-event equations.
//!
//! Because `x0` contains the parameters, the parameter sensitivities are
//! just the parameter columns of `Phi_x` and `Phi_y`.

use nalgebra::{DMatrix, Dyn, LU};

use crate::dae::{
    simulate, simulate_observed, IntegratorConfig, JunctionContext, JunctionRecord, Schedule, StepContext,
    StepObserver, Trajectory,
};
use crate::error::{Error, Result};
use crate::hybrid::{Dims, EventKind, HybridModel, Jacobians, ModeId, Trigger};

/// Sensitivities at one time point, restricted to a set of `x0` columns.
#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityPair {
    /// `(n + l + p) x c`
    pub phi_x: DMatrix<f64>,
    /// `m x c`
    pub phi_y: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityTrajectory {
    /// Indices into the augmented state that the columns correspond to.
    pub columns: Vec<usize>,
    pub times: Vec<f64>,
    pub pairs: Vec<SensitivityPair>,
    /// Trajectory indices of the `t_J+` samples.
    pub jumps: Vec<usize>,
}

impl SensitivityTrajectory {
    /// Position of augmented-state index `x0_index` among the tracked columns.
    pub fn column_of(&self, x0_index: usize) -> Option<usize> {
        self.columns.iter().position(|&c| c == x0_index)
    }

    /// `d x_row(t) / d x0[x0_index]` over the whole trajectory.
    pub fn state_series(&self, row: usize, x0_index: usize) -> Option<Vec<f64>> {
        let c = self.column_of(x0_index)?;
        Some(self.pairs.iter().map(|p| p.phi_x[(row, c)]).collect())
    }

    pub fn algebraic_series(&self, row: usize, x0_index: usize) -> Option<Vec<f64>> {
        let c = self.column_of(x0_index)?;
        Some(self.pairs.iter().map(|p| p.phi_y[(row, c)]).collect())
    }
}

fn selection(dims: Dims, columns: &[usize]) -> DMatrix<f64> {
    let mut phi = DMatrix::zeros(dims.augmented(), columns.len());
    for (c, &i) in columns.iter().enumerate() {
        phi[(i, c)] = 1.0;
    }
    phi
}

fn solve_algebraic_sensitivity(jac: &Jacobians, phi_x: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let lu = jac.gy.clone().lu();
    let rhs = -(&jac.gx * phi_x);
    lu.solve(&rhs).filter(|s| s.iter().all(|v| v.is_finite()))
}

/// Initial sensitivities: `Phi_x = I` and `Phi_y = -g_y^{-1} g_x`.
pub fn init_sensitivities<M: HybridModel + ?Sized>(
    model: &M,
    mode: ModeId,
    x0: &[f64],
    y0: &[f64],
    columns: &[usize],
) -> Result<SensitivityPair> {
    let dims = model.dims();
    check_columns(dims, columns)?;
    let jac = Jacobians::analytic(model, mode, x0, y0)?;
    init_from_jacobians(dims, &jac, columns, 0.0)
}

fn init_from_jacobians(dims: Dims, jac: &Jacobians, columns: &[usize], t: f64) -> Result<SensitivityPair> {
    let phi_x = selection(dims, columns);
    let phi_y = solve_algebraic_sensitivity(jac, &phi_x).ok_or_else(|| Error::Sensitivity {
        t,
        message: "singular algebraic Jacobian at the initial point".into(),
    })?;
    Ok(SensitivityPair { phi_x, phi_y })
}

fn check_columns(dims: Dims, columns: &[usize]) -> Result<()> {
    if let Some(&bad) = columns.iter().find(|&&c| c >= dims.augmented()) {
        return Err(Error::structure(format!("sensitivity column {bad} is out of range")));
    }
    Ok(())
}

/// Advances the sensitivities over one accepted trapezoidal step.
pub fn propagate_step(dims: Dims, ctx: &StepContext<'_>, pair: &SensitivityPair) -> Result<SensitivityPair> {
    propagate_with(dims, ctx.dt, ctx.jac_prev, ctx.jac, &ctx.newton.lu, pair).ok_or_else(|| Error::Sensitivity {
        t: ctx.t,
        message: "singular Newton matrix in the variational step".into(),
    })
}

fn propagate_with(
    dims: Dims,
    dt: f64,
    jac_prev: &Jacobians,
    jac: &Jacobians,
    lu: &LU<f64, Dyn, Dyn>,
    pair: &SensitivityPair,
) -> Option<SensitivityPair> {
    let (n, m, big_n) = (dims.n, dims.m, dims.augmented());
    let c = pair.phi_x.ncols();
    let h = 0.5 * dt;
    let fixed = big_n - n;

    // rows of Phi_x for z and lambda never change
    let phi_fixed = pair.phi_x.rows(n, fixed);

    let mut rhs = DMatrix::zeros(n + m, c);
    {
        let mut top = rhs.rows_mut(0, n);
        top.copy_from(&pair.phi_x.rows(0, n));
        top += h * (&jac_prev.fx * &pair.phi_x + &jac_prev.fy * &pair.phi_y);
        if fixed > 0 {
            top += h * (jac.fx.columns(n, fixed) * phi_fixed);
        }
    }
    if fixed > 0 {
        let mut bottom = rhs.rows_mut(n, m);
        bottom -= jac.gx.columns(n, fixed) * phi_fixed;
    }
    let sol = lu.solve(&rhs).filter(|s| s.iter().all(|v| v.is_finite()))?;
    let mut phi_x = pair.phi_x.clone();
    phi_x.rows_mut(0, n).copy_from(&sol.rows(0, n));
    let phi_y = sol.rows(n, m).into_owned();
    Some(SensitivityPair { phi_x, phi_y })
}

/// State-sensitivity jump `Phi_x+ = Phi_x- - (f+ - f-) grad_tj`, where
/// `grad_tj` holds `d t_J / d x0` for the tracked columns.
pub fn jump_x(phi_minus: &DMatrix<f64>, f_minus: &[f64], f_plus: &[f64], grad_tj: &[f64]) -> DMatrix<f64> {
    assert_eq!(f_minus.len(), phi_minus.nrows());
    assert_eq!(f_plus.len(), phi_minus.nrows());
    assert_eq!(grad_tj.len(), phi_minus.ncols());
    let mut phi = phi_minus.clone();
    for i in 0..phi.nrows() {
        let df = f_plus[i] - f_minus[i];
        if df == 0.0 {
            continue;
        }
        for (j, g) in grad_tj.iter().enumerate() {
            phi[(i, j)] -= df * g;
        }
    }
    phi
}

/// Algebraic-sensitivity re-solve after a junction:
/// `Phi_y+ = -(g_y)^{-1} g_x Phi_x+` with post-mode Jacobians at `(x, y+)`.
pub fn jump_y<M: HybridModel + ?Sized>(
    model: &M,
    post_mode: ModeId,
    x: &[f64],
    y_plus: &[f64],
    phi_x_plus: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let jac = Jacobians::analytic(model, post_mode, x, y_plus)?;
    solve_algebraic_sensitivity(&jac, phi_x_plus).ok_or_else(|| Error::Sensitivity {
        t: f64::NAN,
        message: format!("singular algebraic Jacobian in post-mode {post_mode}"),
    })
}

/// Row/column blocks of the augmented state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Block {
    Continuous,
    Discrete,
    Parameter,
}

impl Block {
    fn range(self, dims: Dims) -> std::ops::Range<usize> {
        match self {
            Block::Continuous => 0..dims.n,
            Block::Discrete => dims.z_range(),
            Block::Parameter => dims.lambda_range(),
        }
    }
}

/// Block form of the junction update for the full augmented sensitivity:
/// `U = I + f* grad_tj` with `f* = f- - f+`, where only the continuous rows
/// of `f*` can be nonzero.
#[derive(Clone, Debug, PartialEq)]
pub struct JumpBlocks {
    pub dims: Dims,
    pub update: DMatrix<f64>,
}

pub fn param_jump_blocks(dims: Dims, f_minus: &[f64], f_plus: &[f64], grad_tj: &[f64]) -> JumpBlocks {
    let big_n = dims.augmented();
    assert_eq!(f_minus.len(), big_n);
    assert_eq!(f_plus.len(), big_n);
    assert_eq!(grad_tj.len(), big_n);
    let mut update = DMatrix::identity(big_n, big_n);
    for i in 0..dims.n {
        let f_star = f_minus[i] - f_plus[i];
        for j in 0..big_n {
            update[(i, j)] += f_star * grad_tj[j];
        }
    }
    JumpBlocks { dims, update }
}

impl JumpBlocks {
    pub fn block(&self, rows: Block, cols: Block) -> DMatrix<f64> {
        let r = rows.range(self.dims);
        let c = cols.range(self.dims);
        self.update.view((r.start, c.start), (r.len(), c.len())).into_owned()
    }

    /// Jump of the continuous-state sensitivity to the parameters,
    /// `f* d t_J / d lambda`.
    pub fn parameter_jump(&self) -> DMatrix<f64> {
        self.block(Block::Continuous, Block::Parameter)
    }

    /// Applies the additive jump to a full sensitivity matrix:
    /// `Phi+ = Phi- + (U - I)`.
    pub fn apply(&self, phi_minus: &DMatrix<f64>) -> DMatrix<f64> {
        let big_n = self.dims.augmented();
        phi_minus + (&self.update - DMatrix::<f64>::identity(big_n, big_n))
    }

    /// True when the discrete and parameter diagonal blocks are identity and
    /// their off-diagonal blocks are zero, as for fixed-time events.
    pub fn preserves_fixed_blocks(&self) -> bool {
        let is_identity = |b: DMatrix<f64>| b == DMatrix::identity(b.nrows(), b.ncols());
        let is_zero = |b: DMatrix<f64>| b.iter().all(|&v| v == 0.0);
        is_identity(self.block(Block::Discrete, Block::Discrete))
            && is_identity(self.block(Block::Parameter, Block::Parameter))
            && is_zero(self.block(Block::Parameter, Block::Continuous))
            && is_zero(self.block(Block::Parameter, Block::Discrete))
            && is_zero(self.block(Block::Discrete, Block::Parameter))
            && is_zero(self.block(Block::Discrete, Block::Continuous))
    }
}

struct Propagator {
    dims: Dims,
    columns: Vec<usize>,
    times: Vec<f64>,
    pairs: Vec<SensitivityPair>,
    jumps: Vec<usize>,
}

impl StepObserver for Propagator {
    fn start(&mut self, t: f64, _mode: ModeId, _x: &[f64], _y: &[f64], jac: &Jacobians) -> Result<()> {
        let pair = init_from_jacobians(self.dims, jac, &self.columns, t)?;
        self.times.push(t);
        self.pairs.push(pair);
        Ok(())
    }

    fn junction(&mut self, ctx: &JunctionContext<'_>) -> Result<()> {
        let prev = self.pairs.last().expect("started");
        // fixed-time junctions: d t_J / d x0 = 0
        let grad_tj = vec![0.0; self.columns.len()];
        let phi_x = jump_x(&prev.phi_x, &ctx.record.f_minus, &ctx.record.f_plus, &grad_tj);
        let phi_y = solve_algebraic_sensitivity(ctx.jac_plus, &phi_x).ok_or_else(|| Error::Sensitivity {
            t: ctx.record.t_j,
            message: format!("singular algebraic Jacobian in post-mode {}", ctx.record.post_mode),
        })?;
        self.jumps.push(self.pairs.len());
        self.times.push(ctx.record.t_j);
        self.pairs.push(SensitivityPair { phi_x, phi_y });
        Ok(())
    }

    fn step(&mut self, ctx: &StepContext<'_>) -> Result<()> {
        let next = propagate_step(self.dims, ctx, self.pairs.last().expect("started"))?;
        self.times.push(ctx.t);
        self.pairs.push(next);
        Ok(())
    }
}

/// Rejects schedules whose junction sensitivities are not available:
/// state-triggered events (unknown `d t_J / d x0`) and reset events.
pub fn check_sensitivity_schedule(schedule: &Schedule) -> Result<()> {
    for (i, ev) in schedule.events.iter().enumerate() {
        if let Trigger::State(_) = ev.trigger {
            return Err(Error::Unsupported(format!(
                "event {i} is state-triggered; junction-time sensitivities are only available for fixed-time events"
            )));
        }
        if let EventKind::Reset(_) = ev.kind {
            return Err(Error::Unsupported(format!(
                "event {i} is a reset event; sensitivities through reset maps are not supported"
            )));
        }
    }
    Ok(())
}

/// Simulates and propagates sensitivities for the given `x0` columns
/// (all columns when `columns` is `None`).
pub fn simulate_with_sensitivities<M: HybridModel + ?Sized>(
    model: &M,
    x0: &[f64],
    y_guess: &[f64],
    schedule: &Schedule,
    config: &IntegratorConfig,
    columns: Option<&[usize]>,
) -> Result<(Trajectory, SensitivityTrajectory)> {
    let dims = model.dims();
    check_sensitivity_schedule(schedule)?;
    let columns = columns.map_or_else(|| (0..dims.augmented()).collect(), <[usize]>::to_vec);
    check_columns(dims, &columns)?;
    let mut prop = Propagator {
        dims,
        columns,
        times: Vec::new(),
        pairs: Vec::new(),
        jumps: Vec::new(),
    };
    let traj = simulate_observed(model, x0, y_guess, schedule, config, &mut prop)?;
    debug_assert_eq!(traj.times, prop.times);
    Ok((
        traj,
        SensitivityTrajectory {
            columns: prop.columns,
            times: prop.times,
            pairs: prop.pairs,
            jumps: prop.jumps,
        },
    ))
}

/// Central finite-difference column `[x(t; x0 + h e_i) - x(t; x0 - h e_i)] / 2h`.
#[derive(Clone, Debug, PartialEq)]
pub struct FdColumn {
    pub index: usize,
    pub times: Vec<f64>,
    pub dx: Vec<Vec<f64>>,
    pub dy: Vec<Vec<f64>>,
}

impl FdColumn {
    pub fn state_series(&self, row: usize) -> Vec<f64> {
        self.dx.iter().map(|d| d[row]).collect()
    }
}

pub fn fd_sensitivity<M: HybridModel + ?Sized>(
    model: &M,
    x0: &[f64],
    y_guess: &[f64],
    schedule: &Schedule,
    config: &IntegratorConfig,
    index: usize,
    h: f64,
) -> Result<FdColumn> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::config(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    if index >= x0.len() {
        return Err(Error::structure(format!("perturbation index {index} is out of range")));
    }
    let run = |sign: f64| {
        let mut x = x0.to_vec();
        x[index] += sign * h;
        simulate(model, &x, y_guess, schedule, config)
    };
    let (plus, minus) = rayon::join(|| run(1.0), || run(-1.0));
    let (plus, minus) = (plus?, minus?);
    if plus.times != minus.times {
        return Err(Error::Structure(
            "perturbed trajectories have different time grids".into(),
        ));
    }
    let diff = |a: &[Vec<f64>], b: &[Vec<f64>]| -> Vec<Vec<f64>> {
        a.iter()
            .zip(b)
            .map(|(a, b)| a.iter().zip(b).map(|(a, b)| (a - b) / (2.0 * h)).collect())
            .collect()
    };
    Ok(FdColumn {
        index,
        dx: diff(&plus.states, &minus.states),
        dy: diff(&plus.algebraics, &minus.algebraics),
        times: plus.times,
    })
}

/// Max-norm of `g_x Phi_x + g_y Phi_y` at sample `k` in its active mode.
pub fn algebraic_residual<M: HybridModel + ?Sized>(
    model: &M,
    traj: &Trajectory,
    sens: &SensitivityTrajectory,
    k: usize,
) -> Result<f64> {
    let jac = Jacobians::analytic(model, traj.modes[k], &traj.states[k], &traj.algebraics[k])?;
    let pair = &sens.pairs[k];
    let r = &jac.gx * &pair.phi_x + &jac.gy * &pair.phi_y;
    Ok(r.amax())
}

/// Returns the junction records of a trajectory with the matching
/// sensitivity pairs just before and after each jump.
pub fn junction_pairs<'a>(
    traj: &'a Trajectory,
    sens: &'a SensitivityTrajectory,
) -> impl Iterator<Item = (&'a JunctionRecord, &'a SensitivityPair, &'a SensitivityPair)> {
    traj.junctions
        .iter()
        .map(move |j| (j, &sens.pairs[j.index - 1], &sens.pairs[j.index]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybrid::test_models::ScalarGrowth;
    use crate::hybrid::EventSpec;

    #[test]
    fn initial_sensitivities_for_linear_constraint() {
        let pair = init_sensitivities(&ScalarGrowth, 0, &[3.0, 0.5], &[6.0], &[0, 1]).unwrap();
        assert_eq!(pair.phi_x, DMatrix::identity(2, 2));
        assert!((pair.phi_y[(0, 0)] - 2.0).abs() < 1e-15);
        assert_eq!(pair.phi_y[(0, 1)], 0.0);
    }

    #[test]
    fn zero_junction_gradient_leaves_phi_unchanged() {
        let phi = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let out = jump_x(&phi, &[0.1, 0.0], &[5.0, 0.0], &[0.0, 0.0]);
        assert_eq!(out, phi);
        let out = jump_x(&phi, &[0.1, 0.0], &[0.1, 0.0], &[3.0, -1.0]);
        assert_eq!(out, phi);
    }

    #[test]
    fn jump_is_rank_one() {
        let phi = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let out = jump_x(&phi, &[0.0, 1.0], &[2.0, 3.0], &[0.5, -1.0]);
        let diff = out - phi;
        let expected = -DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 1.0, -2.0]);
        assert_eq!(diff, expected);
        assert_eq!(diff.rank(1e-12), 1);
    }

    #[test]
    fn param_blocks_reduce_to_identity() {
        let dims = Dims::new(2, 1, 2, 0);
        let b = param_jump_blocks(dims, &[1.0, 2.0, 0.0, 0.0, 0.0], &[3.0, -1.0, 0.0, 0.0, 0.0], &[0.0; 5]);
        assert_eq!(b.update, DMatrix::identity(5, 5));
        let b = param_jump_blocks(dims, &[1.0, 2.0, 0.0, 0.0, 0.0], &[1.0, 2.0, 0.0, 0.0, 0.0], &[1.0; 5]);
        assert_eq!(b.update, DMatrix::identity(5, 5));
    }

    #[test]
    fn parameter_jump_is_the_lambda_slice() {
        let dims = Dims::new(2, 1, 2, 0);
        let f_minus = [1.0, 2.0, 0.0, 0.0, 0.0];
        let f_plus = [3.0, -1.0, 0.0, 0.0, 0.0];
        let grad = [0.1, 0.2, 0.3, 0.4, 0.5];
        let b = param_jump_blocks(dims, &f_minus, &f_plus, &grad);
        let pj = b.parameter_jump();
        // f* = [-2, 3]
        assert!((pj[(0, 0)] - (-2.0 * 0.4)).abs() < 1e-15);
        assert!((pj[(1, 1)] - (3.0 * 0.5)).abs() < 1e-15);
        assert!(b.preserves_fixed_blocks());
        // additive application agrees with jump_x on the full matrix
        let phi = DMatrix::from_fn(5, 5, |i, j| (i * 5 + j) as f64 * 0.1);
        let via_x = jump_x(&phi, &f_minus, &f_plus, &grad);
        assert!((b.apply(&phi) - via_x).amax() < 1e-15);
    }

    #[test]
    fn state_triggered_schedules_are_rejected() {
        let sched = Schedule::new(vec![EventSpec {
            kind: crate::hybrid::EventKind::Switching,
            trigger: Trigger::State(0),
            pre_mode: 0,
            post_mode: 0,
        }]);
        let cfg = IntegratorConfig {
            tf: 1.0,
            ..Default::default()
        };
        let err = simulate_with_sensitivities(&ScalarGrowth, &[1.0, 0.5], &[2.0], &sched, &cfg, None).unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)));
    }

    #[test]
    fn fd_rejects_nonpositive_step() {
        let cfg = IntegratorConfig {
            tf: 1.0,
            ..Default::default()
        };
        let sched = Schedule::default();
        assert!(fd_sensitivity(&ScalarGrowth, &[1.0, 0.5], &[2.0], &sched, &cfg, 1, 0.0).is_err());
        assert!(fd_sensitivity(&ScalarGrowth, &[1.0, 0.5], &[2.0], &sched, &cfg, 1, -1e-6).is_err());
    }

    #[test]
    fn scalar_growth_matches_closed_form() {
        let cfg = IntegratorConfig {
            dt: 1e-3,
            tf: 1.0,
            ..Default::default()
        };
        let (x0, lam) = (1.3, -0.8);
        let (traj, sens) =
            simulate_with_sensitivities(&ScalarGrowth, &[x0, lam], &[0.0], &Schedule::default(), &cfg, None).unwrap();
        let k = traj.len() - 1;
        let t = traj.times[k];
        let x = x0 * (lam * t).exp();
        assert!((traj.states[k][0] - x).abs() < 1e-6);
        assert!((sens.pairs[k].phi_x[(0, 1)] - t * x).abs() < 1e-6);
        assert!((sens.pairs[k].phi_x[(0, 0)] - (lam * t).exp()).abs() < 1e-6);
        // lambda row stays [0 1]
        assert_eq!(sens.pairs[k].phi_x[(1, 0)], 0.0);
        assert_eq!(sens.pairs[k].phi_x[(1, 1)], 1.0);

        let fd = fd_sensitivity(&ScalarGrowth, &[x0, lam], &[0.0], &Schedule::default(), &cfg, 1, 1e-6).unwrap();
        assert!((fd.dx[k][0] - t * x).abs() < 1e-5);
    }
}
