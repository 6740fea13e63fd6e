//! Parameter-dependent hybrid DAE models.
//!
//! A model carries an augmented state `x = [x_c, z, lambda]` of continuous
//! dynamic states, discrete states and parameters, and an algebraic state
//! `y`. The differential equations `x_c' = f(x, y)` do not switch; only the
//! algebraic equation set `0 = g(mode)(x, y)` changes at switching events.
//! Discrete states change only through reset maps and parameters never
//! change, so the `z` and `lambda` rows of the full vector field are
//! identically zero.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Algebraic equation set identifier. Mode 0 is the base set `g(0)`.
pub type ModeId = usize;

pub const BASE_MODE: ModeId = 0;

/// Model dimensions: `n` continuous states, `l` discrete states, `p`
/// parameters, `m` algebraic states.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub n: usize,
    pub l: usize,
    pub p: usize,
    pub m: usize,
}

impl Dims {
    pub fn new(n: usize, l: usize, p: usize, m: usize) -> Self {
        Self { n, l, p, m }
    }

    /// Length of the augmented state `[x_c, z, lambda]`.
    pub fn augmented(&self) -> usize {
        self.n + self.l + self.p
    }

    pub fn z_range(&self) -> std::ops::Range<usize> {
        self.n..self.n + self.l
    }

    pub fn lambda_range(&self) -> std::ops::Range<usize> {
        self.n + self.l..self.augmented()
    }
}

/// Augmented state split into its three blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedState {
    pub x_c: Vec<f64>,
    pub z: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl AugmentedState {
    pub fn new(x_c: Vec<f64>, z: Vec<f64>, lambda: Vec<f64>) -> Self {
        Self { x_c, z, lambda }
    }

    pub fn from_flat(dims: Dims, x: &[f64]) -> Result<Self> {
        if x.len() != dims.augmented() {
            return Err(Error::structure(format!(
                "augmented state has length {}, model expects {}",
                x.len(),
                dims.augmented()
            )));
        }
        Ok(Self {
            x_c: x[..dims.n].to_vec(),
            z: x[dims.z_range()].to_vec(),
            lambda: x[dims.lambda_range()].to_vec(),
        })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.x_c.len() + self.z.len() + self.lambda.len());
        v.extend_from_slice(&self.x_c);
        v.extend_from_slice(&self.z);
        v.extend_from_slice(&self.lambda);
        v
    }

    pub fn dims_match(&self, dims: Dims) -> bool {
        self.x_c.len() == dims.n && self.z.len() == dims.l && self.lambda.len() == dims.p
    }
}

/// Algebraic state `y` (bus voltages, angles, machine currents, ...).
#[derive(Clone, Debug, PartialEq)]
pub struct AlgebraicState(pub Vec<f64>);

impl AlgebraicState {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventKind {
    /// Changes the active algebraic equation set.
    Switching,
    /// Applies reset map `j` to the discrete states.
    Reset(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Trigger {
    /// Fires at a fixed junction time (seconds).
    Time(f64),
    /// Fires when the model hypersurface with this id crosses zero from above.
    State(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EventSpec {
    pub kind: EventKind,
    pub trigger: Trigger,
    pub pre_mode: ModeId,
    pub post_mode: ModeId,
}

impl EventSpec {
    pub fn switching_at(t_j: f64, pre_mode: ModeId, post_mode: ModeId) -> Self {
        Self {
            kind: EventKind::Switching,
            trigger: Trigger::Time(t_j),
            pre_mode,
            post_mode,
        }
    }

    pub fn time(&self) -> Option<f64> {
        match self.trigger {
            Trigger::Time(t) => Some(t),
            Trigger::State(_) => None,
        }
    }
}

/// A hybrid DAE model.
///
/// Vectors `x` are always the full augmented state of length
/// `dims().augmented()`. Jacobian outputs are zeroed by the caller before
/// the call; implementations only write their nonzero entries.
pub trait HybridModel: Send + Sync {
    fn dims(&self) -> Dims;

    fn has_mode(&self, mode: ModeId) -> bool;

    /// Continuous-state rows of the vector field (`n` entries).
    fn flow(&self, x: &[f64], y: &[f64], out: &mut [f64]);

    /// Algebraic residual of the given mode (`m` entries).
    fn algebraic(&self, mode: ModeId, x: &[f64], y: &[f64], out: &mut [f64]);

    /// `d flow / dx` (`n x N`) and `d flow / dy` (`n x m`).
    fn flow_jacobian(&self, x: &[f64], y: &[f64], fx: &mut DMatrix<f64>, fy: &mut DMatrix<f64>);

    /// `d g / dx` (`m x N`) and `d g / dy` (`m x m`) for the given mode.
    fn algebraic_jacobian(&self, mode: ModeId, x: &[f64], y: &[f64], gx: &mut DMatrix<f64>, gy: &mut DMatrix<f64>);

    /// Reset map `h(j)`; returns the new discrete state, or `None` if `j` is
    /// not registered.
    fn reset(&self, _j: usize, _x: &[f64], _y: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// Triggering hypersurface value, or `None` if `id` is not registered.
    fn hypersurface(&self, _id: usize, _x: &[f64], _y: &[f64]) -> Option<f64> {
        None
    }

    /// Maps a converged algebraic solution to its canonical representative.
    /// Models whose algebraic equations admit equivalent solutions (polar
    /// voltages with a negative magnitude, say) override this; the map must
    /// leave every `g` unchanged.
    fn canonicalize_algebraic(&self, _y: &mut [f64]) {}

    fn state_names(&self) -> Vec<String> {
        (0..self.dims().augmented()).map(|i| format!("x{i}")).collect()
    }

    fn algebraic_names(&self) -> Vec<String> {
        (0..self.dims().m).map(|i| format!("y{i}")).collect()
    }
}

fn check_dims(dims: Dims, x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != dims.augmented() || y.len() != dims.m {
        return Err(Error::structure(format!(
            "got x of length {} and y of length {}, model expects {} and {}",
            x.len(),
            y.len(),
            dims.augmented(),
            dims.m
        )));
    }
    Ok(())
}

/// Full vector field `[f(x, y); 0; 0]` of length `n + l + p`.
pub fn eval_f<M: HybridModel + ?Sized>(model: &M, x: &AugmentedState, y: &AlgebraicState) -> Result<Vec<f64>> {
    let dims = model.dims();
    if !x.dims_match(dims) {
        return Err(Error::structure("augmented state blocks do not match model dims"));
    }
    let flat = x.to_flat();
    check_dims(dims, &flat, &y.0)?;
    let mut out = vec![0.0; dims.augmented()];
    model.flow(&flat, &y.0, &mut out[..dims.n]);
    Ok(out)
}

pub fn eval_g<M: HybridModel + ?Sized>(
    model: &M,
    mode: ModeId,
    x: &AugmentedState,
    y: &AlgebraicState,
) -> Result<Vec<f64>> {
    let dims = model.dims();
    if !model.has_mode(mode) {
        return Err(Error::structure(format!("unknown mode {mode}")));
    }
    let flat = x.to_flat();
    check_dims(dims, &flat, &y.0)?;
    let mut out = vec![0.0; dims.m];
    model.algebraic(mode, &flat, &y.0, &mut out);
    Ok(out)
}

/// Trigger value of an event. Time-triggered events use `t_J - t`, which is
/// positive before the junction, zero at it and negative after.
pub fn eval_trigger<M: HybridModel + ?Sized>(
    model: &M,
    event: &EventSpec,
    t: f64,
    x: &[f64],
    y: &[f64],
) -> Result<f64> {
    match event.trigger {
        Trigger::Time(t_j) => Ok(t_j - t),
        Trigger::State(id) => {
            check_dims(model.dims(), x, y)?;
            model
                .hypersurface(id, x, y)
                .ok_or_else(|| Error::structure(format!("unknown hypersurface {id}")))
        }
    }
}

/// Applies reset map `j` and returns the new discrete state `z+`. The
/// continuous states and parameters are not touched.
pub fn apply_reset<M: HybridModel + ?Sized>(
    model: &M,
    j: usize,
    x_minus: &AugmentedState,
    y_minus: &AlgebraicState,
) -> Result<Vec<f64>> {
    let dims = model.dims();
    let flat = x_minus.to_flat();
    check_dims(dims, &flat, &y_minus.0)?;
    let z = model
        .reset(j, &flat, &y_minus.0)
        .ok_or_else(|| Error::structure(format!("unknown reset map {j}")))?;
    if z.len() != dims.l {
        return Err(Error::structure(format!(
            "reset map {j} returned {} discrete states, expected {}",
            z.len(),
            dims.l
        )));
    }
    Ok(z)
}

/// Jacobians of one mode at one point. `fx` and `fy` hold only the
/// continuous-state rows; the `z` and `lambda` rows are zero.
#[derive(Clone, Debug)]
pub struct Jacobians {
    pub fx: DMatrix<f64>,
    pub fy: DMatrix<f64>,
    pub gx: DMatrix<f64>,
    pub gy: DMatrix<f64>,
}

impl Jacobians {
    pub fn zeros(dims: Dims) -> Self {
        let big_n = dims.augmented();
        Self {
            fx: DMatrix::zeros(dims.n, big_n),
            fy: DMatrix::zeros(dims.n, dims.m),
            gx: DMatrix::zeros(dims.m, big_n),
            gy: DMatrix::zeros(dims.m, dims.m),
        }
    }

    /// Fills `self` with the model's analytic Jacobians.
    pub fn evaluate_into<M: HybridModel + ?Sized>(&mut self, model: &M, mode: ModeId, x: &[f64], y: &[f64]) {
        self.fx.fill(0.0);
        self.fy.fill(0.0);
        self.gx.fill(0.0);
        self.gy.fill(0.0);
        model.flow_jacobian(x, y, &mut self.fx, &mut self.fy);
        model.algebraic_jacobian(mode, x, y, &mut self.gx, &mut self.gy);
    }

    pub fn analytic<M: HybridModel + ?Sized>(model: &M, mode: ModeId, x: &[f64], y: &[f64]) -> Result<Self> {
        let dims = model.dims();
        check_dims(dims, x, y)?;
        if !model.has_mode(mode) {
            return Err(Error::structure(format!("unknown mode {mode}")));
        }
        let mut jac = Self::zeros(dims);
        jac.evaluate_into(model, mode, x, y);
        Ok(jac)
    }

    /// Central finite-difference Jacobians with the given step.
    pub fn finite_difference<M: HybridModel + ?Sized>(
        model: &M,
        mode: ModeId,
        x: &[f64],
        y: &[f64],
        step: f64,
    ) -> Result<Self> {
        let dims = model.dims();
        check_dims(dims, x, y)?;
        if !model.has_mode(mode) {
            return Err(Error::structure(format!("unknown mode {mode}")));
        }
        let mut jac = Self::zeros(dims);
        let mut fp = vec![0.0; dims.n];
        let mut fm = vec![0.0; dims.n];
        let mut gp = vec![0.0; dims.m];
        let mut gm = vec![0.0; dims.m];

        let mut xp = x.to_vec();
        for j in 0..dims.augmented() {
            let orig = xp[j];
            xp[j] = orig + step;
            model.flow(&xp, y, &mut fp);
            model.algebraic(mode, &xp, y, &mut gp);
            xp[j] = orig - step;
            model.flow(&xp, y, &mut fm);
            model.algebraic(mode, &xp, y, &mut gm);
            xp[j] = orig;
            for i in 0..dims.n {
                jac.fx[(i, j)] = (fp[i] - fm[i]) / (2.0 * step);
            }
            for i in 0..dims.m {
                jac.gx[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
            }
        }
        let mut yp = y.to_vec();
        for j in 0..dims.m {
            let orig = yp[j];
            yp[j] = orig + step;
            model.flow(x, &yp, &mut fp);
            model.algebraic(mode, x, &yp, &mut gp);
            yp[j] = orig - step;
            model.flow(x, &yp, &mut fm);
            model.algebraic(mode, x, &yp, &mut gm);
            yp[j] = orig;
            for i in 0..dims.n {
                jac.fy[(i, j)] = (fp[i] - fm[i]) / (2.0 * step);
            }
            for i in 0..dims.m {
                jac.gy[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
            }
        }
        Ok(jac)
    }

    /// Largest entrywise deviation `|a - b| / max(1, |b|)` against a
    /// reference set of Jacobians.
    pub fn max_relative_deviation(&self, reference: &Jacobians) -> f64 {
        fn dev(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
            a.iter()
                .zip(b.iter())
                .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
                .fold(0.0, f64::max)
        }
        dev(&self.fx, &reference.fx)
            .max(dev(&self.fy, &reference.fy))
            .max(dev(&self.gx, &reference.gx))
            .max(dev(&self.gy, &reference.gy))
    }
}

/// Compares the analytic Jacobians of `mode` against central finite
/// differences and returns the largest relative deviation.
pub fn check_jacobians<M: HybridModel + ?Sized>(
    model: &M,
    mode: ModeId,
    x: &[f64],
    y: &[f64],
    step: f64,
) -> Result<f64> {
    let analytic = Jacobians::analytic(model, mode, x, y)?;
    let fd = Jacobians::finite_difference(model, mode, x, y, step)?;
    Ok(analytic.max_relative_deviation(&fd))
}
