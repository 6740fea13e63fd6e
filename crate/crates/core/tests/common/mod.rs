//! Models and helpers shared by the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use pss_tune::dae::{IntegratorConfig, Schedule};
use pss_tune::hybrid::{Dims, EventSpec, HybridModel, ModeId};

/// `x' = y` with `y = a1 x` in mode 0 and `y = a2 x` in mode 1; the
/// augmented state is `[x, a1, a2]`.
pub struct SwitchedScalar;

impl HybridModel for SwitchedScalar {
    fn dims(&self) -> Dims {
        Dims::new(1, 0, 2, 1)
    }

    fn has_mode(&self, mode: ModeId) -> bool {
        mode <= 1
    }

    fn flow(&self, _x: &[f64], y: &[f64], out: &mut [f64]) {
        out[0] = y[0];
    }

    fn algebraic(&self, mode: ModeId, x: &[f64], y: &[f64], out: &mut [f64]) {
        out[0] = y[0] - x[1 + mode] * x[0];
    }

    fn flow_jacobian(&self, _x: &[f64], _y: &[f64], _fx: &mut DMatrix<f64>, fy: &mut DMatrix<f64>) {
        fy[(0, 0)] = 1.0;
    }

    fn algebraic_jacobian(&self, mode: ModeId, x: &[f64], _y: &[f64], gx: &mut DMatrix<f64>, gy: &mut DMatrix<f64>) {
        gx[(0, 0)] = -x[1 + mode];
        gx[(0, 1 + mode)] = -x[0];
        gy[(0, 0)] = 1.0;
    }
}

/// Closed form of [`SwitchedScalar`] switched at `tj`: value and
/// derivatives with respect to `(x0, a1, a2)`.
pub fn switched_exact(x0: f64, a1: f64, a2: f64, tj: f64, t: f64) -> (f64, [f64; 3]) {
    if t <= tj {
        let x = x0 * (a1 * t).exp();
        (x, [x / x0, t * x, 0.0])
    } else {
        let x = x0 * (a1 * tj).exp() * (a2 * (t - tj)).exp();
        (x, [x / x0, tj * x, (t - tj) * x])
    }
}

pub fn switched_schedule(tj: f64) -> Schedule {
    Schedule::new(vec![EventSpec::switching_at(tj, 0, 1)])
}

pub fn unit_horizon(dt: f64) -> IntegratorConfig {
    IntegratorConfig {
        dt,
        t0: 0.0,
        tf: 1.0,
        newton_tol: 1e-13,
        newton_max_iter: 20,
    }
}
