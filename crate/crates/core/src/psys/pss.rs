//! Speed-input power system stabilizer: a gained washout followed by two
//! lead-lag stages in cascade.
//!
//! ```text
//! u1  = K_s w - x_w                      x_w' = u1 / T_w
//! y1  = (T1/T2) u1 + (1 - T1/T2) x_1     x_1' = (u1 - x_1) / T2
//! V_s = (T3/T4) y1 + (1 - T3/T4) x_2     x_2' = (y1 - x_2) / T4
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PssParams {
    pub ks: f64,
    pub tw_s: f64,
    pub t1_s: f64,
    pub t2_s: f64,
    pub t3_s: f64,
    pub t4_s: f64,
}

impl PssParams {
    /// Two identical lead-lag stages (`T3 = T1`, `T4 = T2`).
    pub fn tied(ks: f64, t1_s: f64, t2_s: f64, tw_s: f64) -> Self {
        Self {
            ks,
            tw_s,
            t1_s,
            t2_s,
            t3_s: t1_s,
            t4_s: t2_s,
        }
    }

    pub fn is_tied(&self) -> bool {
        self.t3_s == self.t1_s && self.t4_s == self.t2_s
    }

    pub fn validate(&self) -> Result<()> {
        let ts = [self.tw_s, self.t1_s, self.t2_s, self.t3_s, self.t4_s];
        if ts.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(Error::config(format!(
                "stabilizer time constants must be positive, got {ts:?}"
            )));
        }
        if !self.ks.is_finite() {
            return Err(Error::config("stabilizer gain must be finite"));
        }
        Ok(())
    }
}

/// Derivatives of `[x_w, x_1, x_2]` and the stabilizing signal `V_s`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PssOutput {
    pub derivatives: [f64; 3],
    pub vs: f64,
}

pub fn pss_dynamics(params: &PssParams, omega: f64, states: [f64; 3]) -> Result<PssOutput> {
    params.validate()?;
    let [xw, x1, x2] = states;
    let u1 = params.ks * omega - xw;
    let r1 = params.t1_s / params.t2_s;
    let y1 = r1 * u1 + (1.0 - r1) * x1;
    let r2 = params.t3_s / params.t4_s;
    let vs = r2 * y1 + (1.0 - r2) * x2;
    Ok(PssOutput {
        derivatives: [u1 / params.tw_s, (u1 - x1) / params.t2_s, (y1 - x2) / params.t4_s],
        vs,
    })
}

/// Variables the tied stabilizer depends on, in Jacobian column order.
pub(crate) const VARS: usize = 7;
pub(crate) const D_OMEGA: usize = 0;
pub(crate) const D_XW: usize = 1;
pub(crate) const D_X1: usize = 2;
pub(crate) const D_X2: usize = 3;
pub(crate) const D_KS: usize = 4;
pub(crate) const D_T1: usize = 5;
pub(crate) const D_T2: usize = 6;

/// Tied stabilizer (`T3 = T1`, `T4 = T2`) with gradients with respect to
/// `[w, x_w, x_1, x_2, K_s, T1, T2]`.
pub(crate) struct TiedPss {
    pub derivatives: [f64; 3],
    pub vs: f64,
    pub d_derivatives: [[f64; VARS]; 3],
    pub d_vs: [f64; VARS],
}

fn unit(i: usize) -> [f64; VARS] {
    let mut e = [0.0; VARS];
    e[i] = 1.0;
    e
}

fn axpy(a: f64, x: &[f64; VARS], y: &[f64; VARS]) -> [f64; VARS] {
    std::array::from_fn(|i| a * x[i] + y[i])
}

pub(crate) fn tied_pss(tw: f64, omega: f64, states: [f64; 3], lambda: [f64; 3]) -> TiedPss {
    let [xw, x1, x2] = states;
    let [ks, t1, t2] = lambda;
    let r = t1 / t2;
    let u = ks * omega - xw;
    let y1 = x1 + r * (u - x1);
    let vs = x2 + r * (y1 - x2);

    let mut du = [0.0; VARS];
    du[D_OMEGA] = ks;
    du[D_XW] = -1.0;
    du[D_KS] = omega;
    let mut dr = [0.0; VARS];
    dr[D_T1] = 1.0 / t2;
    dr[D_T2] = -t1 / (t2 * t2);

    let dxw: [f64; VARS] = du.map(|v| v / tw);

    let mut du_minus_x1 = du;
    du_minus_x1[D_X1] -= 1.0;
    let mut dx1 = du_minus_x1.map(|v| v / t2);
    dx1[D_T2] -= (u - x1) / (t2 * t2);

    // y1 = x1 + r (u - x1)
    let dy1 = axpy(u - x1, &dr, &axpy(r, &du_minus_x1, &unit(D_X1)));

    let mut dy1_minus_x2 = dy1;
    dy1_minus_x2[D_X2] -= 1.0;
    let mut dx2 = dy1_minus_x2.map(|v| v / t2);
    dx2[D_T2] -= (y1 - x2) / (t2 * t2);

    // vs = x2 + r (y1 - x2)
    let dvs = axpy(y1 - x2, &dr, &axpy(r, &dy1_minus_x2, &unit(D_X2)));

    TiedPss {
        derivatives: [u / tw, (u - x1) / t2, (y1 - x2) / t2],
        vs,
        d_derivatives: [dxw, dx1, dx2],
        d_vs: dvs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn washout_blocks_dc() {
        // integrate a constant speed input long enough for the washout to settle
        let p = PssParams::tied(7.5, 0.174, 0.05, 10.0);
        let mut s = [0.0; 3];
        let dt = 1e-3;
        for _ in 0..200_000 {
            let out = pss_dynamics(&p, 0.01, s).unwrap();
            for (si, di) in s.iter_mut().zip(out.derivatives) {
                *si += dt * di;
            }
        }
        assert!(pss_dynamics(&p, 0.01, s).unwrap().vs.abs() < 1e-6);
    }

    #[test]
    fn unity_lead_lags_pass_washout_output() {
        let p = PssParams::tied(5.0, 0.1, 0.1, 10.0);
        let out = pss_dynamics(&p, 0.02, [0.03, -0.4, 0.9]).unwrap();
        assert!((out.vs - (5.0 * 0.02 - 0.03)).abs() < 1e-15);
    }

    #[test]
    fn high_frequency_gain() {
        let p = PssParams {
            ks: 7.5,
            tw_s: 10.0,
            t1_s: 0.3,
            t2_s: 0.05,
            t3_s: 0.2,
            t4_s: 0.04,
        };
        let out = pss_dynamics(&p, 1.0, [0.0; 3]).unwrap();
        assert!((out.vs - 7.5 * (0.3 / 0.05) * (0.2 / 0.04)).abs() < 1e-12);
    }

    #[test]
    fn rejects_nonpositive_time_constants() {
        let mut p = PssParams::tied(7.5, 0.174, 0.05, 10.0);
        p.t2_s = 0.0;
        assert!(pss_dynamics(&p, 0.0, [0.0; 3]).is_err());
        p.t2_s = 0.05;
        p.tw_s = -1.0;
        assert!(pss_dynamics(&p, 0.0, [0.0; 3]).is_err());
    }

    #[test]
    fn tied_form_agrees_with_general_form() {
        let p = PssParams::tied(6.0, 0.4, 0.07, 10.0);
        let s = [0.01, -0.02, 0.005];
        let a = pss_dynamics(&p, 0.003, s).unwrap();
        let b = tied_pss(10.0, 0.003, s, [6.0, 0.4, 0.07]);
        assert!((a.vs - b.vs).abs() < 1e-15);
        for i in 0..3 {
            assert!((a.derivatives[i] - b.derivatives[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn tied_gradients_match_finite_differences() {
        let base = [0.003, 0.01, -0.02, 0.005, 6.0, 0.4, 0.07];
        let eval = |v: &[f64; 7]| tied_pss(10.0, v[0], [v[1], v[2], v[3]], [v[4], v[5], v[6]]);
        let t = eval(&base);
        for j in 0..VARS {
            let h = 1e-7;
            let mut p = base;
            let mut m = base;
            p[j] += h;
            m[j] -= h;
            let (tp, tm) = (eval(&p), eval(&m));
            let fd = (tp.vs - tm.vs) / (2.0 * h);
            assert!((fd - t.d_vs[j]).abs() < 1e-6 * fd.abs().max(1.0), "vs/{j}");
            for i in 0..3 {
                let fd = (tp.derivatives[i] - tm.derivatives[i]) / (2.0 * h);
                assert!(
                    (fd - t.d_derivatives[i][j]).abs() < 1e-6 * fd.abs().max(1.0),
                    "d{i}/{j}"
                );
            }
        }
    }
}
