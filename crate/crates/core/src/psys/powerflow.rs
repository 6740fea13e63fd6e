//! Newton-Raphson power flow in polar coordinates.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::case::{BusKind, NetworkCase};
use super::ybus::build_ybus;
use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 50;
/// Iteration stops below this mismatch; solutions are accepted at 1e-8.
const TARGET_MISMATCH: f64 = 1e-11;
const ACCEPT_MISMATCH: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct PowerFlowSolution {
    /// Bus voltage magnitudes in case order.
    pub vm: Vec<f64>,
    /// Bus voltage angles (rad), slack at zero.
    pub va: Vec<f64>,
    /// Net generation at each bus (zero at buses without generation).
    pub p_gen: Vec<f64>,
    pub q_gen: Vec<f64>,
    pub iterations: usize,
    /// Max-norm of the specified-bus power mismatch.
    pub mismatch: f64,
}

impl PowerFlowSolution {
    pub fn voltage(&self, i: usize) -> Complex64 {
        Complex64::from_polar(self.vm[i], self.va[i])
    }
}

/// Complex power injections `V * conj(Y V)`.
pub fn injections(y: &DMatrix<Complex64>, vm: &[f64], va: &[f64]) -> Vec<Complex64> {
    let v: Vec<Complex64> = vm.iter().zip(va).map(|(&m, &a)| Complex64::from_polar(m, a)).collect();
    (0..v.len())
        .map(|i| {
            let current: Complex64 = (0..v.len()).map(|k| y[(i, k)] * v[k]).sum();
            v[i] * current.conj()
        })
        .collect()
}

pub fn solve_power_flow(case: &NetworkCase) -> Result<PowerFlowSolution> {
    let nb = case.buses.len();
    let y = build_ybus(case, None)?;
    let g = y.map(|c| c.re);
    let b = y.map(|c| c.im);

    let p_spec: Vec<f64> = case.buses.iter().map(|bus| bus.p_gen_pu - bus.p_load_pu).collect();
    let q_spec: Vec<f64> = case.buses.iter().map(|bus| -bus.q_load_pu).collect();

    let pvpq: Vec<usize> = (0..nb).filter(|&i| case.buses[i].kind != BusKind::Slack).collect();
    let pq: Vec<usize> = (0..nb).filter(|&i| case.buses[i].kind == BusKind::Pq).collect();
    let (na, nv) = (pvpq.len(), pq.len());

    let mut vm: Vec<f64> = case
        .buses
        .iter()
        .map(|bus| if bus.kind == BusKind::Pq { 1.0 } else { bus.v_set_pu })
        .collect();
    let mut va = vec![0.0; nb];

    let calc = |vm: &[f64], va: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let mut p = vec![0.0; nb];
        let mut q = vec![0.0; nb];
        for i in 0..nb {
            for k in 0..nb {
                let (s, c) = (va[i] - va[k]).sin_cos();
                p[i] += vm[i] * vm[k] * (g[(i, k)] * c + b[(i, k)] * s);
                q[i] += vm[i] * vm[k] * (g[(i, k)] * s - b[(i, k)] * c);
            }
        }
        (p, q)
    };
    let mismatch = |p: &[f64], q: &[f64]| -> DVector<f64> {
        let mut f = DVector::zeros(na + nv);
        for (r, &i) in pvpq.iter().enumerate() {
            f[r] = p[i] - p_spec[i];
        }
        for (r, &i) in pq.iter().enumerate() {
            f[na + r] = q[i] - q_spec[i];
        }
        f
    };

    let (mut p, mut q) = calc(&vm, &va);
    let mut f = mismatch(&p, &q);
    let mut norm = f.amax();
    let mut iterations = 0;
    while norm > TARGET_MISMATCH {
        if iterations >= MAX_ITERATIONS || !norm.is_finite() {
            break;
        }
        let mut jac = DMatrix::zeros(na + nv, na + nv);
        for (r, &i) in pvpq.iter().enumerate() {
            for (c, &k) in pvpq.iter().enumerate() {
                jac[(r, c)] = if i == k {
                    -q[i] - b[(i, i)] * vm[i] * vm[i]
                } else {
                    let (s, co) = (va[i] - va[k]).sin_cos();
                    vm[i] * vm[k] * (g[(i, k)] * s - b[(i, k)] * co)
                };
            }
            for (c, &k) in pq.iter().enumerate() {
                jac[(r, na + c)] = if i == k {
                    p[i] / vm[i] + g[(i, i)] * vm[i]
                } else {
                    let (s, co) = (va[i] - va[k]).sin_cos();
                    vm[i] * (g[(i, k)] * co + b[(i, k)] * s)
                };
            }
        }
        for (r, &i) in pq.iter().enumerate() {
            for (c, &k) in pvpq.iter().enumerate() {
                jac[(na + r, c)] = if i == k {
                    p[i] - g[(i, i)] * vm[i] * vm[i]
                } else {
                    let (s, co) = (va[i] - va[k]).sin_cos();
                    -vm[i] * vm[k] * (g[(i, k)] * co + b[(i, k)] * s)
                };
            }
            for (c, &k) in pq.iter().enumerate() {
                jac[(na + r, na + c)] = if i == k {
                    q[i] / vm[i] - b[(i, i)] * vm[i]
                } else {
                    let (s, co) = (va[i] - va[k]).sin_cos();
                    vm[i] * (g[(i, k)] * s - b[(i, k)] * co)
                };
            }
        }
        let Some(dx) = jac.lu().solve(&f) else {
            break;
        };
        for (r, &i) in pvpq.iter().enumerate() {
            va[i] -= dx[r];
        }
        for (r, &i) in pq.iter().enumerate() {
            vm[i] -= dx[na + r];
        }
        iterations += 1;
        (p, q) = calc(&vm, &va);
        f = mismatch(&p, &q);
        let next = f.amax();
        if next <= TARGET_MISMATCH || !(next < norm) && next <= ACCEPT_MISMATCH {
            norm = next;
            break;
        }
        norm = next;
    }
    let bad_voltage = vm.iter().any(|&v| !(v > 0.0 && v.is_finite()));
    if !(norm <= ACCEPT_MISMATCH) || bad_voltage {
        return Err(Error::PowerFlow {
            iterations,
            mismatch: norm,
        });
    }

    let p_gen = (0..nb).map(|i| p[i] + case.buses[i].p_load_pu).collect();
    let q_gen = (0..nb).map(|i| q[i] + case.buses[i].q_load_pu).collect();
    Ok(PowerFlowSolution {
        vm,
        va,
        p_gen,
        q_gen,
        iterations,
        mismatch: norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::psys::case::{Branch, Bus};

    fn bus(id: usize, kind: BusKind) -> Bus {
        Bus {
            id,
            kind,
            v_set_pu: 1.0,
            p_gen_pu: 0.0,
            p_load_pu: 0.0,
            q_load_pu: 0.0,
            g_shunt_pu: 0.0,
            b_shunt_pu: 0.0,
        }
    }

    #[test]
    fn flat_system_is_trivial() {
        let case = NetworkCase {
            schema_version: 1,
            name: "flat".into(),
            base_mva: 100.0,
            frequency_hz: 60.0,
            buses: vec![bus(1, BusKind::Slack), bus(2, BusKind::Pv), bus(3, BusKind::Pq)],
            branches: vec![
                Branch {
                    from: 1,
                    to: 2,
                    r_pu: 0.01,
                    x_pu: 0.1,
                    b_pu: 0.0,
                },
                Branch {
                    from: 2,
                    to: 3,
                    r_pu: 0.02,
                    x_pu: 0.2,
                    b_pu: 0.0,
                },
            ],
            machines: vec![],
        };
        let sol = solve_power_flow(&case).unwrap();
        for i in 0..3 {
            assert!((sol.vm[i] - 1.0).abs() < 1e-12);
            assert!(sol.va[i].abs() < 1e-12);
        }
    }

    #[test]
    fn wscc9_converges_in_band() {
        let case = NetworkCase::wscc9();
        let sol = solve_power_flow(&case).unwrap();
        assert!(sol.mismatch <= 1e-8);
        assert_eq!(sol.va[0], 0.0);
        for &v in &sol.vm {
            assert!((0.95..=1.05).contains(&v), "{v}");
        }
        // independent mismatch from complex injections
        let y = build_ybus(&case, None).unwrap();
        let s = injections(&y, &sol.vm, &sol.va);
        for (i, bus) in case.buses.iter().enumerate() {
            if bus.kind != BusKind::Slack {
                assert!((s[i].re - (bus.p_gen_pu - bus.p_load_pu)).abs() < 1e-8);
            }
            if bus.kind == BusKind::Pq {
                assert!((s[i].im + bus.q_load_pu).abs() < 1e-8);
            }
        }
        // published solution: slack delivers about 71.6 MW
        assert!((sol.p_gen[0] - 0.716).abs() < 2e-3, "{}", sol.p_gen[0]);
    }

    #[test]
    fn infeasible_loading_fails() {
        let mut case = NetworkCase::wscc9();
        for b in &mut case.buses {
            b.p_load_pu *= 100.0;
            b.q_load_pu *= 100.0;
        }
        assert!(matches!(solve_power_flow(&case), Err(Error::PowerFlow { .. })));
    }
}
