//! Nodal admittance matrix.

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::case::NetworkCase;
use crate::error::{Error, Result};

/// Builds the bus admittance matrix from branches and shunts. When
/// `load_voltages` is given (bus voltage magnitudes in case order), loads
/// are folded in as constant impedances `(P - jQ) / |V|^2`.
pub fn build_ybus(case: &NetworkCase, load_voltages: Option<&[f64]>) -> Result<DMatrix<Complex64>> {
    let nb = case.buses.len();
    let mut y = DMatrix::from_element(nb, nb, Complex64::new(0.0, 0.0));
    for br in &case.branches {
        let z = Complex64::new(br.r_pu, br.x_pu);
        if z.norm() == 0.0 {
            return Err(Error::config(format!(
                "branch {}-{} has zero impedance",
                br.from, br.to
            )));
        }
        let ys = z.inv();
        let half_b = Complex64::new(0.0, 0.5 * br.b_pu);
        let i = case
            .bus_index(br.from)
            .ok_or_else(|| Error::config(format!("unknown bus {}", br.from)))?;
        let j = case
            .bus_index(br.to)
            .ok_or_else(|| Error::config(format!("unknown bus {}", br.to)))?;
        y[(i, i)] += ys + half_b;
        y[(j, j)] += ys + half_b;
        y[(i, j)] -= ys;
        y[(j, i)] -= ys;
    }
    for (i, bus) in case.buses.iter().enumerate() {
        y[(i, i)] += Complex64::new(bus.g_shunt_pu, bus.b_shunt_pu);
    }
    if let Some(vm) = load_voltages {
        if vm.len() != nb {
            return Err(Error::structure("load voltage vector does not match bus count"));
        }
        for (i, bus) in case.buses.iter().enumerate() {
            if bus.p_load_pu != 0.0 || bus.q_load_pu != 0.0 {
                y[(i, i)] += Complex64::new(bus.p_load_pu, -bus.q_load_pu) / (vm[i] * vm[i]);
            }
        }
    }
    Ok(y)
}

/// Adds a shunt fault admittance at bus index `bus`.
pub fn add_fault_shunt(y: &mut DMatrix<Complex64>, bus: usize, admittance: Complex64) {
    y[(bus, bus)] += admittance;
}
