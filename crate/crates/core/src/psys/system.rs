//! Multi-machine power system as a hybrid DAE model.
//!
//! Differential states per machine, in order: rotor angle `delta` (rad),
//! speed deviation `omega` (pu), transient EMF `E'_q`, then the field
//! voltage `E_fd` when a fast exciter is fitted, then the three stabilizer
//! states `[x_w, x_1, x_2]` when a stabilizer is fitted. Parameters are
//! `(K_s, T1, T2)` per stabilizer in machine order, with the second lead-lag
//! stage tied to the first.
//!
//! Algebraic states are all bus voltage magnitudes, all bus angles, then
//! `(I_d, I_q)` per machine. The algebraic equations are nodal current
//! balance (real rows, then imaginary rows) and the two stator equations
//! per machine. Mode 0 uses the healthy admittance matrix; mode 1 adds the
//! fault shunt.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::case::{ExciterParams, NetworkCase};
use super::powerflow::{solve_power_flow, PowerFlowSolution};
use super::pss::{tied_pss, PssParams};
use super::ybus::{add_fault_shunt, build_ybus};
use crate::dae::{solve_initial_algebraic, IntegratorConfig, Schedule};
use crate::error::{Error, Result};
use crate::hybrid::{Dims, EventSpec, HybridModel, ModeId, BASE_MODE};

pub const FAULT_MODE: ModeId = 1;

/// Default bolted-fault shunt admittance (pu).
pub const DEFAULT_FAULT_ADMITTANCE: f64 = 1e4;

/// Three-phase shunt fault applied at `t_on_s` and self-cleared at `t_off_s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultScenario {
    pub bus: usize,
    pub t_on_s: f64,
    pub t_off_s: f64,
    #[serde(default = "default_fault_g")]
    pub g_pu: f64,
    #[serde(default)]
    pub b_pu: f64,
}

fn default_fault_g() -> f64 {
    DEFAULT_FAULT_ADMITTANCE
}

impl FaultScenario {
    pub fn new(bus: usize, t_on_s: f64, t_off_s: f64) -> Self {
        Self {
            bus,
            t_on_s,
            t_off_s,
            g_pu: DEFAULT_FAULT_ADMITTANCE,
            b_pu: 0.0,
        }
    }

    pub fn admittance(&self) -> Complex64 {
        Complex64::new(self.g_pu, self.b_pu)
    }

    pub fn validate(&self, case: &NetworkCase) -> Result<()> {
        if !(self.t_on_s >= 0.0 && self.t_off_s > self.t_on_s) {
            return Err(Error::config(format!(
                "fault needs 0 <= t_on < t_off, got [{}, {}]",
                self.t_on_s, self.t_off_s
            )));
        }
        if case.bus_index(self.bus).is_none() {
            return Err(Error::config(format!("fault bus {} is not in the case", self.bus)));
        }
        if self.admittance().norm() == 0.0 {
            return Err(Error::config("fault admittance must be nonzero"));
        }
        Ok(())
    }

    /// Fault-on and fault-clear events: mode chain `0 -> 1 -> 0`.
    pub fn events(&self) -> Vec<EventSpec> {
        vec![
            EventSpec::switching_at(self.t_on_s, BASE_MODE, FAULT_MODE),
            EventSpec::switching_at(self.t_off_s, FAULT_MODE, BASE_MODE),
        ]
    }
}

/// Names of the tunable parameters of one stabilizer, in vector order.
pub const PSS_PARAMETER_NAMES: [&str; 3] = ["Ks", "T1", "T2"];

#[derive(Clone, Debug)]
struct MachinePss {
    tw: f64,
    states: usize,
    lambda: usize,
}

#[derive(Clone, Debug)]
struct Machine {
    id: usize,
    bus: usize,
    h: f64,
    d: f64,
    xd: f64,
    xdp: f64,
    xq: f64,
    tdo: f64,
    exciter: Option<ExciterParams>,
    pss: Option<MachinePss>,
    delta: usize,
    omega: usize,
    eqp: usize,
    efd: Option<usize>,
    i_d: usize,
    i_q: usize,
    pm: f64,
    efd_const: f64,
    vref: f64,
}

/// Location of one tunable parameter in the augmented state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParameterSlot {
    pub machine: usize,
    pub name: &'static str,
    pub index: usize,
}

impl ParameterSlot {
    pub fn label(&self) -> String {
        format!("G{}_{}", self.machine, self.name)
    }
}

#[derive(Clone, Debug)]
pub struct PowerSystem {
    dims: Dims,
    nb: usize,
    omega_s: f64,
    bus_ids: Vec<usize>,
    /// Real and imaginary admittance parts per mode.
    conductance: Vec<DMatrix<f64>>,
    susceptance: Vec<DMatrix<f64>>,
    machines: Vec<Machine>,
}

/// A constructed model together with its equilibrium and event schedule.
#[derive(Clone, Debug)]
pub struct BuiltSystem {
    pub model: PowerSystem,
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    pub schedule: Schedule,
    pub power_flow: PowerFlowSolution,
}

impl BuiltSystem {
    /// Initial state with the parameter block replaced by `lambda`.
    pub fn x0_with_lambda(&self, lambda: &[f64]) -> Result<Vec<f64>> {
        let dims = self.model.dims();
        if lambda.len() != dims.p {
            return Err(Error::structure(format!(
                "expected {} parameters, got {}",
                dims.p,
                lambda.len()
            )));
        }
        let mut x = self.x0.clone();
        x[dims.lambda_range()].copy_from_slice(lambda);
        Ok(x)
    }

    pub fn lambda0(&self) -> Vec<f64> {
        self.x0[self.model.dims().lambda_range()].to_vec()
    }
}

impl PowerSystem {
    pub fn machine_ids(&self) -> Vec<usize> {
        self.machines.iter().map(|m| m.id).collect()
    }

    fn machine(&self, id: usize) -> Option<&Machine> {
        self.machines.iter().find(|m| m.id == id)
    }

    pub fn omega_index(&self, machine: usize) -> Option<usize> {
        self.machine(machine).map(|m| m.omega)
    }

    pub fn delta_index(&self, machine: usize) -> Option<usize> {
        self.machine(machine).map(|m| m.delta)
    }

    /// Machines fitted with a stabilizer.
    pub fn pss_machines(&self) -> Vec<usize> {
        self.machines.iter().filter(|m| m.pss.is_some()).map(|m| m.id).collect()
    }

    pub fn parameter_slots(&self) -> Vec<ParameterSlot> {
        self.machines
            .iter()
            .filter_map(|m| m.pss.as_ref().map(|p| (m.id, p.lambda)))
            .flat_map(|(id, base)| {
                PSS_PARAMETER_NAMES
                    .iter()
                    .enumerate()
                    .map(move |(k, name)| ParameterSlot {
                        machine: id,
                        name,
                        index: base + k,
                    })
            })
            .collect()
    }

    pub fn bus_ids(&self) -> &[usize] {
        &self.bus_ids
    }

    /// Index of the voltage magnitude of bus `id` in the algebraic state.
    pub fn voltage_index(&self, bus: usize) -> Option<usize> {
        self.bus_ids.iter().position(|&b| b == bus)
    }

    pub fn angle_index(&self, bus: usize) -> Option<usize> {
        self.voltage_index(bus).map(|i| self.nb + i)
    }

    fn vs(&self, m: &Machine, x: &[f64]) -> f64 {
        match &m.pss {
            Some(p) => {
                let s = [x[p.states], x[p.states + 1], x[p.states + 2]];
                let lam = [x[p.lambda], x[p.lambda + 1], x[p.lambda + 2]];
                tied_pss(p.tw, x[m.omega], s, lam).vs
            }
            None => 0.0,
        }
    }

    fn efd(&self, m: &Machine, x: &[f64]) -> f64 {
        m.efd.map_or(m.efd_const, |i| x[i])
    }
}

impl HybridModel for PowerSystem {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn has_mode(&self, mode: ModeId) -> bool {
        mode < self.conductance.len()
    }

    fn flow(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        for m in &self.machines {
            let (omega, eqp) = (x[m.omega], x[m.eqp]);
            let (id, iq) = (y[m.i_d], y[m.i_q]);
            let pe = eqp * iq + (m.xq - m.xdp) * id * iq;
            out[m.delta] = self.omega_s * omega;
            out[m.omega] = (m.pm - pe - m.d * omega) / (2.0 * m.h);
            let efd = self.efd(m, x);
            out[m.eqp] = (-eqp - (m.xd - m.xdp) * id + efd) / m.tdo;
            if let (Some(ie), Some(ex)) = (m.efd, &m.exciter) {
                let v = y[m.bus];
                let vs = self.vs(m, x);
                out[ie] = (-efd + ex.ka * (m.vref - v + vs)) / ex.ta_s;
            }
            if let Some(p) = &m.pss {
                let s = [x[p.states], x[p.states + 1], x[p.states + 2]];
                let lam = [x[p.lambda], x[p.lambda + 1], x[p.lambda + 2]];
                let t = tied_pss(p.tw, omega, s, lam);
                out[p.states..p.states + 3].copy_from_slice(&t.derivatives);
            }
        }
    }

    fn algebraic(&self, mode: ModeId, x: &[f64], y: &[f64], out: &mut [f64]) {
        let nb = self.nb;
        let (g, b) = (&self.conductance[mode], &self.susceptance[mode]);
        let (vm, va) = (&y[..nb], &y[nb..2 * nb]);
        let trig: Vec<(f64, f64)> = va.iter().map(|a| a.sin_cos()).collect();
        for i in 0..nb {
            let (mut re, mut im) = (0.0, 0.0);
            for k in 0..nb {
                let (s, c) = trig[k];
                re += vm[k] * (g[(i, k)] * c - b[(i, k)] * s);
                im += vm[k] * (g[(i, k)] * s + b[(i, k)] * c);
            }
            out[i] = -re;
            out[nb + i] = -im;
        }
        for (gi, m) in self.machines.iter().enumerate() {
            let delta = x[m.delta];
            let (id, iq) = (y[m.i_d], y[m.i_q]);
            let (sd, cd) = delta.sin_cos();
            out[m.bus] += id * sd + iq * cd;
            out[nb + m.bus] += iq * sd - id * cd;
            let (v, theta) = (vm[m.bus], va[m.bus]);
            let (s, c) = (delta - theta).sin_cos();
            let r = 2 * nb + 2 * gi;
            out[r] = v * s - m.xq * iq;
            out[r + 1] = x[m.eqp] - m.xdp * id - v * c;
        }
    }

    fn flow_jacobian(&self, x: &[f64], y: &[f64], fx: &mut DMatrix<f64>, fy: &mut DMatrix<f64>) {
        for m in &self.machines {
            let (eqp, id, iq) = (x[m.eqp], y[m.i_d], y[m.i_q]);
            let two_h = 2.0 * m.h;
            fx[(m.delta, m.omega)] = self.omega_s;
            fx[(m.omega, m.omega)] = -m.d / two_h;
            fx[(m.omega, m.eqp)] = -iq / two_h;
            fy[(m.omega, m.i_d)] = -(m.xq - m.xdp) * iq / two_h;
            fy[(m.omega, m.i_q)] = -(eqp + (m.xq - m.xdp) * id) / two_h;
            fx[(m.eqp, m.eqp)] = -1.0 / m.tdo;
            fy[(m.eqp, m.i_d)] = -(m.xd - m.xdp) / m.tdo;
            if let (Some(ie), Some(ex)) = (m.efd, &m.exciter) {
                fx[(m.eqp, ie)] = 1.0 / m.tdo;
                fx[(ie, ie)] = -1.0 / ex.ta_s;
                fy[(ie, m.bus)] = -ex.ka / ex.ta_s;
                if let Some(p) = &m.pss {
                    let s = [x[p.states], x[p.states + 1], x[p.states + 2]];
                    let lam = [x[p.lambda], x[p.lambda + 1], x[p.lambda + 2]];
                    let t = tied_pss(p.tw, x[m.omega], s, lam);
                    let cols = [
                        m.omega,
                        p.states,
                        p.states + 1,
                        p.states + 2,
                        p.lambda,
                        p.lambda + 1,
                        p.lambda + 2,
                    ];
                    let gain = ex.ka / ex.ta_s;
                    for (v, &col) in cols.iter().enumerate() {
                        fx[(ie, col)] += gain * t.d_vs[v];
                        for r in 0..3 {
                            fx[(p.states + r, col)] += t.d_derivatives[r][v];
                        }
                    }
                }
            }
        }
    }

    fn algebraic_jacobian(&self, mode: ModeId, x: &[f64], y: &[f64], gx: &mut DMatrix<f64>, gy: &mut DMatrix<f64>) {
        let nb = self.nb;
        let (g, b) = (&self.conductance[mode], &self.susceptance[mode]);
        let (vm, va) = (&y[..nb], &y[nb..2 * nb]);
        for k in 0..nb {
            let (s, c) = va[k].sin_cos();
            for i in 0..nb {
                let (gik, bik) = (g[(i, k)], b[(i, k)]);
                gy[(i, k)] = -(gik * c - bik * s);
                gy[(nb + i, k)] = -(gik * s + bik * c);
                gy[(i, nb + k)] = vm[k] * (gik * s + bik * c);
                gy[(nb + i, nb + k)] = -vm[k] * (gik * c - bik * s);
            }
        }
        for (gi, m) in self.machines.iter().enumerate() {
            let delta = x[m.delta];
            let (id, iq) = (y[m.i_d], y[m.i_q]);
            let (sd, cd) = delta.sin_cos();
            gx[(m.bus, m.delta)] += id * cd - iq * sd;
            gx[(nb + m.bus, m.delta)] += iq * cd + id * sd;
            gy[(m.bus, m.i_d)] = sd;
            gy[(nb + m.bus, m.i_d)] = -cd;
            gy[(m.bus, m.i_q)] = cd;
            gy[(nb + m.bus, m.i_q)] = sd;

            let (v, theta) = (vm[m.bus], va[m.bus]);
            let (s, c) = (delta - theta).sin_cos();
            let r = 2 * nb + 2 * gi;
            gy[(r, m.bus)] = s;
            gx[(r, m.delta)] = v * c;
            gy[(r, nb + m.bus)] = -v * c;
            gy[(r, m.i_q)] = -m.xq;
            gx[(r + 1, m.eqp)] = 1.0;
            gy[(r + 1, m.i_d)] = -m.xdp;
            gy[(r + 1, m.bus)] = -c;
            gx[(r + 1, m.delta)] = v * s;
            gy[(r + 1, nb + m.bus)] = -v * s;
        }
    }

    /// `(V, theta)` and `(-V, theta + pi)` are the same phasor; the exciter
    /// needs the positive magnitude.
    fn canonicalize_algebraic(&self, y: &mut [f64]) {
        for i in 0..self.nb {
            if y[i] < 0.0 {
                y[i] = -y[i];
                let a = y[self.nb + i] + PI;
                y[self.nb + i] = if a > PI { a - 2.0 * PI } else { a };
            }
        }
    }

    fn state_names(&self) -> Vec<String> {
        let mut names = vec![String::new(); self.dims.augmented()];
        for m in &self.machines {
            names[m.delta] = format!("delta_G{}", m.id);
            names[m.omega] = format!("omega_G{}", m.id);
            names[m.eqp] = format!("eqp_G{}", m.id);
            if let Some(i) = m.efd {
                names[i] = format!("efd_G{}", m.id);
            }
            if let Some(p) = &m.pss {
                for (k, s) in ["pss_xw", "pss_x1", "pss_x2"].iter().enumerate() {
                    names[p.states + k] = format!("{s}_G{}", m.id);
                }
            }
        }
        for slot in self.parameter_slots() {
            names[slot.index] = slot.label();
        }
        names
    }

    fn algebraic_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.bus_ids.iter().map(|b| format!("V_{b}")).collect();
        names.extend(self.bus_ids.iter().map(|b| format!("theta_{b}")));
        for m in &self.machines {
            names.push(format!("Id_G{}", m.id));
            names.push(format!("Iq_G{}", m.id));
        }
        names
    }
}

/// Builds the hybrid model, its power-flow equilibrium and the fault
/// schedule. Exciters come from the case; stabilizers from `pss`, keyed by
/// machine id, and require a fast exciter on the same machine.
pub fn build_hybrid_model(
    case: &NetworkCase,
    fault: Option<&FaultScenario>,
    pss: &BTreeMap<usize, PssParams>,
) -> Result<BuiltSystem> {
    case.validate()?;
    if case.machines.is_empty() {
        return Err(Error::config("case has no machines"));
    }
    if let Some(f) = fault {
        f.validate(case)?;
    }
    for (id, params) in pss {
        let m = case
            .machine(*id)
            .ok_or_else(|| Error::config(format!("stabilizer on unknown machine {id}")))?;
        if m.exciter.is_none() {
            return Err(Error::config(format!(
                "stabilizer on machine {id} requires a fast exciter"
            )));
        }
        params.validate()?;
        if !params.is_tied() {
            return Err(Error::config(format!(
                "stabilizer on machine {id}: the second lead-lag stage must equal the first (T3 = T1, T4 = T2)"
            )));
        }
    }

    let nb = case.buses.len();
    let pf = solve_power_flow(case)?;

    // state layout
    let mut machines = Vec::with_capacity(case.machines.len());
    let mut next = 0;
    let mut pss_count = 0;
    for (gi, gp) in case.machines.iter().enumerate() {
        let delta = next;
        let omega = next + 1;
        let eqp = next + 2;
        next += 3;
        let efd = gp.exciter.map(|_| {
            next += 1;
            next - 1
        });
        let pss_cfg = pss.get(&gp.id).map(|p| {
            let states = next;
            next += 3;
            pss_count += 1;
            (p.tw_s, states)
        });
        machines.push((gi, gp, delta, omega, eqp, efd, pss_cfg));
    }
    let n = next;
    let p = 3 * pss_count;
    let m_alg = 2 * nb + 2 * case.machines.len();
    let dims = Dims::new(n, 0, p, m_alg);

    let mut x0 = vec![0.0; dims.augmented()];
    let mut y0 = vec![0.0; m_alg];
    y0[..nb].copy_from_slice(&pf.vm);
    y0[nb..2 * nb].copy_from_slice(&pf.va);

    let mut lambda_next = n;
    let mut built = Vec::with_capacity(machines.len());
    for (gi, gp, delta, omega, eqp, efd, pss_cfg) in machines {
        let bus = case.bus_index(gp.bus).expect("validated");
        let v = pf.voltage(bus);
        let s = Complex64::new(pf.p_gen[bus], pf.q_gen[bus]);
        let current = (s / v).conj();
        let e = v + Complex64::new(0.0, gp.xq_pu) * current;
        let d = e.arg();
        let rot = Complex64::from_polar(1.0, -(d - 0.5 * PI));
        let idq = current * rot;
        let vdq = v * rot;
        let eq_prime = vdq.im + gp.xd_prime_pu * idq.re;
        x0[delta] = d;
        x0[omega] = 0.0;
        x0[eqp] = eq_prime;
        let i_d = 2 * nb + 2 * gi;
        y0[i_d] = idq.re;
        y0[i_d + 1] = idq.im;

        let pss_slot = pss_cfg.map(|(tw, states)| {
            let params = &pss[&gp.id];
            let lambda = lambda_next;
            lambda_next += 3;
            x0[lambda] = params.ks;
            x0[lambda + 1] = params.t1_s;
            x0[lambda + 2] = params.t2_s;
            MachinePss { tw, states, lambda }
        });

        built.push(Machine {
            id: gp.id,
            bus,
            h: gp.h_s,
            d: gp.d_pu,
            xd: gp.xd_pu,
            xdp: gp.xd_prime_pu,
            xq: gp.xq_pu,
            tdo: gp.tdo_prime_s,
            exciter: gp.exciter,
            pss: pss_slot,
            delta,
            omega,
            eqp,
            efd,
            i_d,
            i_q: i_d + 1,
            pm: 0.0,
            efd_const: 0.0,
            vref: 0.0,
        });
    }

    let y_healthy = build_ybus(case, Some(&pf.vm))?;
    let mut ys = vec![y_healthy.clone()];
    if let Some(f) = fault {
        let mut yf = y_healthy;
        add_fault_shunt(&mut yf, case.bus_index(f.bus).expect("validated"), f.admittance());
        ys.push(yf);
    }

    let mut model = PowerSystem {
        dims,
        nb,
        omega_s: 2.0 * PI * case.frequency_hz,
        bus_ids: case.buses.iter().map(|b| b.id).collect(),
        conductance: ys.iter().map(|y| y.map(|c| c.re)).collect(),
        susceptance: ys.iter().map(|y| y.map(|c| c.im)).collect(),
        machines: built,
    };

    // refine y0 on the dynamic network, then set mechanical power, field
    // voltage and reference so that the flow vanishes at (x0, y0)
    let init_cfg = IntegratorConfig {
        newton_tol: 1e-12,
        ..Default::default()
    };
    let refined = solve_initial_algebraic(&model, &x0, BASE_MODE, &y0, &init_cfg)?;
    let y0 = refined.y;
    init_setpoints(&mut model, &mut x0, &y0)?;

    let schedule = Schedule::new(fault.map(FaultScenario::events).unwrap_or_default());
    Ok(BuiltSystem {
        model,
        x0,
        y0,
        schedule,
        power_flow: pf,
    })
}

fn init_setpoints(model: &mut PowerSystem, x0: &mut [f64], y0: &[f64]) -> Result<()> {
    for m in &mut model.machines {
        let (eqp, id, iq) = (x0[m.eqp], y0[m.i_d], y0[m.i_q]);
        m.pm = eqp * iq + (m.xq - m.xdp) * id * iq;
        let efd = eqp + (m.xd - m.xdp) * id;
        if !(efd > 0.0) {
            return Err(Error::Initialization {
                message: format!("machine {} requires a nonpositive field voltage ({efd:.4})", m.id),
                residual: efd,
            });
        }
        match (m.efd, &m.exciter) {
            (Some(ie), Some(ex)) => {
                x0[ie] = efd;
                m.vref = y0[m.bus] + efd / ex.ka;
            }
            _ => m.efd_const = efd,
        }
    }
    Ok(())
}

/// Machine-level operating point derived from a power flow (angles,
/// internal EMF, field voltage, mechanical power). Exposed mainly for
/// reporting; [`build_hybrid_model`] performs the same computation.
pub fn init_dynamic_states(case: &NetworkCase, pss: &BTreeMap<usize, PssParams>) -> Result<(Vec<f64>, Vec<f64>)> {
    let built = build_hybrid_model(case, None, pss)?;
    Ok((built.x0, built.y0))
}

/// PSS parameter set used by commercial small-signal tuning for the
/// 9-bus system (`K_s = 7.5, T1 = T3 = 0.174, T2 = T4 = 0.05`, `T_w = 10`).
pub fn reference_pss() -> PssParams {
    PssParams::tied(7.5, 0.174, 0.050, 10.0)
}

/// Washout time constant and exciter used on stabilized machines.
pub const STANDARD_TW: f64 = 10.0;
pub const FAST_EXCITER: ExciterParams = ExciterParams { ka: 24.0, ta_s: 0.05 };

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dae::simulate;
    use crate::hybrid::{check_jacobians, eval_f, eval_g, AlgebraicState, AugmentedState};

    fn nominal() -> BuiltSystem {
        let mut case = NetworkCase::wscc9();
        for id in [2, 3] {
            case.machine_mut(id).unwrap().exciter = Some(FAST_EXCITER);
        }
        let pss = BTreeMap::from([(2, reference_pss()), (3, reference_pss())]);
        build_hybrid_model(&case, Some(&FaultScenario::new(9, 0.0, 0.1)), &pss).unwrap()
    }

    #[test]
    fn state_counts() {
        let b = nominal();
        let dims = b.model.dims();
        assert_eq!(dims.n, 17);
        assert_eq!(dims.p, 6);
        assert_eq!(dims.l, 0);
        assert_eq!(dims.m, 24);
        assert_eq!(b.schedule.events.len(), 2);
        assert_eq!(b.schedule.events[0].post_mode, FAULT_MODE);
        assert_eq!(b.schedule.events[1].post_mode, BASE_MODE);
    }

    #[test]
    fn equilibrium_flow_vanishes() {
        let b = nominal();
        let dims = b.model.dims();
        let x = AugmentedState::from_flat(dims, &b.x0).unwrap();
        let y = AlgebraicState(b.y0.clone());
        let f = eval_f(&b.model, &x, &y).unwrap();
        assert!(f.iter().all(|v| v.abs() <= 1e-8), "{f:?}");
        let g = eval_g(&b.model, BASE_MODE, &x, &y).unwrap();
        assert!(g.iter().all(|v| v.abs() <= 1e-8));
        for id in b.model.machine_ids() {
            assert_eq!(b.x0[b.model.omega_index(id).unwrap()], 0.0);
        }
    }

    #[test]
    fn faulted_residual_at_prefault_point_is_large() {
        let b = nominal();
        let dims = b.model.dims();
        let x = AugmentedState::from_flat(dims, &b.x0).unwrap();
        let g = eval_g(&b.model, FAULT_MODE, &x, &AlgebraicState(b.y0.clone())).unwrap();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm > 1e-2);
        let mut y = b.y0.clone();
        y[3] += 1e-3;
        let g = eval_g(&b.model, BASE_MODE, &x, &AlgebraicState(y)).unwrap();
        assert!(g.iter().any(|v| v.abs() > 1e-6));
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let b = nominal();
        let cfg = IntegratorConfig {
            tf: 0.3,
            ..Default::default()
        };
        let traj = simulate(&b.model, &b.x0, &b.y0, &b.schedule, &cfg).unwrap();
        for k in [0, 3, 15, traj.len() - 1] {
            for mode in [BASE_MODE, FAULT_MODE] {
                let dev = check_jacobians(&b.model, mode, &traj.states[k], &traj.algebraics[k], 1e-6).unwrap();
                assert!(dev <= 1e-5, "k = {k}, mode = {mode}: {dev}");
            }
        }
    }

    #[test]
    fn pss_requires_fast_exciter() {
        let case = NetworkCase::wscc9();
        let pss = BTreeMap::from([(2, reference_pss())]);
        assert!(matches!(build_hybrid_model(&case, None, &pss), Err(Error::Config(_))));
    }

    #[test]
    fn no_pss_means_no_parameters() {
        let mut case = NetworkCase::wscc9();
        for id in [2, 3] {
            case.machine_mut(id).unwrap().exciter = Some(FAST_EXCITER);
        }
        let b = build_hybrid_model(&case, Some(&FaultScenario::new(9, 0.0, 0.1)), &BTreeMap::new()).unwrap();
        assert_eq!(b.model.dims().p, 0);
        assert_eq!(b.model.dims().n, 11);
    }

    #[test]
    fn fault_validation() {
        let case = NetworkCase::wscc9();
        assert!(FaultScenario::new(9, 0.2, 0.1).validate(&case).is_err());
        assert!(FaultScenario::new(42, 0.0, 0.1).validate(&case).is_err());
        assert!(FaultScenario::new(9, 0.0, 0.1).validate(&case).is_ok());
    }

    #[test]
    fn names_cover_every_entry() {
        let b = nominal();
        let names = b.model.state_names();
        assert!(names.iter().all(|n| !n.is_empty()));
        assert_eq!(names[b.model.dims().n], "G2_Ks");
        assert_eq!(b.model.algebraic_names().len(), 24);
    }
}
