//! Power-system models: network data, power flow, machines, exciters and
//! stabilizers assembled into a hybrid DAE.

pub mod case;
pub mod powerflow;
pub mod pss;
pub mod system;
pub mod ybus;

pub use case::{Branch, Bus, BusKind, ExciterParams, GeneratorParams, NetworkCase};
pub use powerflow::{solve_power_flow, PowerFlowSolution};
pub use pss::{pss_dynamics, PssOutput, PssParams};
pub use system::{
    build_hybrid_model, reference_pss, BuiltSystem, FaultScenario, ParameterSlot, PowerSystem, FAST_EXCITER,
    FAULT_MODE, STANDARD_TW,
};
pub use ybus::{add_fault_shunt, build_ybus};
