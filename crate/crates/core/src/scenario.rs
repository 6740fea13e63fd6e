//! Scenario files: network case, fault, control configuration and solver
//! settings in one TOML document.
//!
//! ```toml
//! schema_version = 1
//! name = "nominal"
//! case = "wscc9"          # bundled case, or a path relative to this file
//!
//! [fault]
//! bus = 9
//! t_on_s = 0.0
//! t_off_s = 0.1
//!
//! [[exciter]]
//! machine = 2
//! ka = 24.0
//! ta_s = 0.05
//!
//! [[pss]]
//! machine = 2
//! ks = 7.5
//! t1_s = 0.174
//! t2_s = 0.05
//! ```
//!
//! Optional tables: `[integrator]`, `[objective]`, `[tuner]`, and
//! `[[bounds]]` entries overriding the box for one parameter.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dae::IntegratorConfig;
use crate::error::{Error, Result};
use crate::hybrid::HybridModel;
use crate::psys::system::{PSS_PARAMETER_NAMES, STANDARD_TW};
use crate::psys::{
    build_hybrid_model, BuiltSystem, ExciterParams, FaultScenario, NetworkCase, PssParams, FAST_EXCITER,
};
use crate::tuner::{Bounds, CgmConfig, ObjectiveConfig};

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;
pub const BUNDLED_CASE: &str = "wscc9";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExciterEntry {
    pub machine: usize,
    pub ka: f64,
    pub ta_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PssEntry {
    pub machine: usize,
    pub ks: f64,
    pub t1_s: f64,
    pub t2_s: f64,
    #[serde(default = "standard_tw")]
    pub tw_s: f64,
    /// Second-stage constants; must equal `t1_s`/`t2_s` when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t3_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t4_s: Option<f64>,
}

fn standard_tw() -> f64 {
    STANDARD_TW
}

impl PssEntry {
    pub fn params(&self) -> PssParams {
        PssParams {
            ks: self.ks,
            tw_s: self.tw_s,
            t1_s: self.t1_s,
            t2_s: self.t2_s,
            t3_s: self.t3_s.unwrap_or(self.t1_s),
            t4_s: self.t4_s.unwrap_or(self.t2_s),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundOverride {
    pub machine: usize,
    /// One of `Ks`, `T1`, `T2`.
    pub parameter: String,
    pub lower: f64,
    pub upper: f64,
}

fn schema_version() -> u32 {
    SCENARIO_SCHEMA_VERSION
}

fn bundled() -> String {
    BUNDLED_CASE.to_string()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    #[serde(default = "bundled")]
    pub case: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<FaultScenario>,
    #[serde(default, rename = "exciter")]
    pub exciters: Vec<ExciterEntry>,
    #[serde(default)]
    pub pss: Vec<PssEntry>,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub objective: ObjectiveConfig,
    #[serde(default)]
    pub tuner: CgmConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bounds: Vec<BoundOverride>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Directory relative case paths resolve against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl Scenario {
    /// Bus 9 fault cleared after 0.1 s with fast exciters on G2 and G3 and,
    /// when `pss` is given, the same stabilizer on both.
    pub fn nominal(pss: Option<PssParams>) -> Self {
        let exciters = [2, 3]
            .map(|machine| ExciterEntry {
                machine,
                ka: FAST_EXCITER.ka,
                ta_s: FAST_EXCITER.ta_s,
            })
            .to_vec();
        let pss = pss
            .map(|p| {
                [2, 3]
                    .map(|machine| PssEntry {
                        machine,
                        ks: p.ks,
                        t1_s: p.t1_s,
                        t2_s: p.t2_s,
                        tw_s: p.tw_s,
                        t3_s: None,
                        t4_s: None,
                    })
                    .to_vec()
            })
            .unwrap_or_default();
        Self {
            schema_version: SCENARIO_SCHEMA_VERSION,
            name: "nominal".into(),
            case: bundled(),
            fault: Some(FaultScenario::new(9, 0.0, 0.1)),
            exciters,
            pss,
            integrator: IntegratorConfig::default(),
            objective: ObjectiveConfig::default(),
            tuner: CgmConfig::default(),
            bounds: Vec::new(),
            output_dir: None,
            base_dir: None,
        }
    }

    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        if s.schema_version != SCENARIO_SCHEMA_VERSION {
            return Err(Error::config(format!(
                "unsupported scenario schema version {} (expected {SCENARIO_SCHEMA_VERSION})",
                s.schema_version
            )));
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut s = Self::from_toml_str(&text, &path.display().to_string())?;
        s.base_dir = path.parent().map(Path::to_path_buf);
        Ok(s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn network_case(&self) -> Result<NetworkCase> {
        if self.case == BUNDLED_CASE {
            return Ok(NetworkCase::wscc9());
        }
        let path = match &self.base_dir {
            Some(dir) => dir.join(&self.case),
            None => PathBuf::from(&self.case),
        };
        NetworkCase::load(&path)
    }

    fn check_unique(kind: &str, ids: impl Iterator<Item = usize>) -> Result<()> {
        let mut seen = BTreeSet::new();
        for id in ids {
            if !seen.insert(id) {
                return Err(Error::config(format!("{kind} listed twice for machine {id}")));
            }
        }
        Ok(())
    }

    /// Case with the scenario's exciters applied.
    pub fn configured_case(&self) -> Result<NetworkCase> {
        let mut case = self.network_case()?;
        Self::check_unique("exciter", self.exciters.iter().map(|e| e.machine))?;
        for e in &self.exciters {
            let params = ExciterParams { ka: e.ka, ta_s: e.ta_s };
            params.validate()?;
            case.machine_mut(e.machine)
                .ok_or_else(|| Error::config(format!("exciter on unknown machine {}", e.machine)))?
                .exciter = Some(params);
        }
        Ok(case)
    }

    pub fn pss_map(&self) -> Result<BTreeMap<usize, PssParams>> {
        Self::check_unique("stabilizer", self.pss.iter().map(|p| p.machine))?;
        Ok(self.pss.iter().map(|p| (p.machine, p.params())).collect())
    }

    pub fn build(&self) -> Result<BuiltSystem> {
        self.integrator.validate()?;
        self.tuner.validate()?;
        let case = self.configured_case()?;
        let built = build_hybrid_model(&case, self.fault.as_ref(), &self.pss_map()?)?;
        built.schedule.validate(&built.model, &self.integrator)?;
        self.objective.validate(&built, &self.integrator)?;
        self.bounds_for(&built)?;
        Ok(built)
    }

    /// Box for the system's parameter vector: defaults plus overrides.
    pub fn bounds_for(&self, built: &BuiltSystem) -> Result<Bounds> {
        let slots = built.model.parameter_slots();
        let n = built.model.dims().n;
        let mut b = Bounds::pss_default(built.model.pss_machines().len());
        for o in &self.bounds {
            let slot = slots
                .iter()
                .find(|s| s.machine == o.machine && s.name == o.parameter)
                .ok_or_else(|| {
                    Error::config(format!(
                        "bound override for {} on machine {} matches no parameter (expected one of {:?})",
                        o.parameter, o.machine, PSS_PARAMETER_NAMES
                    ))
                })?;
            b.lower[slot.index - n] = o.lower;
            b.upper[slot.index - n] = o.upper;
        }
        b.validate()?;
        Ok(b)
    }

    /// Copy with every stabilizer set from the parameter vector `lambda`
    /// (ordered as in the built model).
    pub fn with_lambda(&self, built: &BuiltSystem, lambda: &[f64]) -> Result<Self> {
        let n = built.model.dims().n;
        let mut out = self.clone();
        for slot in built.model.parameter_slots() {
            let v = *lambda
                .get(slot.index - n)
                .ok_or_else(|| Error::structure("parameter vector is too short"))?;
            let entry = out
                .pss
                .iter_mut()
                .find(|p| p.machine == slot.machine)
                .ok_or_else(|| Error::structure(format!("no stabilizer entry for machine {}", slot.machine)))?;
            match slot.name {
                "Ks" => entry.ks = v,
                "T1" => {
                    entry.t1_s = v;
                    entry.t3_s = None;
                }
                _ => {
                    entry.t2_s = v;
                    entry.t4_s = None;
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::psys::reference_pss;

    #[test]
    fn nominal_round_trips() {
        let s = Scenario::nominal(Some(reference_pss()));
        let again = Scenario::from_toml_str(&s.to_toml_string(), "mem").unwrap();
        assert_eq!(s, again);
        let built = again.build().unwrap();
        assert_eq!(built.model.dims().p, 6);
    }

    #[test]
    fn minimal_file_uses_defaults() {
        let s = Scenario::from_toml_str("name = \"quiet\"\n", "mem").unwrap();
        assert!(s.fault.is_none());
        assert_eq!(s.integrator, IntegratorConfig::default());
        let built = s.build().unwrap();
        assert_eq!(built.model.dims().p, 0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(
            Scenario::from_toml_str("nmae = \"typo\"\n", "mem"),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn untied_stabilizer_is_rejected() {
        let mut s = Scenario::nominal(Some(reference_pss()));
        s.pss[0].t3_s = Some(0.3);
        assert!(matches!(s.build(), Err(Error::Config(_))));
    }

    #[test]
    fn duplicate_entries_are_rejected() {
        let mut s = Scenario::nominal(Some(reference_pss()));
        s.pss.push(s.pss[0].clone());
        assert!(s.build().is_err());
    }

    #[test]
    fn bound_overrides_apply() {
        let mut s = Scenario::nominal(Some(reference_pss()));
        s.bounds.push(BoundOverride {
            machine: 3,
            parameter: "T2".into(),
            lower: 0.02,
            upper: 0.1,
        });
        let built = s.build().unwrap();
        let b = s.bounds_for(&built).unwrap();
        assert_eq!(b.lower[5], 0.02);
        assert_eq!(b.upper[5], 0.1);
        s.bounds[0].parameter = "Tw".into();
        assert!(s.bounds_for(&built).is_err());
    }

    #[test]
    fn with_lambda_rewrites_stabilizers() {
        let s = Scenario::nominal(Some(reference_pss()));
        let built = s.build().unwrap();
        let t = s.with_lambda(&built, &[1.0, 0.2, 0.03, 2.0, 0.4, 0.05]).unwrap();
        assert_eq!(t.pss[1].ks, 2.0);
        assert_eq!(t.pss[0].t2_s, 0.03);
        assert_eq!(t.build().unwrap().lambda0(), vec![1.0, 0.2, 0.03, 2.0, 0.4, 0.05]);
    }
}
