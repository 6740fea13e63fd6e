//! Network case files.
//!
//! A case is a TOML document with `[[bus]]`, `[[branch]]` and `[[machine]]`
//! tables, all in per unit on `base_mva`. See `data/wscc9.toml` for the
//! canonical example.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CASE_SCHEMA_VERSION: u32 = 1;

const WSCC9: &str = include_str!("../../data/wscc9.toml");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    /// Voltage set point for slack and PV buses.
    #[serde(default = "one")]
    pub v_set_pu: f64,
    /// Scheduled generation at PV buses.
    #[serde(default)]
    pub p_gen_pu: f64,
    #[serde(default)]
    pub p_load_pu: f64,
    #[serde(default)]
    pub q_load_pu: f64,
    #[serde(default)]
    pub g_shunt_pu: f64,
    #[serde(default)]
    pub b_shunt_pu: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub r_pu: f64,
    pub x_pu: f64,
    /// Total line charging susceptance.
    #[serde(default)]
    pub b_pu: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExciterParams {
    pub ka: f64,
    pub ta_s: f64,
}

impl ExciterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.ka > 0.0 && self.ta_s > 0.0) {
            return Err(Error::config(format!(
                "exciter needs K_a > 0 and T_a > 0, got K_a = {}, T_a = {}",
                self.ka, self.ta_s
            )));
        }
        Ok(())
    }
}

/// One-axis (flux-decay) synchronous machine.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorParams {
    pub id: usize,
    pub bus: usize,
    pub h_s: f64,
    #[serde(default)]
    pub d_pu: f64,
    pub xd_pu: f64,
    pub xd_prime_pu: f64,
    pub xq_pu: f64,
    pub tdo_prime_s: f64,
    /// Fast static exciter; `None` holds the field voltage constant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exciter: Option<ExciterParams>,
}

impl GeneratorParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::config(format!("machine {}: {what}", self.id)));
        if !(self.h_s > 0.0) {
            return bad("H must be positive");
        }
        if !(self.xd_prime_pu > 0.0 && self.xd_pu >= self.xd_prime_pu) {
            return bad("requires X_d >= X'_d > 0");
        }
        if !(self.xq_pu > 0.0) {
            return bad("X_q must be positive");
        }
        if !(self.tdo_prime_s > 0.0) {
            return bad("T'_do must be positive");
        }
        if let Some(ex) = &self.exciter {
            ex.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkCase {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub base_mva: f64,
    pub frequency_hz: f64,
    #[serde(rename = "bus")]
    pub buses: Vec<Bus>,
    #[serde(rename = "branch")]
    pub branches: Vec<Branch>,
    #[serde(rename = "machine", default)]
    pub machines: Vec<GeneratorParams>,
}

fn schema_version() -> u32 {
    CASE_SCHEMA_VERSION
}

impl NetworkCase {
    /// The WSCC 3-machine 9-bus system shipped with the crate.
    pub fn wscc9() -> Self {
        Self::from_toml_str(WSCC9, "wscc9").expect("bundled case is valid")
    }

    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let case: NetworkCase = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        case.validate()?;
        Ok(case)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn machine(&self, id: usize) -> Option<&GeneratorParams> {
        self.machines.iter().find(|m| m.id == id)
    }

    pub fn machine_mut(&mut self, id: usize) -> Option<&mut GeneratorParams> {
        self.machines.iter_mut().find(|m| m.id == id)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CASE_SCHEMA_VERSION {
            return Err(Error::config(format!(
                "unsupported case schema version {} (expected {CASE_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if !(self.base_mva > 0.0 && self.frequency_hz > 0.0) {
            return Err(Error::config("base_mva and frequency_hz must be positive"));
        }
        if self.buses.is_empty() {
            return Err(Error::config("case has no buses"));
        }
        let mut ids = BTreeMap::new();
        for (i, b) in self.buses.iter().enumerate() {
            if ids.insert(b.id, i).is_some() {
                return Err(Error::config(format!("duplicate bus id {}", b.id)));
            }
        }
        let slack = self.buses.iter().filter(|b| b.kind == BusKind::Slack).count();
        if slack != 1 {
            return Err(Error::config(format!(
                "case needs exactly one slack bus, found {slack}"
            )));
        }
        for br in &self.branches {
            for end in [br.from, br.to] {
                if !ids.contains_key(&end) {
                    return Err(Error::config(format!("branch references unknown bus {end}")));
                }
            }
            if br.from == br.to {
                return Err(Error::config(format!("branch {}-{} is a self loop", br.from, br.to)));
            }
        }
        // connectivity
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        for br in &self.branches {
            let (a, b) = (ids[&br.from], ids[&br.to]);
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::config(format!(
                "bus {} is not connected to the network",
                self.buses[i].id
            )));
        }

        let mut machine_ids = BTreeMap::new();
        for m in &self.machines {
            m.validate()?;
            if machine_ids.insert(m.id, ()).is_some() {
                return Err(Error::config(format!("duplicate machine id {}", m.id)));
            }
            match self.bus_index(m.bus).map(|i| self.buses[i].kind) {
                None => return Err(Error::config(format!("machine {} is on unknown bus {}", m.id, m.bus))),
                Some(BusKind::Pq) => return Err(Error::config(format!("machine {} sits on PQ bus {}", m.id, m.bus))),
                _ => {}
            }
        }
        Ok(())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("case serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_case_loads() {
        let case = NetworkCase::wscc9();
        assert_eq!(case.buses.len(), 9);
        assert_eq!(case.branches.len(), 9);
        assert_eq!(case.machines.len(), 3);
        assert_eq!(case.frequency_hz, 60.0);
    }

    #[test]
    fn round_trips_through_toml() {
        let case = NetworkCase::wscc9();
        let again = NetworkCase::from_toml_str(&case.to_toml_string(), "mem").unwrap();
        assert_eq!(case, again);
    }

    #[test]
    fn rejects_two_slack_buses() {
        let mut case = NetworkCase::wscc9();
        case.buses[1].kind = BusKind::Slack;
        assert!(case.validate().is_err());
    }

    #[test]
    fn rejects_disconnected_bus() {
        let mut case = NetworkCase::wscc9();
        case.branches.retain(|b| b.to != 5 && b.from != 5);
        assert!(case.validate().is_err());
    }

    #[test]
    fn rejects_bad_machine_data() {
        let mut case = NetworkCase::wscc9();
        case.machines[1].xd_prime_pu = 2.0;
        assert!(case.validate().is_err());
        let mut case = NetworkCase::wscc9();
        case.machines[0].h_s = 0.0;
        assert!(case.validate().is_err());
    }
}
