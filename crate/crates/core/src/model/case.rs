//! JSON case format. All electrical quantities are stored in per-unit on
//! `base_mva`; physical outputs convert with `kW = p.u. * base_mva * 1000`.

use serde::{Deserialize, Serialize};

use super::{
    Branch, Bus, InverterSpec, LoadPoint, ModelError, Network, NetworkParts, TapChanger,
};

fn default_v_limits() -> [f64; 2] {
    [0.90, 1.10]
}

#[derive(Debug, Serialize, Deserialize)]
struct CaseFile {
    base_mva: f64,
    slack_voltage: f64,
    #[serde(default = "default_v_limits")]
    v_limits: [f64; 2],
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    allow_rating_mismatch: bool,
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    loads: Vec<LoadPoint>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    inverters: Vec<InverterSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    tap_changers: Vec<TapChanger>,
}

/// Parse a JSON case into a validated [`Network`].
pub fn parse_case(text: &str) -> Result<Network, ModelError> {
    let case: CaseFile = serde_json::from_str(text)?;
    Network::try_new(NetworkParts {
        buses: case.buses,
        branches: case.branches,
        loads: case.loads,
        inverters: case.inverters,
        tap_changers: case.tap_changers,
        slack_voltage: case.slack_voltage,
        v_limits: case.v_limits,
        base_mva: case.base_mva,
        allow_rating_mismatch: case.allow_rating_mismatch,
    })
}

impl Network {
    /// Serialize back to the case format. `parse_case` of the output yields
    /// an equal network.
    pub fn to_case_string(&self) -> String {
        let case = CaseFile {
            base_mva: self.base_mva(),
            slack_voltage: self.slack_voltage(),
            v_limits: self.v_limits(),
            allow_rating_mismatch: self.allow_rating_mismatch(),
            buses: self.buses().to_vec(),
            branches: self.branches().to_vec(),
            loads: self.loads().to_vec(),
            inverters: self.inverters().to_vec(),
            tap_changers: self.tap_changers().to_vec(),
        };
        serde_json::to_string_pretty(&case).expect("case serialization cannot fail")
    }
}
