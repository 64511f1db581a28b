//! Grid data model: buses, branches, loads, inverters, tap changers, and the
//! validated [`Network`] container, plus the JSON case format and topology
//! utilities (radial orientation, reconfiguration by switching lines).

mod case;
mod topology;

pub use case::parse_case;
pub use topology::{orient_radial, OrientedTree};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Integer bus label as it appears in case files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BusId(pub u32);

/// Integer branch label as it appears in case files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BranchId(pub u32);

impl std::fmt::Display for BusId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::fmt::Display for BranchId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BusKind {
    Slack,
    Load,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: BusId,
    pub kind: BusKind,
    /// Fixed shunt susceptance in p.u. (switched capacitors modeled as
    /// on/off equipment in the case file, not as control variables).
    #[serde(default, skip_serializing_if = "is_zero")]
    pub shunt_susceptance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BranchStatus {
    InService,
    SwitchedOff,
}

impl BranchStatus {
    pub fn is_on(self) -> bool {
        self == BranchStatus::InService
    }
}

fn default_tap() -> f64 {
    1.0
}

fn default_status() -> BranchStatus {
    BranchStatus::InService
}

fn default_pf() -> f64 {
    0.8
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

fn is_unit(v: &f64) -> bool {
    *v == 1.0
}

fn is_in_service(s: &BranchStatus) -> bool {
    s.is_on()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub id: BranchId,
    pub from: BusId,
    pub to: BusId,
    /// Series resistance, p.u.
    pub r: f64,
    /// Series reactance, p.u.
    pub x: f64,
    /// Off-nominal turns ratio on the `from` side; 1.0 for plain lines.
    #[serde(default = "default_tap", skip_serializing_if = "is_unit")]
    pub tap_ratio: f64,
    #[serde(default = "default_status", skip_serializing_if = "is_in_service")]
    pub status: BranchStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadPoint {
    pub bus: BusId,
    /// Active demand, p.u. Negative values model uncontrolled net injection.
    pub p: f64,
    /// Reactive demand, p.u.
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverterSpec {
    pub bus: BusId,
    /// Rated apparent power, p.u.
    pub s_rated: f64,
    /// Rated active power, p.u. Equal to `s_rated` unless the case sets
    /// `allow_rating_mismatch`.
    #[serde(default)]
    pub p_rated: Option<f64>,
    /// Minimum power factor the inverter may operate at, symmetric
    /// over- and under-excited.
    #[serde(default = "default_pf")]
    pub pf_limit: f64,
    /// Current active output, p.u. Overridden per step in time-series runs.
    pub p_now: f64,
}

impl InverterSpec {
    pub fn p_rated(&self) -> f64 {
        self.p_rated.unwrap_or(self.s_rated)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TapChanger {
    pub branch: BranchId,
    /// Regulated bus; must be the `to` side of the tapped branch.
    pub controlled_bus: BusId,
    pub tap_min: f64,
    pub tap_max: f64,
    pub tap_step: f64,
    /// Deadband `[v_lo, v_hi]` in p.u.; no tap movement while the
    /// controlled voltage stays inside.
    pub v_band: [f64; 2],
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("case parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("duplicate bus id {0}")]
    DuplicateBus(BusId),
    #[error("duplicate branch id {0}")]
    DuplicateBranch(BranchId),
    #[error("expected exactly one slack bus, found {0}")]
    SlackCount(usize),
    #[error("{element} references unknown bus {bus}")]
    UnknownBus { element: String, bus: BusId },
    #[error("{element} references unknown branch {branch}")]
    UnknownBranch { element: String, branch: BranchId },
    #[error("branch {0} connects a bus to itself")]
    SelfLoop(BranchId),
    #[error("branch {0} needs r >= 0 and r + |x| > 0")]
    BadImpedance(BranchId),
    #[error("branch {0} needs tap_ratio > 0")]
    BadTap(BranchId),
    #[error("bus {0} is not connected to the slack bus over in-service branches")]
    Disconnected(BusId),
    #[error("inverter rating mismatch at bus {bus}: s_rated {s_rated} != p_rated {p_rated} (set allow_rating_mismatch to accept)")]
    RatingMismatch { bus: BusId, s_rated: f64, p_rated: f64 },
    #[error("inverter at bus {0}: power factor limit must satisfy 0 < pf <= 1")]
    BadPowerFactor(BusId),
    #[error("inverter at bus {0}: s_rated must be > 0 and p_now >= 0")]
    BadInverterRating(BusId),
    #[error("more than one inverter at bus {0}")]
    DuplicateInverter(BusId),
    #[error("inverter placed at the slack bus {0}")]
    InverterAtSlack(BusId),
    #[error("tap changer on branch {0}: controlled_bus must be the branch's to-side bus")]
    TapControlSide(BranchId),
    #[error("tap changer on branch {0}: need tap_min <= tap_max, tap_step > 0, v_lo < v_hi")]
    BadTapChanger(BranchId),
    #[error("voltage limits must satisfy 0 < v_min < v_max")]
    BadVoltageLimits,
    #[error("slack_voltage and base_mva must be > 0")]
    BadBase,
    #[error("non-finite numeric field in {0}")]
    NonFinite(String),
    #[error("cannot switch off branch {0}: it is not in service")]
    OffNotInService(BranchId),
    #[error("cannot switch on branch {0}: it is not switched off")]
    OnNotSwitchedOff(BranchId),
    #[error("network is not radial: {in_service} in-service branches for {buses} buses")]
    NotRadial { in_service: usize, buses: usize },
}

/// Immutable, validated grid description. Construction checks every
/// structural invariant; all solver and control code can assume they hold.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    loads: Vec<LoadPoint>,
    inverters: Vec<InverterSpec>,
    tap_changers: Vec<TapChanger>,
    slack_voltage: f64,
    v_limits: [f64; 2],
    base_mva: f64,
    allow_rating_mismatch: bool,
    // Derived lookups, rebuilt on every construction.
    slack: usize,
    bus_pos: HashMap<BusId, usize>,
    branch_pos: HashMap<BranchId, usize>,
    adjacency: Vec<Vec<(usize, usize)>>,
    p_load: Vec<f64>,
    q_load: Vec<f64>,
    inverter_at: Vec<Option<usize>>,
}

#[derive(Debug, Clone)]
pub struct NetworkParts {
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub loads: Vec<LoadPoint>,
    pub inverters: Vec<InverterSpec>,
    pub tap_changers: Vec<TapChanger>,
    pub slack_voltage: f64,
    pub v_limits: [f64; 2],
    pub base_mva: f64,
    pub allow_rating_mismatch: bool,
}

impl Default for NetworkParts {
    fn default() -> Self {
        NetworkParts {
            buses: Vec::new(),
            branches: Vec::new(),
            loads: Vec::new(),
            inverters: Vec::new(),
            tap_changers: Vec::new(),
            slack_voltage: 1.0,
            v_limits: [0.90, 1.10],
            base_mva: 1.0,
            allow_rating_mismatch: false,
        }
    }
}

impl Network {
    pub fn try_new(parts: NetworkParts) -> Result<Self, ModelError> {
        let NetworkParts {
            buses,
            branches,
            loads,
            inverters,
            tap_changers,
            slack_voltage,
            v_limits,
            base_mva,
            allow_rating_mismatch,
        } = parts;

        if !(slack_voltage > 0.0) || !(base_mva > 0.0) {
            return Err(ModelError::BadBase);
        }
        if !(v_limits[0] > 0.0 && v_limits[0] < v_limits[1]) {
            return Err(ModelError::BadVoltageLimits);
        }

        let mut bus_pos = HashMap::with_capacity(buses.len());
        for (i, b) in buses.iter().enumerate() {
            if !b.shunt_susceptance.is_finite() {
                return Err(ModelError::NonFinite(format!("bus {}", b.id)));
            }
            if bus_pos.insert(b.id, i).is_some() {
                return Err(ModelError::DuplicateBus(b.id));
            }
        }

        let slacks: Vec<usize> = buses
            .iter()
            .enumerate()
            .filter(|(_, b)| b.kind == BusKind::Slack)
            .map(|(i, _)| i)
            .collect();
        if slacks.len() != 1 {
            return Err(ModelError::SlackCount(slacks.len()));
        }
        let slack = slacks[0];

        let lookup = |element: &str, bus: BusId| -> Result<usize, ModelError> {
            bus_pos.get(&bus).copied().ok_or_else(|| ModelError::UnknownBus {
                element: element.to_string(),
                bus,
            })
        };

        let mut branch_pos = HashMap::with_capacity(branches.len());
        let mut adjacency: Vec<Vec<(usize, usize)>> = vec![Vec::new(); buses.len()];
        for (i, br) in branches.iter().enumerate() {
            if branch_pos.insert(br.id, i).is_some() {
                return Err(ModelError::DuplicateBranch(br.id));
            }
            if br.from == br.to {
                return Err(ModelError::SelfLoop(br.id));
            }
            if ![br.r, br.x, br.tap_ratio].iter().all(|v| v.is_finite()) {
                return Err(ModelError::NonFinite(format!("branch {}", br.id)));
            }
            let f = lookup(&format!("branch {}", br.id), br.from)?;
            let t = lookup(&format!("branch {}", br.id), br.to)?;
            if br.status.is_on() {
                if br.r < 0.0 || br.r + br.x.abs() <= 0.0 {
                    return Err(ModelError::BadImpedance(br.id));
                }
                if br.tap_ratio <= 0.0 {
                    return Err(ModelError::BadTap(br.id));
                }
                adjacency[f].push((i, t));
                adjacency[t].push((i, f));
            }
        }

        let mut p_load = vec![0.0; buses.len()];
        let mut q_load = vec![0.0; buses.len()];
        for ld in &loads {
            if !(ld.p.is_finite() && ld.q.is_finite()) {
                return Err(ModelError::NonFinite(format!("load at bus {}", ld.bus)));
            }
            let i = lookup("load", ld.bus)?;
            p_load[i] += ld.p;
            q_load[i] += ld.q;
        }

        let mut inverter_at = vec![None; buses.len()];
        for (k, inv) in inverters.iter().enumerate() {
            let i = lookup("inverter", inv.bus)?;
            if i == slack {
                return Err(ModelError::InverterAtSlack(inv.bus));
            }
            if inverter_at[i].is_some() {
                return Err(ModelError::DuplicateInverter(inv.bus));
            }
            if !(inv.s_rated > 0.0) || !(inv.p_now >= 0.0) || !inv.p_now.is_finite() {
                return Err(ModelError::BadInverterRating(inv.bus));
            }
            if !(inv.pf_limit > 0.0 && inv.pf_limit <= 1.0) {
                return Err(ModelError::BadPowerFactor(inv.bus));
            }
            let p_rated = inv.p_rated();
            if p_rated != inv.s_rated && !allow_rating_mismatch {
                return Err(ModelError::RatingMismatch {
                    bus: inv.bus,
                    s_rated: inv.s_rated,
                    p_rated,
                });
            }
            inverter_at[i] = Some(k);
        }

        for tc in &tap_changers {
            let bi = *branch_pos
                .get(&tc.branch)
                .ok_or_else(|| ModelError::UnknownBranch {
                    element: "tap changer".to_string(),
                    branch: tc.branch,
                })?;
            lookup("tap changer", tc.controlled_bus)?;
            if tc.controlled_bus != branches[bi].to {
                return Err(ModelError::TapControlSide(tc.branch));
            }
            if !(tc.tap_min <= tc.tap_max && tc.tap_step > 0.0 && tc.v_band[0] < tc.v_band[1]) {
                return Err(ModelError::BadTapChanger(tc.branch));
            }
        }

        // In-service subgraph must be connected and contain the slack.
        let mut seen = vec![false; buses.len()];
        let mut stack = vec![slack];
        seen[slack] = true;
        while let Some(u) = stack.pop() {
            for &(_, v) in &adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(ModelError::Disconnected(buses[i].id));
        }

        Ok(Network {
            buses,
            branches,
            loads,
            inverters,
            tap_changers,
            slack_voltage,
            v_limits,
            base_mva,
            allow_rating_mismatch,
            slack,
            bus_pos,
            branch_pos,
            adjacency,
            p_load,
            q_load,
            inverter_at,
        })
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn loads(&self) -> &[LoadPoint] {
        &self.loads
    }

    pub fn inverters(&self) -> &[InverterSpec] {
        &self.inverters
    }

    pub fn tap_changers(&self) -> &[TapChanger] {
        &self.tap_changers
    }

    pub fn slack_idx(&self) -> usize {
        self.slack
    }

    pub fn slack_voltage(&self) -> f64 {
        self.slack_voltage
    }

    pub fn v_limits(&self) -> [f64; 2] {
        self.v_limits
    }

    pub fn base_mva(&self) -> f64 {
        self.base_mva
    }

    pub fn bus_idx(&self, id: BusId) -> Option<usize> {
        self.bus_pos.get(&id).copied()
    }

    pub fn branch_idx(&self, id: BranchId) -> Option<usize> {
        self.branch_pos.get(&id).copied()
    }

    /// In-service branches incident to a bus, as `(branch index, other bus index)`.
    pub fn adjacent(&self, bus: usize) -> &[(usize, usize)] {
        &self.adjacency[bus]
    }

    /// Aggregated active load per bus index.
    pub fn p_load(&self) -> &[f64] {
        &self.p_load
    }

    /// Aggregated reactive load per bus index.
    pub fn q_load(&self) -> &[f64] {
        &self.q_load
    }

    /// Index into `inverters()` of the inverter at a bus, if any.
    pub fn inverter_idx_at(&self, bus: usize) -> Option<usize> {
        self.inverter_at[bus]
    }

    pub fn in_service_count(&self) -> usize {
        self.branches.iter().filter(|b| b.status.is_on()).count()
    }

    pub fn is_radial(&self) -> bool {
        self.in_service_count() == self.n_buses() - 1
    }

    /// True when the case carries equipment the radial sweep cannot model:
    /// off-nominal taps or bus shunts. Such cases route to the meshed solver.
    pub fn has_taps_or_shunts(&self) -> bool {
        self.buses.iter().any(|b| b.shunt_susceptance != 0.0)
            || self
                .branches
                .iter()
                .any(|b| b.status.is_on() && b.tap_ratio != 1.0)
    }

    /// New network with `off` switched off and `on` switched on. Connectivity
    /// is revalidated; a split grid is rejected.
    pub fn reconfigure(&self, off: BranchId, on: BranchId) -> Result<Network, ModelError> {
        let off_i = self
            .branch_idx(off)
            .ok_or(ModelError::UnknownBranch { element: "reconfigure".into(), branch: off })?;
        let on_i = self
            .branch_idx(on)
            .ok_or(ModelError::UnknownBranch { element: "reconfigure".into(), branch: on })?;
        if !self.branches[off_i].status.is_on() {
            return Err(ModelError::OffNotInService(off));
        }
        if self.branches[on_i].status.is_on() {
            return Err(ModelError::OnNotSwitchedOff(on));
        }
        let mut branches = self.branches.clone();
        branches[off_i].status = BranchStatus::SwitchedOff;
        branches[on_i].status = BranchStatus::InService;
        Network::try_new(NetworkParts {
            buses: self.buses.clone(),
            branches,
            loads: self.loads.clone(),
            inverters: self.inverters.clone(),
            tap_changers: self.tap_changers.clone(),
            slack_voltage: self.slack_voltage,
            v_limits: self.v_limits,
            base_mva: self.base_mva,
            allow_rating_mismatch: self.allow_rating_mismatch,
        })
    }

    /// Same network with one branch's tap ratio replaced.
    pub(crate) fn with_tap(&self, branch: usize, tap: f64) -> Network {
        let mut out = self.clone();
        out.branches[branch].tap_ratio = tap;
        out
    }

    pub(crate) fn allow_rating_mismatch(&self) -> bool {
        self.allow_rating_mismatch
    }

    /// Same network with every inverter's `p_now` replaced (used by
    /// time-series steps). Values align with `inverters()` order.
    pub fn with_pv_output(&self, p_now: &[f64]) -> Network {
        assert_eq!(p_now.len(), self.inverters.len());
        let mut out = self.clone();
        for (inv, &p) in out.inverters.iter_mut().zip(p_now) {
            inv.p_now = p.max(0.0);
        }
        out
    }

    /// Same network with replaced aggregated loads (used by time-series
    /// steps). The load list is rewritten as one entry per bus.
    pub fn with_loads(&self, p: &[f64], q: &[f64]) -> Network {
        assert_eq!(p.len(), self.n_buses());
        assert_eq!(q.len(), self.n_buses());
        let mut out = self.clone();
        out.loads = self
            .buses
            .iter()
            .enumerate()
            .filter(|(i, _)| p[*i] != 0.0 || q[*i] != 0.0)
            .map(|(i, b)| LoadPoint { bus: b.id, p: p[i], q: q[i] })
            .collect();
        out.p_load = p.to_vec();
        out.q_load = q.to_vec();
        out
    }
}
