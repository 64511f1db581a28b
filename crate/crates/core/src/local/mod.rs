//! Communication-free inverter control.
//!
//! Two strategies, both driven purely by quantities measurable at the
//! inverter's own bus:
//!
//! * **LLMA** (local load measuring): match the bus's own reactive load, up
//!   to capability. One synchronized round.
//! * **LFMA** (local flow measuring): four synchronized rounds. Agents first
//!   identify their upstream branch as the incident line with the biggest
//!   apparent flow under no-action, match their load like LLMA, raise their
//!   setpoint by the reactive flow still arriving from upstream, and finally
//!   undo the over-injection where the upstream flow reversed direction.
//!
//! The simulator executes the rounds in lockstep: every agent applies the
//! same step, then the grid is re-solved so the next round's measurements
//! reflect all simultaneous actions. Agent decisions see a [`LocalView`]
//! only; no impedances, no remote buses, no topology.

use crate::capability::{clamp_q, envelope, CapabilityEnvelope};
use crate::model::{BranchId, Network};
use crate::outcome::{ControlOutcome, LocalAlgorithm, Stage, TraceRow};
use crate::pf::{solve, InjectionSet, OperatingPoint, SolveError};

/// Flows smaller than this count as zero when deciding whether a reactive
/// flow reversed direction between rounds; avoids chattering on near-zero
/// measurements.
pub const FLOW_DEAD_ZONE: f64 = 1e-7;

/// One branch flow as registered by a meter at the agent's bus; positive
/// values are directed into the bus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IncidentFlow {
    pub branch: BranchId,
    pub p_into: f64,
    pub q_into: f64,
}

impl IncidentFlow {
    pub fn apparent(&self) -> f64 {
        self.p_into.hypot(self.q_into)
    }
}

/// Everything an agent may observe: the reactive load at its own bus, its
/// own PV output, and the flows on its own incident branches. Holding only
/// these fields is what makes the algorithms model-free; the round driver
/// never hands an agent anything else.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalView {
    q_load_here: f64,
    p_now: f64,
    incident_flows: Vec<IncidentFlow>,
}

impl LocalView {
    pub fn new(q_load_here: f64, p_now: f64, incident_flows: Vec<IncidentFlow>) -> Self {
        LocalView { q_load_here, p_now, incident_flows }
    }

    /// Measurements at `bus` extracted from a solved state. This is the
    /// simulator's meter model; agents receive the result and nothing else.
    pub fn from_solution(net: &Network, point: &OperatingPoint, bus: usize) -> Self {
        let incident_flows = net
            .adjacent(bus)
            .iter()
            .map(|&(branch, _)| {
                let (p_into, q_into) = point.flows[branch]
                    .as_ref()
                    .expect("adjacency lists only in-service branches")
                    .into_bus(bus);
                IncidentFlow { branch: net.branches()[branch].id, p_into, q_into }
            })
            .collect();
        let p_now = net
            .inverter_idx_at(bus)
            .map(|k| net.inverters()[k].p_now)
            .unwrap_or(0.0);
        LocalView { q_load_here: net.q_load()[bus], p_now, incident_flows }
    }

    pub fn q_load_here(&self) -> f64 {
        self.q_load_here
    }

    pub fn p_now(&self) -> f64 {
        self.p_now
    }

    pub fn incident_flows(&self) -> &[IncidentFlow] {
        &self.incident_flows
    }

    pub fn flow_on(&self, branch: BranchId) -> Option<&IncidentFlow> {
        self.incident_flows.iter().find(|f| f.branch == branch)
    }
}

/// Per-agent control state carried across LFMA rounds.
#[derive(Debug, Clone)]
pub struct AgentState {
    /// Upstream branch chosen in step 1; `None` marks a leaf agent, which
    /// skips steps 3 and 4.
    pub upstream: Option<BranchId>,
    pub q_setpoint: f64,
    pub stage: Stage,
    /// Incident flows memorized right after the load-match stage, the
    /// reference point for reversal detection.
    pub flows_after_match: Vec<IncidentFlow>,
}

impl AgentState {
    fn new() -> Self {
        AgentState {
            upstream: None,
            q_setpoint: 0.0,
            stage: Stage::Idle,
            flows_after_match: Vec::new(),
        }
    }

    /// Upstream reactive flow recorded after the load-match stage.
    pub fn q_up_after_match(&self) -> Option<f64> {
        let up = self.upstream?;
        self.flows_after_match
            .iter()
            .find(|f| f.branch == up)
            .map(|f| f.q_into)
    }

    fn advance(&mut self, stage: Stage, q: f64) {
        debug_assert!(stage >= self.stage, "stages only move forward within a round sequence");
        self.stage = stage;
        self.q_setpoint = q;
    }
}

/// Closed form of the load-matching rule: inject the bus's own reactive
/// load, capped by capability. For capacitive (negative) loads the rule is
/// extended symmetrically to absorption; the extension is ours, chosen so
/// time-series data with net-capacitive nodes still yields a feasible
/// setpoint.
pub fn llma_setpoint(view: &LocalView, env: &CapabilityEnvelope) -> f64 {
    clamp_q(env, view.q_load_here())
}

/// Step 1: pick the incident branch carrying the biggest apparent flow under
/// no-action as the upstream direction. Agents with a single incident branch
/// are leaves and return `None`. Exact ties break toward the lowest branch
/// id for determinism.
pub fn detect_upstream(view: &LocalView) -> Option<BranchId> {
    if view.incident_flows().len() < 2 {
        return None;
    }
    view.incident_flows()
        .iter()
        .max_by(|a, b| {
            a.apparent()
                .partial_cmp(&b.apparent())
                .unwrap()
                .then(b.branch.cmp(&a.branch))
        })
        .map(|f| f.branch)
}

/// Step 3: raise the setpoint by the reactive flow still arriving from
/// upstream after everyone matched their load. An upstream flow already
/// directed away contributes nothing; reductions are step 4's job.
pub fn lfma_step3(view: &LocalView, env: &CapabilityEnvelope, q_up: f64) -> f64 {
    clamp_q(env, view.q_load_here() + q_up.max(0.0))
}

fn reversed(before: f64, after: f64) -> bool {
    before.abs() > FLOW_DEAD_ZONE
        && after.abs() > FLOW_DEAD_ZONE
        && before.signum() != after.signum()
}

/// Step 4: if the upstream flow reversed direction after step 3, the agent
/// over-injected. When no downstream branch reversed as well, back off by
/// the measured upstream magnitude; when one did, the measurement is
/// ambiguous and the agent falls back to its load-matching setpoint.
pub fn lfma_step4(view: &LocalView, env: &CapabilityEnvelope, state: &AgentState) -> f64 {
    let Some(up) = state.upstream else {
        return state.q_setpoint;
    };
    let Some(q_up_before) = state.q_up_after_match() else {
        return state.q_setpoint;
    };
    let Some(q_up_now) = view.flow_on(up).map(|f| f.q_into) else {
        return state.q_setpoint;
    };
    if !reversed(q_up_before, q_up_now) {
        return state.q_setpoint;
    }
    let downstream_reversed = view.incident_flows().iter().any(|f| {
        f.branch != up
            && state
                .flows_after_match
                .iter()
                .find(|h| h.branch == f.branch)
                .is_some_and(|h| reversed(h.q_into, f.q_into))
    });
    if downstream_reversed {
        llma_setpoint(view, env)
    } else {
        clamp_q(env, state.q_setpoint - q_up_now.abs())
    }
}

struct RoundDriver<'a> {
    net: &'a Network,
    tol: f64,
    max_iter: usize,
    inverter_buses: Vec<usize>,
    envelopes: Vec<CapabilityEnvelope>,
    q: Vec<f64>,
    states: Vec<AgentState>,
    trace: Vec<TraceRow>,
}

impl<'a> RoundDriver<'a> {
    fn new(net: &'a Network, tol: f64, max_iter: usize) -> Self {
        let inverter_buses: Vec<usize> = net
            .inverters()
            .iter()
            .map(|inv| net.bus_idx(inv.bus).expect("validated"))
            .collect();
        let envelopes = net
            .inverters()
            .iter()
            .map(|inv| envelope(inv, inv.p_now))
            .collect();
        let n = net.inverters().len();
        RoundDriver {
            net,
            tol,
            max_iter,
            inverter_buses,
            envelopes,
            q: vec![0.0; n],
            states: vec![AgentState::new(); n],
            trace: Vec::new(),
        }
    }

    fn solve_current(&self) -> Result<OperatingPoint, SolveError> {
        solve(
            self.net,
            &InjectionSet::with_inverter_q(self.net, &self.q),
            self.tol,
            self.max_iter,
        )
    }

    fn views(&self, point: &OperatingPoint) -> Vec<LocalView> {
        self.inverter_buses
            .iter()
            .map(|&b| LocalView::from_solution(self.net, point, b))
            .collect()
    }

    fn record(&mut self, round: u32, point: &OperatingPoint) {
        let views = self.views(point);
        for (k, view) in views.iter().enumerate() {
            let state = &self.states[k];
            self.trace.push(TraceRow {
                round,
                bus: self.net.inverters()[k].bus,
                stage: state.stage,
                q_setpoint: state.q_setpoint,
                upstream: state.upstream,
                upstream_q: state
                    .upstream
                    .and_then(|up| view.flow_on(up))
                    .map(|f| f.q_into),
            });
        }
    }
}

/// Execute a communication-free strategy as lockstep synchronized rounds and
/// return the final solved outcome. Round 0 is always the no-action solve;
/// each later round applies one step at every agent simultaneously, then
/// re-solves so the next round's measurements reflect it.
pub fn run_local(
    net: &Network,
    algo: LocalAlgorithm,
    tol: f64,
    max_iter: usize,
) -> Result<ControlOutcome, SolveError> {
    let mut d = RoundDriver::new(net, tol, max_iter);

    let no_action = d.solve_current()?;
    d.record(0, &no_action);

    let point = match algo {
        LocalAlgorithm::Llma => {
            let views = d.views(&no_action);
            for (k, view) in views.iter().enumerate() {
                let q = llma_setpoint(view, &d.envelopes[k]);
                d.states[k].advance(Stage::LlmaDone, q);
                d.q[k] = q;
            }
            let point = d.solve_current()?;
            d.record(1, &point);
            point
        }
        LocalAlgorithm::Lfma => {
            // Step 1: upstream detection from the no-action flows.
            let views = d.views(&no_action);
            for (k, view) in views.iter().enumerate() {
                d.states[k].upstream = detect_upstream(view);
            }
            d.record(1, &no_action);

            // Step 2: everyone matches their own load.
            for (k, view) in views.iter().enumerate() {
                let q = llma_setpoint(view, &d.envelopes[k]);
                d.states[k].advance(Stage::LlmaDone, q);
                d.q[k] = q;
            }
            let matched = d.solve_current()?;
            d.record(2, &matched);

            // Step 3: branch agents absorb the remaining upstream inflow.
            let views = d.views(&matched);
            for (k, view) in views.iter().enumerate() {
                d.states[k].flows_after_match = view.incident_flows().to_vec();
                if d.states[k].upstream.is_none() {
                    continue;
                }
                let q_up = d.states[k].q_up_after_match().unwrap_or(0.0);
                let q = lfma_step3(view, &d.envelopes[k], q_up);
                d.states[k].advance(Stage::Increased, q);
                d.q[k] = q;
            }
            let increased = d.solve_current()?;
            d.record(3, &increased);

            // Step 4: undo over-injection where the upstream flow reversed.
            let views = d.views(&increased);
            for (k, view) in views.iter().enumerate() {
                if d.states[k].upstream.is_none() {
                    continue;
                }
                let q = lfma_step4(view, &d.envelopes[k], &d.states[k]);
                d.states[k].advance(Stage::Final, q);
                d.q[k] = q;
            }
            let fin = d.solve_current()?;
            d.record(4, &fin);
            fin
        }
    };

    Ok(ControlOutcome {
        algorithm: algo.as_algorithm(),
        q_setpoints: d.q,
        point,
        n_central: 0,
        fallback: false,
        trace: d.trace,
    })
}
