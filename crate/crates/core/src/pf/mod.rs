//! Power-flow solvers and solved-state representation.
//!
//! Radial grids are solved with a backward/forward branch-flow sweep; meshed
//! grids (and any case with off-nominal taps or bus shunts) with a
//! Newton-Raphson solve on the bus admittance matrix. Both produce the same
//! [`OperatingPoint`] shape so every control algorithm is solver-agnostic.

mod ltc;
mod meshed;
mod radial;

pub use ltc::{apply_ltc, LtcOutcome};
pub use meshed::solve_meshed;
pub use radial::solve_radial;

use thiserror::Error;

use crate::model::Network;

/// Default convergence tolerance: maximum per-sweep voltage change for the
/// radial solver, maximum power mismatch for Newton-Raphson. Far tighter than
/// the loss differences the control algorithms measure.
pub const DEFAULT_TOL: f64 = 1e-8;
/// Default sweep budget for the radial solver.
pub const DEFAULT_RADIAL_ITERS: usize = 100;
/// Default Newton step budget for the meshed solver.
pub const DEFAULT_NEWTON_ITERS: usize = 50;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("network is not radial")]
    NotRadial,
    #[error("power flow did not converge after {0} iterations")]
    NonConvergence(usize),
    #[error("power-flow Jacobian is singular; case is infeasible")]
    Singular,
    #[error("power flow diverged; loading is infeasible or extreme")]
    Diverged,
    #[error("tap-changer control oscillates without settling")]
    TapOscillation,
}

impl SolveError {
    /// Failure modes counted as infeasible cases in experiment reports.
    pub fn is_infeasible(&self) -> bool {
        matches!(
            self,
            SolveError::NonConvergence(_) | SolveError::Singular | SolveError::Diverged
        )
    }
}

/// Net nodal injections (generation minus load) per bus index. The slack
/// entry is present but ignored by the solvers; the slack bus balances the
/// system.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionSet {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl InjectionSet {
    pub fn zero(n_buses: usize) -> Self {
        InjectionSet { p: vec![0.0; n_buses], q: vec![0.0; n_buses] }
    }

    /// Injections of the no-action strategy: loads plus current PV active
    /// output, with every inverter's reactive setpoint at zero.
    pub fn no_action(net: &Network) -> Self {
        let mut inj = InjectionSet {
            p: net.p_load().iter().map(|p| -p).collect(),
            q: net.q_load().iter().map(|q| -q).collect(),
        };
        for inv in net.inverters() {
            let b = net.bus_idx(inv.bus).expect("validated");
            inj.p[b] += inv.p_now;
        }
        inj
    }

    /// No-action injections plus reactive setpoints, aligned with
    /// `net.inverters()` order.
    pub fn with_inverter_q(net: &Network, q_setpoints: &[f64]) -> Self {
        assert_eq!(q_setpoints.len(), net.inverters().len());
        let mut inj = Self::no_action(net);
        for (inv, &q) in net.inverters().iter().zip(q_setpoints) {
            let b = net.bus_idx(inv.bus).expect("validated");
            inj.q[b] += q;
        }
        inj
    }
}

/// Flow state of one in-service branch.
///
/// `p_send`/`q_send` enter the branch at the sending bus; `p_recv`/`q_recv`
/// leave it at the receiving bus. The sending end is the upstream side for
/// radial solves and the `from` side for meshed solves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchFlow {
    pub sending: usize,
    pub receiving: usize,
    pub p_send: f64,
    pub q_send: f64,
    pub p_recv: f64,
    pub q_recv: f64,
}

impl BranchFlow {
    /// Active/reactive power arriving at `bus` through this branch, positive
    /// when directed into the bus. This is the quantity a meter at that bus
    /// would register.
    pub fn into_bus(&self, bus: usize) -> (f64, f64) {
        if bus == self.receiving {
            (self.p_recv, self.q_recv)
        } else {
            debug_assert_eq!(bus, self.sending);
            (-self.p_send, -self.q_send)
        }
    }

    /// Apparent-power magnitude seen from `bus`.
    pub fn apparent_at(&self, bus: usize) -> f64 {
        let (p, q) = self.into_bus(bus);
        p.hypot(q)
    }
}

/// Solved power-flow state.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint {
    /// Voltage magnitude per bus index, p.u.
    pub v: Vec<f64>,
    /// Per branch index; `None` for switched-off branches.
    pub flows: Vec<Option<BranchFlow>>,
    /// External active injection at the slack bus (includes any local slack
    /// load), p.u.
    pub slack_p: f64,
    /// External reactive injection at the slack bus, p.u.
    pub slack_q: f64,
    /// Total series active loss, p.u.
    pub total_loss: f64,
    /// Solver iterations spent.
    pub iterations: usize,
}

impl OperatingPoint {
    pub fn v_min(&self) -> f64 {
        self.v.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn v_max(&self) -> f64 {
        self.v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn within_limits(&self, limits: [f64; 2]) -> bool {
        self.v_min() >= limits[0] && self.v_max() <= limits[1]
    }

    /// `(bus, v)` CSV of the voltage profile.
    pub fn voltages_csv(&self, net: &Network) -> String {
        let mut out = String::from("bus,v\n");
        for (i, b) in net.buses().iter().enumerate() {
            out.push_str(&format!("{},{}\n", b.id, self.v[i]));
        }
        out
    }

    /// `(branch, p, q)` CSV of sending-end flows.
    pub fn flows_csv(&self, net: &Network) -> String {
        let mut out = String::from("branch,p,q\n");
        for (i, br) in net.branches().iter().enumerate() {
            if let Some(f) = &self.flows[i] {
                out.push_str(&format!("{},{},{}\n", br.id, f.p_send, f.q_send));
            }
        }
        out
    }
}

/// Recompute the total series loss from branch flows and sending-end
/// voltages: `sum r * (P^2 + Q^2) / V^2`, with the sending voltage referred
/// through the tap for off-nominal branches.
pub fn loss_of(point: &OperatingPoint, net: &Network) -> f64 {
    let mut total = 0.0;
    for (i, br) in net.branches().iter().enumerate() {
        if let Some(f) = &point.flows[i] {
            let mut v = point.v[f.sending];
            if br.tap_ratio != 1.0 {
                v /= br.tap_ratio;
            }
            total += br.r * (f.p_send * f.p_send + f.q_send * f.q_send) / (v * v);
        }
    }
    total
}

/// Solve with the solver the case calls for: the DistFlow sweep for plain
/// radial grids, Newton-Raphson for meshed grids and for any case with
/// off-nominal taps or bus shunts.
pub fn solve(
    net: &Network,
    inj: &InjectionSet,
    tol: f64,
    max_iter: usize,
) -> Result<OperatingPoint, SolveError> {
    if net.is_radial() && !net.has_taps_or_shunts() {
        solve_radial(net, inj, tol, max_iter)
    } else {
        solve_meshed(net, inj, tol, max_iter)
    }
}

/// `solve` with the default tolerances.
pub fn solve_default(net: &Network, inj: &InjectionSet) -> Result<OperatingPoint, SolveError> {
    solve(net, inj, DEFAULT_TOL, DEFAULT_RADIAL_ITERS.max(DEFAULT_NEWTON_ITERS))
}

#[cfg(test)]
mod tests;
