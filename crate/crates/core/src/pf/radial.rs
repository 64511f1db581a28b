//! Branch-flow sweep solver for radial grids.
//!
//! Repeats two passes until the voltage profile settles:
//!
//! * backward, leaf to root: accumulate each branch's sending-end flow as the
//!   downstream demand plus the branch's own series loss evaluated at the
//!   current sending-end voltage;
//! * forward, root to leaf: update squared voltage magnitudes from the
//!   sending-end flows,
//!   `V_recv^2 = V_send^2 - 2 (r P + x Q) + (r^2 + x^2) (P^2 + Q^2) / V_send^2`.
//!
//! Off-nominal taps and bus shunts are not modeled here; such cases route to
//! the meshed solver.

use crate::model::{orient_radial, Network};

use super::{BranchFlow, InjectionSet, OperatingPoint, SolveError};

pub fn solve_radial(
    net: &Network,
    inj: &InjectionSet,
    tol: f64,
    max_iter: usize,
) -> Result<OperatingPoint, SolveError> {
    assert!(tol > 0.0, "tolerance must be positive");
    let tree = orient_radial(net).map_err(|_| SolveError::NotRadial)?;
    let n = net.n_buses();
    let slack = net.slack_idx();
    let v0 = net.slack_voltage();

    let mut v = vec![v0; n];
    let n_branches = net.branches().len();
    let mut p_send = vec![0.0; n_branches];
    let mut q_send = vec![0.0; n_branches];

    let mut iterations = 0;
    loop {
        iterations += 1;

        // Backward sweep. For each non-slack bus (children first), the flow
        // entering its upstream branch equals the bus demand plus child
        // branch flows plus the branch's own loss. The loss term depends on
        // the sending-end flow itself, so settle it with a short local fixed
        // point; at distribution loading it contracts fast.
        for &bus in tree.order.iter().rev() {
            let Some((parent, ub)) = tree.parent[bus] else { continue };
            let mut p = -inj.p[bus];
            let mut q = -inj.q[bus];
            for &(_, cb) in &tree.children[bus] {
                p += p_send[cb];
                q += q_send[cb];
            }
            let br = &net.branches()[ub];
            let vs2 = v[parent] * v[parent];
            let (mut ps, mut qs) = (p, q);
            for _ in 0..60 {
                let ssq = (ps * ps + qs * qs) / vs2;
                let np = p + br.r * ssq;
                let nq = q + br.x * ssq;
                let delta = (np - ps).abs() + (nq - qs).abs();
                ps = np;
                qs = nq;
                if delta < 1e-15 {
                    break;
                }
                if !delta.is_finite() {
                    return Err(SolveError::Diverged);
                }
            }
            p_send[ub] = ps;
            q_send[ub] = qs;
        }

        // Forward sweep.
        let mut max_dv = 0.0f64;
        for &bus in &tree.order {
            let Some((parent, ub)) = tree.parent[bus] else { continue };
            let br = &net.branches()[ub];
            let vs2 = v[parent] * v[parent];
            let (ps, qs) = (p_send[ub], q_send[ub]);
            let ssq = (ps * ps + qs * qs) / vs2;
            let v2 = vs2 - 2.0 * (br.r * ps + br.x * qs) + (br.r * br.r + br.x * br.x) * ssq;
            if v2 <= 0.0 || !v2.is_finite() {
                return Err(SolveError::Diverged);
            }
            let vn = v2.sqrt();
            max_dv = max_dv.max((vn - v[bus]).abs());
            v[bus] = vn;
        }

        if max_dv < tol {
            break;
        }
        if iterations >= max_iter {
            return Err(SolveError::NonConvergence(iterations));
        }
    }

    // Assemble the operating point from the converged sweep state.
    let mut flows = vec![None; n_branches];
    let mut total_loss = 0.0;
    for bus in 0..n {
        let Some((parent, ub)) = tree.parent[bus] else { continue };
        let br = &net.branches()[ub];
        let (ps, qs) = (p_send[ub], q_send[ub]);
        let vs2 = v[parent] * v[parent];
        let ssq = (ps * ps + qs * qs) / vs2;
        let loss_p = br.r * ssq;
        total_loss += loss_p;
        flows[ub] = Some(BranchFlow {
            sending: parent,
            receiving: bus,
            p_send: ps,
            q_send: qs,
            p_recv: ps - loss_p,
            q_recv: qs - br.x * ssq,
        });
    }

    let mut slack_p = net.p_load()[slack];
    let mut slack_q = net.q_load()[slack];
    for &(branch, _) in net.adjacent(slack) {
        slack_p += p_send[branch];
        slack_q += q_send[branch];
    }

    Ok(OperatingPoint { v, flows, slack_p, slack_q, total_loss, iterations })
}
