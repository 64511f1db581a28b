//! Centralized reactive dispatch and the hybrid coordinator.
//!
//! [`solve_opf`] minimizes total series loss over the reactive setpoints of a
//! chosen control set, subject to the power-flow physics (enforced by
//! solving), the capability envelopes (box projection), and voltage limits
//! (quadratic penalty with escalating weight, feasibility-checked exactly at
//! the end). Gradients come from central finite differences of the
//! power-flow solve, so the optimizer works unchanged on radial and meshed
//! cases.
//!
//! [`run_hybrid`] is the coordinator: run a communication-free algorithm
//! everywhere, rank inverters by remaining reactive reserve, and re-optimize
//! only the top `n` centrally, leaving the rest at their local setpoints.

use thiserror::Error;

use crate::capability::{clamp_q, envelope, CapabilityEnvelope};
use crate::model::{BusId, Network};
use crate::outcome::{Algorithm, ControlOutcome, LocalAlgorithm};
use crate::local::run_local;
use crate::pf::{solve, InjectionSet, OperatingPoint, SolveError};

/// Optimizer settings. The defaults are pinned for reproducibility: central
/// differences with a 1e-6 p.u. step over a power flow solved to 1e-12, and
/// a projected-gradient stationarity target of 1e-8.
#[derive(Debug, Clone)]
pub struct OpfOptions {
    /// Stationarity target: projected-gradient 2-norm.
    pub tol: f64,
    /// Descent iteration budget per start.
    pub max_iter: usize,
    /// Central-difference step, p.u.
    pub fd_step: f64,
    /// Inner power-flow tolerance; much tighter than the outer solves so the
    /// finite differences stay clean.
    pub solver_tol: f64,
    pub solver_iters: usize,
    /// Try the deterministic extra starts (zero injection, load match) in
    /// addition to the warm start and keep the best result.
    pub multi_start: bool,
}

impl Default for OpfOptions {
    fn default() -> Self {
        OpfOptions {
            tol: 1e-8,
            max_iter: 400,
            fd_step: 1e-6,
            solver_tol: 1e-12,
            solver_iters: 300,
            multi_start: true,
        }
    }
}

#[derive(Debug, Error)]
pub enum OpfError {
    #[error("infeasible case: {0}")]
    Infeasible(#[from] SolveError),
    #[error("no power-flow solution along the search direction")]
    LineSearchFailed,
}

/// One reactive-dispatch optimization: which inverters move, where the rest
/// are frozen.
#[derive(Debug, Clone)]
pub struct OpfProblem<'a> {
    net: &'a Network,
    /// Full setpoint vector aligned with `net.inverters()`; controlled
    /// entries serve as the warm start, the rest stay frozen.
    q0: Vec<f64>,
    /// Indices into `net.inverters()` free to move.
    control: Vec<usize>,
    envelopes: Vec<CapabilityEnvelope>,
}

impl<'a> OpfProblem<'a> {
    pub fn new(net: &'a Network, q0: Vec<f64>, control: Vec<usize>) -> Self {
        assert_eq!(q0.len(), net.inverters().len());
        let mut control = control;
        control.sort_unstable();
        control.dedup();
        assert!(control.iter().all(|&i| i < net.inverters().len()));
        let envelopes = net
            .inverters()
            .iter()
            .map(|inv| envelope(inv, inv.p_now))
            .collect();
        OpfProblem { net, q0, control, envelopes }
    }

    /// All inverters controlled, starting from the no-action point.
    pub fn full(net: &'a Network) -> Self {
        let m = net.inverters().len();
        Self::new(net, vec![0.0; m], (0..m).collect())
    }

    pub fn control_set(&self) -> &[usize] {
        &self.control
    }

    fn assemble(&self, x: &[f64]) -> Vec<f64> {
        let mut q = self.q0.clone();
        for (k, &i) in self.control.iter().enumerate() {
            q[i] = x[k];
        }
        q
    }

    fn project(&self, x: &mut [f64]) {
        for (k, &i) in self.control.iter().enumerate() {
            x[k] = clamp_q(&self.envelopes[i], x[k]);
        }
    }

    fn solve_at(&self, x: &[f64], opts: &OpfOptions) -> Result<OperatingPoint, SolveError> {
        let q = self.assemble(x);
        let inj = InjectionSet::with_inverter_q(self.net, &q);
        solve(self.net, &inj, opts.solver_tol, opts.solver_iters)
    }

    fn violation(&self, point: &OperatingPoint) -> f64 {
        let [lo, hi] = self.net.v_limits();
        point
            .v
            .iter()
            .map(|&v| {
                let under = (lo - v).max(0.0);
                let over = (v - hi).max(0.0);
                under * under + over * over
            })
            .sum()
    }

    fn penalized(&self, x: &[f64], w: f64, opts: &OpfOptions) -> Result<(f64, OperatingPoint), SolveError> {
        let point = self.solve_at(x, opts)?;
        let f = point.total_loss + w * self.violation(&point);
        Ok((f, point))
    }

    fn gradient(&self, x: &[f64], w: f64, opts: &OpfOptions) -> Result<Vec<f64>, SolveError> {
        let h = opts.fd_step;
        let mut g = vec![0.0; x.len()];
        let mut probe = x.to_vec();
        for k in 0..x.len() {
            let orig = probe[k];
            probe[k] = orig + h;
            let (fp, _) = self.penalized(&probe, w, opts)?;
            probe[k] = orig - h;
            let (fm, _) = self.penalized(&probe, w, opts)?;
            probe[k] = orig;
            g[k] = (fp - fm) / (2.0 * h);
        }
        Ok(g)
    }
}

#[derive(Debug, Clone)]
pub struct OpfSolution {
    /// Full setpoint vector (frozen entries plus optimized controls).
    pub q: Vec<f64>,
    pub point: OperatingPoint,
    pub iterations: usize,
    /// Projected-gradient 2-norm at the returned point.
    pub grad_norm: f64,
    /// Stationarity reached within the iteration budget.
    pub converged: bool,
    /// All voltages inside the network limits (checked exactly, not via the
    /// penalty).
    pub voltage_feasible: bool,
    /// Active constraints at the solution, e.g. `q_max@7` or `v_max@3`.
    pub binding: Vec<String>,
}

impl OpfSolution {
    /// Single-line CSV report: `iterations,loss,grad_norm,binding`.
    pub fn report_csv(&self) -> String {
        format!(
            "iterations,loss,grad_norm,binding\n{},{},{},{}\n",
            self.iterations,
            self.point.total_loss,
            self.grad_norm,
            self.binding.join(";"),
        )
    }
}

struct DescentResult {
    x: Vec<f64>,
    f: f64,
    point: OperatingPoint,
    grad_norm: f64,
    iterations: usize,
    converged: bool,
}

/// Projected-gradient descent with Barzilai-Borwein step sizes and an Armijo
/// backtracking safeguard along the projection arc.
fn descend(
    prob: &OpfProblem,
    start: &[f64],
    w: f64,
    opts: &OpfOptions,
) -> Result<DescentResult, OpfError> {
    let mut x = start.to_vec();
    prob.project(&mut x);
    let (mut f, mut point) = prob.penalized(&x, w, opts)?;
    let mut g = prob.gradient(&x, w, opts)?;
    let mut alpha: f64 = 1.0;
    let mut iterations = 0;
    let mut converged = false;
    let mut grad_norm = f64::INFINITY;

    while iterations < opts.max_iter {
        iterations += 1;

        // Composite gradient mapping: x - P(x - g).
        let mut mapped = x.clone();
        for k in 0..x.len() {
            mapped[k] -= g[k];
        }
        prob.project(&mut mapped);
        grad_norm = x
            .iter()
            .zip(&mapped)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if grad_norm < opts.tol {
            converged = true;
            break;
        }

        // Armijo backtracking along the projection arc.
        let mut step = alpha.clamp(1e-8, 1e6);
        let mut accepted = None;
        let mut solver_failures = 0;
        for _ in 0..60 {
            let mut cand = x.clone();
            for k in 0..cand.len() {
                cand[k] -= step * g[k];
            }
            prob.project(&mut cand);
            let decrease: f64 = g
                .iter()
                .zip(x.iter().zip(&cand))
                .map(|(gk, (xk, ck))| gk * (xk - ck))
                .sum();
            if decrease <= 0.0 {
                // Projection removed all progress along -g.
                break;
            }
            match prob.penalized(&cand, w, opts) {
                Ok((fc, pc)) => {
                    if fc <= f - 1e-4 * decrease {
                        accepted = Some((cand, fc, pc));
                        break;
                    }
                }
                Err(_) => solver_failures += 1,
            }
            step *= 0.5;
        }

        let Some((xn, fn_, pn)) = accepted else {
            if solver_failures > 0 {
                return Err(OpfError::LineSearchFailed);
            }
            // No descent left at line-search resolution: numerically done.
            break;
        };

        let gn = prob.gradient(&xn, w, opts)?;
        // BB1 step from the accepted move.
        let mut sty = 0.0;
        let mut sts = 0.0;
        for k in 0..x.len() {
            let s = xn[k] - x[k];
            let y = gn[k] - g[k];
            sty += s * y;
            sts += s * s;
        }
        alpha = if sty > 1e-16 { (sts / sty).clamp(1e-8, 1e6) } else { 1.0 };

        x = xn;
        f = fn_;
        g = gn;
        point = pn;
    }

    Ok(DescentResult { x, f, point, grad_norm, iterations, converged })
}

/// Minimize loss over the problem's control set.
///
/// Returns the best iterate even when stationarity was not reached within
/// the budget (`converged` then reads false). Voltage limits are enforced by
/// an escalating quadratic penalty and verified exactly on the result.
pub fn solve_opf(prob: &OpfProblem, opts: &OpfOptions) -> Result<OpfSolution, OpfError> {
    let [v_lo, v_hi] = prob.net.v_limits();
    let feasible = |p: &OperatingPoint| p.v_min() >= v_lo - 1e-9 && p.v_max() <= v_hi + 1e-9;

    // Deterministic starts: warm, all-zero, and local load match.
    let warm: Vec<f64> = prob.control.iter().map(|&i| prob.q0[i]).collect();
    let mut starts = vec![warm];
    if opts.multi_start {
        starts.push(vec![0.0; prob.control.len()]);
        let load_match: Vec<f64> = prob
            .control
            .iter()
            .map(|&i| {
                let inv = &prob.net.inverters()[i];
                let bus = prob.net.bus_idx(inv.bus).expect("validated");
                clamp_q(&prob.envelopes[i], prob.net.q_load()[bus])
            })
            .collect();
        starts.push(load_match);
        starts.dedup_by(|a, b| a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    let mut best: Option<DescentResult> = None;
    let mut last_err = None;
    for w in [1e3, 1e4, 1e5, 1e6] {
        for start in &starts {
            match descend(prob, start, w, opts) {
                Ok(res) => {
                    let better = match &best {
                        Some(b) => {
                            let b_ok = feasible(&b.point);
                            let r_ok = feasible(&res.point);
                            (r_ok && !b_ok) || (r_ok == b_ok && res.f < b.f)
                        }
                        None => true,
                    };
                    if better {
                        best = Some(res);
                    }
                }
                Err(e) => last_err = Some(e),
            }
        }
        match &best {
            Some(b) if feasible(&b.point) => break,
            // Escalate the penalty weight and retry from the best point too.
            Some(b) => starts.push(b.x.clone()),
            None => return Err(last_err.unwrap_or(OpfError::LineSearchFailed)),
        }
    }

    let best = best.expect("loop either set a result or returned");
    let q = prob.assemble(&best.x);
    let voltage_feasible = feasible(&best.point);

    let mut binding = Vec::new();
    for (k, &i) in prob.control.iter().enumerate() {
        let env = &prob.envelopes[i];
        let bus = prob.net.inverters()[i].bus;
        if (best.x[k] - env.q_max()).abs() < 1e-9 {
            binding.push(format!("q_max@{bus}"));
        } else if (best.x[k] - env.q_min()).abs() < 1e-9 {
            binding.push(format!("q_min@{bus}"));
        }
    }
    for (b, &v) in prob.net.buses().iter().zip(&best.point.v) {
        if (v - v_lo).abs() < 1e-9 {
            binding.push(format!("v_min@{}", b.id));
        } else if (v - v_hi).abs() < 1e-9 {
            binding.push(format!("v_max@{}", b.id));
        }
    }

    Ok(OpfSolution {
        q,
        point: best.point,
        iterations: best.iterations,
        grad_norm: best.grad_norm,
        converged: best.converged,
        voltage_feasible,
        binding,
    })
}

/// Remaining reactive reserve per inverter, largest first; exact ties order
/// by bus id.
#[derive(Debug, Clone, PartialEq)]
pub struct ReserveRanking {
    /// `(inverter index, bus, q_res)` sorted by descending reserve.
    pub entries: Vec<(usize, BusId, f64)>,
}

impl ReserveRanking {
    /// Inverter indices of the `n` largest reserves.
    pub fn top(&self, n: usize) -> Vec<usize> {
        self.entries.iter().take(n).map(|&(i, _, _)| i).collect()
    }
}

/// Rank inverters by `q_res = q_max - q_setpoint` (largest reserve first).
pub fn reserve_ranking(
    net: &Network,
    envelopes: &[CapabilityEnvelope],
    q_setpoints: &[f64],
) -> ReserveRanking {
    let mut entries: Vec<(usize, BusId, f64)> = net
        .inverters()
        .iter()
        .enumerate()
        .map(|(i, inv)| (i, inv.bus, envelopes[i].q_max() - q_setpoints[i]))
        .collect();
    entries.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then(a.1.cmp(&b.1)));
    ReserveRanking { entries }
}

/// Solver tolerances used for the non-OPF solves inside the coordinator.
#[derive(Debug, Clone, Copy)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings { tol: crate::pf::DEFAULT_TOL, max_iter: 100 }
    }
}

/// Hybrid coordinator: local algorithm first, then central re-optimization
/// of the `n` inverters with the most remaining reserve, everyone else frozen
/// at their local setpoints. A failed optimization degrades to the local
/// outcome with the `fallback` flag set.
pub fn run_hybrid(
    net: &Network,
    base: LocalAlgorithm,
    n: usize,
    solver: SolverSettings,
    opf: &OpfOptions,
) -> Result<ControlOutcome, SolveError> {
    assert!(n <= net.inverters().len(), "control count exceeds inverter count");
    let algorithm = match base {
        LocalAlgorithm::Llma => Algorithm::HybridLlma,
        LocalAlgorithm::Lfma => Algorithm::HybridLfma,
    };

    let local = run_local(net, base, solver.tol, solver.max_iter)?;
    if n == 0 {
        return Ok(ControlOutcome { algorithm, ..local });
    }

    let envelopes: Vec<CapabilityEnvelope> = net
        .inverters()
        .iter()
        .map(|inv| envelope(inv, inv.p_now))
        .collect();
    let ranking = reserve_ranking(net, &envelopes, &local.q_setpoints);
    let prob = OpfProblem::new(net, local.q_setpoints.clone(), ranking.top(n));

    match solve_opf(&prob, opf) {
        Ok(sol) if sol.voltage_feasible => Ok(ControlOutcome {
            algorithm,
            q_setpoints: sol.q,
            point: sol.point,
            n_central: n,
            fallback: false,
            trace: local.trace,
        }),
        _ => Ok(ControlOutcome {
            algorithm,
            n_central: n,
            fallback: true,
            ..local
        }),
    }
}

/// Centralized OPF over every inverter. A failed optimization degrades to
/// the no-action strategy with the `fallback` flag set (without local
/// algorithms there is nothing better to fall back on).
pub fn run_central_opf(
    net: &Network,
    solver: SolverSettings,
    opf: &OpfOptions,
) -> Result<ControlOutcome, SolveError> {
    let m = net.inverters().len();
    let no_action = solve(net, &InjectionSet::no_action(net), solver.tol, solver.max_iter)?;
    let prob = OpfProblem::full(net);
    match solve_opf(&prob, opf) {
        Ok(sol) if sol.voltage_feasible => Ok(ControlOutcome {
            algorithm: Algorithm::CentralOpf,
            q_setpoints: sol.q,
            point: sol.point,
            n_central: m,
            fallback: false,
            trace: Vec::new(),
        }),
        _ => Ok(ControlOutcome {
            algorithm: Algorithm::CentralOpf,
            q_setpoints: vec![0.0; m],
            point: no_action,
            n_central: m,
            fallback: true,
            trace: Vec::new(),
        }),
    }
}

/// Smallest `n` whose hybrid loss comes within `rel_gap` of the full OPF,
/// found by bisection over the (within-tolerance monotone) hybrid loss.
pub fn min_controllers(
    net: &Network,
    base: LocalAlgorithm,
    rel_gap: f64,
    solver: SolverSettings,
    opf: &OpfOptions,
) -> Result<usize, SolveError> {
    assert!(rel_gap >= 0.0);
    let m = net.inverters().len();
    if m == 0 {
        return Ok(0);
    }
    let full = run_central_opf(net, solver, opf)?;
    let target = full.loss() * (1.0 + rel_gap) + 1e-12;

    let hybrid_loss = |n: usize| -> Result<f64, SolveError> {
        Ok(run_hybrid(net, base, n, solver, opf)?.loss())
    };

    if hybrid_loss(0)? <= target {
        return Ok(0);
    }
    let mut lo = 0; // known above target
    let mut hi = m; // known within target (same feasible set as the full OPF)
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if hybrid_loss(mid)? <= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[cfg(test)]
mod tests;
