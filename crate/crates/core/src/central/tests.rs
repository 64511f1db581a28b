use super::*;
use crate::model::{
    Branch, BranchId, Bus, BusId, BusKind, BranchStatus, InverterSpec, LoadPoint, Network,
    NetworkParts,
};
use crate::testutil::five_bus;

/// Slack + one load bus with one inverter; the classic single-knob case.
fn one_inverter_net(q_load: f64) -> Network {
    Network::try_new(NetworkParts {
        buses: vec![
            Bus { id: BusId(1), kind: BusKind::Slack, shunt_susceptance: 0.0 },
            Bus { id: BusId(2), kind: BusKind::Load, shunt_susceptance: 0.0 },
        ],
        branches: vec![Branch {
            id: BranchId(1),
            from: BusId(1),
            to: BusId(2),
            r: 0.02,
            x: 0.015,
            tap_ratio: 1.0,
            status: BranchStatus::InService,
        }],
        loads: vec![LoadPoint { bus: BusId(2), p: 0.05, q: q_load }],
        inverters: vec![InverterSpec {
            bus: BusId(2),
            s_rated: 0.06,
            p_rated: None,
            pf_limit: 0.8,
            p_now: 0.048,
        }],
        ..NetworkParts::default()
    })
    .unwrap()
}

fn loss_at(net: &Network, q: f64) -> f64 {
    let inj = InjectionSet::with_inverter_q(net, &[q]);
    solve(net, &inj, 1e-12, 300).unwrap().total_loss
}

#[test]
fn empty_control_set_is_identity() {
    let net = five_bus();
    let q0 = vec![0.01, 0.02, 0.003];
    let prob = OpfProblem::new(&net, q0.clone(), vec![]);
    let sol = solve_opf(&prob, &OpfOptions::default()).unwrap();
    assert_eq!(sol.q, q0);
    assert!(sol.converged);
    let direct = solve(&net, &InjectionSet::with_inverter_q(&net, &q0), 1e-12, 300).unwrap();
    assert_eq!(sol.point.total_loss, direct.total_loss);
}

#[test]
fn single_inverter_matches_brute_force_scan() {
    let net = one_inverter_net(0.03);
    let env = envelope(&net.inverters()[0], net.inverters()[0].p_now);

    // 10'000-point scan over the feasible interval.
    let n = 10_000;
    let (lo, hi) = (env.q_min(), env.q_max());
    let mut best_q = lo;
    let mut best_loss = f64::INFINITY;
    for k in 0..=n {
        let q = lo + (hi - lo) * k as f64 / n as f64;
        let l = loss_at(&net, q);
        if l < best_loss {
            best_loss = l;
            best_q = q;
        }
    }

    let sol = solve_opf(&OpfProblem::full(&net), &OpfOptions::default()).unwrap();
    assert!(sol.converged);
    assert!(
        (sol.q[0] - best_q).abs() <= 1e-5,
        "opf q {} vs scan q {best_q}",
        sol.q[0]
    );
    assert!((sol.point.total_loss - best_loss).abs() <= 1e-9);
}

#[test]
fn full_opf_dominates_local_algorithms() {
    let net = five_bus();
    let solver = SolverSettings::default();
    let opf = OpfOptions::default();
    let lfma = run_local(&net, LocalAlgorithm::Lfma, solver.tol, solver.max_iter).unwrap();
    let llma = run_local(&net, LocalAlgorithm::Llma, solver.tol, solver.max_iter).unwrap();
    let central = run_central_opf(&net, solver, &opf).unwrap();
    assert!(!central.fallback);
    assert!(central.loss() <= lfma.loss() + 1e-9);
    assert!(central.loss() <= llma.loss() + 1e-9);
}

#[test]
fn ranking_orders_reserve_and_breaks_ties_by_bus() {
    let net = five_bus();
    let envelopes: Vec<_> = net
        .inverters()
        .iter()
        .map(|inv| envelope(inv, inv.p_now))
        .collect();
    // LLMA setpoints: reserves 0.02, 0.02 and ~0; the tie orders by bus id.
    let q = vec![0.07, 0.04, envelopes[2].q_max()];
    let ranking = reserve_ranking(&net, &envelopes, &q);
    let buses: Vec<u32> = ranking.entries.iter().map(|e| e.1 .0).collect();
    assert_eq!(buses, vec![2, 3, 4]);
    assert!((ranking.entries[0].2 - 0.02).abs() < 1e-12);
    assert!((ranking.entries[1].2 - 0.02).abs() < 1e-12);
    assert!(ranking.entries[2].2.abs() < 1e-12, "setpoint at q_max ranks last with zero reserve");
    assert_eq!(ranking.top(2), vec![0, 1]);
}

#[test]
fn hybrid_with_no_central_control_equals_local_run() {
    let net = five_bus();
    let solver = SolverSettings::default();
    let hybrid = run_hybrid(&net, LocalAlgorithm::Lfma, 0, solver, &OpfOptions::default()).unwrap();
    let local = run_local(&net, LocalAlgorithm::Lfma, solver.tol, solver.max_iter).unwrap();
    assert_eq!(hybrid.q_setpoints, local.q_setpoints);
    assert_eq!(hybrid.point.total_loss, local.point.total_loss);
    assert_eq!(hybrid.n_central, 0);
    assert_eq!(hybrid.algorithm, Algorithm::HybridLfma);
}

#[test]
fn hybrid_with_all_inverters_matches_central_opf() {
    let net = five_bus();
    let solver = SolverSettings::default();
    let opf = OpfOptions::default();
    let m = net.inverters().len();
    let hybrid = run_hybrid(&net, LocalAlgorithm::Llma, m, solver, &opf).unwrap();
    let central = run_central_opf(&net, solver, &opf).unwrap();
    assert!(!hybrid.fallback);
    assert!((hybrid.loss() - central.loss()).abs() <= 1e-7);
    assert_eq!(hybrid.n_central, m);
}

#[test]
fn hybrid_loss_non_increasing_in_n() {
    let net = five_bus();
    let solver = SolverSettings::default();
    let opf = OpfOptions::default();
    let mut last = f64::INFINITY;
    for n in 0..=net.inverters().len() {
        let out = run_hybrid(&net, LocalAlgorithm::Llma, n, solver, &opf).unwrap();
        assert!(!out.fallback);
        assert!(out.loss() <= last + 1e-9, "loss increased at n={n}");
        // Feasibility of every non-fallback outcome.
        assert!(out.point.within_limits(net.v_limits()));
        for (k, inv) in net.inverters().iter().enumerate() {
            assert!(envelope(inv, inv.p_now).contains(out.q_setpoints[k]));
        }
        last = out.loss();
    }
}

#[test]
fn min_controllers_trivial_cases() {
    let net = five_bus();
    let solver = SolverSettings::default();
    let opf = OpfOptions::default();
    // A huge tolerance is satisfied by the purely local outcome.
    assert_eq!(
        min_controllers(&net, LocalAlgorithm::Lfma, 10.0, solver, &opf).unwrap(),
        0
    );

    let single = one_inverter_net(0.03);
    let n = min_controllers(&single, LocalAlgorithm::Llma, 1e-4, solver, &opf).unwrap();
    assert!(n <= 1);
}

#[test]
fn stationarity_reported_on_converged_cases() {
    let net = five_bus();
    let opf = OpfOptions::default();
    let sol = solve_opf(&OpfProblem::full(&net), &opf).unwrap();
    assert!(sol.converged);
    assert!(sol.grad_norm < opf.tol);
    let report = sol.report_csv();
    assert!(report.starts_with("iterations,loss,grad_norm,binding\n"));
}
