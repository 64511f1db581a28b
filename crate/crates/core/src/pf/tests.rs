use super::*;
use crate::model::{
    Branch, BranchId, BranchStatus, Bus, BusId, BusKind, LoadPoint, Network, NetworkParts,
    TapChanger,
};
use crate::testutil::five_bus;

fn bus(id: u32, kind: BusKind) -> Bus {
    Bus { id: BusId(id), kind, shunt_susceptance: 0.0 }
}

fn line(id: u32, from: u32, to: u32, r: f64, x: f64) -> Branch {
    Branch {
        id: BranchId(id),
        from: BusId(from),
        to: BusId(to),
        r,
        x,
        tap_ratio: 1.0,
        status: BranchStatus::InService,
    }
}

fn two_bus(r: f64, x: f64, p: f64, q: f64) -> Network {
    Network::try_new(NetworkParts {
        buses: vec![bus(1, BusKind::Slack), bus(2, BusKind::Load)],
        branches: vec![line(1, 1, 2, r, x)],
        loads: vec![LoadPoint { bus: BusId(2), p, q }],
        ..NetworkParts::default()
    })
    .unwrap()
}

#[test]
fn zero_injections_flat_profile() {
    let net = five_bus();
    let inj = InjectionSet::zero(net.n_buses());
    for point in [
        solve_radial(&net, &inj, DEFAULT_TOL, 100).unwrap(),
        solve_meshed(&net, &inj, DEFAULT_TOL, 50).unwrap(),
    ] {
        assert!(point.v.iter().all(|&v| (v - net.slack_voltage()).abs() < 1e-12));
        assert!(point.total_loss.abs() < 1e-12);
        for f in point.flows.iter().flatten() {
            assert!(f.p_send.abs() < 1e-12 && f.q_send.abs() < 1e-12);
        }
    }
}

/// Single branch r = x = 0.01, load P = Q = 0.1 at the receiving bus with a
/// 1.0 p.u. slack. With r = x and P = Q the receiving voltage stays real and
/// satisfies V^2 - V + 0.002 = 0, so V = (1 + sqrt(0.992)) / 2 and the series
/// loss is r * (1 - V)^2 / |z|^2. Solvers must reproduce this closed form.
#[test]
fn two_bus_matches_closed_form() {
    let (r, x, p, q) = (0.01, 0.01, 0.1, 0.1);
    let v2_exact = (1.0 + 0.992f64.sqrt()) / 2.0;
    let dv = 1.0 - v2_exact;
    let loss_exact = r * dv * dv / (r * r + x * x);

    let net = two_bus(r, x, p, q);
    let inj = InjectionSet::no_action(&net);
    for point in [
        solve_radial(&net, &inj, DEFAULT_TOL, 100).unwrap(),
        solve_meshed(&net, &inj, DEFAULT_TOL, 50).unwrap(),
    ] {
        assert!((point.v[1] - v2_exact).abs() < 1e-6, "v = {}", point.v[1]);
        assert!((point.total_loss - loss_exact).abs() < 1e-9);
        // Energy balance: slack supply equals the load plus the loss.
        assert!((point.slack_p - (p + point.total_loss)).abs() < 1e-6);
        let f = point.flows[0].unwrap();
        assert!((f.p_recv - p).abs() < 1e-6);
        assert!((f.q_recv - q).abs() < 1e-6);
    }
}

#[test]
fn five_bus_no_action_slack_flow_exceeds_load_sum() {
    let net = five_bus();
    let point = solve_default(&net, &InjectionSet::no_action(&net)).unwrap();
    let total_q_load: f64 = net.q_load().iter().sum();
    // Line flows carry the reactive losses on top of the demand they serve.
    assert!(point.slack_q > total_q_load);
    assert!(point.total_loss > 0.0);
}

#[test]
fn radial_and_meshed_agree_on_five_bus() {
    let net = five_bus();
    let inj = InjectionSet::no_action(&net);
    let a = solve_radial(&net, &inj, DEFAULT_TOL, 100).unwrap();
    let b = solve_meshed(&net, &inj, DEFAULT_TOL, 50).unwrap();
    for i in 0..net.n_buses() {
        assert!((a.v[i] - b.v[i]).abs() < 1e-6);
    }
    assert!((a.total_loss - b.total_loss).abs() < 1e-8);
}

#[test]
fn loss_recomputation_matches_solver() {
    let net = five_bus();
    let point = solve_default(&net, &InjectionSet::no_action(&net)).unwrap();
    assert!((loss_of(&point, &net) - point.total_loss).abs() < 1e-9);

    let zero = solve_default(&net, &InjectionSet::zero(net.n_buses())).unwrap();
    assert_eq!(loss_of(&zero, &net), 0.0);

    // Definitionally, the loss is also the sum of per-branch send/recv gaps.
    let gap: f64 = point
        .flows
        .iter()
        .flatten()
        .map(|f| f.p_send - f.p_recv)
        .sum();
    assert!((gap - point.total_loss).abs() < 1e-12);
}

#[test]
fn slack_balances_load_generation_and_loss() {
    let net = five_bus();
    let inj = InjectionSet::no_action(&net);
    let point = solve_default(&net, &inj).unwrap();
    let total_load: f64 = net.p_load().iter().sum();
    let total_gen: f64 = net.inverters().iter().map(|i| i.p_now).sum();
    assert!((point.slack_p - (total_load - total_gen + point.total_loss)).abs() < 1e-7);
}

#[test]
fn conservation_at_every_bus() {
    let net = five_bus();
    let inj = InjectionSet::no_action(&net);
    for point in [
        solve_radial(&net, &inj, DEFAULT_TOL, 100).unwrap(),
        solve_meshed(&net, &inj, DEFAULT_TOL, 50).unwrap(),
    ] {
        for b in 0..net.n_buses() {
            if b == net.slack_idx() {
                continue;
            }
            let mut p_in = inj.p[b];
            let mut q_in = inj.q[b];
            for &(branch, _) in net.adjacent(b) {
                let (p, q) = point.flows[branch].unwrap().into_bus(b);
                p_in += p;
                q_in += q;
            }
            assert!(p_in.abs() < 1e-6, "P imbalance {p_in} at bus {b}");
            assert!(q_in.abs() < 1e-6, "Q imbalance {q_in} at bus {b}");
        }
    }
}

#[test]
fn doubling_branch_resistance_does_not_reduce_its_loss_term() {
    let net = five_bus();
    let inj = InjectionSet::no_action(&net);
    let before = solve_default(&net, &inj).unwrap();

    let mut parts = NetworkParts {
        buses: net.buses().to_vec(),
        branches: net.branches().to_vec(),
        loads: net.loads().to_vec(),
        inverters: net.inverters().to_vec(),
        tap_changers: vec![],
        slack_voltage: net.slack_voltage(),
        v_limits: net.v_limits(),
        base_mva: net.base_mva(),
        allow_rating_mismatch: false,
    };
    parts.branches[1].r *= 2.0;
    let doubled = Network::try_new(parts).unwrap();
    let after = solve_default(&doubled, &inj).unwrap();

    let term = |net: &Network, p: &OperatingPoint, bi: usize| {
        let f = p.flows[bi].unwrap();
        let v = p.v[f.sending];
        net.branches()[bi].r * (f.p_send * f.p_send + f.q_send * f.q_send) / (v * v)
    };
    assert!(term(&doubled, &after, 1) >= term(&net, &before, 1) - 1e-12);
}

#[test]
fn meshed_loop_with_shunt_and_tap_solves() {
    // Close a loop on the five-bus grid, add a capacitor and an off-nominal
    // tap; the router must pick the meshed solver and still balance power.
    let net = five_bus();
    let mut parts = NetworkParts {
        buses: net.buses().to_vec(),
        branches: net.branches().to_vec(),
        loads: net.loads().to_vec(),
        inverters: net.inverters().to_vec(),
        tap_changers: vec![],
        slack_voltage: net.slack_voltage(),
        v_limits: net.v_limits(),
        base_mva: net.base_mva(),
        allow_rating_mismatch: false,
    };
    parts.branches.push(line(9, 4, 5, 0.03, 0.02));
    parts.branches[0].tap_ratio = 0.98;
    parts.buses[3].shunt_susceptance = 0.02;
    let meshed = Network::try_new(parts).unwrap();
    assert!(!meshed.is_radial());

    let inj = InjectionSet::no_action(&meshed);
    let point = solve(&meshed, &inj, DEFAULT_TOL, 50).unwrap();
    assert!(point.total_loss > 0.0);
    assert!((loss_of(&point, &meshed) - point.total_loss).abs() < 1e-9);
    for b in 0..meshed.n_buses() {
        if b == meshed.slack_idx() {
            continue;
        }
        let mut p_in = inj.p[b];
        for &(branch, _) in meshed.adjacent(b) {
            p_in += point.flows[branch].unwrap().into_bus(b).0;
        }
        assert!(p_in.abs() < 1e-6);
    }
}

fn ltc_case(tap: f64, tap_min: f64, tap_max: f64) -> Network {
    let mut branch = line(1, 1, 2, 0.005, 0.02);
    branch.tap_ratio = tap;
    Network::try_new(NetworkParts {
        buses: vec![bus(1, BusKind::Slack), bus(2, BusKind::Load)],
        branches: vec![branch],
        loads: vec![LoadPoint { bus: BusId(2), p: 0.01, q: 0.005 }],
        tap_changers: vec![TapChanger {
            branch: BranchId(1),
            controlled_bus: BusId(2),
            tap_min,
            tap_max,
            tap_step: 0.0125,
            v_band: [0.90, 1.10],
        }],
        ..NetworkParts::default()
    })
    .unwrap()
}

#[test]
fn ltc_brings_high_voltage_into_band() {
    let net = ltc_case(0.875, 0.85, 1.10);
    let inj = InjectionSet::no_action(&net);
    let raw = solve(&net, &inj, DEFAULT_TOL, 50).unwrap();
    assert!(raw.v[1] > 1.10, "setup must start out of band, got {}", raw.v[1]);

    let out = apply_ltc(&net, &inj, DEFAULT_TOL, 50).unwrap();
    assert!(out.in_band);
    assert!(out.point.v[1] <= 1.10);
    assert!(out.tap_moves > 0);
    assert!(out.net.branches()[0].tap_ratio > 0.875);
}

#[test]
fn ltc_identity_when_already_in_band() {
    let net = ltc_case(1.0, 0.9, 1.1);
    let inj = InjectionSet::no_action(&net);
    let out = apply_ltc(&net, &inj, DEFAULT_TOL, 50).unwrap();
    assert_eq!(out.tap_moves, 0);
    assert!(out.in_band);
    assert_eq!(out.net, net);
}

#[test]
fn ltc_flags_exhausted_range() {
    // Band is unreachable: the tap tops out at 0.9, leaving the controlled
    // bus near 1/0.9 = 1.11, above the band.
    let net = ltc_case(0.875, 0.875, 0.9);
    let inj = InjectionSet::no_action(&net);
    let out = apply_ltc(&net, &inj, DEFAULT_TOL, 50).unwrap();
    assert!(!out.in_band);
    assert!(out.point.v[1] > 1.10);
    let tap = out.net.branches()[0].tap_ratio;
    assert!((tap - 0.9).abs() < 1e-9, "tap should end at its limit, got {tap}");
}

#[test]
fn nonconvergence_under_extreme_loading() {
    // A 1.0 p.u. load behind a 0.5 p.u. resistance is far beyond the
    // deliverability limit.
    let net = two_bus(0.5, 0.5, 1.0, 1.0);
    let inj = InjectionSet::no_action(&net);
    assert!(solve_radial(&net, &inj, DEFAULT_TOL, 100).is_err());
    assert!(solve_meshed(&net, &inj, DEFAULT_TOL, 50).is_err());
}

mod props {
    use super::*;
    use proptest::prelude::*;

    fn arb_chain() -> impl Strategy<Value = (Network, InjectionSet)> {
        (2usize..12).prop_flat_map(|n| {
            (
                proptest::collection::vec((1e-3f64..0.02, 1e-3f64..0.02), n - 1),
                proptest::collection::vec((0.0f64..0.03, 0.0f64..0.015), n - 1),
            )
                .prop_map(move |(imps, loads)| {
                    let parts = NetworkParts {
                        buses: (1..=n as u32)
                            .map(|i| bus(i, if i == 1 { BusKind::Slack } else { BusKind::Load }))
                            .collect(),
                        branches: imps
                            .iter()
                            .enumerate()
                            .map(|(k, &(r, x))| line(k as u32 + 1, k as u32 + 1, k as u32 + 2, r, x))
                            .collect(),
                        loads: loads
                            .iter()
                            .enumerate()
                            .map(|(k, &(p, q))| LoadPoint { bus: BusId(k as u32 + 2), p, q })
                            .collect(),
                        ..NetworkParts::default()
                    };
                    let net = Network::try_new(parts).unwrap();
                    let inj = InjectionSet::no_action(&net);
                    (net, inj)
                })
        })
    }

    proptest! {
        #![proptest_config(proptest::test_runner::Config::with_cases(64))]

        #[test]
        fn solvers_agree_and_conserve((net, inj) in arb_chain()) {
            let a = solve_radial(&net, &inj, DEFAULT_TOL, 100).unwrap();
            let b = solve_meshed(&net, &inj, DEFAULT_TOL, 50).unwrap();
            for i in 0..net.n_buses() {
                prop_assert!((a.v[i] - b.v[i]).abs() < 1e-6);
            }
            prop_assert!((a.total_loss - b.total_loss).abs() < 1e-8);
            prop_assert!(a.total_loss >= 0.0);
            prop_assert!((loss_of(&a, &net) - a.total_loss).abs() < 1e-9);

            // Loss identity from the energy balance.
            let load: f64 = net.p_load().iter().sum();
            prop_assert!((a.slack_p - (load + a.total_loss)).abs() < 1e-7);
        }
    }
}
