//! Full AC Newton-Raphson solver on the bus admittance matrix.
//!
//! The slack bus holds `slack_voltage` at angle zero; every other bus is a
//! PQ node with its net injection taken from the [`InjectionSet`]. Branch
//! taps sit on the `from` side; bus shunt susceptances enter the diagonal.
//! Dense linear algebra is adequate at distribution-feeder scale.

use nalgebra::{Complex, DMatrix, DVector};

use crate::model::Network;

use super::{BranchFlow, InjectionSet, OperatingPoint, SolveError};

type C64 = Complex<f64>;

fn build_ybus(net: &Network) -> DMatrix<C64> {
    let n = net.n_buses();
    let mut y = DMatrix::from_element(n, n, C64::new(0.0, 0.0));
    for br in net.branches() {
        if !br.status.is_on() {
            continue;
        }
        let f = net.bus_idx(br.from).expect("validated");
        let t = net.bus_idx(br.to).expect("validated");
        let ys = C64::new(1.0, 0.0) / C64::new(br.r, br.x);
        let tap = br.tap_ratio;
        y[(f, f)] += ys / (tap * tap);
        y[(f, t)] -= ys / tap;
        y[(t, f)] -= ys / tap;
        y[(t, t)] += ys;
    }
    for (i, b) in net.buses().iter().enumerate() {
        y[(i, i)] += C64::new(0.0, b.shunt_susceptance);
    }
    y
}

pub fn solve_meshed(
    net: &Network,
    inj: &InjectionSet,
    tol: f64,
    max_iter: usize,
) -> Result<OperatingPoint, SolveError> {
    assert!(tol > 0.0, "tolerance must be positive");
    let n = net.n_buses();
    let slack = net.slack_idx();
    let ybus = build_ybus(net);

    // PQ bus order: all non-slack buses.
    let pq: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let m = pq.len();

    let mut vm = vec![net.slack_voltage(); n];
    let mut va = vec![0.0f64; n];

    let calc_injections = |vm: &[f64], va: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        for i in 0..n {
            let mut acc_p = 0.0;
            let mut acc_q = 0.0;
            for k in 0..n {
                let y = ybus[(i, k)];
                if y.re == 0.0 && y.im == 0.0 {
                    continue;
                }
                let theta = va[i] - va[k];
                let (s, c) = theta.sin_cos();
                acc_p += vm[k] * (y.re * c + y.im * s);
                acc_q += vm[k] * (y.re * s - y.im * c);
            }
            p[i] = vm[i] * acc_p;
            q[i] = vm[i] * acc_q;
        }
        (p, q)
    };

    let mut iterations = 0;
    let (p_calc, q_calc) = loop {
        let (p_calc, q_calc) = calc_injections(&vm, &va);

        let mut mismatch = DVector::zeros(2 * m);
        let mut worst = 0.0f64;
        for (r, &i) in pq.iter().enumerate() {
            let dp = inj.p[i] - p_calc[i];
            let dq = inj.q[i] - q_calc[i];
            mismatch[r] = dp;
            mismatch[m + r] = dq;
            worst = worst.max(dp.abs()).max(dq.abs());
        }
        if !worst.is_finite() || worst > 1e6 {
            return Err(SolveError::Diverged);
        }
        if worst < tol {
            break (p_calc, q_calc);
        }
        if iterations >= max_iter {
            return Err(SolveError::NonConvergence(iterations));
        }
        iterations += 1;

        // Standard polar Jacobian: [dP/dth dP/dV; dQ/dth dQ/dV].
        let mut jac = DMatrix::zeros(2 * m, 2 * m);
        for (r, &i) in pq.iter().enumerate() {
            for (c, &k) in pq.iter().enumerate() {
                let y = ybus[(i, k)];
                if i == k {
                    jac[(r, c)] = -q_calc[i] - y.im * vm[i] * vm[i];
                    jac[(r, m + c)] = p_calc[i] / vm[i] + y.re * vm[i];
                    jac[(m + r, c)] = p_calc[i] - y.re * vm[i] * vm[i];
                    jac[(m + r, m + c)] = q_calc[i] / vm[i] - y.im * vm[i];
                } else if y.re != 0.0 || y.im != 0.0 {
                    let theta = va[i] - va[k];
                    let (s, co) = theta.sin_cos();
                    let g = y.re;
                    let b = y.im;
                    jac[(r, c)] = vm[i] * vm[k] * (g * s - b * co);
                    jac[(r, m + c)] = vm[i] * (g * co + b * s);
                    jac[(m + r, c)] = -vm[i] * vm[k] * (g * co + b * s);
                    jac[(m + r, m + c)] = vm[i] * (g * s - b * co);
                }
            }
        }

        let delta = jac.lu().solve(&mismatch).ok_or(SolveError::Singular)?;
        for (r, &i) in pq.iter().enumerate() {
            va[i] += delta[r];
            vm[i] += delta[m + r];
            if vm[i] <= 0.0 {
                return Err(SolveError::Diverged);
            }
        }
    };

    // Branch flows from the solved voltages; sending end is the `from` side.
    let volt: Vec<C64> = (0..n)
        .map(|i| C64::from_polar(vm[i], va[i]))
        .collect();
    let mut flows = vec![None; net.branches().len()];
    let mut total_loss = 0.0;
    for (bi, br) in net.branches().iter().enumerate() {
        if !br.status.is_on() {
            continue;
        }
        let f = net.bus_idx(br.from).expect("validated");
        let t = net.bus_idx(br.to).expect("validated");
        let ys = C64::new(1.0, 0.0) / C64::new(br.r, br.x);
        let tap = br.tap_ratio;
        let i_from = ys / (tap * tap) * volt[f] - ys / tap * volt[t];
        let s_from = volt[f] * i_from.conj();
        let v_eff = vm[f] / tap;
        let ssq = (s_from.re * s_from.re + s_from.im * s_from.im) / (v_eff * v_eff);
        let loss_p = br.r * ssq;
        total_loss += loss_p;
        flows[bi] = Some(BranchFlow {
            sending: f,
            receiving: t,
            p_send: s_from.re,
            q_send: s_from.im,
            p_recv: s_from.re - loss_p,
            q_recv: s_from.im - br.x * ssq,
        });
    }

    let slack_p = p_calc[slack] + net.p_load()[slack];
    let slack_q = q_calc[slack] + net.q_load()[slack];

    Ok(OperatingPoint {
        v: vm,
        flows,
        slack_p,
        slack_q,
        total_loss,
        iterations: iterations.max(1),
    })
}
