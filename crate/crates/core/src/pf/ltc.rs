//! Deadband load-tap-changer control.
//!
//! After each solve, every tap changer whose controlled-bus voltage sits
//! outside its deadband moves one step toward the band (raising the ratio
//! lowers the regulated-side voltage), then the case is re-solved. Stops at
//! a fixed point or when tap limits are reached.

use crate::model::Network;

use super::{solve, InjectionSet, OperatingPoint, SolveError};

#[derive(Debug, Clone)]
pub struct LtcOutcome {
    /// Network with final tap positions.
    pub net: Network,
    pub point: OperatingPoint,
    /// Total tap steps taken across all changers.
    pub tap_moves: usize,
    /// True when every controlled voltage ended inside its deadband; false
    /// when some changer ran out of range first.
    pub in_band: bool,
}

pub fn apply_ltc(
    net: &Network,
    inj: &InjectionSet,
    tol: f64,
    max_iter: usize,
) -> Result<LtcOutcome, SolveError> {
    let mut current = net.clone();
    // Oscillation guard: twice the total tap travel available.
    let budget = 2 * net
        .tap_changers()
        .iter()
        .map(|tc| ((tc.tap_max - tc.tap_min) / tc.tap_step).round() as usize)
        .sum::<usize>()
        .max(2);

    let mut tap_moves = 0;
    for round in 0.. {
        let point = solve(&current, inj, tol, max_iter)?;

        let mut moves: Vec<(usize, f64)> = Vec::new();
        for tc in current.tap_changers() {
            let bi = current.branch_idx(tc.branch).expect("validated");
            let tap = current.branches()[bi].tap_ratio;
            let v = point.v[current.bus_idx(tc.controlled_bus).expect("validated")];
            if v > tc.v_band[1] && tap + tc.tap_step <= tc.tap_max + 1e-12 {
                moves.push((bi, tap + tc.tap_step));
            } else if v < tc.v_band[0] && tap - tc.tap_step >= tc.tap_min - 1e-12 {
                moves.push((bi, tap - tc.tap_step));
            }
        }

        if moves.is_empty() {
            let in_band = current.tap_changers().iter().all(|tc| {
                let v = point.v[current.bus_idx(tc.controlled_bus).expect("validated")];
                v >= tc.v_band[0] && v <= tc.v_band[1]
            });
            return Ok(LtcOutcome { net: current, point, tap_moves, in_band });
        }
        for (bi, tap) in moves {
            current = current.with_tap(bi, tap);
            tap_moves += 1;
        }
        if round >= budget {
            return Err(SolveError::TapOscillation);
        }
    }
    unreachable!()
}
