//! Reactive-power capability of an inverter.
//!
//! The feasible reactive range is bounded by two constraints evaluated at the
//! current active output `p_now`: the power-factor limit `|q| <= p_now * tan(phi_max)`
//! with `phi_max = arccos(pf_limit)`, and the apparent-power limit
//! `|q| <= sqrt(s_rated^2 - p_now^2)`. At full active output the range
//! collapses to zero. Both bounds are symmetric, so `q_min = -q_max`.

use crate::model::InverterSpec;

/// Feasible reactive interval `[-q_max, q_max]` of one inverter at a given
/// active output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapabilityEnvelope {
    q_max: f64,
    p_now: f64,
}

impl CapabilityEnvelope {
    pub fn q_max(&self) -> f64 {
        self.q_max
    }

    pub fn q_min(&self) -> f64 {
        -self.q_max
    }

    /// Active output the envelope was computed for (after any clipping).
    pub fn p_now(&self) -> f64 {
        self.p_now
    }

    pub fn contains(&self, q: f64) -> bool {
        q >= self.q_min() && q <= self.q_max()
    }
}

/// Compute the reactive capability at active output `p_now`.
///
/// `p_now` above the active rating is clipped with a logged warning; real
/// feed-in data occasionally exceeds nameplate.
pub fn envelope(spec: &InverterSpec, p_now: f64) -> CapabilityEnvelope {
    let p_rated = spec.p_rated();
    let p = if p_now > p_rated {
        log::warn!(
            "inverter at bus {}: p_now {} exceeds p_rated {}, clipping",
            spec.bus,
            p_now,
            p_rated
        );
        p_rated
    } else {
        p_now.max(0.0)
    };

    let tan_phi_max = spec.pf_limit.acos().tan();
    let pf_bound = p * tan_phi_max;
    let s_bound = (spec.s_rated * spec.s_rated - p * p).max(0.0).sqrt();
    CapabilityEnvelope { q_max: pf_bound.min(s_bound), p_now: p }
}

/// Project a desired setpoint into the envelope.
pub fn clamp_q(env: &CapabilityEnvelope, q_desired: f64) -> f64 {
    q_desired.clamp(env.q_min(), env.q_max())
}
