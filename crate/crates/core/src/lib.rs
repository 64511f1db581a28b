//! Reactive-power control strategies for loss minimization in power
//! distribution grids, on top of a DistFlow / AC power-flow core.
//!
//! The library covers:
//!
//! * a validated grid model with a JSON case format, radial orientation, and
//!   switching-based reconfiguration ([`model`]);
//! * power-flow solvers for radial and meshed grids, plus deadband
//!   load-tap-changer control ([`pf`]);
//! * inverter reactive capability envelopes ([`capability`]);
//! * the communication-free LLMA and LFMA control algorithms run as lockstep
//!   synchronized rounds ([`local`]);
//! * a centralized reactive-dispatch optimizer and the hybrid coordinator
//!   that re-optimizes only the inverters with the most remaining reserve
//!   ([`central`]);
//! * an experiment harness for random-placement ensembles, topology
//!   reconfiguration studies, and time-series campaigns ([`scenario`]).

pub mod capability;
pub mod central;
pub mod local;
pub mod model;
pub mod outcome;
pub mod pf;
pub mod scenario;

pub use capability::{clamp_q, envelope, CapabilityEnvelope};
pub use model::{parse_case, Network};
pub use outcome::{Algorithm, ControlOutcome, LocalAlgorithm};
pub use pf::{loss_of, solve, solve_default, InjectionSet, OperatingPoint, SolveError};

#[cfg(test)]
pub(crate) mod testutil;
