//! Experiment harness.

pub fn placeholder() {}
