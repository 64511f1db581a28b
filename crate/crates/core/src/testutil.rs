//! Shared fixtures for unit tests.

use crate::model::{parse_case, Network};

pub const FIVE_BUS_JSON: &str =
    include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../cases/five_bus.json"));

pub fn five_bus() -> Network {
    parse_case(FIVE_BUS_JSON).expect("five-bus fixture parses")
}
