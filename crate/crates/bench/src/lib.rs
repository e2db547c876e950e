//! Shared fixtures for the benchmarks: builtin systems paired with a start state.

use evogame::{builtin, PopulationState, Protocol, System};

/// A named system with the first initial condition of its builtin scenario.
pub struct Fixture {
    pub name: &'static str,
    pub system: System,
    pub start: PopulationState,
}

fn fixture(name: &'static str, protocol: Protocol) -> Fixture {
    let s = builtin(name).expect("builtin exists");
    let system = s.system(protocol).expect("builtin systems are valid");
    Fixture { name, system, start: s.initial_conditions[0].clone() }
}

/// Two-strategy and three-strategy systems under both protocols.
pub fn fixtures() -> Vec<Fixture> {
    vec![
        fixture("example1", Protocol::Replicator),
        fixture("example3", Protocol::PairwiseComparison),
        fixture("example4_rd", Protocol::Replicator),
        fixture("example4_pcd", Protocol::PairwiseComparison),
    ]
}
