//! Evolutionary game dynamics with environmental feedback.
//!
//! Prisoner's dilemma (two strategies) and optional prisoner's dilemma (with
//! an abstaining loner strategy) whose payoffs drift with an environment
//! state `n` in `[0, 1]`. The crate provides payoff models, replicator and
//! pairwise-comparison vector fields, an RK4 / Dormand–Prince integrator,
//! fixed-point cataloguing with linear stability, oscillation detection and
//! scenario I/O.

pub mod dynamics;
pub mod equilibrium;
pub mod error;
pub mod game;
pub mod integrator;
pub mod linalg;
pub mod scenario;

pub use dynamics::{
    closed_form_field, pairwise_field, replicator_field, ClosedForm, ComparisonRule, PopulationState, Protocol,
    StateDerivative, StateLayout, System, VectorField,
};
pub use equilibrium::{
    analyze_point, catalog_fixed_points, classify, detect_oscillation, find_fixed_points, jacobian, AmplitudeTrend,
    Catalog, FixedPointReport, JacobianMode, OscillationReport, Provenance, SearchDomain, Stability, Tolerances,
};
pub use error::{Error, Result};
pub use game::{Deltas, EnvCoupling, Game, GameKind, GameSpec, PayoffMatrix};
pub use integrator::{integrate, sample_phase_grid, Component, GridSample, IntegratorConfig, Method, Trajectory};
pub use linalg::Matrix;
pub use num_complex::Complex64;
pub use scenario::{
    builtin, export_trajectory, import_trajectory_jsonl, load_scenario, run, Overrides, RunSummary, Scenario,
    ScenarioError, TrajectoryFormat, BUILTINS,
};
