//! Multipopulation replicator dynamics steered by a government that observes
//! only the aggregate action profile and pays subsidies proportional to a
//! target output.
//!
//! - [`game`]: scenarios, population states and the aggregate output.
//! - [`dynamics`]: the free and subsidy-controlled vector fields.
//! - [`integrator`]: RK4 trajectories, convergence and phase portraits.
//! - [`stability`]: Lyapunov verification and subsidy recommendation.
//! - [`agents`]: finite-population Monte Carlo with proportional imitation.

// `!(a >= b)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod dynamics;
pub mod error;
pub mod game;
pub mod integrator;
pub mod simplex;
pub mod stability;

pub use agents::{
    init_agents, observe, protocol_drift, run, run_round, run_until, write_series_csv, AgentConfig,
    AgentPopulation, PayoffMode, RoundStats,
};
pub use dynamics::{
    field_controlled, field_uncontrolled, per_agent_subsidy, region_bounds, subsidy_weight,
    ControlPolicy, Derivative, RegionBounds,
};
pub use error::{Error, Result};
pub use game::{
    carrier, three_population_example, validate_scenario, Output, Scenario, ScenarioFile,
    StateCombination,
};
pub use integrator::{
    csv_float, detect_convergence, phase_portrait, phase_portrait_observed, simulate,
    simulate_observed, step_rk4, ConvergenceVerdict, IntegrationConfig, Trajectory,
};
pub use stability::{
    check_f1_on_xbar, d_bar, decompose_vdot, estimate_sup_dbar, find_target_equilibria, lyapunov_v,
    recommend_d, SamplingConfig, StabilityReport, TargetEquilibrium,
};
