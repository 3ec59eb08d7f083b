//! Exact tabular solvers for values, Nash constraints, occupancy measures and
//! the dual.

pub mod linear;
pub mod occupancy;
pub mod tstep;
pub mod values;

pub use occupancy::{
    agent_causal_entropy, causal_entropy, expected_return, expected_returns, occupancy_measure,
    occupancy_of_dynamics, psi_star_ga, returns_from_occupancy, OccupancyTable,
};
pub use tstep::{
    build_dual_weights, dual_value, dual_values, tstep_nash_check, tstep_q, DualWeights, TStepReport,
    TStepValue, PREFIX_BUDGET,
};
pub use values::{
    backup_table, bellman_values, nash_check, nash_residual, q_values, NashReport, QTable, ValueTable, Witness,
};
