//! Flow-level bandwidth sharing.
//!
//! Capacity polytopes, the proportionally fair allocation, insensitive
//! allocations derived from potential functions (balanced fairness and a
//! power-of-two bucket counterexample), their product-form stationary laws,
//! a CTMC simulator with stage-structured document sizes, and experiment
//! harnesses for heavy-traffic convergence and large deviations.

pub mod capacity;
pub mod cli;
pub mod error;
pub mod experiments;
pub mod format;
pub mod pf;
pub mod policy;
pub mod potential;
pub mod simulator;
pub mod stationary;

pub use capacity::{AllocationVector, CapacityRegion, NetworkFile};
pub use error::{Error, Result};
pub use pf::{pf_objective, rate_function, solve_pf, PfPolicy, PfSolution};
pub use policy::AllocationPolicy;
pub use potential::{
    allocation_from_potential, balanced_fairness_log_phi, bucket_index, counterexample_log_phi,
    CounterexampleParams, LogPotential, PotentialKind,
};
pub use simulator::{
    simulate, transition_rates, tv_distance, DetailedState, RateConvention, SimParams,
    StageDistribution, TrafficSpec,
};
pub use stationary::{
    detailed_balance_residual, log_normalizing_constant, stationary_pi, StationaryTable,
};
