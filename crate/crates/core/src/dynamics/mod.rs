//! Lindblad master equations: construction, right-hand side, time
//! integration, relaxation to a steady state and state comparison.

mod integrate;
mod master;
mod metrics;

pub use integrate::{
    default_dt, evolve, evolve_with, steady_state, Diagnostics, IntegratorConfig, Method, Observable, SteadyStateConfig,
    Trajectory, DT_FACTOR,
};
pub use master::{CollapseTerm, HamiltonianTerm, Liouvillian, MasterEquation, TimeProfile, Workspace};
pub use metrics::{fidelity, partial_trace, FIDELITY_PSD_TOL};
