//! Leading constants of small-noise, tail and short-time density expansions
//! for projected diffusions, computed from the Hamiltonian boundary-value
//! problem of the associated control problem.

pub mod catalog;
pub mod cli;
pub mod config;
pub mod error;
pub mod expansion;
pub mod flow;
pub mod mc;
pub mod minimizer;
pub mod model;
pub mod nonfocal;
pub mod ode;
pub mod poly;
pub mod shooting;

pub use error::{Error, Result};
pub use flow::{flow_backward, flow_forward, flow_with_variation, FlowResult, IntegratorOptions};
pub use model::{decorrelated_diffusion, hamiltonian, hamiltonian_vector_field, HamiltonianState, ModelSpec, VectorFields};
