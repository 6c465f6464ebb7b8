//! Configuration, the iteration-scheme runner, scaling studies and the CLI.

pub mod cli;
pub mod config;
pub mod runner;
pub mod studies;

pub use cli::cli_dispatch;
pub use config::{CommutatorConfig, HamiltonianConfig, RunConfig};
pub use runner::{run_iteration_scheme, RunAbort, RunRecord};
pub use studies::{commutator_scaling_experiment, hamiltonian_increment_experiment};
