pub mod collision;
pub mod error;
pub mod moments;
pub mod phase_grid;
pub mod transport_bc;
pub mod diagnostics;
pub mod data_prep;
pub mod integrator;
pub mod cli_io;
