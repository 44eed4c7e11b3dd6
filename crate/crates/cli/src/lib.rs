//! Configuration, sweeps, theory-versus-simulation tables and golden data for
//! the `rfens` command line.

pub mod config;
pub mod corpus;
pub mod density;
pub mod simulate;
pub mod sweep;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const CONVERGENCE: i32 = 3;
    pub const SIMULATION: i32 = 4;
}
