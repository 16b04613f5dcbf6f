//! File formats, the Monte Carlo harness and the `nonprob` command line
//! on top of `nonprob-core`.

pub mod cli;
pub mod harness;
pub mod io;
pub mod record;

pub use nonprob_core;
