//! Estimators, variance estimators and validity diagnostics for finite
//! population inference from non-probability samples, with a synthetic
//! population generator for simulation studies.
#![no_std]
extern crate alloc;

pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod popgen;
pub mod rng;
pub mod stats;
pub mod uncertainty;

pub use error::{Error, ErrorCategory, Result};
