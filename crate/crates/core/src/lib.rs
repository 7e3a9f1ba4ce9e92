//! Core algorithms for estimating conditional-average dose responses from
//! clustered observational data.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, orchestration
//! and the command line live in the companion `cbrnet` crate.
#![no_std]
extern crate alloc;

pub mod adam;
pub mod autodiff;
pub mod clustering;
pub mod dgp;
pub mod eval;
pub mod error;
pub mod ipm;
pub mod math;
pub mod matrix;
pub mod models;
pub mod nn;
pub mod rng;
pub mod select;
pub mod stats;

pub use error::{Error, Result};
pub use matrix::Matrix;
