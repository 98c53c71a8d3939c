//! Littlewood-Paley square functions, mixed-norm quasi-norms, dyadic
//! stopping times, sparse families and Muckenhoupt weights on the periodic
//! unit cube, with an experiment harness that checks the associated
//! inequalities numerically.

pub mod error;
pub mod fft;
pub mod filters;
pub mod grid;
pub mod par;
pub mod square;
pub mod norms;
pub mod decomposition;
pub mod weights;
pub mod stopping;
pub mod harness;

pub use error::{LabError, Result};
