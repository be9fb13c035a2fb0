//! Design and simulation toolkit for digital servos running on programmable
//! logic: continuous transfer-function design, discretization into fixed-point
//! FIR/IIR structures, RAM-block look-up tables, pipelined latency models and
//! closed-loop simulation of an adaptive homodyne phase measurement and a
//! Fabry-Perot cavity lock.

pub mod adaptive_phase;
pub mod cavity_lock;
pub mod config;
pub mod csv;
pub mod discretize;
pub mod error;
pub mod filters;
pub mod fixedpoint;
pub mod lti;
pub mod lut;
pub mod pipeline;
pub mod poly;
pub mod sinefit;

pub use error::{Error, Result};
