//! Certification and simulation of input/output-to-state stability for
//! switched nonlinear systems whose switching is restricted by a directed
//! graph and per-mode dwell-time bounds.

pub mod certifier;
pub mod cli;
pub mod enumeration;
pub mod expr;
pub mod graph;
pub mod signals;
pub mod simulator;
pub mod system;
