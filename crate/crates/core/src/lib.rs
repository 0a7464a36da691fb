//! Simulator for offloading kernels onto memory-constrained micro-cores
//! with data passed by reference.

pub mod bench;
pub mod config;
pub mod corpus;
pub mod device;
pub mod host;
pub mod kernel;
pub mod model;
pub mod timing;
pub mod transport;
