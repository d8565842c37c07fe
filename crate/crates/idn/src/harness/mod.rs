//! Configuration, simulation loop, metrics, brute-force oracles and the
//! structural check suite.

pub mod bruteforce;
pub mod checks;
pub mod config;
pub mod instances;
pub mod metrics;
pub mod sim;
