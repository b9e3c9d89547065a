//! Simulation core for heterogeneous vehicular networks: road and vehicle
//! model, car-following mobility, message-level radio access, cooperative
//! maneuver arbitration and the layered cloud data path.

pub mod cloud;
pub mod config;
pub mod cooperation;
pub mod engine;
pub mod mobility;
pub mod messaging;
pub mod metrics;
pub mod model;
pub mod radio;
pub mod scenario;
pub mod sweep;
pub mod trace;
