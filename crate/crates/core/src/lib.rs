//! Cycle-level simulator of a 2D-mesh network-on-chip with in-network
//! multicast and reduction, plus analytical runtime and energy models.

pub mod collectives;
pub mod endpoint;
pub mod engine;
pub mod models;
pub mod protocol;
pub mod router;
pub mod topology;
