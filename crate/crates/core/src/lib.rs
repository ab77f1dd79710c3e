//! Cooperative-beamforming unicast in 2-D ad-hoc networks.
//!
//! Relay rectangles of nodes re-transmit a message in phase so that their
//! signals add coherently at the next, double-exponentially larger
//! rectangle. This crate generates those schedules, executes them round by
//! round under the free-space phasor channel and checks every reception by
//! summing the field of each sender.

pub mod config;
pub mod engine;
pub mod fieldmap;
pub mod phasor;
pub mod placement;
pub mod schedule;
pub mod sync;
pub mod verify;
