//! Energy monitoring framework for wattmeter fleets.
//!
//! Drivers poll (or drain) emulated wattmeters and publish JSON measurements
//! on a broker-less prefix-filtered [`bus`]. Consumers subscribe to the bus:
//! the [`api`] consumer integrates power into energy and serves it over
//! HTTP, the [`viz`] consumer keeps round-robin archives and renders charts.
//! [`forwarder`]s relay frames between network segments, and [`harness`]
//! reproduces throughput experiments and hosts the pollster client.

pub mod api;
pub mod bus;
pub mod clock;
pub mod config;
pub mod drivers;
pub mod forwarder;
pub mod harness;
pub mod model;
pub mod signing;
pub mod viz;

pub use model::{decode_measurement, encode_measurement, Measurement, ProbeId};
pub use signing::{sign, verify, SigningSecret};
