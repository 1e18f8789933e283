//! Client connect paths, the demo server, and the timing harness.
//!
//! [`connect`] runs one handshake in one of three modes: `default` resolves
//! the name itself and goes direct, `cold` builds a SOCKS association first
//! and counts that setup into the measurement, `warm` reuses a prebuilt
//! association so only the proxied handshake is timed. [`run_timing_suite`]
//! repeats a configuration and reports minimum and median.

mod client;
mod server;

pub use client::{
    connect, run_timing_suite, ConnectConfig, ConnectError, Established, Mode, SuiteSummary,
    TimingRecord,
};
pub use server::{serve, ServerHandle};
