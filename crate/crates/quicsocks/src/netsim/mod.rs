//! Deterministic datagram network simulator.
//!
//! A [`Topology`] names hosts and point-to-point links (one-way delays in
//! milliseconds, optional loss probability), built in code or parsed from a
//! text file. A [`Sim`] runs one [`Actor`] per host on a single thread over
//! a logical clock; actors exchange datagrams and set timers through [`Ctx`].
//!
//! Determinism is the point: given the same topology, seed, and actors, two
//! runs produce equal [`Trace`]s, event for event. Loss draws come from a
//! per-link counter-based RNG, so adding traffic on one link never perturbs
//! another. Links never reorder: delivery order on a link follows send
//! order whenever delays make times collide.
//!
//! Every send attempt lands in the trace with its outcome (delivered, lost,
//! or unreachable) plus a best-effort protocol tag from [`classify`], which
//! is what scenario assertions and the JSON-lines export are built on.

mod sim;
mod topology;
mod trace;

pub use sim::{Actor, Ctx, RunReport, Sim, SimError};
pub use topology::{LinkProfile, Topology, TopologyError};
pub use trace::{classify, DeliveryStatus, Trace, TraceRecord};
