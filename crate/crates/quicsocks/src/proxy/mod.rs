//! The relaying proxy: SOCKS associations in, domain-addressed initial
//! packets resolved and forwarded, stateless retries replayed from cache,
//! resolved-address notifications back to the client.
//!
//! [`ProxyEngine`] is the complete behavior with no I/O; [`ProxyServer`]
//! wraps it in real sockets and threads.

mod engine;
mod server;

pub use engine::{
    AssocId, NotifyMode, ProxyAction, ProxyConfig, ProxyEngine, ProxyMetrics, RelayState,
};
pub use server::{ProxyHandle, ProxyServer};
