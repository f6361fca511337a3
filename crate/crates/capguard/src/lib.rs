//! Service, client, and tooling layer over `capguard-core`: the authority
//! HTTP service, the site middleware, the relay TCP front end, the epoch and
//! puzzle-seed beacon, a client SDK, file formats, and the figure
//! reproduction harness.

pub mod api;
pub mod client;
pub mod config;
pub mod formats;
pub mod keys;
pub mod persist;
pub mod reproduce;
pub mod services;

/// Wall clock as epoch seconds; every core call takes time explicitly.
pub fn now_s() -> f64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .expect("system clock before epoch")
        .as_secs_f64()
}
