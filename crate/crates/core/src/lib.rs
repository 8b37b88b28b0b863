//! Style-guided exploration of web applications.
//!
//! Elements are described by 68 structural and computed-style features.
//! Boosted decision trees predict which elements react to each of five
//! event types, a registry of style signatures ranks predicted actionables
//! so that unfamiliar-looking ones are exercised first, and a depth-first
//! crawler drives a backend (simulated here, or a live browser through the
//! companion `stylecrawl-cdp` crate) while recording a state-flow graph and
//! code coverage.

pub mod classifier;
pub mod dataset;
pub mod features;
pub mod model;
pub mod ranking;
pub mod engine;
pub mod sim;
pub mod synth;
