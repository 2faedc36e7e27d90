//! Mesoscopic simulator and laboratory for max-pressure traffic signal control
//! driven by connected-vehicle (CV) travel times.
//!
//! The crate is organised around the closed loop
//!
//! ```text
//! scenario ──> network ──> sim <──── controller (Q / PW / CV-TT / delay weights, actuated)
//!                           │              ▲
//!                           └── observe ───┘        (Bernoulli CV tagging, per-OD penetration)
//!                           │
//!                           └── metrics / stability (Lyapunov trace, admissible region,
//!                                                    necessary-condition monitor)
//! ```
//!
//! `harness` ties the pieces together behind the `cvmp` CLI: single runs,
//! seed/penetration sweeps, admissibility checks and weight audits.

pub mod controller;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod network;
pub mod observe;
pub mod scenario;
pub mod sim;
pub mod stability;

pub use error::Error;
pub type Result<T> = std::result::Result<T, Error>;
