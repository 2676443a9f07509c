//! Proactive information delivery over a simulated Bluetooth-like radio.
//!
//! - [`simnet`]: deterministic discrete-event world (devices, inquiry, piconets, event log)
//! - [`sdp`]: service records, service search, FTP filtering
//! - [`obexlite`]: OBEX-style push codec and sessions
//! - [`pidctl`]: stepped demo and proactive roster-verified delivery loop
//! - [`metrics`]: paper-savings arithmetic
//! - [`scenario`] / [`runner`]: scenario files and end-to-end runs

pub mod metrics;
pub mod obexlite;
pub mod pidctl;
pub mod runner;
pub mod scenario;
pub mod sdp;
pub mod simnet;

pub use pidctl::{run_proactive, run_stepped, DeliveryReport, Roster, StepReport};
pub use simnet::{MacId, RadioDevice, RadioParams, SimTime, SimWorld};
