//! A two-level resource-offer cluster scheduler with a long-running-service
//! framework, an elastic CI-build framework, a service-discovery proxy
//! renderer and a deterministic discrete-event simulation harness.

pub mod build;
pub mod discovery;
pub mod ids;
pub mod master;
pub mod resources;
pub mod service;
pub mod sim;
