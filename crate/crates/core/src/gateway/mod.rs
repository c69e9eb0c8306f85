//! Deployment plumbing: root CA, discovery, configuration, HTTP binding and
//! load metering.

pub mod config;
pub mod discovery;
pub mod http;
pub mod metrics;
pub mod rca;
