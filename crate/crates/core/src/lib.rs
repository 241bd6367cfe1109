//! Data escrow: applications run reviewed compute functions over personal
//! data without ever receiving the data itself.

pub mod compute;
pub mod datamodel;
pub mod escrow;
pub mod http;
pub mod offload;
pub mod sql;
pub mod store;
pub mod workloads;
