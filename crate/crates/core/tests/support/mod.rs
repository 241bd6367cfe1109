//! Generators and oracles shared by the integration tests and the
//! acceptance run.
#![allow(dead_code)]

pub mod esdf;
pub mod policy;
pub mod sql;
