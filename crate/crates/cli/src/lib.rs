//! Library surface of the experiment CLI, shared with the integration and
//! acceptance test suites.

pub mod cmds;
pub mod config;
pub mod outputs;
