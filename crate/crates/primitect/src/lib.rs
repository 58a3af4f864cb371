//! File formats, configuration and the stage driver behind the `primitect`
//! command line.

pub mod bench;
pub mod compact;
pub mod config;
pub mod error;
pub mod stagefiles;
pub mod stages;
pub mod stl;
pub mod xyz;

pub use error::{Failure, Result};
