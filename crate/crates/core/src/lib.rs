//! Double-phase-shifter hybrid precoding for multiuser wideband mm-wave MIMO.

pub mod cascade;
pub mod channel;
pub mod digital;
pub mod error;
pub mod evaluation;
pub mod fully_connected;
pub mod linalg;
pub mod model;
pub mod partial;
pub mod pipeline;
pub mod sim;

pub use error::{Error, Result};
