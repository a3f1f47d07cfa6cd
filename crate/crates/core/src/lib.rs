//! Distributed consensus control of inverter-based microgrids.

pub mod certify;
pub mod contingency;
pub mod controller;
pub mod data;
pub mod error;
pub mod linalg;
pub mod netmodel;
pub mod powerflow;
pub mod sim;
pub mod testnets;

pub use error::{Error, Result};
