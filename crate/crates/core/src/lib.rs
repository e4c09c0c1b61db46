//! Deformed action-angle geometry, higher-order semiclassical spectra and torus
//! dynamics for integrable systems, with exact quantum references.

pub mod error;
pub mod expr;
pub mod jets;
pub mod moyal;
pub mod numerics;
pub mod chart;
pub mod qgeom;
pub mod oracle;
pub mod spectra;
pub mod dynamics;

pub use error::{Error, Result};
