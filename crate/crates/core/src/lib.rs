//! SAR-aware transmit beamforming and power splitting for multiuser MISO
//! downlinks with simultaneous wireless information and power transfer.
//!
//! The crate is organized around the optimization schemes it offers:
//!
//! * [`optimal`]: SDP-based joint design with rank-1 recovery and max-min
//!   bisection over the SINR/EH ratio `t`.
//! * [`fastsu`]: closed-form / one-dimensional solver for a single user with a
//!   single SAR constraint.
//! * [`fixedbf`] and [`hybrid`]: low-complexity MRT/ZF/RZF and ZF+MRT designs.
//! * [`robust`]: worst-case design under bounded channel and SAR-matrix errors.
//! * [`baseline`]: SAR-agnostic design followed by power backoff.
//!
//! [`model`], [`eh`] and [`metrics`] hold the physical scenario, the rectifier
//! curve and the evaluation of candidate solutions; [`conic`] is the thin
//! convex-programming layer every solver builds on, and [`sim`] runs Monte
//! Carlo sweeps over all of the above.

// Links the system OpenBLAS used by the SDP backend.
extern crate openblas_src;

pub mod baseline;
pub mod config;
pub mod conic;
pub mod eh;
mod error;
pub mod fastsu;
pub mod fixedbf;
pub mod hybrid;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod optimal;
pub mod robust;
pub mod sim;

pub use error::{Error, Result};
pub use linalg::{CMatrix, CVector, C64};
pub use metrics::{BeamformingSolution, PerformanceReport};
pub use model::{ChannelSet, SystemScenario, UncertaintyModel};
