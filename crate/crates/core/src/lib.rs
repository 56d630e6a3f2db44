//! Simulation and analysis of four-mode macroscopic Bell states: bright
//! squeezed vacuum whose photon-number pairing mirrors the two-photon Bell
//! states.
//!
//! Three engines compute the same observables and cross-check each other:
//! [`fock`] (exact, truncated), [`gaussian`] (second moments, exact for these
//! states) and [`closed_form`] (analytic formulas). [`montecarlo`] samples
//! detector records, [`witness`] evaluates the separability witnesses and
//! [`fitting`] recovers efficiency and gain from measured curves.

pub mod closed_form;
pub mod convention;
pub mod error;
pub mod fitting;
pub mod fock;
pub mod gaussian;
pub mod modes;
pub mod montecarlo;
pub mod stats;
pub mod witness;

pub use error::{Error, Result};
