//! Kinetic modeling toolkit for dynamic PET.
//!
//! Implements the irreversible two-tissue compartment model with a blood
//! volume term, bounded least-squares fitting of its micro-parameters per
//! voxel or per region, Patlak graphical analysis, synthetic phantoms with
//! known ground truth, TAC-fidelity metrics, and a raw+sidecar volume format.

pub mod error;
pub mod fitter;
pub mod io;
pub mod kinetic;
pub mod metrics;
pub mod phantom;
pub mod reference;
pub mod volume;

pub use error::{Error, Result};
