//! Simulation and online testing of Monte Carlo dropout binarized networks
//! mapped onto a computation-in-memory crossbar.
//!
//! The pipeline is: [`trainer`] produces a [`BinaryNetwork`]; [`atpg`] ranks
//! training inputs by how repeatable their uncertainty is and keeps the most
//! repeatable ones as test vectors; [`detector`] fits fault-free uncertainty
//! bounds and runs vote-based test sessions; [`campaign`] injects faults from
//! [`faults`] and measures accuracy, coverage, false-positive rate and ROC.

pub mod atpg;
pub mod campaign;
pub mod detector;
pub mod engine;
pub mod error;
pub mod faults;
pub mod inference;
pub mod io;
pub mod pipeline;
pub mod tensor;
pub mod trainer;

pub use engine::{BinaryNetwork, DropoutBank, DropoutConfig, DropoutMethod, Sharing};
pub use error::{Error, Result};
pub use faults::{FaultContext, FaultKind, FaultLocation, FaultSpec};
pub use tensor::{BitMat, BitVec, RngStream};
