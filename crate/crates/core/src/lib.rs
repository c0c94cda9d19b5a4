//! Numerical testbed for many-worlds branching and probability-law experiments.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`]: dense complex state vectors over labeled tensor-product bases.
//! * [`branching`]: measurement-chain states, record registers, and block Hamiltonians.
//! * [`born`]: candidate probability laws and the variational/auxiliary-experiment checks.
//! * [`largen`]: branch-class amplitudes, exact branch counting, and micro-law experiments.
//! * [`collapse`]: the linear-evolution theorem and a martingale collapse surrogate.
//! * [`finegrain`]: ancilla fine-graining with exact rational weights.
//! * [`bohm`]: one-dimensional guided trajectories in a two-packet wavefunction.
//! * [`runner`]: configuration, seeding, and report persistence for the CLI.

pub mod bohm;
pub mod born;
pub mod branching;
pub mod collapse;
pub mod error;
pub mod finegrain;
pub mod largen;
pub mod runner;
pub mod tensor;

pub use error::{Error, Result};
