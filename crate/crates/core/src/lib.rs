//! Simulation and analysis of amplitude-damping suppression for a single
//! qubit under four control schemes: free decay, Wiseman–Milburn homodyne
//! feedback, coherent ancilla-assisted feedback and ancilla feedback driven
//! by a learned predictor of the delayed homodyne current.
//!
//! The crate is organised bottom-up:
//!
//! * [`quantum`]: dense 2- and 4-dimensional operator algebra.
//! * [`dynamics`]: RK4 master-equation and Euler–Maruyama homodyne trajectory
//!   integrators.
//! * [`rates`]: closed-form effective decay rates and lifetimes.
//! * [`fit`]: decay-rate extraction and the energy-retention integral.
//! * [`predictor`]: sliding-window dataset and a 5-32-16-1 MLP trained with Adam.
//!
//! Units: ħ = 1, rates in 1/µs, times in µs.

pub mod dynamics;
pub mod error;
pub mod fit;
pub mod predictor;
pub mod quantum;
pub mod rates;

pub use error::{Error, Result};
