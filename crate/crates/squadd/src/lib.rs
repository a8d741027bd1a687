//! Hamiltonian-engineering simulations for cavity QED: SQUADD state transfer,
//! collective ensemble modes, control imperfections and Carr-Purcell longitudinal readout.

pub mod ensemble;
pub mod error;
pub mod experiments;
pub mod lindblad;
pub mod magnus;
pub mod pulses;
pub mod quadrature;
pub mod quantum;
pub mod readout;
pub mod transfer;

pub use error::{Error, Result};
