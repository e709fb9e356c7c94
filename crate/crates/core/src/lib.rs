//! Exact simulator and analytic calculator for two-step purification of
//! polarization-spatial hyperentangled photon states built on the
//! spin-dependent scattering of quantum-dot microcavities.
//!
//! The crate is `no_std` (with `alloc`); everything here is pure
//! computation on small dense state vectors. IO, file formats, and the
//! command-line front end live in the companion `hyperepp` crate.
//!
//! Module map:
//!
//! - [`statevec`]: dense complex state vectors over registers of photons
//!   (polarization ⊗ dual-rail spatial mode) and electron spins, with
//!   exhaustive measurement branch enumeration and classical mixtures.
//! - [`cavity`]: input-output coefficients of the double-sided QD-cavity
//!   system and the spin-dependent scattering transformation.
//! - [`primitives`]: single-photon gates, the polarization/spatial swap,
//!   the quantum-state-joining method (QSJM), and the phase- and
//!   parity-check QNDs.
//! - [`epp`]: the two-step Bell and GHZ purification protocols, both as
//!   exact circuit simulations over mixtures and as closed-form
//!   recurrences over mixture parameters.
//! - [`analysis`]: closed-form fidelities/efficiencies of the QND and
//!   QSJM building blocks, brute-force circuit oracles cross-checking
//!   them, and the parameter-sweep grid.

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub(crate) mod math;

pub mod analysis;
pub mod cavity;
pub mod epp;
pub mod primitives;
pub mod statevec;

pub use cavity::{CavityParams, CoeffModuli, ScatteringCoefficients};
// re-exports below filled in as modules land


pub use statevec::{Ensemble, QuantumState, SubsystemId};
