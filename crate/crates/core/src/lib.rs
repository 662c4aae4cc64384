//! Forced nonlinear acoustic vacuum: lattice models, the averaged two-mode
//! slow flow with its closed-form periodic family, Melnikov analysis of that
//! family, and shooting verification of the orbits that persist under forcing.

pub mod lattice;
pub mod melnikov;
pub mod numerics;
pub mod persist;
pub mod slowflow;
