//! Simulation and stability certification for multi-population evolutionary
//! game dynamics coupled to static or dynamic payoff mechanisms.
//!
//! The library integrates impartial-pairwise-comparison dynamics (Smith and
//! power-law switch rates) against congestion-style games, tracks storage
//! (Lyapunov) functions along trajectories, and certifies global asymptotic
//! stability of Nash equilibria through eigenvalue feasibility tests over
//! convex-hull, conic-hull, and box descriptions of the payoff Jacobian.

pub mod certify;
pub mod edm;
pub mod error;
pub mod games;
pub mod geometry;
pub mod linalg;
pub mod pdm;
pub mod sampling;
pub mod scenario;
pub mod sim;

pub use error::Error;
