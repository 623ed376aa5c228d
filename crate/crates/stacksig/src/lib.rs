//! Stackelberg equilibria of finite-horizon multi-stage Gaussian signaling
//! games, covering strategic communication (an information provider shapes
//! what a decision maker learns) and strategic control (a sensor shapes what
//! a controller learns).
//!
//! The sender commits to signaling rules ahead of play; the receiver best
//! responds. With quadratic costs and a Gauss-Markov state, the equilibrium
//! is computed by
//!
//! 1. reducing the sender's functional problem to a chained semidefinite
//!    program over posterior covariances ([`sdp`]),
//! 2. rounding the solution onto its idempotent extreme-point structure and
//!    synthesizing memoryless linear sender policies ([`policy`]),
//! 3. in the control setting, first transforming the game into an equivalent
//!    communication game over the uncontrolled virtual state ([`control`]),
//!
//! with a brute-force oracle ([`oracle`]), exact second-moment evaluation
//! ([`moments`]), and Monte Carlo simulation ([`sim`]) verifying every step.

pub mod error;
pub mod control;
pub mod matops;
pub mod model;
pub mod moments;
pub mod posterior;
pub mod randgen;
pub mod oracle;
pub mod policy;
pub mod sdp;
pub mod sim;
pub mod verify;

pub use error::{Error, Result};
