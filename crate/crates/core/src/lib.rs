//! Neural-ODE digital twins of dynamical systems, with a behavioral model of
//! analogue memristor-crossbar inference and a speed/energy projection.

pub mod analogue;
pub mod baselines;
pub mod dynamics;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod metrics;
pub mod nn;
pub mod odesolve;
pub mod par;
pub mod projection;
pub mod rng;
pub mod training;
pub mod trajectory;

pub use error::{Error, Result};
pub use trajectory::Trajectory;
