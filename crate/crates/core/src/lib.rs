//! Numerical toolkit for transverse exponential stability of invariant
//! manifolds.
//!
//! * [`ode`]: fixed-step RK4 flows, finite-difference Jacobians and the
//!   variational equation.
//! * [`transverse`]: `(e, x)`-systems, their transversally linear flow, the
//!   integrated contraction metric and its matrix-inequality residual.
//! * [`incremental`]: incremental stability as a special case of the above.
//! * [`observer`]: detectability probes, Riemannian observer gains and the
//!   planar oscillator example.
//! * [`sync`]: distributed synchronization of identical agents.
//! * [`riemann`]: path lengths, geodesics and distances under a metric field.
//! * [`registry`]: the named built-in systems used by the experiment runner.

pub mod error;
pub mod incremental;
pub mod linalg;
pub mod observer;
pub mod ode;
pub mod registry;
pub mod riemann;
pub mod sync;
pub mod transverse;

pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
pub use ode::{FundamentalMatrixPath, Trajectory, VectorField};
pub use transverse::{DecayEstimate, MetricField, TransverseSystem};
