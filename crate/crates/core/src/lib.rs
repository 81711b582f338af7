//! Numerical toolkit for the generalized principle of linearized stability.
//!
//! The crate classifies equilibria that lie on manifolds of equilibria as
//! normally stable or normally hyperbolic, builds the normal-form reduction
//! around them, and checks convergence behavior on a set of reference
//! problems:
//!
//! * [`spectral`]: dense eigenvalues, ordered real Schur form, spectral
//!   projections and the semi-simplicity test for the zero eigenvalue.
//! * [`normal_form`]: linearization, classification, the graph map over the
//!   center subspace and normal-form coordinates.
//! * [`ode`]: adaptive integration and convergence diagnostics.
//! * [`builtin`]: planar reference systems and a normally hyperbolic 3-D field.
//! * [`wave`]: quasilinear bistable traveling waves (shooting, spectrum,
//!   convergence to a translate).
//! * [`ms`]: per-mode spectral checks of the linearized Mullins-Sekerka
//!   operator around a circle.

pub mod builtin;
pub mod linalg;
pub mod ms;
pub mod normal_form;
pub mod ode;
pub mod quad;
pub mod spectral;
pub mod wave;

pub use normal_form::{ManifoldChart, VectorFieldSpec};
pub use spectral::SquareMatrix;
