//! Entropic optimal transport along the cost scale `ε`, computed by integrating the
//! well-posed ODE satisfied by the optimal dual potentials.

pub mod derivatives;
pub mod dual;
pub mod error;
pub mod families;
pub mod kernels;
pub mod linalg;
pub mod ode;
pub mod problem;
pub mod sinkhorn;

pub use dual::{DualModel, GenericDual, LocalModel};
pub use error::{Error, Result};
pub use problem::{Family, Problem};
