//! Guaranteed domain-of-attraction estimation for discrete-time
//! nonlinear plants.
//!
//! Given a plant `x(k+1) = f(x(k), u(k))`, a compact state-control
//! constraint box and a Lyapunov candidate, the library computes an inner
//! approximation of the set of state-control pairs that is both
//! negative-definite (the Lyapunov difference drops by a margin) and
//! invariant (images stay inside the estimate's state projection plus an
//! origin neighborhood handled by a linear gain). The projection of that
//! set, enlarged by the origin neighborhood, is a certified estimate of
//! the closed-loop domain of attraction; any selection from the set is a
//! stabilizing controller. A particle-swarm search over a family of
//! sum-of-squares Lyapunov candidates maximizes the estimate's volume.

pub mod config;
pub mod control;
pub mod doa;
pub mod error;
pub mod expr;
pub mod interval;
pub mod lyapopt;
pub mod paving;
pub mod report;
pub mod sivia;

pub use error::{Error, Result};
pub use expr::{ExprAst, PlantModel};
pub use interval::{Interval, IvBox};
pub use paving::{Paving, PavingFile};
pub use sivia::{SiviaResult, SiviaTarget};
