//! Linear-Gaussian trajectory models for destination-directed and guided
//! motion.
//!
//! * [`markov`]: Markov motion models (NCV included) and their backward
//!   aggregates `M_{N|k}`, `C_{N|k}`.
//! * [`cml`]: Markov-induced CM_L models for trajectories with a known
//!   destination density, with arbitrary endpoint densities.
//! * [`guided`]: an object chasing a moving guide, with the guide either
//!   Markov or destination-directed, assembled into one stacked Markov model.
//! * [`estimation`]: exact joint Kalman filtering, n-step prediction and NEES.
//! * [`oracle`]: dense joint-Gaussian ground truth for small instances.
//! * [`montecarlo`]: seeded streams and the (optionally parallel) run driver.

pub mod cml;
pub mod error;
pub mod estimation;
pub mod guided;
pub mod linalg;
pub mod markov;
pub mod montecarlo;
pub mod oracle;

pub use error::{Error, Result};
pub use linalg::{Mat, Vector};
