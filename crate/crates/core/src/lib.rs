//! M-estimation of linear-model coefficients under convex losses, together
//! with the numerical diagnostics needed to check when such estimates are
//! strongly consistent: score increment and identification bounds, leverage
//! decay of the design, Bennett tail bounds, weighted strong laws, and Monte
//! Carlo consistency sweeps.

pub mod design;
pub mod error;
pub mod harness;
pub mod losses;
pub mod probability;
pub mod quadrature;
pub mod seed;
pub mod solver;

pub use design::{Design, DesignGenSpec, DesignSummary, NormalizedDesign};
pub use error::{Error, Result};
pub use losses::ConvexLoss;
pub use probability::ErrorDistribution;
pub use solver::{FitResult, SolverOpts};
