//! Learning-dynamics laboratory for softmax-output models.
//!
//! The crate is organised around the one-step influence decomposition
//! `Δlog π(χ_o) = −η · A(χ_o) · K(χ_o, χ_u) · G(χ_u) + O(η²)`:
//!
//! * [`prob`]: stable softmax machinery and the prediction-dependent matrix `A = I − 1πᵀ`.
//! * [`losses`]: SFT and preference losses (DPO, IPO, SLiC, SPPO) with their
//!   residuals `G` and a central-difference oracle.
//! * [`squeeze`]: the squeezing effect of a negative gradient on a logistic-regression readout.
//! * [`models`]: hand-differentiated toy models with closed-form logit Jacobians, plus MNIST IDX ingestion.
//! * [`dynamics`]: empirical NTK blocks, predicted vs measured `Δlog π`, remainder-order checks, LBK and SignDelta.
//! * [`probing`]: toy preference datasets, probe taxonomy, SFT/DPO/extend training drivers and traces,
//!   and the MNIST accumulated-influence experiment.

pub mod dynamics;
pub mod error;
pub mod losses;
pub mod models;
pub mod prob;
pub mod probing;
pub mod rng;
pub mod squeeze;

pub use error::{Error, Result};

/// Version string echoed into run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
