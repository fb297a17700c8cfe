//! Exact and approximate leave-one-out cross-validation for ℓ1/ℓ2-regularized
//! generalized linear models.
//!
//! The crate is `no_std` (with `alloc`): every routine is a pure function of
//! its inputs, and file IO, timing and the command line live in the companion
//! `aloo-cli` crate.
//!
//! Module map:
//!
//! * [`glm`]: datasets, families, regularizers, losses and derivatives.
//! * [`l1`]: coordinate-descent / IRLS solver for ℓ1 problems.
//! * [`smooth`]: Newton solver for ℓ2 and smoothed-ℓ1 problems.
//! * [`exact`]: exact LOOCV and subsampled CV.
//! * [`approx`]: Newton-step and infinitesimal-jackknife approximations,
//!   full-dimensional and support-restricted.
//! * [`lissa`]: stochastic inverse-Hessian-vector products.
//! * [`audit`]: support-stability and incoherence diagnostics.
//! * [`synth`]: counter-based synthetic data.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod approx;
pub mod audit;
pub mod design;
mod error;
pub mod exact;
pub mod glm;
pub mod hessian;
pub mod l1;
pub mod linalg;
pub mod lissa;
pub(crate) mod math;
pub mod smooth;
pub mod synth;
pub use approx::{aloo_estimate, ij_full, ij_restricted, ns_full, ns_restricted, percent_error, HessianFactor};
pub use design::{CscMatrix, Design};
pub use error::{Error, Result};
pub use exact::{
    assemble_exact, assemble_subsampled, exact_loocv, loo_refit, sample_folds, subsampled_cv, ExactLoo, LooMethod,
    LooRefitter, LooSet, SubsampledCv,
};
pub use glm::{
    loss_d1_d2, loss_value, objective_gradient, objective_value, restricted_hessian, Dataset, FitResult, GlmFamily,
    Penalty, Regularizer,
};
pub use l1::{fit_l1, fit_l1_excluding, kkt_violation, soft_threshold, support_of, SolverConfig};
pub use linalg::DenseMatrix;
pub use lissa::{ij_full_lissa, lissa_inverse_hvp, LissaConfig};
pub use smooth::{fit_smooth, fit_smooth_excluding};
pub use synth::{gen_design, gen_responses, gen_theta_star, ThetaMode};
