//! Invariance analysis and simulation of stochastic differential equations.
//!
//! A system `dX = f(t, X) dt + g(t, X) dW` leaves a box (or cone, or
//! polyhedron) invariant exactly when, on each boundary face, the drift
//! points inward and the diffusion has no normal component. The
//! [`invariance`] checkers evaluate those conditions on sampled face points;
//! [`integrate`] and [`montecarlo`] measure what finite-step simulation
//! actually does; [`convert`] moves systems between the Itô and
//! Stratonovich readings; [`models`] ships the Hodgkin-Huxley family used as
//! the worked example.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod convert;
pub mod error;
pub mod integrate;
pub mod invariance;
pub mod models;
pub mod montecarlo;
pub mod sampling;
pub mod system;

pub use convert::{correction, ito_to_stratonovich, stratonovich_to_ito, JacobianPolicy};
pub use error::{Error, FieldKind, Result};
pub use integrate::{
    simulate, simulate_deterministic, simulate_partial, simulate_path, ClampPolicy, Scheme, SimConfig, WienerGrid,
};
pub use invariance::{
    check_box, check_comparison, check_polyhedron, check_positivity, CheckConfig, CheckReport, Quantity, Side, Verdict,
};
pub use models::{build_model, hh_metadata, hh_system, Gate, HHParams, ModelOptions, NoiseSpec};
pub use montecarlo::{compare_interpretations, run_ensemble, run_ensemble_with, EnsembleOptions, EnsembleStats};
pub use system::{Bound, BoxRegion, HalfSpace, Interpretation, Matrix, Polyhedron, SdeSystem, TimeGrid, Trajectory};
