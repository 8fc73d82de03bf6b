//! Finite-difference solver and verification harness for weighted
//! volume-constrained free boundary problems on the unit ball: minimize the
//! weighted Dirichlet energy over nonnegative fields with prescribed weighted
//! measure of the positivity set, via penalization of the measure excess, and
//! verify the structural properties of the minimizers (boundedness,
//! subsolution property, harmonicity on the positivity set, Harnack ratios,
//! Campanato/Holder decay, measure attainment for small penalty parameters).

pub mod cli;
pub mod elliptic;
pub mod error;
pub mod grid;
pub mod levelset;
pub mod penalized;
pub mod quad;
pub mod regularity;
pub mod weights;

pub use elliptic::{
    assemble, estimate_poincare, harmonic_replacement, harnack_ratio, solve_dirichlet,
    RegularityConstants, SolverParams, StencilOperator,
};
pub use error::{Error, Result};
pub use grid::{
    build_grid, dirichlet_energy, positivity_measure, sample_boundary, BoundaryData, BoundarySpec,
    Grid, NodeClass, ScalarField,
};
pub use penalized::{
    evaluate_j, f_eps, initial_guess_vr, minimize_penalized, sweep_epsilon, truncate, Algorithm,
    EnergyBreakdown, MinimizeConfig, PenaltyParams, SolveReport,
};
pub use regularity::{
    campanato_decay, compute_constants, extract_free_boundary, holder_seminorm,
    verify_harnack_on_solution, CampanatoMode, CampanatoTrace, FreeBoundary,
};
pub use weights::{
    build_weight_field, check_admissibility, estimate_a2, eval_weight, weighted_measure, A2Report,
    BallSampler, WeightFamily, WeightField, WeightSpec, ZPrimitive,
};
