//! Implicit Runge–Kutta time stepping for method-of-lines problems.
//!
//! Fully implicit stage systems are solved matrix-free with FGMRES and block
//! triangular preconditioners built from the Butcher matrix; DIRK methods
//! solve one stage at a time.

pub mod bcs;
pub mod error;
pub mod experiments;
pub mod precond;
pub mod problems;
pub mod quadrature;
pub mod sparsela;
pub mod stepper;
pub mod tableaux;

pub use bcs::{BcMethod, DirichletBC};
pub use error::{Error, Result};
pub use precond::{PreconditionerKind, StagePreconditioner, SystemForm};
pub use sparsela::{KroneckerStageOperator, KrylovSettings, SparseMatrix};
pub use stepper::{
    AdvanceReport, ExplicitOde, LinearProblem, NewtonSettings, SemidiscreteProblem,
    StageFormulation, StepReport, TimeStepper,
};
pub use tableaux::ButcherTableau;
