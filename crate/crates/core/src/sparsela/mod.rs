//! Sparse storage, block factorization, FGMRES and the Kronecker stage operator.

mod csr;
mod kronecker;
mod krylov;
mod lu;

pub use csr::SparseMatrix;
pub use kronecker::{KroneckerStageOperator, StageMatrices};
pub use krylov::{
    fgmres, fgmres_with, FgmresWorkspace, KrylovOutcome, KrylovSettings, LinearOperator,
    Preconditioner,
};
pub use lu::{reverse_cuthill_mckee, BlockFactorization, SINGULAR_PIVOT_TOL};

/// Factorizes the single-stage block `alpha M + dt K`.
pub fn factorize_block(
    mass: &SparseMatrix,
    stiffness: &SparseMatrix,
    alpha: f64,
    dt: f64,
) -> crate::error::Result<BlockFactorization> {
    BlockFactorization::for_block(mass, stiffness, alpha, dt)
}
