//! Shared fixtures for the stage-solver benchmarks.

use std::sync::Arc;

use rkstage::precond::SystemForm;
use rkstage::problems::{
    assemble_heat, heat_mms, ManufacturedSolution, ModelProblem, StructuredGrid,
};
use rkstage::sparsela::{KroneckerStageOperator, SparseMatrix};
use rkstage::stepper::{assemble_linear_stage_system, LinearProblem};
use rkstage::tableaux::ButcherTableau;

/// Mass and stiffness of the 2D Q1 heat problem on an `n x n` grid.
pub fn heat_2d(n: usize) -> (Arc<SparseMatrix>, Arc<SparseMatrix>) {
    let ops = assemble_heat(&StructuredGrid::new(2, n).expect("valid grid"));
    (Arc::new(ops.mass), Arc::new(ops.stiffness))
}

/// Manufactured-solution heat problem with Dirichlet data on the whole boundary.
pub fn heat_2d_mms(n: usize) -> ModelProblem {
    let grid = StructuredGrid::new(2, n).expect("valid grid");
    heat_mms(grid, ManufacturedSolution::decaying_sine_cosine()).expect("model problem")
}

/// Deterministic, non-trivial vector of length `len`.
pub fn probe_vector(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| ((i * 7919) % 1009) as f64 / 1009.0 - 0.5)
        .collect()
}

/// Stage operator and right-hand side of the 2D heat problem with `dt = 1/n`.
pub fn heat_stage_system(
    tab: &ButcherTableau,
    n: usize,
    form: SystemForm,
) -> (KroneckerStageOperator, Vec<f64>) {
    let (m, k) = heat_2d(n);
    let dim = m.nrows();
    let problem =
        LinearProblem::new((*m).clone(), (*k).clone()).with_load(|t, out| out.fill(1.0 + t));
    assemble_linear_stage_system(&problem, tab, &probe_vector(dim), 0.0, 1.0 / n as f64, form)
        .expect("stage system")
}
