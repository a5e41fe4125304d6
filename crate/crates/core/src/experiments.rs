//! Drivers for the standard experiments: boundary-condition contrast,
//! convergence sweeps and preconditioner iteration counts.

use std::time::Instant;

use crate::bcs::BcMethod;
use crate::error::Result;
use crate::precond::PreconditionerKind;
use crate::problems::{
    heat_mms, incompatible_heat_1d, ManufacturedSolution, OdeTestProblem, StructuredGrid,
};
use crate::sparsela::KrylovSettings;
use crate::stepper::{StageFormulation, TimeStepper};
use crate::tableaux::ButcherTableau;

/// `log(e_i / e_{i+1}) / log(h_i / h_{i+1})` for consecutive pairs.
pub fn observed_orders(h: &[f64], err: &[f64]) -> Vec<f64> {
    h.windows(2)
        .zip(err.windows(2))
        .map(|(h, e)| (e[0] / e[1]).ln() / (h[0] / h[1]).ln())
        .collect()
}

/// Order over the whole sweep, from the first and last points.
pub fn overall_order(h: &[f64], err: &[f64]) -> f64 {
    let (n0, n1) = (0, h.len() - 1);
    (err[n0] / err[n1]).ln() / (h[n0] / h[n1]).ln()
}

/// Max-norm error at `t_final` for each step size.
pub fn ode_errors(
    tab: &ButcherTableau,
    formulation: StageFormulation,
    make: impl Fn() -> OdeTestProblem,
    dts: &[f64],
    t_final: f64,
    krylov: KrylovSettings,
) -> Result<Vec<f64>> {
    dts.iter()
        .map(|&dt| {
            let p = make();
            let mut st = TimeStepper::new(tab.clone(), formulation, p.t0, dt, p.y0.clone())?
                .with_krylov(krylov)?;
            st.advance(p.problem.as_ref(), t_final)?;
            let exact = p.exact(t_final).expect("test problem with exact solution");
            Ok(st
                .state()
                .iter()
                .zip(&exact)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max))
        })
        .collect()
}

/// `(t, ||u||_{L2})` after every step of the ten-interval problem with
/// incompatible boundary data, starting with `t = 0`.
pub fn bc_compare(
    tab: &ButcherTableau,
    formulation: StageFormulation,
    method: BcMethod,
    dt: f64,
    t_final: f64,
    krylov: KrylovSettings,
) -> Result<Vec<(f64, f64)>> {
    let p = incompatible_heat_1d();
    let mut st = TimeStepper::new(tab.clone(), formulation, 0.0, dt, p.initial.clone())?
        .with_bc_method(method)
        .with_krylov(krylov)?;
    let mut rows = vec![(0.0, p.l2_norm(&p.initial))];
    st.advance_with(&p.problem, t_final, |s| {
        rows.push((s.time(), p.l2_norm(s.state())))
    })?;
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialError {
    pub n: usize,
    pub l2: f64,
    pub h1: f64,
}

/// Errors at `t_final` for the heat problem driven by `mms` with
/// `dt = dt_scale / N`.
pub fn spatial_convergence_run(
    tab: &ButcherTableau,
    formulation: StageFormulation,
    mms: ManufacturedSolution,
    n: usize,
    dt_scale: f64,
    t_final: f64,
    krylov: KrylovSettings,
) -> Result<SpatialError> {
    let grid = StructuredGrid::new(mms.dim, n)?;
    let p = heat_mms(grid, mms)?;
    let dt = dt_scale / n as f64;
    let mut st = TimeStepper::new(tab.clone(), formulation, 0.0, dt, p.initial.clone())?
        .with_krylov(krylov)?;
    st.advance(&p.problem, t_final)?;
    Ok(SpatialError {
        n,
        l2: mms.l2_error(&grid, st.state(), t_final),
        h1: mms.h1_error(&grid, st.state(), t_final),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecondRun {
    pub stages: usize,
    /// Mean FGMRES iterations per linear solve.
    pub mean_iterations: f64,
    pub step_seconds: f64,
    pub setup_seconds: f64,
}

/// Steps the 2D heat problem on an `n x n` grid with `dt = 1/n`.
pub fn precond_run(
    tab: &ButcherTableau,
    formulation: StageFormulation,
    kind: Option<PreconditionerKind>,
    n: usize,
    steps: usize,
    krylov: KrylovSettings,
) -> Result<PrecondRun> {
    let setup = Instant::now();
    let grid = StructuredGrid::new(2, n)?;
    let p = heat_mms(grid, ManufacturedSolution::decaying_sine_cosine())?;
    let dt = grid.h();
    let mut st = TimeStepper::new(tab.clone(), formulation, 0.0, dt, p.initial.clone())?
        .with_krylov(krylov)?
        .with_preconditioner(kind);
    let setup_seconds = setup.elapsed().as_secs_f64();
    let clock = Instant::now();
    let mut iterations = 0;
    let mut solves = 0;
    for _ in 0..steps {
        let r = st.step(&p.problem)?;
        iterations += r.krylov_iters;
        solves += r.linear_solves;
    }
    Ok(PrecondRun {
        stages: tab.stages(),
        mean_iterations: iterations as f64 / solves.max(1) as f64,
        step_seconds: clock.elapsed().as_secs_f64(),
        setup_seconds,
    })
}
