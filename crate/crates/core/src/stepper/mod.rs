//! One-step drivers for Runge–Kutta stage systems.
//!
//! The residual convention is `G(t, u, u') = 0`; a linear problem reads
//! `M u' + K u - f(t) = 0`.

mod problem;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

pub use problem::{ExplicitOde, LinearProblem, SemidiscreteProblem};

use crate::bcs::{constrain_stage_system, stage_bc_values, BcMethod, StageBoundaryValues};
use crate::error::{Error, Result};
use crate::precond::{PreconditionerKind, StagePreconditioner, SystemForm};
use crate::sparsela::{
    fgmres_with, BlockFactorization, FgmresWorkspace, KroneckerStageOperator, KrylovOutcome,
    KrylovSettings, LinearOperator, Preconditioner, SparseMatrix, StageMatrices,
};
use crate::tableaux::{ldu_factor, ButcherTableau};

/// Which stage unknowns are solved for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StageFormulation {
    /// Stage derivatives `k`, operator `I (x) M + dt A (x) K`.
    StageDerivativeAI,
    /// `w = (A (x) I) k`, operator `A^{-1} (x) M + dt I (x) K`.
    StageDerivativeIA,
    /// Stage values `Y_i = u^n + dt sum_j a_ij k_j`.
    StageValue,
    /// One stage at a time for lower-triangular `A`.
    Dirk,
}

impl StageFormulation {
    pub const ALL: [StageFormulation; 4] = [
        StageFormulation::StageDerivativeAI,
        StageFormulation::StageDerivativeIA,
        StageFormulation::StageValue,
        StageFormulation::Dirk,
    ];

    /// Kronecker form of the coupled system, `None` for DIRK.
    pub fn system_form(self) -> Option<SystemForm> {
        match self {
            StageFormulation::StageDerivativeAI => Some(SystemForm::AI),
            StageFormulation::StageDerivativeIA | StageFormulation::StageValue => {
                Some(SystemForm::IA)
            }
            StageFormulation::Dirk => None,
        }
    }

    pub fn check(self, tab: &ButcherTableau) -> Result<()> {
        match self {
            StageFormulation::StageDerivativeAI => Ok(()),
            StageFormulation::StageDerivativeIA | StageFormulation::StageValue => {
                if tab.is_invertible() {
                    Ok(())
                } else {
                    Err(Error::Formulation(format!(
                        "{self} needs an invertible A; {} is singular",
                        tab.name
                    )))
                }
            }
            StageFormulation::Dirk => {
                if tab.is_lower_triangular() {
                    Ok(())
                } else {
                    Err(Error::Formulation(format!(
                        "{} is not lower triangular",
                        tab.name
                    )))
                }
            }
        }
    }
}

impl fmt::Display for StageFormulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StageFormulation::StageDerivativeAI => "deriv-ai",
            StageFormulation::StageDerivativeIA => "deriv-ia",
            StageFormulation::StageValue => "value",
            StageFormulation::Dirk => "dirk",
        })
    }
}

impl FromStr for StageFormulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "deriv-ai" | "deriv" | "ai" => Ok(StageFormulation::StageDerivativeAI),
            "deriv-ia" | "ia" => Ok(StageFormulation::StageDerivativeIA),
            "value" => Ok(StageFormulation::StageValue),
            "dirk" => Ok(StageFormulation::Dirk),
            other => Err(Error::InvalidSettings(format!(
                "unknown stage type `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonSettings {
    pub rtol: f64,
    pub atol: f64,
    pub maxit: usize,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        NewtonSettings {
            rtol: 1e-10,
            atol: 1e-12,
            maxit: 50,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepReport {
    pub newton_iters: usize,
    /// FGMRES iterations summed over every linear solve of the step.
    pub krylov_iters: usize,
    pub linear_solves: usize,
    pub final_residual: f64,
    /// Nonlinear residual norms, one per Newton iterate.
    pub newton_history: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct AdvanceReport {
    pub steps: usize,
    pub newton_iters: usize,
    pub krylov_iters: usize,
    pub linear_solves: usize,
    pub reports: Vec<StepReport>,
}

impl AdvanceReport {
    fn push(&mut self, r: StepReport) {
        self.steps += 1;
        self.newton_iters += r.newton_iters;
        self.krylov_iters += r.krylov_iters;
        self.linear_solves += r.linear_solves;
        self.reports.push(r);
    }

    /// Mean FGMRES iterations per linear solve.
    pub fn mean_krylov_iters(&self) -> f64 {
        if self.linear_solves == 0 {
            0.0
        } else {
            self.krylov_iters as f64 / self.linear_solves as f64
        }
    }
}

/// Coupled linear stage system for `form`, unknowns `k` (AI) or `w` (IA).
pub fn assemble_linear_stage_system(
    problem: &dyn SemidiscreteProblem,
    tab: &ButcherTableau,
    u_n: &[f64],
    t: f64,
    dt: f64,
    form: SystemForm,
) -> Result<(KroneckerStageOperator, Vec<f64>)> {
    let (mass, stiffness) = problem.linear_parts().ok_or(Error::NotLinear)?;
    check_len(problem.dim(), u_n.len())?;
    let s = tab.stages();
    let (c1, c2) = match form {
        SystemForm::AI => (DMatrix::identity(s, s), tab.a.clone()),
        SystemForm::IA => (tab.a_inverse()?, DMatrix::identity(s, s)),
    };
    let ku = stiffness.spmv(u_n)?;
    let m = u_n.len();
    let mut rhs = vec![0.0; s * m];
    for (i, ci) in tab.c.iter().enumerate() {
        let block = &mut rhs[i * m..(i + 1) * m];
        problem.load(t + ci * dt, block);
        for (r, k) in block.iter_mut().zip(&ku) {
            *r -= k;
        }
    }
    let op = KroneckerStageOperator::new(c1, c2, StageMatrices::shared(mass, stiffness)?, dt)?;
    Ok((op, rhs))
}

/// Linear system in the stage values `Y`:
/// `(A^{-1} (x) M + dt I (x) K) Y = dt f + (A^{-1} 1) (x) M u^n`.
pub fn assemble_stage_value_system(
    problem: &dyn SemidiscreteProblem,
    tab: &ButcherTableau,
    u_n: &[f64],
    t: f64,
    dt: f64,
) -> Result<(KroneckerStageOperator, Vec<f64>)> {
    let (mass, stiffness) = problem.linear_parts().ok_or(Error::NotLinear)?;
    check_len(problem.dim(), u_n.len())?;
    let s = tab.stages();
    let a_inv = tab.a_inverse()?;
    let mu = mass.spmv(u_n)?;
    let m = u_n.len();
    let mut rhs = vec![0.0; s * m];
    for i in 0..s {
        let row_sum: f64 = a_inv.row(i).sum();
        let block = &mut rhs[i * m..(i + 1) * m];
        problem.load(t + tab.c[i] * dt, block);
        for (r, mu) in block.iter_mut().zip(&mu) {
            *r = dt * *r + row_sum * mu;
        }
    }
    let op = KroneckerStageOperator::new(
        a_inv,
        DMatrix::identity(s, s),
        StageMatrices::shared(mass, stiffness)?,
        dt,
    )?;
    Ok((op, rhs))
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// Constrained rows are identity rows, so their exact solution is the
/// right-hand side.
fn pin_constrained(x: &mut [f64], rhs: &[f64], mask: &[bool]) {
    for ((xi, ri), &c) in x.iter_mut().zip(rhs).zip(mask) {
        if c {
            *xi = *ri;
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

struct CoupledCache {
    dt: f64,
    form: SystemForm,
    kind: PreconditionerKind,
    dofs: Vec<usize>,
    pc: StagePreconditioner,
}

struct DirkBlock {
    diag: f64,
    dt: f64,
    dofs: Vec<usize>,
    factor: BlockFactorization,
}

/// Advances `u` by constant steps of size `dt`.
pub struct TimeStepper {
    tableau: ButcherTableau,
    formulation: StageFormulation,
    bc_method: BcMethod,
    dt: f64,
    t_start: f64,
    step_index: usize,
    u: Vec<f64>,
    krylov: KrylovSettings,
    pc_kind: Option<PreconditionerKind>,
    newton: NewtonSettings,
    warm_start: bool,
    a_inv: Option<DMatrix<f64>>,
    update_weights: Option<DVector<f64>>,
    coupled_cache: Option<CoupledCache>,
    dirk_cache: Vec<DirkBlock>,
    last_stages: Option<Vec<f64>>,
    workspace: FgmresWorkspace,
}

impl fmt::Debug for TimeStepper {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TimeStepper")
            .field("tableau", &self.tableau.name)
            .field("formulation", &self.formulation)
            .field("bc_method", &self.bc_method)
            .field("dt", &self.dt)
            .field("t", &self.time())
            .field("pc_kind", &self.pc_kind)
            .finish_non_exhaustive()
    }
}

impl TimeStepper {
    pub fn new(
        tableau: ButcherTableau,
        formulation: StageFormulation,
        t0: f64,
        dt: f64,
        u0: Vec<f64>,
    ) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidSettings(format!(
                "dt must be positive, got {dt}"
            )));
        }
        if !t0.is_finite() || u0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSettings(
                "initial time and state must be finite".into(),
            ));
        }
        formulation.check(&tableau)?;
        let a_inv = tableau.a_inverse().ok();
        let update_weights = tableau.value_update_weights().ok();
        let pc_kind = if a_inv.is_some() && ldu_factor(&tableau).is_ok() {
            PreconditionerKind::RanaLD
        } else {
            PreconditionerKind::BlockLower
        };
        Ok(TimeStepper {
            tableau,
            formulation,
            bc_method: BcMethod::default(),
            dt,
            t_start: t0,
            step_index: 0,
            u: u0,
            krylov: KrylovSettings::default(),
            pc_kind: Some(pc_kind),
            newton: NewtonSettings::default(),
            warm_start: false,
            a_inv,
            update_weights,
            coupled_cache: None,
            dirk_cache: Vec::new(),
            last_stages: None,
            workspace: FgmresWorkspace::new(),
        })
    }

    pub fn with_bc_method(mut self, method: BcMethod) -> Self {
        self.bc_method = method;
        self
    }

    pub fn with_krylov(mut self, settings: KrylovSettings) -> Result<Self> {
        settings.validate()?;
        self.krylov = settings;
        Ok(self)
    }

    pub fn with_preconditioner(mut self, kind: Option<PreconditionerKind>) -> Self {
        self.pc_kind = kind;
        self.coupled_cache = None;
        self
    }

    pub fn with_newton(mut self, settings: NewtonSettings) -> Self {
        self.newton = settings;
        self
    }

    /// Seeds each coupled linear solve with the previous step's stages.
    pub fn with_warm_start(mut self, on: bool) -> Self {
        self.warm_start = on;
        self
    }

    pub fn tableau(&self) -> &ButcherTableau {
        &self.tableau
    }

    pub fn formulation(&self) -> StageFormulation {
        self.formulation
    }

    pub fn bc_method(&self) -> BcMethod {
        self.bc_method
    }

    pub fn preconditioner(&self) -> Option<PreconditionerKind> {
        self.pc_kind
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn time(&self) -> f64 {
        self.t_start + self.step_index as f64 * self.dt
    }

    pub fn state(&self) -> &[f64] {
        &self.u
    }

    /// Stage unknowns of the last coupled step, stacked by stage.
    pub fn last_stages(&self) -> Option<&[f64]> {
        self.last_stages.as_deref()
    }

    pub fn set_dt(&mut self, dt: f64) -> Result<()> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidSettings(format!(
                "dt must be positive, got {dt}"
            )));
        }
        self.t_start = self.time();
        self.step_index = 0;
        self.dt = dt;
        Ok(())
    }

    /// One step of size `dt`, dispatching on formulation and linearity.
    pub fn step(&mut self, problem: &dyn SemidiscreteProblem) -> Result<StepReport> {
        match self.formulation {
            StageFormulation::Dirk => self.step_dirk(problem),
            _ if problem.linear_parts().is_some() => self.step_linear(problem),
            _ => self.step_newton(problem),
        }
    }

    fn commit(&mut self, u_next: Vec<f64>) {
        self.u = u_next;
        self.step_index += 1;
    }

    fn boundary_values(
        &self,
        problem: &dyn SemidiscreteProblem,
        dt: f64,
    ) -> Result<StageBoundaryValues> {
        match problem.dirichlet() {
            Some(bc) => stage_bc_values(
                self.bc_method,
                &self.tableau,
                bc,
                &self.u,
                self.time(),
                dt,
                self.formulation,
            ),
            None => Ok(StageBoundaryValues::empty(self.tableau.stages())),
        }
    }

    fn coupled_preconditioner(
        &mut self,
        matrices: StageMatrices,
        dt: f64,
        form: SystemForm,
        dofs: &[usize],
    ) -> Result<Option<&StagePreconditioner>> {
        let Some(kind) = self.pc_kind else {
            return Ok(None);
        };
        let hit = self
            .coupled_cache
            .as_ref()
            .is_some_and(|c| c.dt == dt && c.form == form && c.kind == kind && c.dofs == dofs);
        if !hit {
            let pc = StagePreconditioner::build_for(kind, &self.tableau, matrices, dt, form, dofs)?;
            self.coupled_cache = Some(CoupledCache {
                dt,
                form,
                kind,
                dofs: dofs.to_vec(),
                pc,
            });
        }
        Ok(self.coupled_cache.as_ref().map(|c| &c.pc))
    }

    /// Coupled stage solve for a linear problem.
    pub fn step_linear(&mut self, problem: &dyn SemidiscreteProblem) -> Result<StepReport> {
        self.step_linear_dt(problem, self.dt)
    }

    fn step_linear_dt(&mut self, problem: &dyn SemidiscreteProblem, dt: f64) -> Result<StepReport> {
        let form = self
            .formulation
            .system_form()
            .ok_or_else(|| Error::Formulation("DIRK steps go through step_dirk".into()))?;
        let (mass, stiffness) = problem.linear_parts().ok_or(Error::NotLinear)?;
        let t = self.time();
        let (op, rhs) = match self.formulation {
            StageFormulation::StageValue => {
                assemble_stage_value_system(problem, &self.tableau, &self.u, t, dt)?
            }
            _ => assemble_linear_stage_system(problem, &self.tableau, &self.u, t, dt, form)?,
        };
        let bvals = self.boundary_values(problem, dt)?;
        let system = constrain_stage_system(&op, &rhs, &bvals)?;
        let x0 = if self.warm_start {
            self.last_stages.clone().filter(|x| x.len() == rhs.len())
        } else {
            None
        };
        let matrices = StageMatrices::shared(mass, stiffness)?;
        // Take the workspace out so the cached preconditioner can stay borrowed.
        let settings = self.krylov;
        let mut ws = std::mem::take(&mut self.workspace);
        let pc = self.coupled_preconditioner(matrices, dt, form, &bvals.dofs)?;
        let solved = fgmres_with(
            &system.op,
            pc.map(|p| p as &dyn Preconditioner),
            &system.rhs,
            x0.as_deref(),
            &settings,
            &mut ws,
        );
        self.workspace = ws;
        let mut out = solved?;
        pin_constrained(&mut out.x, &system.rhs, system.op.mask());
        let u_next = self.recombine(&out.x, dt)?;
        let report = StepReport {
            krylov_iters: out.iterations,
            linear_solves: 1,
            final_residual: out.history.last().copied().unwrap_or(0.0),
            ..Default::default()
        };
        self.last_stages = Some(out.x);
        self.commit(u_next);
        Ok(report)
    }

    /// `u^{n+1}` from the stacked stage unknowns of the current formulation.
    fn recombine(&self, x: &[f64], dt: f64) -> Result<Vec<f64>> {
        let s = self.tableau.stages();
        let m = self.u.len();
        let mut u = self.u.clone();
        match self.formulation {
            StageFormulation::StageDerivativeAI | StageFormulation::Dirk => {
                for (i, bi) in self.tableau.b.iter().enumerate() {
                    if *bi != 0.0 {
                        for (uj, kj) in u.iter_mut().zip(&x[i * m..(i + 1) * m]) {
                            *uj += dt * bi * kj;
                        }
                    }
                }
            }
            StageFormulation::StageDerivativeIA => {
                let d = self.weights()?;
                for i in 0..s {
                    if d[i] != 0.0 {
                        for (uj, wj) in u.iter_mut().zip(&x[i * m..(i + 1) * m]) {
                            *uj += dt * d[i] * wj;
                        }
                    }
                }
            }
            StageFormulation::StageValue => {
                if self.tableau.is_stiffly_accurate() {
                    u.copy_from_slice(&x[(s - 1) * m..s * m]);
                } else {
                    let d = self.weights()?;
                    for i in 0..s {
                        for (j, uj) in u.iter_mut().enumerate() {
                            *uj += d[i] * (x[i * m + j] - self.u[j]);
                        }
                    }
                }
            }
        }
        Ok(u)
    }

    fn weights(&self) -> Result<&DVector<f64>> {
        self.update_weights
            .as_ref()
            .ok_or_else(|| Error::SingularTableau(self.tableau.name.clone()))
    }

    fn a_inv(&self) -> Result<&DMatrix<f64>> {
        self.a_inv
            .as_ref()
            .ok_or_else(|| Error::SingularTableau(self.tableau.name.clone()))
    }

    /// Newton on the coupled stage residual.
    pub fn step_newton(&mut self, problem: &dyn SemidiscreteProblem) -> Result<StepReport> {
        self.step_newton_dt(problem, self.dt)
    }

    fn step_newton_dt(&mut self, problem: &dyn SemidiscreteProblem, dt: f64) -> Result<StepReport> {
        let form = self
            .formulation
            .system_form()
            .ok_or_else(|| Error::Formulation("DIRK steps go through step_dirk".into()))?;
        let s = self.tableau.stages();
        let m = problem.dim();
        check_len(m, self.u.len())?;
        let t = self.time();
        let bvals = self.boundary_values(problem, dt)?;
        let mask = bvals.mask(m);
        let zero_bvals = StageBoundaryValues {
            dofs: bvals.dofs.clone(),
            values: vec![vec![0.0; bvals.dofs.len()]; s],
        };

        // k = 0 initial guess in each formulation's variables.
        let mut x = vec![0.0; s * m];
        if self.formulation == StageFormulation::StageValue {
            for i in 0..s {
                x[i * m..(i + 1) * m].copy_from_slice(&self.u);
            }
        }
        for (i, vals) in bvals.values.iter().enumerate() {
            for (&d, &v) in bvals.dofs.iter().zip(vals) {
                x[i * m + d] = v;
            }
        }

        let (c1, c2) = match form {
            SystemForm::AI => (DMatrix::identity(s, s), self.tableau.a.clone()),
            SystemForm::IA => (self.a_inv()?.clone(), DMatrix::identity(s, s)),
        };
        let times: Vec<f64> = self.tableau.c.iter().map(|c| t + c * dt).collect();
        let mut report = StepReport::default();
        let mut states = vec![0.0; s * m];
        let mut rates = vec![0.0; s * m];
        let mut residual = vec![0.0; s * m];
        let mut r0 = None;
        loop {
            self.stage_states(&x, dt, &mut states, &mut rates)?;
            for i in 0..s {
                let blk = i * m..(i + 1) * m;
                problem.residual(
                    times[i],
                    &states[blk.clone()],
                    &rates[blk.clone()],
                    &mut residual[blk],
                );
            }
            if self.formulation == StageFormulation::StageValue {
                residual.iter_mut().for_each(|r| *r *= dt);
            }
            for (r, &c) in residual.iter_mut().zip(&mask) {
                if c {
                    *r = 0.0;
                }
            }
            let rnorm = norm(&residual);
            report.newton_history.push(rnorm);
            report.final_residual = rnorm;
            if !rnorm.is_finite() {
                return Err(Error::NewtonDivergence {
                    iterations: report.newton_iters,
                    history: report.newton_history,
                });
            }
            let r0 = *r0.get_or_insert(rnorm);
            if rnorm <= (self.newton.rtol * r0).max(self.newton.atol) {
                break;
            }
            if report.newton_iters >= self.newton.maxit {
                return Err(Error::NewtonDivergence {
                    iterations: report.newton_iters,
                    history: report.newton_history,
                });
            }

            let (ms, ks): (Vec<_>, Vec<_>) = (0..s)
                .map(|i| {
                    let blk = i * m..(i + 1) * m;
                    problem.jacobians(times[i], &states[blk.clone()], &rates[blk])
                })
                .unzip();
            let matrices = StageMatrices::per_stage(ms, ks)?;
            let op = KroneckerStageOperator::new(c1.clone(), c2.clone(), matrices.clone(), dt)?;
            let neg: Vec<f64> = residual.iter().map(|r| -r).collect();
            let system = constrain_stage_system(&op, &neg, &zero_bvals)?;
            let pc = match self.pc_kind {
                Some(kind) => Some(StagePreconditioner::build_for(
                    kind,
                    &self.tableau,
                    matrices,
                    dt,
                    form,
                    &bvals.dofs,
                )?),
                None => None,
            };
            let out = fgmres_with(
                &system.op,
                pc.as_ref().map(|p| p as &dyn Preconditioner),
                &system.rhs,
                None,
                &self.krylov,
                &mut self.workspace,
            )?;
            for (xi, di) in x.iter_mut().zip(&out.x) {
                *xi += di;
            }
            report.newton_iters += 1;
            report.krylov_iters += out.iterations;
            report.linear_solves += 1;
        }
        let u_next = self.recombine(&x, dt)?;
        self.last_stages = Some(x);
        self.commit(u_next);
        Ok(report)
    }

    /// Stage states `U_i` and rates `U'_i` implied by the stage unknowns.
    fn stage_states(
        &self,
        x: &[f64],
        dt: f64,
        states: &mut [f64],
        rates: &mut [f64],
    ) -> Result<()> {
        let s = self.tableau.stages();
        let m = self.u.len();
        match self.formulation {
            StageFormulation::StageDerivativeAI | StageFormulation::Dirk => {
                rates.copy_from_slice(x);
                for i in 0..s {
                    let ui = &mut states[i * m..(i + 1) * m];
                    ui.copy_from_slice(&self.u);
                    for j in 0..s {
                        let aij = self.tableau.a[(i, j)];
                        if aij != 0.0 {
                            for (u, k) in ui.iter_mut().zip(&x[j * m..(j + 1) * m]) {
                                *u += dt * aij * k;
                            }
                        }
                    }
                }
            }
            StageFormulation::StageDerivativeIA => {
                let a_inv = self.a_inv()?;
                for (st, (w, u)) in states.iter_mut().zip(x.iter().zip(self.u.iter().cycle())) {
                    *st = u + dt * w;
                }
                for i in 0..s {
                    let ri = &mut rates[i * m..(i + 1) * m];
                    ri.iter_mut().for_each(|r| *r = 0.0);
                    for j in 0..s {
                        let c = a_inv[(i, j)];
                        for (r, w) in ri.iter_mut().zip(&x[j * m..(j + 1) * m]) {
                            *r += c * w;
                        }
                    }
                }
            }
            StageFormulation::StageValue => {
                let a_inv = self.a_inv()?;
                states.copy_from_slice(x);
                for i in 0..s {
                    let ri = &mut rates[i * m..(i + 1) * m];
                    ri.iter_mut().for_each(|r| *r = 0.0);
                    for j in 0..s {
                        let c = a_inv[(i, j)] / dt;
                        for ((r, y), u) in ri.iter_mut().zip(&x[j * m..(j + 1) * m]).zip(&self.u) {
                            *r += c * (y - u);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Sequential single-stage solves for a lower-triangular tableau.
    pub fn step_dirk(&mut self, problem: &dyn SemidiscreteProblem) -> Result<StepReport> {
        self.step_dirk_dt(problem, self.dt)
    }

    fn step_dirk_dt(&mut self, problem: &dyn SemidiscreteProblem, dt: f64) -> Result<StepReport> {
        if !self.tableau.is_lower_triangular() {
            return Err(Error::Formulation(format!(
                "{} is not lower triangular",
                self.tableau.name
            )));
        }
        let s = self.tableau.stages();
        let m = problem.dim();
        check_len(m, self.u.len())?;
        let t = self.time();
        let saved = self.formulation;
        self.formulation = StageFormulation::Dirk;
        let bvals = self.boundary_values(problem, dt);
        self.formulation = saved;
        let bvals = bvals?;
        let mut mask = bvals.mask(m);
        mask.truncate(m);
        let linear = problem.linear_parts();
        let mut ks = vec![0.0; s * m];
        let mut report = StepReport::default();
        for i in 0..s {
            let ti = t + self.tableau.c[i] * dt;
            let aii = self.tableau.a[(i, i)];
            let mut base = self.u.clone();
            for j in 0..i {
                let aij = self.tableau.a[(i, j)];
                if aij != 0.0 {
                    for (b, k) in base.iter_mut().zip(&ks[j * m..(j + 1) * m]) {
                        *b += dt * aij * k;
                    }
                }
            }
            let stage_bc = StageBoundaryValues {
                dofs: bvals.dofs.clone(),
                values: vec![bvals.values[i].clone()],
            };
            let ki = match &linear {
                Some((mass, stiffness)) => {
                    let block = SparseMatrix::linear_combination(1.0, mass, dt * aii, stiffness)?;
                    let mut rhs = stiffness.spmv(&base)?;
                    let mut f = vec![0.0; m];
                    problem.load(ti, &mut f);
                    for (r, fj) in rhs.iter_mut().zip(&f) {
                        *r = fj - *r;
                    }
                    let system = constrain_stage_system(&block, &rhs, &stage_bc)?;
                    let mut out = self.dirk_solve(
                        &system.op,
                        &system.rhs,
                        &block,
                        aii,
                        dt,
                        &mask,
                        &bvals.dofs,
                        true,
                    )?;
                    pin_constrained(&mut out.x, &system.rhs, system.op.mask());
                    report.krylov_iters += out.iterations;
                    report.linear_solves += 1;
                    report.final_residual = report
                        .final_residual
                        .max(out.history.last().copied().unwrap_or(0.0));
                    out.x
                }
                None => {
                    self.dirk_newton(problem, ti, aii, dt, &base, &stage_bc, &mask, &mut report)?
                }
            };
            ks[i * m..(i + 1) * m].copy_from_slice(&ki);
        }
        let saved = self.formulation;
        self.formulation = StageFormulation::Dirk;
        let u_next = self.recombine(&ks, dt);
        self.formulation = saved;
        let u_next = u_next?;
        self.last_stages = Some(ks);
        self.commit(u_next);
        Ok(report)
    }

    #[allow(clippy::too_many_arguments)]
    fn dirk_solve(
        &mut self,
        op: &dyn LinearOperator,
        rhs: &[f64],
        block: &SparseMatrix,
        aii: f64,
        dt: f64,
        mask: &[bool],
        dofs: &[usize],
        cache: bool,
    ) -> Result<KrylovOutcome> {
        let factor = if self.pc_kind.is_none() {
            None
        } else if cache {
            let pos = self
                .dirk_cache
                .iter()
                .position(|b| b.diag == aii && b.dt == dt && b.dofs == dofs);
            let pos = match pos {
                Some(p) => p,
                None => {
                    let factor = BlockFactorization::new(&block.with_identity_on(mask))?;
                    self.dirk_cache.push(DirkBlock {
                        diag: aii,
                        dt,
                        dofs: dofs.to_vec(),
                        factor,
                    });
                    self.dirk_cache.len() - 1
                }
            };
            Some(Fresh::Cached(pos))
        } else {
            Some(Fresh::Owned(BlockFactorization::new(
                &block.with_identity_on(mask),
            )?))
        };
        let mut ws = std::mem::take(&mut self.workspace);
        let pc: Option<&dyn Preconditioner> = match &factor {
            Some(Fresh::Cached(p)) => Some(&self.dirk_cache[*p].factor),
            Some(Fresh::Owned(f)) => Some(f),
            None => None,
        };
        let out = fgmres_with(op, pc, rhs, None, &self.krylov, &mut ws);
        self.workspace = ws;
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn dirk_newton(
        &mut self,
        problem: &dyn SemidiscreteProblem,
        ti: f64,
        aii: f64,
        dt: f64,
        base: &[f64],
        stage_bc: &StageBoundaryValues,
        mask: &[bool],
        report: &mut StepReport,
    ) -> Result<Vec<f64>> {
        let m = base.len();
        let mut k = stage_bc.scatter(m);
        let zero_bc = StageBoundaryValues {
            dofs: stage_bc.dofs.clone(),
            values: vec![vec![0.0; stage_bc.dofs.len()]],
        };
        let mut state = vec![0.0; m];
        let mut residual = vec![0.0; m];
        let mut r0 = None;
        let mut iters = 0;
        loop {
            for ((st, b), kj) in state.iter_mut().zip(base).zip(&k) {
                *st = b + dt * aii * kj;
            }
            problem.residual(ti, &state, &k, &mut residual);
            for (r, &c) in residual.iter_mut().zip(mask) {
                if c {
                    *r = 0.0;
                }
            }
            let rnorm = norm(&residual);
            report.newton_history.push(rnorm);
            report.final_residual = rnorm;
            let r0 = *r0.get_or_insert(rnorm);
            if !rnorm.is_finite()
                || iters >= self.newton.maxit
                    && rnorm > (self.newton.rtol * r0).max(self.newton.atol)
            {
                return Err(Error::NewtonDivergence {
                    iterations: report.newton_iters,
                    history: std::mem::take(&mut report.newton_history),
                });
            }
            if rnorm <= (self.newton.rtol * r0).max(self.newton.atol) {
                return Ok(k);
            }
            let (jm, jk) = problem.jacobians(ti, &state, &k);
            let block = SparseMatrix::linear_combination(1.0, &jm, dt * aii, &jk)?;
            let neg: Vec<f64> = residual.iter().map(|r| -r).collect();
            let system = constrain_stage_system(&block, &neg, &zero_bc)?;
            let out = self.dirk_solve(
                &system.op,
                &system.rhs,
                &block,
                aii,
                dt,
                mask,
                &stage_bc.dofs,
                false,
            )?;
            for (kj, d) in k.iter_mut().zip(&out.x) {
                *kj += d;
            }
            iters += 1;
            report.newton_iters += 1;
            report.krylov_iters += out.iterations;
            report.linear_solves += 1;
        }
    }

    /// Steps to `t_final`, shortening the last step when `dt` does not divide
    /// the interval.
    pub fn advance(
        &mut self,
        problem: &dyn SemidiscreteProblem,
        t_final: f64,
    ) -> Result<AdvanceReport> {
        self.advance_with(problem, t_final, |_| {})
    }

    /// As [`advance`](Self::advance), calling `observe` after every step.
    pub fn advance_with(
        &mut self,
        problem: &dyn SemidiscreteProblem,
        t_final: f64,
        mut observe: impl FnMut(&TimeStepper),
    ) -> Result<AdvanceReport> {
        let t = self.time();
        if t_final.is_nan() || t_final < t {
            return Err(Error::InvalidSettings(format!(
                "t_final {t_final} precedes current time {t}"
            )));
        }
        let ratio = (t_final - t) / self.dt;
        let nearest = ratio.round();
        let tol = 64.0 * f64::EPSILON * nearest.max(1.0);
        let (full, partial) = if (ratio - nearest).abs() <= tol {
            (nearest as usize, None)
        } else {
            let full = ratio.floor() as usize;
            (full, Some(t_final - (t + full as f64 * self.dt)))
        };
        let mut agg = AdvanceReport::default();
        let fail = |agg: &AdvanceReport, e: Error| Error::StepFailed {
            completed_steps: agg.steps,
            source: Box::new(e),
        };
        for _ in 0..full {
            match self.step(problem) {
                Ok(r) => agg.push(r),
                Err(e) => return Err(fail(&agg, e)),
            }
            observe(self);
        }
        if let Some(last) = partial.filter(|h| *h > 0.0) {
            let r = match self.formulation {
                StageFormulation::Dirk => self.step_dirk_dt(problem, last),
                _ if problem.linear_parts().is_some() => self.step_linear_dt(problem, last),
                _ => self.step_newton_dt(problem, last),
            };
            match r {
                Ok(r) => agg.push(r),
                Err(e) => return Err(fail(&agg, e)),
            }
            self.t_start = t_final;
            self.step_index = 0;
            observe(self);
        } else if full > 0 {
            self.t_start = t_final;
            self.step_index = 0;
        }
        Ok(agg)
    }
}

enum Fresh {
    Cached(usize),
    Owned(BlockFactorization),
}
