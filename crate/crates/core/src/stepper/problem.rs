use std::fmt;
use std::sync::Arc;

use crate::bcs::DirichletBC;
use crate::sparsela::SparseMatrix;

/// Semidiscrete system in implicit form `G(t, u, u') = 0`.
///
/// Linear problems have `G = M u' + K u - f(t)` and expose `M`, `K` and `f`
/// through [`linear_parts`](Self::linear_parts) and [`load`](Self::load).
pub trait SemidiscreteProblem {
    /// Spatial dof count `m`.
    fn dim(&self) -> usize;

    fn residual(&self, t: f64, u: &[f64], udot: &[f64], out: &mut [f64]);

    /// `(dG/du', dG/du)` at the given state.
    fn jacobians(&self, t: f64, u: &[f64], udot: &[f64]) -> (Arc<SparseMatrix>, Arc<SparseMatrix>);

    /// `(M, K)` when the problem is linear with constant coefficients.
    fn linear_parts(&self) -> Option<(Arc<SparseMatrix>, Arc<SparseMatrix>)> {
        None
    }

    /// Load vector `f(t)`; only consulted for linear problems.
    fn load(&self, _t: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
    }

    fn dirichlet(&self) -> Option<&DirichletBC> {
        None
    }
}

type LoadFn = Box<dyn Fn(f64, &mut [f64]) + Send + Sync>;

/// `M u' + K u = f(t)` with optional Dirichlet data.
pub struct LinearProblem {
    mass: Arc<SparseMatrix>,
    stiffness: Arc<SparseMatrix>,
    load: Option<LoadFn>,
    dirichlet: Option<DirichletBC>,
}

impl fmt::Debug for LinearProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinearProblem")
            .field("dim", &self.mass.nrows())
            .field("has_load", &self.load.is_some())
            .field("dirichlet", &self.dirichlet)
            .finish()
    }
}

impl LinearProblem {
    pub fn new(mass: SparseMatrix, stiffness: SparseMatrix) -> Self {
        assert_eq!(mass.nrows(), mass.ncols(), "mass matrix must be square");
        assert_eq!(
            (mass.nrows(), mass.ncols()),
            (stiffness.nrows(), stiffness.ncols()),
            "mass and stiffness must have the same shape"
        );
        LinearProblem {
            mass: Arc::new(mass),
            stiffness: Arc::new(stiffness),
            load: None,
            dirichlet: None,
        }
    }

    pub fn with_load(mut self, load: impl Fn(f64, &mut [f64]) + Send + Sync + 'static) -> Self {
        self.load = Some(Box::new(load));
        self
    }

    pub fn with_dirichlet(mut self, bc: DirichletBC) -> Self {
        self.dirichlet = Some(bc);
        self
    }

    pub fn mass(&self) -> &SparseMatrix {
        &self.mass
    }

    pub fn stiffness(&self) -> &SparseMatrix {
        &self.stiffness
    }
}

impl SemidiscreteProblem for LinearProblem {
    fn dim(&self) -> usize {
        self.mass.nrows()
    }

    fn residual(&self, t: f64, u: &[f64], udot: &[f64], out: &mut [f64]) {
        self.load(t, out);
        out.iter_mut().for_each(|x| *x = -*x);
        self.mass.spmv_add(1.0, udot, out);
        self.stiffness.spmv_add(1.0, u, out);
    }

    fn jacobians(
        &self,
        _t: f64,
        _u: &[f64],
        _udot: &[f64],
    ) -> (Arc<SparseMatrix>, Arc<SparseMatrix>) {
        (self.mass.clone(), self.stiffness.clone())
    }

    fn linear_parts(&self) -> Option<(Arc<SparseMatrix>, Arc<SparseMatrix>)> {
        Some((self.mass.clone(), self.stiffness.clone()))
    }

    fn load(&self, t: f64, out: &mut [f64]) {
        match &self.load {
            Some(f) => f(t, out),
            None => out.iter_mut().for_each(|x| *x = 0.0),
        }
    }

    fn dirichlet(&self) -> Option<&DirichletBC> {
        self.dirichlet.as_ref()
    }
}

type RhsFn = Box<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
type JacFn = Box<dyn Fn(f64, &[f64]) -> Vec<Vec<f64>> + Send + Sync>;

/// Explicit ODE `y' = F(t, y)` posed as `G = y' - F(t, y)`.
pub struct ExplicitOde {
    dim: usize,
    rhs: RhsFn,
    jac: JacFn,
    identity: Arc<SparseMatrix>,
}

impl fmt::Debug for ExplicitOde {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExplicitOde")
            .field("dim", &self.dim)
            .finish()
    }
}

impl ExplicitOde {
    /// `jac(t, y)` returns the dense Jacobian `dF/dy` row by row.
    pub fn new(
        dim: usize,
        rhs: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
        jac: impl Fn(f64, &[f64]) -> Vec<Vec<f64>> + Send + Sync + 'static,
    ) -> Self {
        ExplicitOde {
            dim,
            rhs: Box::new(rhs),
            jac: Box::new(jac),
            identity: Arc::new(SparseMatrix::identity(dim)),
        }
    }

    pub fn rhs(&self, t: f64, y: &[f64], out: &mut [f64]) {
        (self.rhs)(t, y, out)
    }
}

impl SemidiscreteProblem for ExplicitOde {
    fn dim(&self) -> usize {
        self.dim
    }

    fn residual(&self, t: f64, u: &[f64], udot: &[f64], out: &mut [f64]) {
        (self.rhs)(t, u, out);
        for (o, d) in out.iter_mut().zip(udot) {
            *o = d - *o;
        }
    }

    fn jacobians(
        &self,
        t: f64,
        u: &[f64],
        _udot: &[f64],
    ) -> (Arc<SparseMatrix>, Arc<SparseMatrix>) {
        let neg: Vec<Vec<f64>> = (self.jac)(t, u)
            .into_iter()
            .map(|row| row.into_iter().map(|v| -v).collect())
            .collect();
        (
            self.identity.clone(),
            Arc::new(SparseMatrix::from_dense(&neg)),
        )
    }
}
