//! Model problems: P1/Q1 heat operators on the unit interval and square,
//! manufactured solutions, error norms and a small ODE test set.

use std::f64::consts::PI;
use std::fmt;

use crate::bcs::DirichletBC;
use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre_unit;
use crate::sparsela::SparseMatrix;
use crate::stepper::{ExplicitOde, LinearProblem, SemidiscreteProblem};

/// Uniform grid on `[0,1]^dim` with `n` cells per direction and
/// lexicographic vertex numbering (`x` fastest).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StructuredGrid {
    dim: usize,
    n: usize,
}

impl StructuredGrid {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if !(dim == 1 || dim == 2) {
            return Err(Error::InvalidSettings(format!(
                "grid dimension must be 1 or 2, got {dim}"
            )));
        }
        if n < 2 {
            return Err(Error::InvalidSettings(format!(
                "need at least 2 cells per direction, got {n}"
            )));
        }
        Ok(StructuredGrid { dim, n })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells_per_side(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn num_vertices(&self) -> usize {
        (self.n + 1).pow(self.dim as u32)
    }

    /// Coordinates of vertex `v`; unused components are zero.
    pub fn vertex(&self, v: usize) -> [f64; 2] {
        let h = self.h();
        if self.dim == 1 {
            [v as f64 * h, 0.0]
        } else {
            let np = self.n + 1;
            [(v % np) as f64 * h, (v / np) as f64 * h]
        }
    }

    pub fn boundary_vertices(&self) -> Vec<usize> {
        let n = self.n;
        if self.dim == 1 {
            return vec![0, n];
        }
        let np = n + 1;
        (0..self.num_vertices())
            .filter(|v| {
                let (i, j) = (v % np, v / np);
                i == 0 || j == 0 || i == n || j == n
            })
            .collect()
    }

    /// Vertices of each cell, ordered `(0,0), (1,0), (0,1), (1,1)` in 2D.
    fn cells(&self) -> impl Iterator<Item = ([f64; 2], Vec<usize>)> + '_ {
        let n = self.n;
        let h = self.h();
        let cells = n.pow(self.dim as u32);
        (0..cells).map(move |c| {
            if self.dim == 1 {
                ([c as f64 * h, 0.0], vec![c, c + 1])
            } else {
                let (ex, ey) = (c % n, c / n);
                let np = n + 1;
                let v0 = ey * np + ex;
                (
                    [ex as f64 * h, ey as f64 * h],
                    vec![v0, v0 + 1, v0 + np, v0 + np + 1],
                )
            }
        })
    }

    /// Quadrature points in one cell with weights, together with the local
    /// basis values and gradients at each point.
    fn cell_rule(&self, origin: [f64; 2], npts: usize) -> Vec<QuadPoint> {
        let (xi, wi) = gauss_legendre_unit(npts);
        let h = self.h();
        let mut out = Vec::new();
        if self.dim == 1 {
            for (x, w) in xi.iter().zip(&wi) {
                out.push(QuadPoint {
                    x: [origin[0] + h * x, 0.0],
                    w: w * h,
                    phi: vec![1.0 - x, *x],
                    grad: vec![[-1.0 / h, 0.0], [1.0 / h, 0.0]],
                });
            }
        } else {
            for (y, wy) in xi.iter().zip(&wi) {
                for (x, wx) in xi.iter().zip(&wi) {
                    let (px, py) = ([1.0 - x, *x], [1.0 - y, *y]);
                    let (dx, dy) = ([-1.0 / h, 1.0 / h], [-1.0 / h, 1.0 / h]);
                    let mut phi = Vec::with_capacity(4);
                    let mut grad = Vec::with_capacity(4);
                    for b in 0..2 {
                        for a in 0..2 {
                            phi.push(px[a] * py[b]);
                            grad.push([dx[a] * py[b], px[a] * dy[b]]);
                        }
                    }
                    out.push(QuadPoint {
                        x: [origin[0] + h * x, origin[1] + h * y],
                        w: wx * wy * h * h,
                        phi,
                        grad,
                    });
                }
            }
        }
        out
    }
}

struct QuadPoint {
    x: [f64; 2],
    w: f64,
    phi: Vec<f64>,
    grad: Vec<[f64; 2]>,
}

#[derive(Debug, Clone)]
pub struct HeatOperators {
    pub mass: SparseMatrix,
    pub stiffness: SparseMatrix,
    pub boundary: Vec<usize>,
}

/// Consistent mass and stiffness matrices from closed-form element integrals.
pub fn assemble_heat(grid: &StructuredGrid) -> HeatOperators {
    let n = grid.num_vertices();
    let h = grid.h();
    let m1 = [[h / 3.0, h / 6.0], [h / 6.0, h / 3.0]];
    let k1 = [[1.0 / h, -1.0 / h], [-1.0 / h, 1.0 / h]];
    let (me, ke): (Vec<Vec<f64>>, Vec<Vec<f64>>) = if grid.dim() == 1 {
        (
            m1.iter().map(|r| r.to_vec()).collect(),
            k1.iter().map(|r| r.to_vec()).collect(),
        )
    } else {
        // local node a = ax + 2 ay
        let idx = |a: usize| (a % 2, a / 2);
        let me = (0..4)
            .map(|a| {
                (0..4)
                    .map(|b| {
                        let ((ax, ay), (bx, by)) = (idx(a), idx(b));
                        m1[ax][bx] * m1[ay][by]
                    })
                    .collect()
            })
            .collect();
        let ke = (0..4)
            .map(|a| {
                (0..4)
                    .map(|b| {
                        let ((ax, ay), (bx, by)) = (idx(a), idx(b));
                        k1[ax][bx] * m1[ay][by] + m1[ax][bx] * k1[ay][by]
                    })
                    .collect()
            })
            .collect();
        (me, ke)
    };
    let mut mt = Vec::new();
    let mut kt = Vec::new();
    for (_, dofs) in grid.cells() {
        for (a, &ra) in dofs.iter().enumerate() {
            for (b, &cb) in dofs.iter().enumerate() {
                mt.push((ra, cb, me[a][b]));
                kt.push((ra, cb, ke[a][b]));
            }
        }
    }
    HeatOperators {
        mass: SparseMatrix::from_triplets(n, n, &mt),
        stiffness: SparseMatrix::from_triplets(n, n, &kt),
        boundary: grid.boundary_vertices(),
    }
}

/// `(f, phi_j)` with 2-point Gauss per direction.
pub fn assemble_load(grid: &StructuredGrid, source: impl Fn(&[f64; 2]) -> f64) -> Vec<f64> {
    let mut out = vec![0.0; grid.num_vertices()];
    assemble_load_into(grid, &source, &mut out);
    out
}

fn assemble_load_into(grid: &StructuredGrid, source: &dyn Fn(&[f64; 2]) -> f64, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (origin, dofs) in grid.cells() {
        for q in grid.cell_rule(origin, 2) {
            let f = source(&q.x);
            if f == 0.0 {
                continue;
            }
            for (a, &d) in dofs.iter().enumerate() {
                out[d] += q.w * f * q.phi[a];
            }
        }
    }
}

type GradFn<'a> = &'a dyn Fn(&[f64; 2]) -> [f64; 2];

fn error_integrals(
    grid: &StructuredGrid,
    u_h: &[f64],
    exact: &dyn Fn(&[f64; 2]) -> f64,
    grad: Option<GradFn<'_>>,
) -> (f64, f64) {
    let (mut l2, mut semi) = (0.0, 0.0);
    for (origin, dofs) in grid.cells() {
        for q in grid.cell_rule(origin, 3) {
            let mut uh = 0.0;
            let mut guh = [0.0; 2];
            for (a, &d) in dofs.iter().enumerate() {
                uh += u_h[d] * q.phi[a];
                guh[0] += u_h[d] * q.grad[a][0];
                guh[1] += u_h[d] * q.grad[a][1];
            }
            l2 += q.w * (uh - exact(&q.x)).powi(2);
            if let Some(g) = grad {
                let ge = g(&q.x);
                semi += q.w * ((guh[0] - ge[0]).powi(2) + (guh[1] - ge[1]).powi(2));
            }
        }
    }
    (l2, semi)
}

/// `||u_h - u||_{L2}` with 3-point Gauss per direction.
pub fn l2_error(grid: &StructuredGrid, u_h: &[f64], exact: impl Fn(&[f64; 2]) -> f64) -> f64 {
    error_integrals(grid, u_h, &exact, None).0.sqrt()
}

/// Full `H1` error: `L2` and gradient parts combined in quadrature.
pub fn h1_error(
    grid: &StructuredGrid,
    u_h: &[f64],
    exact: impl Fn(&[f64; 2]) -> f64,
    grad: impl Fn(&[f64; 2]) -> [f64; 2],
) -> f64 {
    let (l2, semi) = error_integrals(grid, u_h, &exact, Some(&grad));
    (l2 + semi).sqrt()
}

/// `sqrt(u^T M u)`.
pub fn mass_norm(mass: &SparseMatrix, u: &[f64]) -> f64 {
    let mut mu = vec![0.0; u.len()];
    mass.spmv_into(u, &mut mu);
    mu.iter()
        .zip(u)
        .map(|(a, b)| a * b)
        .sum::<f64>()
        .max(0.0)
        .sqrt()
}

type Field = fn(f64, &[f64; 2]) -> f64;
type GradField = fn(f64, &[f64; 2]) -> [f64; 2];

/// Exact solution of `u_t - Laplace(u) = f` together with its derivatives.
#[derive(Clone, Copy)]
pub struct ManufacturedSolution {
    pub name: &'static str,
    pub dim: usize,
    pub u: Field,
    pub u_t: Field,
    pub grad: GradField,
    pub laplacian: Field,
}

impl fmt::Debug for ManufacturedSolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ManufacturedSolution")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .finish()
    }
}

impl ManufacturedSolution {
    /// `u = e^{-t/10} sin(pi x) cos(pi y)` on the unit square.
    pub fn decaying_sine_cosine() -> Self {
        fn u(t: f64, x: &[f64; 2]) -> f64 {
            (-0.1 * t).exp() * (PI * x[0]).sin() * (PI * x[1]).cos()
        }
        ManufacturedSolution {
            name: "exp(-t/10) sin(pi x) cos(pi y)",
            dim: 2,
            u,
            u_t: |t, x| -0.1 * u(t, x),
            grad: |t, x| {
                let e = (-0.1 * t).exp();
                [
                    e * PI * (PI * x[0]).cos() * (PI * x[1]).cos(),
                    -e * PI * (PI * x[0]).sin() * (PI * x[1]).sin(),
                ]
            },
            laplacian: |t, x| -2.0 * PI * PI * u(t, x),
        }
    }

    /// `u = e^{-t/10} cos(pi x)` on the unit interval.
    pub fn decaying_cosine_1d() -> Self {
        fn u(t: f64, x: &[f64; 2]) -> f64 {
            (-0.1 * t).exp() * (PI * x[0]).cos()
        }
        ManufacturedSolution {
            name: "exp(-t/10) cos(pi x)",
            dim: 1,
            u,
            u_t: |t, x| -0.1 * u(t, x),
            grad: |t, x| [-(-0.1 * t).exp() * PI * (PI * x[0]).sin(), 0.0],
            laplacian: |t, x| -PI * PI * u(t, x),
        }
    }

    /// `u = 0`, a problem with no dynamics.
    pub fn zero(dim: usize) -> Self {
        ManufacturedSolution {
            name: "0",
            dim,
            u: |_, _| 0.0,
            u_t: |_, _| 0.0,
            grad: |_, _| [0.0, 0.0],
            laplacian: |_, _| 0.0,
        }
    }

    pub fn forcing(&self, t: f64, x: &[f64; 2]) -> f64 {
        (self.u_t)(t, x) - (self.laplacian)(t, x)
    }

    pub fn load(&self, grid: &StructuredGrid, t: f64) -> Vec<f64> {
        assemble_load(grid, |x| self.forcing(t, x))
    }

    /// Nodal interpolant at time `t`.
    pub fn interpolate(&self, grid: &StructuredGrid, t: f64) -> Vec<f64> {
        (0..grid.num_vertices())
            .map(|v| (self.u)(t, &grid.vertex(v)))
            .collect()
    }

    pub fn l2_error(&self, grid: &StructuredGrid, u_h: &[f64], t: f64) -> f64 {
        l2_error(grid, u_h, |x| (self.u)(t, x))
    }

    pub fn h1_error(&self, grid: &StructuredGrid, u_h: &[f64], t: f64) -> f64 {
        h1_error(grid, u_h, |x| (self.u)(t, x), |x| (self.grad)(t, x))
    }
}

/// Heat problem on a grid with its initial state.
#[derive(Debug)]
pub struct ModelProblem {
    pub grid: StructuredGrid,
    pub problem: LinearProblem,
    pub initial: Vec<f64>,
    pub exact: Option<ManufacturedSolution>,
}

impl ModelProblem {
    pub fn l2_norm(&self, u: &[f64]) -> f64 {
        mass_norm(self.problem.mass(), u)
    }
}

/// Heat equation driven by `mms`, with Dirichlet data from the exact solution
/// on every boundary vertex.
pub fn heat_mms(grid: StructuredGrid, mms: ManufacturedSolution) -> Result<ModelProblem> {
    if mms.dim != grid.dim() {
        return Err(Error::DimensionMismatch {
            expected: grid.dim(),
            found: mms.dim,
        });
    }
    let ops = assemble_heat(&grid);
    let bc = DirichletBC::new(ops.boundary.clone(), move |t, d| {
        (mms.u)(t, &grid.vertex(d))
    })
    .with_derivative(move |t, d| (mms.u_t)(t, &grid.vertex(d)));
    let problem = LinearProblem::new(ops.mass, ops.stiffness)
        .with_load(move |t, out| assemble_load_into(&grid, &|x| mms.forcing(t, x), out))
        .with_dirichlet(bc);
    Ok(ModelProblem {
        grid,
        problem,
        initial: mms.interpolate(&grid, 0.0),
        exact: Some(mms),
    })
}

/// Ten P1 intervals, zero initial data, `g = 1` at both ends.
pub fn incompatible_heat_1d() -> ModelProblem {
    let grid = StructuredGrid::new(1, 10).expect("valid grid");
    let ops = assemble_heat(&grid);
    let bc = DirichletBC::new(ops.boundary.clone(), |_, _| 1.0).with_derivative(|_, _| 0.0);
    ModelProblem {
        grid,
        problem: LinearProblem::new(ops.mass, ops.stiffness).with_dirichlet(bc),
        initial: vec![0.0; grid.num_vertices()],
        exact: None,
    }
}

type ExactFn = Box<dyn Fn(f64) -> Vec<f64> + Send + Sync>;

/// ODE with known initial data and, where available, closed-form solution.
pub struct OdeTestProblem {
    pub name: String,
    pub problem: Box<dyn SemidiscreteProblem + Send + Sync>,
    pub t0: f64,
    pub y0: Vec<f64>,
    pub exact: Option<ExactFn>,
}

impl fmt::Debug for OdeTestProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OdeTestProblem")
            .field("name", &self.name)
            .field("t0", &self.t0)
            .field("y0", &self.y0)
            .finish_non_exhaustive()
    }
}

impl OdeTestProblem {
    pub fn dim(&self) -> usize {
        self.y0.len()
    }

    pub fn exact(&self, t: f64) -> Option<Vec<f64>> {
        self.exact.as_ref().map(|e| e(t))
    }
}

fn scalar(v: f64) -> SparseMatrix {
    SparseMatrix::from_dense(&[vec![v]])
}

/// `y' = lambda y`, `y(0) = 1`.
pub fn dahlquist(lambda: f64) -> OdeTestProblem {
    OdeTestProblem {
        name: format!("dahlquist({lambda})"),
        problem: Box::new(LinearProblem::new(scalar(1.0), scalar(-lambda))),
        t0: 0.0,
        y0: vec![1.0],
        exact: Some(Box::new(move |t| vec![(lambda * t).exp()])),
    }
}

/// `y' = lambda (y - sin t) + cos t`, `y(0) = 0`, exact `sin t`.
pub fn prothero_robinson(lambda: f64) -> OdeTestProblem {
    OdeTestProblem {
        name: format!("prothero-robinson({lambda})"),
        problem: Box::new(LinearProblem::new(scalar(1.0), scalar(-lambda)).with_load(
            move |t, out| {
                out[0] = t.cos() - lambda * t.sin();
            },
        )),
        t0: 0.0,
        y0: vec![0.0],
        exact: Some(Box::new(|t| vec![t.sin()])),
    }
}

/// `y' = y^2`, `y(0) = 1`, exact `1/(1-t)`.
pub fn riccati() -> OdeTestProblem {
    OdeTestProblem {
        name: "riccati".into(),
        problem: Box::new(ExplicitOde::new(
            1,
            |_, y, out| out[0] = y[0] * y[0],
            |_, y| vec![vec![2.0 * y[0]]],
        )),
        t0: 0.0,
        y0: vec![1.0],
        exact: Some(Box::new(|t| vec![1.0 / (1.0 - t)])),
    }
}

pub fn ode_suite() -> Vec<OdeTestProblem> {
    vec![dahlquist(-1.0), prothero_robinson(-1e4), riccati()]
}
