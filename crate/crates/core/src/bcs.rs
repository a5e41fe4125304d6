//! Strong Dirichlet conditions on stage unknowns.
//!
//! The DAE method constrains the stage approximations
//! `u^n + dt sum_j a_ij k_j = g(t^n + c_i dt)` on the boundary; the ODE method
//! prescribes `k_i = g'(t^n + c_i dt)`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::sparsela::LinearOperator;
use crate::stepper::StageFormulation;
use crate::tableaux::ButcherTableau;

type BoundaryFn = Box<dyn Fn(f64, usize) -> f64 + Send + Sync>;

/// Dirichlet data `g(t, dof)` on a fixed set of dofs.
pub struct DirichletBC {
    dofs: Vec<usize>,
    g: BoundaryFn,
    g_dot: Option<BoundaryFn>,
}

impl fmt::Debug for DirichletBC {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DirichletBC")
            .field("dofs", &self.dofs)
            .field("has_g_dot", &self.g_dot.is_some())
            .finish()
    }
}

impl DirichletBC {
    pub fn new(dofs: Vec<usize>, g: impl Fn(f64, usize) -> f64 + Send + Sync + 'static) -> Self {
        let mut dofs = dofs;
        dofs.sort_unstable();
        dofs.dedup();
        DirichletBC {
            dofs,
            g: Box::new(g),
            g_dot: None,
        }
    }

    /// Adds the time derivative of the data, required by the ODE method.
    pub fn with_derivative(
        mut self,
        g_dot: impl Fn(f64, usize) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.g_dot = Some(Box::new(g_dot));
        self
    }

    pub fn dofs(&self) -> &[usize] {
        &self.dofs
    }

    pub fn value(&self, t: f64, dof: usize) -> f64 {
        (self.g)(t, dof)
    }

    pub fn derivative(&self, t: f64, dof: usize) -> Option<f64> {
        self.g_dot.as_ref().map(|g| g(t, dof))
    }

    pub fn has_derivative(&self) -> bool {
        self.g_dot.is_some()
    }

    pub fn check_range(&self, m: usize) -> Result<()> {
        match self.dofs.iter().find(|&&d| d >= m) {
            Some(&dof) => Err(Error::DofOutOfRange { dof, dim: m }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BcMethod {
    #[default]
    Dae,
    Ode,
}

impl FromStr for BcMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dae" => Ok(BcMethod::Dae),
            "ode" => Ok(BcMethod::Ode),
            _ => Err(Error::InvalidSettings(format!("unknown bc method '{s}'"))),
        }
    }
}

/// Boundary values of the stage unknowns, `values[stage][k]` for `dofs[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageBoundaryValues {
    pub dofs: Vec<usize>,
    pub values: Vec<Vec<f64>>,
}

impl StageBoundaryValues {
    pub fn empty(stages: usize) -> Self {
        StageBoundaryValues {
            dofs: Vec::new(),
            values: vec![Vec::new(); stages],
        }
    }

    pub fn stages(&self) -> usize {
        self.values.len()
    }

    /// Stacked vector with the values at constrained entries, zero elsewhere.
    pub fn scatter(&self, m: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.stages() * m];
        for (i, vals) in self.values.iter().enumerate() {
            for (&d, &v) in self.dofs.iter().zip(vals) {
                out[i * m + d] = v;
            }
        }
        out
    }

    /// Stacked constraint mask.
    pub fn mask(&self, m: usize) -> Vec<bool> {
        let mut out = vec![false; self.stages() * m];
        for i in 0..self.stages() {
            for &d in &self.dofs {
                out[i * m + d] = true;
            }
        }
        out
    }
}

/// Values the stage unknowns of `form` must take on the constrained dofs.
pub fn stage_bc_values(
    method: BcMethod,
    tab: &ButcherTableau,
    bc: &DirichletBC,
    u_n: &[f64],
    t: f64,
    dt: f64,
    form: StageFormulation,
) -> Result<StageBoundaryValues> {
    bc.check_range(u_n.len())?;
    let s = tab.stages();
    let times: Vec<f64> = tab.c.iter().map(|c| t + c * dt).collect();
    let mut values = vec![vec![0.0; bc.dofs.len()]; s];
    match method {
        BcMethod::Dae => {
            if !tab.is_invertible() {
                return Err(Error::SingularTableau(tab.name.clone()));
            }
            match form {
                StageFormulation::StageValue => {
                    for (k, &d) in bc.dofs.iter().enumerate() {
                        for i in 0..s {
                            values[i][k] = bc.value(times[i], d);
                        }
                    }
                }
                StageFormulation::StageDerivativeIA => {
                    for (k, &d) in bc.dofs.iter().enumerate() {
                        for i in 0..s {
                            values[i][k] = (bc.value(times[i], d) - u_n[d]) / dt;
                        }
                    }
                }
                StageFormulation::StageDerivativeAI | StageFormulation::Dirk => {
                    // One LU of A shared by every boundary dof.
                    let lu = tab.a.clone().lu();
                    for (k, &d) in bc.dofs.iter().enumerate() {
                        let rhs = DVector::from_fn(s, |i, _| (bc.value(times[i], d) - u_n[d]) / dt);
                        let kb = lu
                            .solve(&rhs)
                            .ok_or_else(|| Error::SingularTableau(tab.name.clone()))?;
                        for i in 0..s {
                            values[i][k] = kb[i];
                        }
                    }
                }
            }
        }
        BcMethod::Ode => {
            if !bc.has_derivative() {
                return Err(Error::MissingBoundaryDerivative);
            }
            for (k, &d) in bc.dofs.iter().enumerate() {
                let kb = DVector::from_fn(s, |i, _| bc.derivative(times[i], d).unwrap());
                let mapped = match form {
                    StageFormulation::StageDerivativeAI | StageFormulation::Dirk => kb,
                    StageFormulation::StageDerivativeIA => &tab.a * kb,
                    StageFormulation::StageValue => (&tab.a * kb).map(|w| u_n[d] + dt * w),
                };
                for i in 0..s {
                    values[i][k] = mapped[i];
                }
            }
        }
    }
    Ok(StageBoundaryValues {
        dofs: bc.dofs.clone(),
        values,
    })
}

/// Operator with constrained rows and columns replaced by the identity.
pub struct ConstrainedOperator<'a> {
    inner: &'a dyn LinearOperator,
    mask: Vec<bool>,
    any: bool,
}

impl<'a> ConstrainedOperator<'a> {
    pub fn new(inner: &'a dyn LinearOperator, mask: Vec<bool>) -> Self {
        let any = mask.iter().any(|&c| c);
        ConstrainedOperator { inner, mask, any }
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }
}

impl LinearOperator for ConstrainedOperator<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        if !self.any {
            self.inner.apply(x, y);
            return;
        }
        let masked: Vec<f64> = x
            .iter()
            .zip(&self.mask)
            .map(|(&v, &c)| if c { 0.0 } else { v })
            .collect();
        self.inner.apply(&masked, y);
        for ((yi, &xi), &c) in y.iter_mut().zip(x).zip(&self.mask) {
            if c {
                *yi = xi;
            }
        }
    }
}

/// Constrained system: identity rows on the boundary, known values
/// eliminated from the coupled rows.
pub struct ConstrainedSystem<'a> {
    pub op: ConstrainedOperator<'a>,
    pub rhs: Vec<f64>,
}

pub fn constrain_stage_system<'a>(
    op: &'a dyn LinearOperator,
    rhs: &[f64],
    stage_values: &StageBoundaryValues,
) -> Result<ConstrainedSystem<'a>> {
    let n = op.dim();
    let s = stage_values.stages();
    if rhs.len() != n || s == 0 || !n.is_multiple_of(s) {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: rhs.len(),
        });
    }
    let m = n / s;
    if let Some(&dof) = stage_values.dofs.iter().find(|&&d| d >= m) {
        return Err(Error::DofOutOfRange { dof, dim: m });
    }
    let mask = stage_values.mask(m);
    let mut rhs = rhs.to_vec();
    if !stage_values.dofs.is_empty() {
        let known = stage_values.scatter(m);
        let mut lifted = vec![0.0; n];
        op.apply(&known, &mut lifted);
        for i in 0..n {
            rhs[i] = if mask[i] {
                known[i]
            } else {
                rhs[i] - lifted[i]
            };
        }
    }
    Ok(ConstrainedSystem {
        op: ConstrainedOperator::new(op, mask),
        rhs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparsela::{fgmres, KrylovSettings, SparseMatrix};
    use crate::tableaux::{lobatto_iiic, radau_iia};

    fn linear_bc() -> DirichletBC {
        DirichletBC::new(vec![0, 3], |t, _| t).with_derivative(|_, _| 1.0)
    }

    #[test]
    fn backward_euler_dae() {
        let tab = radau_iia(1).unwrap();
        let bc = DirichletBC::new(vec![0], |t, _| 2.0 * t + 1.0);
        let u = vec![0.5, 0.0];
        let v = stage_bc_values(
            BcMethod::Dae,
            &tab,
            &bc,
            &u,
            0.0,
            0.1,
            StageFormulation::StageDerivativeAI,
        )
        .unwrap();
        assert!((v.values[0][0] - (1.2 - 0.5) / 0.1).abs() < 1e-12);
    }

    #[test]
    fn steady_compatible_data_gives_zero() {
        let tab = radau_iia(3).unwrap();
        let bc = DirichletBC::new(vec![1], |_, _| 4.0);
        let u = vec![0.0, 4.0];
        let v = stage_bc_values(
            BcMethod::Dae,
            &tab,
            &bc,
            &u,
            1.0,
            0.1,
            StageFormulation::StageDerivativeAI,
        )
        .unwrap();
        assert!(v.values.iter().flatten().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn linear_data_reproduces_derivative() {
        let tab = radau_iia(2).unwrap();
        let (t, dt) = (0.3, 0.1);
        let u = vec![t, 0.0, 0.0, t];
        let v = stage_bc_values(
            BcMethod::Dae,
            &tab,
            &linear_bc(),
            &u,
            t,
            dt,
            StageFormulation::StageDerivativeAI,
        )
        .unwrap();
        for stage in &v.values {
            for x in stage {
                assert!((x - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn value_and_w_forms_skip_the_solve() {
        let tab = radau_iia(2).unwrap();
        let (t, dt) = (0.0, 0.5);
        let u = vec![0.0; 4];
        let bc = linear_bc();
        let y = stage_bc_values(
            BcMethod::Dae,
            &tab,
            &bc,
            &u,
            t,
            dt,
            StageFormulation::StageValue,
        )
        .unwrap();
        let w = stage_bc_values(
            BcMethod::Dae,
            &tab,
            &bc,
            &u,
            t,
            dt,
            StageFormulation::StageDerivativeIA,
        )
        .unwrap();
        for i in 0..2 {
            let ti = tab.c[i] * dt;
            assert_eq!(y.values[i][0], ti);
            assert_eq!(w.values[i][0], ti / dt);
        }
    }

    #[test]
    fn ode_method_needs_derivative() {
        let tab = radau_iia(2).unwrap();
        let bc = DirichletBC::new(vec![0], |_, _| 1.0);
        let err = stage_bc_values(
            BcMethod::Ode,
            &tab,
            &bc,
            &[0.0],
            0.0,
            0.1,
            StageFormulation::StageDerivativeAI,
        );
        assert!(matches!(err, Err(Error::MissingBoundaryDerivative)));
    }

    #[test]
    fn ode_method_maps_through_a() {
        let tab = lobatto_iiic(3).unwrap();
        let bc = linear_bc();
        let u = vec![2.0, 0.0, 0.0, 2.0];
        let k = stage_bc_values(
            BcMethod::Ode,
            &tab,
            &bc,
            &u,
            0.0,
            0.1,
            StageFormulation::StageDerivativeAI,
        )
        .unwrap();
        let y = stage_bc_values(
            BcMethod::Ode,
            &tab,
            &bc,
            &u,
            0.0,
            0.1,
            StageFormulation::StageValue,
        )
        .unwrap();
        for i in 0..3 {
            assert_eq!(k.values[i][0], 1.0);
            // Y_i = u + dt * sum_j a_ij = u + dt c_i
            assert!((y.values[i][0] - (2.0 + 0.1 * tab.c[i])).abs() < 1e-14);
        }
    }

    #[test]
    fn dae_rejects_singular_tableau() {
        let tab = ButcherTableau::from_rows("explicit Euler", &[&[0.0]], &[1.0], &[0.0], 1, 1);
        let bc = DirichletBC::new(vec![0], |_, _| 1.0);
        let err = stage_bc_values(
            BcMethod::Dae,
            &tab,
            &bc,
            &[0.0],
            0.0,
            0.1,
            StageFormulation::StageDerivativeAI,
        );
        assert!(matches!(err, Err(Error::SingularTableau(_))));
    }

    #[test]
    fn no_constraints_leave_system_unchanged() {
        let a = SparseMatrix::from_dense(&[vec![2.0, 1.0], vec![1.0, 3.0]]);
        let sys = constrain_stage_system(&a, &[1.0, 2.0], &StageBoundaryValues::empty(1)).unwrap();
        assert_eq!(sys.rhs, vec![1.0, 2.0]);
        let mut y = vec![0.0; 2];
        sys.op.apply(&[1.0, 1.0], &mut y);
        assert_eq!(y, vec![3.0, 4.0]);
    }

    #[test]
    fn fully_constrained_solution_is_the_data() {
        let a = SparseMatrix::from_dense(&[vec![2.0, 1.0], vec![1.0, 3.0]]);
        let vals = StageBoundaryValues {
            dofs: vec![0, 1],
            values: vec![vec![5.0, -7.0]],
        };
        let sys = constrain_stage_system(&a, &[1.0, 2.0], &vals).unwrap();
        let out = fgmres(&sys.op, None, &sys.rhs, &KrylovSettings::default()).unwrap();
        assert_eq!(out.iterations, 1);
        assert!((out.x[0] - 5.0).abs() < 1e-12 && (out.x[1] + 7.0).abs() < 1e-12);
    }

    #[test]
    fn dof_out_of_range_is_reported() {
        let a = SparseMatrix::identity(2);
        let vals = StageBoundaryValues {
            dofs: vec![4],
            values: vec![vec![1.0]],
        };
        assert!(matches!(
            constrain_stage_system(&a, &[0.0, 0.0], &vals),
            Err(Error::DofOutOfRange { dof: 4, dim: 2 })
        ));
    }
}
