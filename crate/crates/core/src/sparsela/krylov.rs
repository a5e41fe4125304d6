//! Restarted flexible GMRES with right preconditioning.

use crate::error::{Error, Result};

/// Square linear map acting on vectors of length `dim()`.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

/// Approximate inverse `z = P^{-1} r`.
pub trait Preconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

impl LinearOperator for super::SparseMatrix {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.spmv_into(x, y);
    }
}

impl Preconditioner for super::BlockFactorization {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        self.solve_into(r, z);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrylovSettings {
    pub rtol: f64,
    pub atol: f64,
    pub restart: usize,
    pub maxit: usize,
    /// Right preconditioning; left preconditioning is not offered by FGMRES.
    pub right_preconditioned: bool,
}

impl Default for KrylovSettings {
    fn default() -> Self {
        KrylovSettings {
            rtol: 1e-8,
            atol: 1e-50,
            restart: 50,
            maxit: 500,
            right_preconditioned: true,
        }
    }
}

impl KrylovSettings {
    pub fn with_rtol(mut self, rtol: f64) -> Self {
        self.rtol = rtol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(Error::InvalidSettings(
                "rtol and atol must be positive".into(),
            ));
        }
        if self.restart == 0 {
            return Err(Error::InvalidSettings("restart must be at least 1".into()));
        }
        if !self.right_preconditioned {
            return Err(Error::InvalidSettings(
                "FGMRES supports right preconditioning only".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct KrylovOutcome {
    pub x: Vec<f64>,
    /// Number of preconditioned operator applications.
    pub iterations: usize,
    /// Residual norm before the first iteration and after each one.
    pub history: Vec<f64>,
}

/// Reusable Krylov basis storage.
#[derive(Debug, Default)]
pub struct FgmresWorkspace {
    v: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
}

impl FgmresWorkspace {
    pub fn new() -> Self {
        Self::default()
    }

    fn ensure(&mut self, n: usize, restart: usize) {
        for basis in [&mut self.v, &mut self.z] {
            if basis.first().map_or(0, Vec::len) != n {
                basis.clear();
            }
        }
        while self.v.len() < restart + 1 {
            self.v.push(vec![0.0; n]);
        }
        while self.z.len() < restart {
            self.z.push(vec![0.0; n]);
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solves `op x = b` from a zero initial guess.
pub fn fgmres(
    op: &dyn LinearOperator,
    pc: Option<&dyn Preconditioner>,
    b: &[f64],
    settings: &KrylovSettings,
) -> Result<KrylovOutcome> {
    let mut ws = FgmresWorkspace::new();
    fgmres_with(op, pc, b, None, settings, &mut ws)
}

/// FGMRES(restart) with an optional initial guess and caller-owned workspace.
pub fn fgmres_with(
    op: &dyn LinearOperator,
    pc: Option<&dyn Preconditioner>,
    b: &[f64],
    x0: Option<&[f64]>,
    settings: &KrylovSettings,
    ws: &mut FgmresWorkspace,
) -> Result<KrylovOutcome> {
    settings.validate()?;
    let n = op.dim();
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: b.len(),
        });
    }
    let mut x = match x0 {
        Some(x0) if x0.len() == n => x0.to_vec(),
        Some(x0) => {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: x0.len(),
            })
        }
        None => vec![0.0; n],
    };
    let restart = settings.restart.min(n.max(1));
    ws.ensure(n, restart);

    let b_norm = norm(b);
    let target = (settings.rtol * b_norm).max(settings.atol);
    let breakdown_tol = 1e-14 * if b_norm > 0.0 { b_norm } else { 1.0 };

    let mut r = vec![0.0; n];
    let residual = |x: &[f64], r: &mut [f64]| {
        op.apply(x, r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
    };
    residual(&x, &mut r);
    let mut beta = norm(&r);
    let mut history = vec![beta];
    let mut iterations = 0;

    let mut h = vec![vec![0.0; restart]; restart + 1];
    let mut cs = vec![0.0; restart];
    let mut sn = vec![0.0; restart];
    let mut g = vec![0.0; restart + 1];

    while beta > target {
        if iterations >= settings.maxit {
            return Err(Error::KrylovNonConvergence {
                iterations,
                history,
            });
        }
        for (vi, ri) in ws.v[0].iter_mut().zip(&r) {
            *vi = ri / beta;
        }
        g.iter_mut().for_each(|gi| *gi = 0.0);
        g[0] = beta;
        let mut used = 0;
        let mut lucky = false;

        for j in 0..restart {
            if iterations >= settings.maxit {
                break;
            }
            {
                let (vj, z) = (&ws.v[j], &mut ws.z[j]);
                match pc {
                    Some(p) => p.apply(vj, z),
                    None => z.copy_from_slice(vj),
                }
            }
            let (head, tail) = ws.v.split_at_mut(j + 1);
            let w = &mut tail[0];
            op.apply(&ws.z[j], w);
            iterations += 1;
            // modified Gram-Schmidt
            for (i, vi) in head.iter().enumerate() {
                let hij = dot(w, vi);
                h[i][j] = hij;
                for (wk, vk) in w.iter_mut().zip(vi) {
                    *wk -= hij * vk;
                }
            }
            let hnext = norm(w);
            h[j + 1][j] = hnext;
            if hnext > breakdown_tol {
                w.iter_mut().for_each(|wk| *wk /= hnext);
            } else {
                lucky = true;
            }
            for i in 0..j {
                let tmp = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = tmp;
            }
            let denom = h[j][j].hypot(h[j + 1][j]);
            if denom == 0.0 {
                cs[j] = 1.0;
                sn[j] = 0.0;
            } else {
                cs[j] = h[j][j] / denom;
                sn[j] = h[j + 1][j] / denom;
            }
            h[j][j] = denom;
            h[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            let estimate = g[j + 1].abs();
            history.push(estimate);
            used = j + 1;
            if estimate <= target || lucky {
                break;
            }
        }

        // back substitution for the least-squares coefficients
        let mut y = vec![0.0; used];
        for i in (0..used).rev() {
            let mut acc = g[i];
            for k in i + 1..used {
                acc -= h[i][k] * y[k];
            }
            y[i] = if h[i][i] != 0.0 { acc / h[i][i] } else { 0.0 };
        }
        for (k, yk) in y.iter().enumerate() {
            for (xi, zi) in x.iter_mut().zip(&ws.z[k]) {
                *xi += yk * zi;
            }
        }
        // The recurrence estimate can drift from the true residual; the true
        // value decides convergence and seeds the next cycle.
        residual(&x, &mut r);
        beta = norm(&r);
    }
    if beta > target {
        return Err(Error::KrylovNonConvergence {
            iterations,
            history,
        });
    }
    Ok(KrylovOutcome {
        x,
        iterations,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparsela::{BlockFactorization, SparseMatrix};

    fn diag(d: &[f64]) -> SparseMatrix {
        let t: Vec<_> = d.iter().enumerate().map(|(i, &v)| (i, i, v)).collect();
        SparseMatrix::from_triplets(d.len(), d.len(), &t)
    }

    #[test]
    fn identity_one_iteration() {
        let b = vec![1.0, 2.0, 3.0];
        let out = fgmres(
            &SparseMatrix::identity(3),
            None,
            &b,
            &KrylovSettings::default(),
        )
        .unwrap();
        assert_eq!(out.iterations, 1);
        for i in 0..3 {
            assert!((out.x[i] - b[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn diagonal_within_three_iterations() {
        let a = diag(&[1.0, 2.0, 3.0]);
        let b = vec![1.0, 1.0, 1.0];
        let out = fgmres(&a, None, &b, &KrylovSettings::default()).unwrap();
        assert!(out.iterations <= 3);
        for (i, d) in [1.0, 2.0, 3.0].iter().enumerate() {
            assert!((out.x[i] - 1.0 / d).abs() < 1e-8);
        }
    }

    #[test]
    fn exact_preconditioner_one_iteration() {
        let a = SparseMatrix::from_dense(&[
            vec![4.0, 1.0, 0.0],
            vec![1.0, 3.0, 1.0],
            vec![0.0, 2.0, 5.0],
        ]);
        let f = BlockFactorization::new(&a).unwrap();
        let out = fgmres(&a, Some(&f), &[1.0, 0.0, -1.0], &KrylovSettings::default()).unwrap();
        assert_eq!(out.iterations, 1);
    }

    #[test]
    fn zero_rhs_needs_no_iterations() {
        let out = fgmres(
            &SparseMatrix::identity(2),
            None,
            &[0.0, 0.0],
            &KrylovSettings::default(),
        )
        .unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.x, vec![0.0, 0.0]);
    }

    #[test]
    fn nonconvergence_carries_history() {
        let n = 30;
        let d: Vec<f64> = (1..=n).map(|i| i as f64).collect();
        let settings = KrylovSettings {
            maxit: 3,
            restart: 2,
            ..Default::default()
        };
        match fgmres(&diag(&d), None, &vec![1.0; n], &settings) {
            Err(Error::KrylovNonConvergence {
                iterations,
                history,
            }) => {
                assert_eq!(iterations, 3);
                assert!(history.len() >= 4);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn restarted_history_decreases_within_cycles() {
        let n = 60;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0 + 0.01 * i as f64));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -0.5));
            }
        }
        let a = SparseMatrix::from_triplets(n, n, &t);
        let restart = 7;
        let settings = KrylovSettings {
            restart,
            rtol: 1e-10,
            ..Default::default()
        };
        let out = fgmres(&a, None, &vec![1.0; n], &settings).unwrap();
        for cycle in out.history[1..].chunks(restart) {
            for w in cycle.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12));
            }
        }
        let r: Vec<f64> = a.spmv(&out.x).unwrap().iter().map(|v| 1.0 - v).collect();
        assert!(norm(&r) <= 1e-10 * (n as f64).sqrt() * 1.0001);
    }

    #[test]
    fn rejects_bad_settings() {
        let s = KrylovSettings {
            restart: 0,
            ..Default::default()
        };
        assert!(fgmres(&SparseMatrix::identity(1), None, &[1.0], &s).is_err());
    }
}
