//! Matrix-free stage operator `C1 (x) M + dt C2 (x) K`.

use std::sync::Arc;

use nalgebra::DMatrix;

use super::csr::SparseMatrix;
use super::krylov::LinearOperator;
use crate::error::{Error, Result};

/// Mass and stiffness matrices seen by each block row of a stage system.
///
/// Linear problems share one pair across all stages. Newton linearizations
/// carry one pair per stage (the Jacobians about each stage state).
#[derive(Debug, Clone)]
pub struct StageMatrices {
    mass: Vec<Arc<SparseMatrix>>,
    stiffness: Vec<Arc<SparseMatrix>>,
}

impl StageMatrices {
    pub fn shared(mass: Arc<SparseMatrix>, stiffness: Arc<SparseMatrix>) -> Result<Self> {
        check_pair(&mass, &stiffness)?;
        Ok(StageMatrices {
            mass: vec![mass],
            stiffness: vec![stiffness],
        })
    }

    pub fn per_stage(
        mass: Vec<Arc<SparseMatrix>>,
        stiffness: Vec<Arc<SparseMatrix>>,
    ) -> Result<Self> {
        if mass.len() != stiffness.len() || mass.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: mass.len(),
                found: stiffness.len(),
            });
        }
        for (m, k) in mass.iter().zip(&stiffness) {
            check_pair(m, k)?;
            check_pair(m, &mass[0])?;
        }
        Ok(StageMatrices { mass, stiffness })
    }

    /// Spatial dimension `m`.
    pub fn dim(&self) -> usize {
        self.mass[0].nrows()
    }

    pub fn mass(&self, stage: usize) -> &SparseMatrix {
        &self.mass[stage.min(self.mass.len() - 1)]
    }

    pub fn stiffness(&self, stage: usize) -> &SparseMatrix {
        &self.stiffness[stage.min(self.stiffness.len() - 1)]
    }

    /// Number of distinct per-stage pairs (1 when shared).
    pub fn pairs(&self) -> usize {
        self.mass.len()
    }
}

fn check_pair(m: &SparseMatrix, k: &SparseMatrix) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    if k.nrows() != m.nrows() || k.ncols() != m.ncols() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            found: k.nrows(),
        });
    }
    Ok(())
}

/// `(C1 (x) M + dt C2 (x) K) v`, block row `i` using stage `i`'s matrices.
///
/// With `(C1, C2) = (I, A)` this is the stage-derivative (AI) system and with
/// `(A^{-1}, I)` the IA system.
#[derive(Debug, Clone)]
pub struct KroneckerStageOperator {
    pub c1: DMatrix<f64>,
    pub c2: DMatrix<f64>,
    pub matrices: StageMatrices,
    pub dt: f64,
}

impl KroneckerStageOperator {
    pub fn new(
        c1: DMatrix<f64>,
        c2: DMatrix<f64>,
        matrices: StageMatrices,
        dt: f64,
    ) -> Result<Self> {
        let s = c1.nrows();
        if !c1.is_square() || c2.shape() != (s, s) {
            return Err(Error::DimensionMismatch {
                expected: s,
                found: c2.nrows(),
            });
        }
        if matrices.pairs() != 1 && matrices.pairs() != s {
            return Err(Error::DimensionMismatch {
                expected: s,
                found: matrices.pairs(),
            });
        }
        Ok(KroneckerStageOperator {
            c1,
            c2,
            matrices,
            dt,
        })
    }

    pub fn stages(&self) -> usize {
        self.c1.nrows()
    }

    /// Spatial dimension `m`.
    pub fn block_dim(&self) -> usize {
        self.matrices.dim()
    }

    pub fn apply_checked(&self, v: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        if v.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: v.len(),
            });
        }
        let mut y = vec![0.0; n];
        self.apply(v, &mut y);
        Ok(y)
    }
}

impl LinearOperator for KroneckerStageOperator {
    fn dim(&self) -> usize {
        self.stages() * self.block_dim()
    }

    fn apply(&self, v: &[f64], y: &mut [f64]) {
        let s = self.stages();
        let m = self.block_dim();
        let mut combo = vec![0.0; m];
        // Fixed summation order per block row: mass part over j, then
        // stiffness part over j.
        for i in 0..s {
            let yi = &mut y[i * m..(i + 1) * m];
            yi.iter_mut().for_each(|x| *x = 0.0);
            for (coeffs, mat, scale) in [
                (&self.c1, self.matrices.mass(i), 1.0),
                (&self.c2, self.matrices.stiffness(i), self.dt),
            ] {
                combo.iter_mut().for_each(|x| *x = 0.0);
                let mut any = false;
                for j in 0..s {
                    let cij = coeffs[(i, j)];
                    if cij != 0.0 {
                        any = true;
                        for (c, vj) in combo.iter_mut().zip(&v[j * m..(j + 1) * m]) {
                            *c += cij * vj;
                        }
                    }
                }
                if any && scale != 0.0 {
                    mat.spmv_add(scale, &combo, yi);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_sparse(rng: &mut impl Rng, m: usize) -> SparseMatrix {
        let dense: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                (0..m)
                    .map(|_| {
                        if rng.gen_bool(0.6) {
                            rng.gen_range(-1.0..1.0)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        SparseMatrix::from_dense(&dense)
    }

    fn dense_kron(c: &DMatrix<f64>, a: &SparseMatrix) -> DMatrix<f64> {
        let s = c.nrows();
        let m = a.nrows();
        DMatrix::from_fn(s * m, s * m, |r, col| {
            c[(r / m, col / m)] * a.get(r % m, col % m)
        })
    }

    #[test]
    fn scalar_coefficients_reduce_to_single_block() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(5);
        let (m, k) = (random_sparse(&mut rng, 4), random_sparse(&mut rng, 4));
        let one = DMatrix::from_element(1, 1, 1.0);
        let dt = 0.3;
        let op = KroneckerStageOperator::new(
            one.clone(),
            one,
            StageMatrices::shared(Arc::new(m.clone()), Arc::new(k.clone())).unwrap(),
            dt,
        )
        .unwrap();
        let v = vec![1.0, -1.0, 2.0, 0.5];
        let y = op.apply_checked(&v).unwrap();
        let mv = m.spmv(&v).unwrap();
        let kv = k.spmv(&v).unwrap();
        for i in 0..4 {
            assert!((y[i] - (mv[i] + dt * kv[i])).abs() < 1e-14);
        }
    }

    #[test]
    fn matches_dense_kronecker_sum() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(17);
        for s in 1..=4 {
            for m in [1, 3, 8] {
                let (mm, kk) = (random_sparse(&mut rng, m), random_sparse(&mut rng, m));
                let c1 = DMatrix::from_fn(s, s, |_, _| rng.gen_range(-1.0..1.0));
                let c2 = DMatrix::from_fn(s, s, |_, _| rng.gen_range(-1.0..1.0));
                let dt = rng.gen_range(0.01..1.0);
                let dense = dense_kron(&c1, &mm) + dense_kron(&c2, &kk) * dt;
                let op = KroneckerStageOperator::new(
                    c1,
                    c2,
                    StageMatrices::shared(Arc::new(mm), Arc::new(kk)).unwrap(),
                    dt,
                )
                .unwrap();
                for _ in 0..100 {
                    let v = nalgebra::DVector::from_fn(s * m, |_, _| rng.gen_range(-1.0..1.0));
                    let expect = &dense * &v;
                    let got = op.apply_checked(v.as_slice()).unwrap();
                    let err: f64 = got
                        .iter()
                        .zip(expect.iter())
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    assert!(err <= 1e-12 * expect.norm().max(1e-300), "s={s} m={m}");
                }
            }
        }
    }

    #[test]
    fn rejects_wrong_length() {
        let id = Arc::new(SparseMatrix::identity(2));
        let op = KroneckerStageOperator::new(
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            StageMatrices::shared(id.clone(), id).unwrap(),
            1.0,
        )
        .unwrap();
        assert!(op.apply_checked(&[1.0; 3]).is_err());
    }
}
