//! Block preconditioners for the stage-coupled system.
//!
//! Each kind replaces the Butcher matrix `A` by a diagonal or triangular
//! `Ã` and inverts the resulting block system exactly by block substitution:
//!
//! * IA form: `P = Ã^{-1} (x) M + dt I (x) K`, diagonal blocks `(Ã^{-1})_ii M + dt K`.
//! * AI form: `P = I (x) M + dt Ã (x) K`, diagonal blocks `M + dt Ã_ii K`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::sparsela::{BlockFactorization, Preconditioner, SparseMatrix, StageMatrices};
use crate::tableaux::{additive_split, ldu_factor, ButcherTableau};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PreconditionerKind {
    /// Block Jacobi, `Ã = diag(A)`.
    BlockDiagonal,
    /// Block Gauss-Seidel, `Ã = L + D`.
    BlockLower,
    /// `Ã = D + U`, applied by back substitution.
    BlockUpper,
    /// `Ã = L diag(D)` from `A = L diag(D) U`.
    RanaLD,
    /// `Ã = diag(D) U`.
    RanaDU,
}

impl PreconditionerKind {
    pub const ALL: [PreconditionerKind; 5] = [
        PreconditionerKind::BlockDiagonal,
        PreconditionerKind::BlockLower,
        PreconditionerKind::BlockUpper,
        PreconditionerKind::RanaLD,
        PreconditionerKind::RanaDU,
    ];

    /// Command-line name.
    pub fn flag(self) -> &'static str {
        match self {
            PreconditionerKind::BlockDiagonal => "jacobi",
            PreconditionerKind::BlockLower => "gs-lower",
            PreconditionerKind::BlockUpper => "gs-upper",
            PreconditionerKind::RanaLD => "rana-ld",
            PreconditionerKind::RanaDU => "rana-du",
        }
    }

    fn shape(self) -> Shape {
        match self {
            PreconditionerKind::BlockDiagonal => Shape::Diagonal,
            PreconditionerKind::BlockLower | PreconditionerKind::RanaLD => Shape::Lower,
            PreconditionerKind::BlockUpper | PreconditionerKind::RanaDU => Shape::Upper,
        }
    }
}

impl fmt::Display for PreconditionerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.flag())
    }
}

impl FromStr for PreconditionerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PreconditionerKind::ALL
            .into_iter()
            .find(|k| k.flag() == s)
            .ok_or_else(|| Error::InvalidSettings(format!("unknown preconditioner '{s}'")))
    }
}

/// Which Kronecker splitting the stage system uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SystemForm {
    /// `I (x) M + dt A (x) K`.
    AI,
    /// `A^{-1} (x) M + dt I (x) K`.
    IA,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Diagonal,
    Lower,
    Upper,
}

/// Triangular or diagonal replacement `Ã` of `A` for the given kind.
pub fn replacement_matrix(kind: PreconditionerKind, tab: &ButcherTableau) -> Result<DMatrix<f64>> {
    let split = additive_split(tab);
    let diag = DMatrix::from_diagonal(&split.diag);
    Ok(match kind {
        PreconditionerKind::BlockDiagonal => diag,
        PreconditionerKind::BlockLower => split.lower + diag,
        PreconditionerKind::BlockUpper => diag + split.upper,
        PreconditionerKind::RanaLD => ldu_factor(tab)?.lower_times_diag(),
        PreconditionerKind::RanaDU => ldu_factor(tab)?.diag_times_upper(),
    })
}

/// Inverse of a triangular matrix by substitution on the identity.
fn triangular_inverse(t: &DMatrix<f64>, shape: Shape) -> Option<DMatrix<f64>> {
    let s = t.nrows();
    if (0..s).any(|i| t[(i, i)] == 0.0) {
        return None;
    }
    let mut inv = DMatrix::zeros(s, s);
    for col in 0..s {
        let rows: Box<dyn Iterator<Item = usize>> = match shape {
            Shape::Upper => Box::new((0..s).rev()),
            _ => Box::new(0..s),
        };
        for i in rows {
            let mut acc = if i == col { 1.0 } else { 0.0 };
            for k in 0..s {
                let coupled = match shape {
                    Shape::Diagonal => false,
                    Shape::Lower => k < i,
                    Shape::Upper => k > i,
                };
                if coupled {
                    acc -= t[(i, k)] * inv[(k, col)];
                }
            }
            inv[(i, col)] = acc / t[(i, i)];
        }
    }
    Some(inv)
}

/// Built block preconditioner with factorized diagonal blocks.
#[derive(Debug, Clone)]
pub struct StagePreconditioner {
    kind: PreconditionerKind,
    form: SystemForm,
    a_tilde: DMatrix<f64>,
    a_tilde_inv: DMatrix<f64>,
    c1: DMatrix<f64>,
    c2: DMatrix<f64>,
    matrices: StageMatrices,
    dt: f64,
    constrained: Vec<bool>,
    blocks: Vec<BlockFactorization>,
}

impl StagePreconditioner {
    /// Builds the preconditioner for shared `M`, `K`.
    pub fn build(
        kind: PreconditionerKind,
        tab: &ButcherTableau,
        mass: Arc<SparseMatrix>,
        stiffness: Arc<SparseMatrix>,
        dt: f64,
        form: SystemForm,
    ) -> Result<Self> {
        Self::build_for(
            kind,
            tab,
            StageMatrices::shared(mass, stiffness)?,
            dt,
            form,
            &[],
        )
    }

    /// General builder: per-stage matrices and constrained (Dirichlet) dofs,
    /// whose rows and columns become identity in every stage block.
    pub fn build_for(
        kind: PreconditionerKind,
        tab: &ButcherTableau,
        matrices: StageMatrices,
        dt: f64,
        form: SystemForm,
        constrained_dofs: &[usize],
    ) -> Result<Self> {
        let s = tab.stages();
        let m = matrices.dim();
        if matrices.pairs() != 1 && matrices.pairs() != s {
            return Err(Error::DimensionMismatch {
                expected: s,
                found: matrices.pairs(),
            });
        }
        let needs_invertible = form == SystemForm::IA
            || matches!(
                kind,
                PreconditionerKind::RanaLD | PreconditionerKind::RanaDU
            );
        if needs_invertible && !tab.is_invertible() {
            return Err(Error::SingularTableau(tab.name.clone()));
        }
        let shape = kind.shape();
        let a_tilde = replacement_matrix(kind, tab)?;
        let a_tilde_inv = triangular_inverse(&a_tilde, shape);
        let (c1, c2) = match form {
            SystemForm::AI => (DMatrix::identity(s, s), a_tilde.clone()),
            SystemForm::IA => {
                let inv = a_tilde_inv.clone().ok_or_else(|| {
                    Error::SingularTableau(format!("{} ({kind} replacement)", tab.name))
                })?;
                (inv, DMatrix::identity(s, s))
            }
        };
        let mut constrained = vec![false; m];
        for &d in constrained_dofs {
            if d >= m {
                return Err(Error::DofOutOfRange { dof: d, dim: m });
            }
            constrained[d] = true;
        }
        let blocks = (0..s)
            .map(|i| {
                let block = SparseMatrix::linear_combination(
                    c1[(i, i)],
                    matrices.mass(i),
                    dt * c2[(i, i)],
                    matrices.stiffness(i),
                )?;
                let block = if constrained_dofs.is_empty() {
                    block
                } else {
                    block.with_identity_on(&constrained)
                };
                BlockFactorization::new(&block)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(StagePreconditioner {
            kind,
            form,
            a_tilde,
            a_tilde_inv: a_tilde_inv.unwrap_or_else(|| DMatrix::from_element(s, s, f64::NAN)),
            c1,
            c2,
            matrices,
            dt,
            constrained,
            blocks,
        })
    }

    pub fn kind(&self) -> PreconditionerKind {
        self.kind
    }

    pub fn form(&self) -> SystemForm {
        self.form
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn stages(&self) -> usize {
        self.a_tilde.nrows()
    }

    pub fn a_tilde(&self) -> &DMatrix<f64> {
        &self.a_tilde
    }

    /// `Ã^{-1}`; NaN-filled when `Ã` has a zero diagonal (AI form only).
    pub fn a_tilde_inv(&self) -> &DMatrix<f64> {
        &self.a_tilde_inv
    }

    /// Coefficients `(alpha, beta)` of diagonal block `i = alpha M + beta K`.
    pub fn block_coefficients(&self, i: usize) -> (f64, f64) {
        (self.c1[(i, i)], self.dt * self.c2[(i, i)])
    }

    pub fn apply_checked(&self, r: &[f64]) -> Result<Vec<f64>> {
        let n = self.stages() * self.matrices.dim();
        if r.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: r.len(),
            });
        }
        let mut z = vec![0.0; n];
        self.apply(r, &mut z);
        Ok(z)
    }

    /// `rhs -= (c1_ij M_i + dt c2_ij K_i) z_j`, skipping constrained rows
    /// and columns.
    fn subtract_coupling(
        &self,
        i: usize,
        j: usize,
        zj: &[f64],
        rhs: &mut [f64],
        scratch: &mut Vec<f64>,
    ) {
        let masked: &[f64] = if self.constrained.iter().any(|&c| c) {
            scratch.clear();
            scratch.extend(
                zj.iter()
                    .zip(&self.constrained)
                    .map(|(&v, &c)| if c { 0.0 } else { v }),
            );
            scratch
        } else {
            zj
        };
        let mut acc = vec![0.0; rhs.len()];
        let (a, b) = (self.c1[(i, j)], self.dt * self.c2[(i, j)]);
        if a != 0.0 {
            self.matrices.mass(i).spmv_add(a, masked, &mut acc);
        }
        if b != 0.0 {
            self.matrices.stiffness(i).spmv_add(b, masked, &mut acc);
        }
        for ((r, a), &c) in rhs.iter_mut().zip(&acc).zip(&self.constrained) {
            if !c {
                *r -= a;
            }
        }
    }
}

impl Preconditioner for StagePreconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let s = self.stages();
        let m = self.matrices.dim();
        let shape = self.kind.shape();
        let order: Vec<usize> = match shape {
            Shape::Upper => (0..s).rev().collect(),
            _ => (0..s).collect(),
        };
        let mut rhs = vec![0.0; m];
        let mut scratch = Vec::with_capacity(m);
        for &i in &order {
            rhs.copy_from_slice(&r[i * m..(i + 1) * m]);
            let coupled: Vec<usize> = match shape {
                Shape::Diagonal => Vec::new(),
                Shape::Lower => (0..i).collect(),
                Shape::Upper => (i + 1..s).collect(),
            };
            for j in coupled {
                let zj = z[j * m..(j + 1) * m].to_vec();
                self.subtract_coupling(i, j, &zj, &mut rhs, &mut scratch);
            }
            self.blocks[i].solve_into(&rhs, &mut z[i * m..(i + 1) * m]);
        }
    }
}
