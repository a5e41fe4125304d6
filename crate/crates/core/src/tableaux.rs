//! Butcher tableaux: construction, structural queries and decompositions.
//!
//! Every tableau is an immutable `(A, b, c)` triple together with its formal
//! and stage order. The RadauIIA family is generated numerically from the
//! collocation nodes; the remaining methods are tabulated.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Tolerance for structural comparisons (stiff accuracy, triangularity).
pub const STRUCTURAL_TOL: f64 = 1e-12;
/// Residual target when polishing polynomial roots.
pub const ROOT_TOL: f64 = 1e-14;

/// Whether the recorded stage order is classical or weak.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageOrderKind {
    Classical,
    Weak,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ButcherTableau {
    pub name: String,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
    pub formal_order: u32,
    pub stage_order: u32,
    pub stage_order_kind: StageOrderKind,
}

/// Multiplicative split `A = L diag(D) U` with unit triangular `L`, `U`.
#[derive(Debug, Clone, PartialEq)]
pub struct LduFactors {
    pub l: DMatrix<f64>,
    pub d: DVector<f64>,
    pub u: DMatrix<f64>,
}

impl LduFactors {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.l * DMatrix::from_diagonal(&self.d) * &self.u
    }

    /// `L diag(D)`, the lower-triangular replacement used by Rana-LD.
    pub fn lower_times_diag(&self) -> DMatrix<f64> {
        &self.l * DMatrix::from_diagonal(&self.d)
    }

    /// `diag(D) U`.
    pub fn diag_times_upper(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.d) * &self.u
    }
}

/// Additive split `A = L + diag(D) + U` into strict triangles and diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct AdditiveSplit {
    pub lower: DMatrix<f64>,
    pub diag: DVector<f64>,
    pub upper: DMatrix<f64>,
}

impl AdditiveSplit {
    pub fn reassemble(&self) -> DMatrix<f64> {
        &self.lower + DMatrix::from_diagonal(&self.diag) + &self.upper
    }
}

/// Residuals of the quadrature conditions B(p) and stage conditions C(q).
#[derive(Debug, Clone, PartialEq)]
pub struct OrderResiduals {
    /// `quadrature[k-1] = |sum_i b_i c_i^(k-1) - 1/k|`.
    pub quadrature: Vec<f64>,
    /// `stage[k-1][i] = |sum_j a_ij c_j^(k-1) - c_i^k / k|`.
    pub stage: Vec<Vec<f64>>,
}

impl OrderResiduals {
    pub fn max_quadrature(&self) -> f64 {
        self.quadrature.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_stage(&self) -> f64 {
        self.stage.iter().flatten().copied().fold(0.0, f64::max)
    }
}

impl ButcherTableau {
    /// Builds a tableau from row-major coefficient rows.
    pub fn from_rows(
        name: impl Into<String>,
        a_rows: &[&[f64]],
        b: &[f64],
        c: &[f64],
        formal_order: u32,
        stage_order: u32,
    ) -> Self {
        let s = b.len();
        assert_eq!(c.len(), s, "c must have length s");
        assert_eq!(a_rows.len(), s, "A must have s rows");
        let a = DMatrix::from_fn(s, s, |i, j| {
            assert_eq!(a_rows[i].len(), s, "A must be square");
            a_rows[i][j]
        });
        ButcherTableau {
            name: name.into(),
            a,
            b: DVector::from_column_slice(b),
            c: DVector::from_column_slice(c),
            formal_order,
            stage_order,
            stage_order_kind: StageOrderKind::Classical,
        }
    }

    pub fn stages(&self) -> usize {
        self.b.len()
    }

    pub fn is_stiffly_accurate(&self) -> bool {
        let s = self.stages();
        (0..s).all(|j| (self.b[j] - self.a[(s - 1, j)]).abs() <= STRUCTURAL_TOL)
    }

    pub fn is_lower_triangular(&self) -> bool {
        let s = self.stages();
        (0..s).all(|i| (i + 1..s).all(|j| self.a[(i, j)].abs() <= STRUCTURAL_TOL))
    }

    /// LU with partial pivoting; the smallest pivot must exceed `1e-12 ||A||`.
    pub fn is_invertible(&self) -> bool {
        let norm = self.a.amax();
        if norm == 0.0 {
            return false;
        }
        let lu = self.a.clone().lu();
        let u = lu.u();
        let min_pivot = u
            .diagonal()
            .iter()
            .fold(f64::INFINITY, |m, p| m.min(p.abs()));
        min_pivot > STRUCTURAL_TOL * norm
    }

    /// `A^{-1}`, or an error naming the tableau when `A` is singular.
    pub fn a_inverse(&self) -> Result<DMatrix<f64>> {
        if !self.is_invertible() {
            return Err(Error::SingularTableau(self.name.clone()));
        }
        self.a
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::SingularTableau(self.name.clone()))
    }

    /// Weights `b^T A^{-1}` used to recombine stage values.
    pub fn value_update_weights(&self) -> Result<DVector<f64>> {
        let inv = self.a_inverse()?;
        Ok(inv.transpose() * &self.b)
    }

    /// Comma-separated dump: header `stage,c,a_1..a_s`, one row per stage,
    /// then a `b` row with an empty `c` cell.
    pub fn to_csv(&self) -> String {
        let s = self.stages();
        let mut out = String::from("stage,c");
        for j in 1..=s {
            out.push_str(&format!(",a_{j}"));
        }
        out.push('\n');
        for i in 0..s {
            out.push_str(&format!("{},{}", i + 1, self.c[i]));
            for j in 0..s {
                out.push_str(&format!(",{}", self.a[(i, j)]));
            }
            out.push('\n');
        }
        out.push_str("b,");
        for j in 0..s {
            out.push_str(&format!(",{}", self.b[j]));
        }
        out.push('\n');
        out
    }
}

impl fmt::Display for ButcherTableau {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = self.stages();
        let cell = |x: f64| format!("{x:.12}");
        let width = self
            .a
            .iter()
            .chain(self.b.iter())
            .chain(self.c.iter())
            .map(|&x| cell(x).len())
            .max()
            .unwrap_or(1);
        writeln!(f, "{}", self.name)?;
        for i in 0..s {
            write!(f, "{:>width$} |", cell(self.c[i]))?;
            for j in 0..s {
                write!(f, " {:>width$}", cell(self.a[(i, j)]))?;
            }
            writeln!(f)?;
        }
        write!(f, "{:>width$}-+", "-".repeat(width))?;
        writeln!(f, "{}", "-".repeat((width + 1) * s))?;
        write!(f, "{:>width$} |", "")?;
        for j in 0..s {
            write!(f, " {:>width$}", cell(self.b[j]))?;
        }
        writeln!(f)
    }
}

/// Monomial coefficients (lowest degree first) of
/// `d^{s-1}/dx^{s-1} [x^{s-1} (x-1)^s]`.
fn radau_node_polynomial(s: usize) -> Vec<f64> {
    // x^{s-1} (x-1)^s = sum_k C(s,k) (-1)^{s-k} x^{k+s-1}
    let deg = 2 * s - 1;
    let mut coeffs = vec![0.0; deg + 1];
    let mut binom = 1.0;
    for k in 0..=s {
        if k > 0 {
            binom = binom * (s - k + 1) as f64 / k as f64;
        }
        let sign = if (s - k).is_multiple_of(2) { 1.0 } else { -1.0 };
        coeffs[k + s - 1] = sign * binom;
    }
    for _ in 0..s - 1 {
        coeffs = coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(p, &a)| p as f64 * a)
            .collect();
    }
    coeffs
}

fn horner(coeffs: &[f64], x: f64) -> (f64, f64) {
    let mut p = 0.0;
    let mut dp = 0.0;
    for &a in coeffs.iter().rev() {
        dp = dp * x + p;
        p = p * x + a;
    }
    (p, dp)
}

/// Real roots of a polynomial with real simple roots, via companion-matrix
/// eigenvalues polished by Newton.
fn real_roots(coeffs: &[f64]) -> Vec<f64> {
    let lead = *coeffs.last().expect("nonempty polynomial");
    let monic: Vec<f64> = coeffs.iter().map(|a| a / lead).collect();
    let n = monic.len() - 1;
    let mut companion = DMatrix::<f64>::zeros(n, n);
    for i in 1..n {
        companion[(i, i - 1)] = 1.0;
    }
    for i in 0..n {
        companion[(i, n - 1)] = -monic[i];
    }
    let mut roots: Vec<f64> = companion
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .map(|mut x| {
            for _ in 0..50 {
                let (p, dp) = horner(&monic, x);
                if p.abs() < ROOT_TOL || dp == 0.0 {
                    break;
                }
                x -= p / dp;
            }
            x
        })
        .collect();
    roots.sort_by(|a, b| a.partial_cmp(b).expect("finite roots"));
    roots
}

/// Collocation tableau for the given nodes: row `i` of `A` solves
/// `sum_j a_ij c_j^k = c_i^{k+1} / (k+1)` for `k < s`, and `b` the same
/// system with right-hand side `1 / (k+1)`.
fn collocation_coefficients(c: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let s = c.len();
    let vt = DMatrix::from_fn(s, s, |k, j| c[j].powi(k as i32));
    let lu = vt.lu();
    let solve = |upper: f64| -> DVector<f64> {
        let rhs = DVector::from_fn(s, |k, _| upper.powi(k as i32 + 1) / (k + 1) as f64);
        lu.solve(&rhs).expect("distinct collocation nodes")
    };
    let mut a = DMatrix::zeros(s, s);
    for (i, &ci) in c.iter().enumerate() {
        a.set_row(i, &solve(ci).transpose());
    }
    (a, solve(1.0))
}

/// RadauIIA collocation method with `s` stages, `1 <= s <= 5`.
pub fn radau_iia(s: usize) -> Result<ButcherTableau> {
    if !(1..=5).contains(&s) {
        return Err(Error::UnsupportedStageCount {
            family: "RadauIIA",
            stages: s,
        });
    }
    let mut c = real_roots(&radau_node_polynomial(s));
    // The right endpoint is always a root; pin it so that the last row of A
    // integrates over exactly [0, 1].
    let last = c.len() - 1;
    debug_assert!((c[last] - 1.0).abs() < 1e-10);
    c[last] = 1.0;
    let (a, mut b) = collocation_coefficients(&c);
    // Stiff accuracy: the last row of A and b are the same integrals.
    for j in 0..s {
        b[j] = a[(s - 1, j)];
    }
    Ok(ButcherTableau {
        name: format!("RadauIIA({s})"),
        a,
        b,
        c: DVector::from_vec(c),
        formal_order: 2 * s as u32 - 1,
        stage_order: s as u32,
        stage_order_kind: StageOrderKind::Classical,
    })
}

/// LobattoIIIC with two or three stages.
pub fn lobatto_iiic(s: usize) -> Result<ButcherTableau> {
    match s {
        2 => Ok(ButcherTableau::from_rows(
            "LobattoIIIC(2)",
            &[&[0.5, -0.5], &[0.5, 0.5]],
            &[0.5, 0.5],
            &[0.0, 1.0],
            2,
            1,
        )),
        3 => Ok(ButcherTableau::from_rows(
            "LobattoIIIC(3)",
            &[
                &[1.0 / 6.0, -1.0 / 3.0, 1.0 / 6.0],
                &[1.0 / 6.0, 5.0 / 12.0, -1.0 / 12.0],
                &[1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
            ],
            &[1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
            &[0.0, 0.5, 1.0],
            4,
            2,
        )),
        _ => Err(Error::UnsupportedStageCount {
            family: "LobattoIIIC",
            stages: s,
        }),
    }
}

fn alexander_cubic(x: f64) -> f64 {
    ((x - 3.0) * x + 1.5) * x - 1.0 / 6.0
}

/// Diagonal coefficient of Alexander's three-stage DIRK: the root of
/// `x^3 - 3x^2 + 3x/2 - 1/6` in `[1/6, 1/2]`.
pub fn alexander_root() -> f64 {
    let (mut lo, mut hi) = (1.0 / 6.0, 0.5);
    let mut flo = alexander_cubic(lo);
    debug_assert!(flo * alexander_cubic(hi) < 0.0);
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        let fmid = alexander_cubic(mid);
        if (fmid < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fmid;
        } else {
            hi = mid;
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..20 {
        let p = alexander_cubic(x);
        if p.abs() < ROOT_TOL {
            break;
        }
        let dp = (3.0 * x - 6.0) * x + 1.5;
        x -= p / dp;
    }
    x
}

/// Alexander's L-stable three-stage, third-order DIRK.
pub fn alexander_dirk() -> ButcherTableau {
    let x = alexander_root();
    let y = -1.5 * x * x + 4.0 * x - 0.25;
    let z = 1.0 - x - y;
    debug_assert!((z - (1.5 * x * x - 5.0 * x + 1.25)).abs() < 1e-12);
    ButcherTableau::from_rows(
        "Alexander",
        &[&[x, 0.0, 0.0], &[(1.0 - x) / 2.0, x, 0.0], &[y, z, x]],
        &[y, z, x],
        &[x, (1.0 + x) / 2.0, 1.0],
        3,
        1,
    )
}

/// Four-stage DIRK of formal order and weak stage order three, stored at
/// eight printed decimals.
///
/// The third row's leading entry is negative: `-1.08354073`. With that sign
/// row three sums to `c_3` like every other row.
pub fn wsodirk433() -> ButcherTableau {
    let mut tab = ButcherTableau::from_rows(
        "WSODIRK433",
        &[
            &[0.13756544, 0.0, 0.0, 0.0],
            &[0.56695123, 0.23483889, 0.0, 0.0],
            &[-1.08354073, 2.96618224, 0.44915522, 0.0],
            &[0.59761292, -0.43420998, -0.05305815, 0.88965521],
        ],
        &[0.59761292, -0.43420998, -0.05305815, 0.88965521],
        &[0.13756544, 0.80179012, 2.33179673, 1.0],
        3,
        3,
    );
    tab.stage_order_kind = StageOrderKind::Weak;
    tab
}

/// Doolittle elimination without pivoting: `A = L diag(D) U`.
pub fn ldu_factor(tab: &ButcherTableau) -> Result<LduFactors> {
    let s = tab.stages();
    let mut l = DMatrix::<f64>::identity(s, s);
    // `w` holds the upper factor diag(D) U while eliminating.
    let mut w = tab.a.clone();
    for k in 0..s {
        let pivot = w[(k, k)];
        if pivot.abs() < ROOT_TOL {
            return Err(Error::SingularFactorization { stage: k + 1 });
        }
        for i in k + 1..s {
            let factor = w[(i, k)] / pivot;
            l[(i, k)] = factor;
            for j in k..s {
                w[(i, j)] -= factor * w[(k, j)];
            }
            w[(i, k)] = 0.0;
        }
    }
    let d = w.diagonal();
    let u = DMatrix::from_fn(s, s, |i, j| match i.cmp(&j) {
        std::cmp::Ordering::Equal => 1.0,
        std::cmp::Ordering::Less => w[(i, j)] / d[i],
        std::cmp::Ordering::Greater => 0.0,
    });
    Ok(LduFactors { l, d, u })
}

pub fn additive_split(tab: &ButcherTableau) -> AdditiveSplit {
    let s = tab.stages();
    let a = &tab.a;
    AdditiveSplit {
        lower: DMatrix::from_fn(s, s, |i, j| if i > j { a[(i, j)] } else { 0.0 }),
        diag: a.diagonal(),
        upper: DMatrix::from_fn(s, s, |i, j| if i < j { a[(i, j)] } else { 0.0 }),
    }
}

/// Quadrature residuals for `k = 1..=p` and classical stage residuals up to
/// the tableau's classical stage order (one for weak-stage-order methods).
pub fn order_condition_residuals(tab: &ButcherTableau, p: usize) -> OrderResiduals {
    let q = match tab.stage_order_kind {
        StageOrderKind::Classical => tab.stage_order as usize,
        StageOrderKind::Weak => 1,
    };
    OrderResiduals {
        quadrature: quadrature_residuals(tab, p),
        stage: stage_residuals(tab, q),
    }
}

/// `|sum_i b_i c_i^(k-1) - 1/k|` for `k = 1..=p`.
pub fn quadrature_residuals(tab: &ButcherTableau, p: usize) -> Vec<f64> {
    (1..=p)
        .map(|k| {
            let sum: f64 = tab
                .b
                .iter()
                .zip(tab.c.iter())
                .map(|(b, c)| b * c.powi(k as i32 - 1))
                .sum();
            (sum - 1.0 / k as f64).abs()
        })
        .collect()
}

/// `|sum_j a_ij c_j^(k-1) - c_i^k / k|` for `k = 1..=q`, indexed `[k-1][i]`.
pub fn stage_residuals(tab: &ButcherTableau, q: usize) -> Vec<Vec<f64>> {
    let s = tab.stages();
    (1..=q)
        .map(|k| {
            (0..s)
                .map(|i| {
                    let sum: f64 = (0..s)
                        .map(|j| tab.a[(i, j)] * tab.c[j].powi(k as i32 - 1))
                        .sum();
                    (sum - tab.c[i].powi(k as i32) / k as f64).abs()
                })
                .collect()
        })
        .collect()
}

/// Looks a tableau up by a `family[:stages]` string such as `radau-iia:3`.
pub fn from_spec(spec: &str) -> Result<ButcherTableau> {
    let (family, stages) = match spec.split_once(':') {
        Some((f, s)) => {
            let stages = s
                .trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidSettings(format!("bad stage count in '{spec}'")))?;
            (f.trim().to_ascii_lowercase(), Some(stages))
        }
        None => (spec.trim().to_ascii_lowercase(), None),
    };
    match (family.as_str(), stages) {
        ("radau-iia" | "radauiia" | "radau", Some(s)) => radau_iia(s),
        ("lobatto-iiic" | "lobattoiiic" | "lobatto", Some(s)) => lobatto_iiic(s),
        ("backward-euler" | "be", None) => radau_iia(1),
        ("alexander", None | Some(3)) => Ok(alexander_dirk()),
        ("wsodirk433", None | Some(4)) => Ok(wsodirk433()),
        _ => Err(Error::InvalidSettings(format!("unknown tableau '{spec}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn radau_one_is_backward_euler() {
        let t = radau_iia(1).unwrap();
        assert_eq!(t.a[(0, 0)], 1.0);
        assert_eq!(t.b[0], 1.0);
        assert_eq!(t.c[0], 1.0);
    }

    #[test]
    fn radau_two_matches_closed_form() {
        let t = radau_iia(2).unwrap();
        let a = [[5.0 / 12.0, -1.0 / 12.0], [0.75, 0.25]];
        for i in 0..2 {
            for j in 0..2 {
                assert_close(t.a[(i, j)], a[i][j], 1e-12);
            }
        }
        assert_close(t.c[0], 1.0 / 3.0, 1e-12);
        assert_eq!(t.c[1], 1.0);
        assert_close(t.b[0], 0.75, 1e-12);
    }

    #[test]
    fn radau_three_matches_closed_form() {
        let t = radau_iia(3).unwrap();
        let r6 = 6f64.sqrt();
        let a = [
            [
                11.0 / 45.0 - 7.0 * r6 / 360.0,
                37.0 / 225.0 - 169.0 * r6 / 1800.0,
                -2.0 / 225.0 + r6 / 75.0,
            ],
            [
                37.0 / 225.0 + 169.0 * r6 / 1800.0,
                11.0 / 45.0 + 7.0 * r6 / 360.0,
                -2.0 / 225.0 - r6 / 75.0,
            ],
            [4.0 / 9.0 - r6 / 36.0, 4.0 / 9.0 + r6 / 36.0, 1.0 / 9.0],
        ];
        let c = [0.4 - r6 / 10.0, 0.4 + r6 / 10.0, 1.0];
        for i in 0..3 {
            assert_close(t.c[i], c[i], 1e-12);
            for j in 0..3 {
                assert_close(t.a[(i, j)], a[i][j], 1e-12);
            }
        }
    }

    #[test]
    fn radau_rejects_out_of_range() {
        assert!(matches!(
            radau_iia(0),
            Err(Error::UnsupportedStageCount { .. })
        ));
        assert!(matches!(
            radau_iia(6),
            Err(Error::UnsupportedStageCount { .. })
        ));
    }

    #[test]
    fn radau_high_stage_counts_are_consistent() {
        for s in 4..=5 {
            let t = radau_iia(s).unwrap();
            let r = order_condition_residuals(&t, 2 * s - 1);
            assert!(r.max_quadrature() < 1e-12, "s={s}: {:?}", r.quadrature);
            assert!(r.max_stage() < 1e-12, "s={s}");
            assert!(t.is_stiffly_accurate());
            assert!(t.c.iter().all(|&c| c > 0.0 && c <= 1.0));
        }
    }

    #[test]
    fn lobatto_two_is_tabulated() {
        let t = lobatto_iiic(2).unwrap();
        assert_eq!(t.a, DMatrix::from_row_slice(2, 2, &[0.5, -0.5, 0.5, 0.5]));
        let row_sums = t.a.column_sum();
        assert_eq!(row_sums[0], t.c[0]);
        assert_eq!(row_sums[1], t.c[1]);
        assert!(t.is_stiffly_accurate());
        assert!(lobatto_iiic(4).is_err());
    }

    #[test]
    fn lobatto_three_quadrature_order_four() {
        let t = lobatto_iiic(3).unwrap();
        assert!(quadrature_residuals(&t, 4).iter().all(|r| *r < 1e-14));
        assert!(t.is_stiffly_accurate());
    }

    #[test]
    fn alexander_root_and_structure() {
        let x = alexander_root();
        assert!(alexander_cubic(x).abs() < 1e-14);
        assert_close(x, 0.435866521508459, 1e-14);
        let t = alexander_dirk();
        assert_close(t.b.sum(), 1.0, 1e-12);
        for j in 0..3 {
            assert_eq!(t.b[j], t.a[(2, j)]);
        }
        assert!(t.is_lower_triangular());
        assert!(t.is_stiffly_accurate());
    }

    #[test]
    fn alexander_stage_order_one() {
        let t = alexander_dirk();
        assert!(quadrature_residuals(&t, 3).iter().all(|r| *r < 1e-12));
        let c2 = &stage_residuals(&t, 2)[1];
        assert!(c2.iter().any(|r| *r > 0.01));
    }

    #[test]
    fn wsodirk433_printed_values() {
        let t = wsodirk433();
        assert_eq!(t.a[(0, 0)], 0.13756544);
        assert_eq!(t.c[1], 0.80179012);
        assert_close(t.b.sum(), 1.0, 1e-7);
        assert_close(t.a[(1, 0)] + t.a[(1, 1)], t.c[1], 1e-8);
        let row3: f64 = t.a.row(2).sum();
        assert_close(row3, t.c[2], 1e-8);
        assert!(t.is_lower_triangular() && t.is_stiffly_accurate());
        assert!(quadrature_residuals(&t, 3).iter().all(|r| *r < 1e-7));
    }

    #[test]
    fn ldu_of_radau_two() {
        let f = ldu_factor(&radau_iia(2).unwrap()).unwrap();
        assert_close(f.l[(1, 0)], 9.0 / 5.0, 1e-12);
        assert_close(f.d[0], 5.0 / 12.0, 1e-12);
        assert_close(f.d[1], 2.0 / 5.0, 1e-12);
        assert_close(f.u[(0, 1)], -1.0 / 5.0, 1e-12);
        assert_eq!(f.l[(0, 0)], 1.0);
        assert_eq!(f.u[(1, 1)], 1.0);
    }

    #[test]
    fn ldu_trivial_and_lower_cases() {
        let f = ldu_factor(&radau_iia(1).unwrap()).unwrap();
        assert_eq!((f.l[(0, 0)], f.d[0], f.u[(0, 0)]), (1.0, 1.0, 1.0));
        for t in [alexander_dirk(), wsodirk433()] {
            let f = ldu_factor(&t).unwrap();
            assert_eq!(f.u, DMatrix::identity(t.stages(), t.stages()));
        }
    }

    #[test]
    fn ldu_reports_failing_stage() {
        let t = ButcherTableau::from_rows(
            "zero-lead",
            &[&[0.0, 1.0], &[1.0, 0.0]],
            &[0.5, 0.5],
            &[1.0, 1.0],
            1,
            1,
        );
        assert!(matches!(
            ldu_factor(&t),
            Err(Error::SingularFactorization { stage: 1 })
        ));
    }

    #[test]
    fn additive_split_of_radau_two() {
        let t = radau_iia(2).unwrap();
        let sp = additive_split(&t);
        assert_close(sp.diag[0], 5.0 / 12.0, 1e-12);
        assert_close(sp.diag[1], 0.25, 1e-12);
        assert_close(sp.lower[(1, 0)], 0.75, 1e-12);
        assert_close(sp.upper[(0, 1)], -1.0 / 12.0, 1e-12);
        assert_eq!(sp.reassemble(), t.a);
    }

    #[test]
    fn additive_split_of_diagonal_tableau() {
        let t = ButcherTableau::from_rows(
            "diag",
            &[&[0.5, 0.0], &[0.0, 1.0]],
            &[0.5, 0.5],
            &[0.5, 1.0],
            1,
            1,
        );
        let sp = additive_split(&t);
        assert_eq!(sp.lower, DMatrix::zeros(2, 2));
        assert_eq!(sp.upper, DMatrix::zeros(2, 2));
    }

    #[test]
    fn structural_flags() {
        let t = radau_iia(2).unwrap();
        assert_eq!(
            (
                t.is_stiffly_accurate(),
                t.is_lower_triangular(),
                t.is_invertible()
            ),
            (true, false, true)
        );
        let lob = lobatto_iiic(2).unwrap();
        assert!(lob.is_invertible());
        assert_close(lob.a.determinant(), 0.5, 1e-15);
        let euler = ButcherTableau::from_rows("explicit Euler", &[&[0.0]], &[1.0], &[0.0], 1, 1);
        assert!(!euler.is_invertible());
        assert!(euler.a_inverse().is_err());
    }

    #[test]
    fn backward_euler_is_first_order() {
        let r = order_condition_residuals(&radau_iia(1).unwrap(), 2);
        assert_eq!(r.quadrature[0], 0.0);
        assert_eq!(r.quadrature[1], 0.5);
    }

    #[test]
    fn csv_layout() {
        let csv = radau_iia(1).unwrap().to_csv();
        assert_eq!(csv, "stage,c,a_1\n1,1,1\nb,,1\n");
        let csv = lobatto_iiic(2).unwrap().to_csv();
        assert_eq!(
            csv,
            "stage,c,a_1,a_2\n1,0,0.5,-0.5\n2,1,0.5,0.5\nb,,0.5,0.5\n"
        );
    }

    #[test]
    fn family_string_lookup() {
        assert_eq!(from_spec("radau-iia:2").unwrap().stages(), 2);
        assert_eq!(from_spec("alexander").unwrap().name, "Alexander");
        assert!(matches!(
            from_spec("radau-iia:9"),
            Err(Error::UnsupportedStageCount { .. })
        ));
        assert!(from_spec("gauss:2").is_err());
    }
}
