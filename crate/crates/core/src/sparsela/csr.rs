use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// Real matrix in compressed-sparse-row layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a matrix from raw CSR arrays, validating the layout invariants.
    pub fn from_csr(
        nrows: usize,
        ncols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let bad = |msg: &str| Err(Error::InvalidSettings(format!("CSR layout: {msg}")));
        if row_offsets.len() != nrows + 1 || row_offsets[0] != 0 {
            return bad("row offsets must have nrows + 1 entries starting at 0");
        }
        if *row_offsets.last().unwrap() != col_indices.len() || col_indices.len() != values.len() {
            return bad("last row offset must equal nnz");
        }
        for r in 0..nrows {
            let (lo, hi) = (row_offsets[r], row_offsets[r + 1]);
            if lo > hi {
                return bad("row offsets must be nondecreasing");
            }
            let cols = &col_indices[lo..hi];
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return bad("column indices must be strictly increasing within a row");
            }
            if cols.iter().any(|&c| c >= ncols) {
                return bad("column index out of range");
            }
        }
        Ok(SparseMatrix {
            nrows,
            ncols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Assembles from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, c, _) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of range");
            counts[r + 1] += 1;
        }
        for r in 0..nrows {
            counts[r + 1] += counts[r];
        }
        let mut cursor = counts.clone();
        let mut entries = vec![(0usize, 0.0f64); triplets.len()];
        for &(r, c, v) in triplets {
            entries[cursor[r]] = (c, v);
            cursor[r] += 1;
        }
        let mut row_offsets = Vec::with_capacity(nrows + 1);
        let mut col_indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_offsets.push(0);
        for r in 0..nrows {
            let row = &mut entries[counts[r]..counts[r + 1]];
            row.sort_by_key(|e| e.0);
            for &(c, v) in row.iter() {
                if col_indices.len() > *row_offsets.last().unwrap()
                    && *col_indices.last().unwrap() == c
                {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_indices.push(c);
                    values.push(v);
                }
            }
            row_offsets.push(col_indices.len());
        }
        SparseMatrix {
            nrows,
            ncols,
            row_offsets,
            col_indices,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            nrows: n,
            ncols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        let triplets: Vec<_> = rows
            .iter()
            .enumerate()
            .flat_map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(move |(j, &v)| (i, j, v))
            })
            .collect();
        Self::from_triplets(nrows, ncols, &triplets)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.row_offsets[r], self.row_offsets[r + 1]);
        (&self.col_indices[lo..hi], &self.values[lo..hi])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        cols.binary_search(&c).map_or(0.0, |k| vals[k])
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.ncols]; self.nrows];
        for (r, row) in out.iter_mut().enumerate() {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                row[c] = v;
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `y = A x`.
    pub fn spmv(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.ncols {
            return Err(Error::DimensionMismatch {
                expected: self.ncols,
                found: x.len(),
            });
        }
        let mut y = vec![0.0; self.nrows];
        self.spmv_into(x, &mut y);
        Ok(y)
    }

    /// `y = A x` into a caller buffer; lengths are the caller's responsibility.
    pub fn spmv_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for (r, yr) in y.iter_mut().enumerate() {
            let (lo, hi) = (self.row_offsets[r], self.row_offsets[r + 1]);
            let mut acc = 0.0;
            for k in lo..hi {
                acc += self.values[k] * x[self.col_indices[k]];
            }
            *yr = acc;
        }
    }

    /// `y += alpha A x`.
    pub fn spmv_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for (r, yr) in y.iter_mut().enumerate() {
            let (lo, hi) = (self.row_offsets[r], self.row_offsets[r + 1]);
            let mut acc = 0.0;
            for k in lo..hi {
                acc += self.values[k] * x[self.col_indices[k]];
            }
            *yr += alpha * acc;
        }
    }

    /// `alpha A + beta B` over the union sparsity pattern.
    pub fn linear_combination(
        alpha: f64,
        a: &SparseMatrix,
        beta: f64,
        b: &SparseMatrix,
    ) -> Result<Self> {
        if a.nrows != b.nrows || a.ncols != b.ncols {
            return Err(Error::DimensionMismatch {
                expected: a.nrows * a.ncols,
                found: b.nrows * b.ncols,
            });
        }
        let mut row_offsets = vec![0];
        let mut col_indices = Vec::with_capacity(a.nnz().max(b.nnz()));
        let mut values = Vec::with_capacity(a.nnz().max(b.nnz()));
        for r in 0..a.nrows {
            let (ac, av) = a.row(r);
            let (bc, bv) = b.row(r);
            let (mut i, mut j) = (0, 0);
            while i < ac.len() || j < bc.len() {
                let take_a = j == bc.len() || (i < ac.len() && ac[i] <= bc[j]);
                let take_b = i == ac.len() || (j < bc.len() && bc[j] <= ac[i]);
                let col = if take_a { ac[i] } else { bc[j] };
                let mut v = 0.0;
                if take_a {
                    v += alpha * av[i];
                    i += 1;
                }
                if take_b {
                    v += beta * bv[j];
                    j += 1;
                }
                col_indices.push(col);
                values.push(v);
            }
            row_offsets.push(col_indices.len());
        }
        Ok(SparseMatrix {
            nrows: a.nrows,
            ncols: a.ncols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn transpose(&self) -> Self {
        let mut triplets = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            triplets.extend(cols.iter().zip(vals).map(|(&c, &v)| (c, r, v)));
        }
        Self::from_triplets(self.ncols, self.nrows, &triplets)
    }

    /// Replaces rows and columns of the listed dofs by identity rows/columns.
    ///
    /// `mask[i]` marks constrained indices; the matrix must be square.
    pub fn with_identity_on(&self, mask: &[bool]) -> Self {
        assert_eq!(self.nrows, self.ncols);
        assert_eq!(mask.len(), self.nrows);
        let mut row_offsets = vec![0];
        let mut col_indices = Vec::with_capacity(self.nnz());
        let mut values = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            if mask[r] {
                col_indices.push(r);
                values.push(1.0);
            } else {
                let (cols, vals) = self.row(r);
                for (&c, &v) in cols.iter().zip(vals) {
                    if !mask[c] {
                        col_indices.push(c);
                        values.push(v);
                    }
                }
            }
            row_offsets.push(col_indices.len());
        }
        SparseMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            row_offsets,
            col_indices,
            values,
        }
    }

    /// Writes the matrix in Matrix Market coordinate format (1-based).
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> Result<()> {
        let mut out = String::from("%%MatrixMarket matrix coordinate real general\n");
        writeln!(out, "{} {} {}", self.nrows, self.ncols, self.nnz()).unwrap();
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                writeln!(out, "{} {} {:e}", r + 1, c + 1, v).unwrap();
            }
        }
        w.write_all(out.as_bytes())?;
        Ok(())
    }

    /// Reads a real general coordinate Matrix Market stream.
    pub fn read_matrix_market<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let banner = lines
            .next()
            .ok_or_else(|| Error::MatrixMarket("empty input".into()))??;
        let lower = banner.to_ascii_lowercase();
        if !lower.starts_with("%%matrixmarket matrix coordinate real general") {
            return Err(Error::MatrixMarket(format!(
                "unsupported banner '{banner}'"
            )));
        }
        let mut header = None;
        let mut triplets = Vec::new();
        for line in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('%') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let parse_idx = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::MatrixMarket(format!("bad integer '{s}'")))
            };
            match header {
                None => {
                    if fields.len() != 3 {
                        return Err(Error::MatrixMarket("size line needs three fields".into()));
                    }
                    header = Some((
                        parse_idx(fields[0])?,
                        parse_idx(fields[1])?,
                        parse_idx(fields[2])?,
                    ));
                }
                Some((nr, nc, _)) => {
                    if fields.len() != 3 {
                        return Err(Error::MatrixMarket(format!("bad entry line '{line}'")));
                    }
                    let (i, j) = (parse_idx(fields[0])?, parse_idx(fields[1])?);
                    if i == 0 || j == 0 || i > nr || j > nc {
                        return Err(Error::MatrixMarket(format!(
                            "index out of range in '{line}'"
                        )));
                    }
                    let v = fields[2]
                        .parse::<f64>()
                        .map_err(|_| Error::MatrixMarket(format!("bad value '{}'", fields[2])))?;
                    triplets.push((i - 1, j - 1, v));
                }
            }
        }
        let (nr, nc, nnz) =
            header.ok_or_else(|| Error::MatrixMarket("missing size line".into()))?;
        if triplets.len() != nnz {
            return Err(Error::MatrixMarket(format!(
                "expected {nnz} entries, found {}",
                triplets.len()
            )));
        }
        Ok(Self::from_triplets(nr, nc, &triplets))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn stiffness_1d(n: usize) -> SparseMatrix {
        let h = 1.0 / n as f64;
        let mut t = Vec::new();
        for e in 0..n {
            for (a, b, v) in [(0, 0, 1.0), (0, 1, -1.0), (1, 0, -1.0), (1, 1, 1.0)] {
                t.push((e + a, e + b, v / h));
            }
        }
        SparseMatrix::from_triplets(n + 1, n + 1, &t)
    }

    #[test]
    fn identity_spmv() {
        let x = vec![1.0, -2.0, 3.5];
        assert_eq!(SparseMatrix::identity(3).spmv(&x).unwrap(), x);
    }

    #[test]
    fn stiffness_kills_constants() {
        let k = stiffness_1d(6);
        let y = k.spmv(&vec![1.0; 7]).unwrap();
        assert!(y.iter().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn random_spmv_vs_dense() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        let dense: Vec<Vec<f64>> = (0..5)
            .map(|_| {
                (0..5)
                    .map(|_| {
                        if rng.gen_bool(0.5) {
                            rng.gen_range(-1.0..1.0)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        let a = SparseMatrix::from_dense(&dense);
        let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = a.spmv(&x).unwrap();
        for i in 0..5 {
            let expect: f64 = (0..5).map(|j| dense[i][j] * x[j]).sum();
            assert!((y[i] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn spmv_dimension_mismatch() {
        assert!(matches!(
            SparseMatrix::identity(3).spmv(&[1.0]),
            Err(Error::DimensionMismatch {
                expected: 3,
                found: 1
            })
        ));
    }

    #[test]
    fn triplets_sum_duplicates() {
        let a = SparseMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (0, 1, 2.0), (1, 0, -1.0)]);
        assert_eq!(a.nnz(), 2);
        assert_eq!(a.get(0, 1), 3.0);
    }

    #[test]
    fn from_csr_validates() {
        assert!(SparseMatrix::from_csr(2, 2, vec![0, 1, 2], vec![0, 1], vec![1.0, 1.0]).is_ok());
        assert!(SparseMatrix::from_csr(2, 2, vec![0, 2, 2], vec![1, 0], vec![1.0, 1.0]).is_err());
        assert!(SparseMatrix::from_csr(2, 2, vec![0, 1, 2], vec![0, 2], vec![1.0, 1.0]).is_err());
        assert!(SparseMatrix::from_csr(2, 2, vec![0, 1, 3], vec![0, 1], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn linear_combination_merges_patterns() {
        let a = SparseMatrix::from_dense(&[vec![1.0, 0.0], vec![0.0, 2.0]]);
        let b = SparseMatrix::from_dense(&[vec![0.0, 3.0], vec![0.0, 4.0]]);
        let c = SparseMatrix::linear_combination(2.0, &a, -1.0, &b).unwrap();
        assert_eq!(c.to_dense(), vec![vec![2.0, -3.0], vec![0.0, 0.0]]);
    }

    #[test]
    fn identity_rows_and_columns() {
        let k = stiffness_1d(3);
        let mut mask = vec![false; 4];
        mask[0] = true;
        let kc = k.with_identity_on(&mask);
        assert_eq!(kc.get(0, 0), 1.0);
        assert_eq!(kc.get(0, 1), 0.0);
        assert_eq!(kc.get(1, 0), 0.0);
        assert_eq!(kc.get(1, 1), k.get(1, 1));
    }

    #[test]
    fn matrix_market_round_trip() {
        let k = stiffness_1d(4);
        let mut buf = Vec::new();
        k.write_matrix_market(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("%%MatrixMarket matrix coordinate real general\n5 5 13\n1 1 "));
        let back = SparseMatrix::read_matrix_market(buf.as_slice()).unwrap();
        assert_eq!(back, k);
    }

    #[test]
    fn matrix_market_rejects_bad_input() {
        let bad = "%%MatrixMarket matrix array real general\n1 1\n1.0\n";
        assert!(SparseMatrix::read_matrix_market(bad.as_bytes()).is_err());
        let short = "%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1.0\n";
        assert!(SparseMatrix::read_matrix_market(short.as_bytes()).is_err());
    }
}
