//! Direct solver for single-stage blocks `alpha M + dt K`.
//!
//! Rows and columns are renumbered with reverse Cuthill-McKee, which keeps
//! fill inside a narrow band for structured-grid operators, and the banded
//! matrix is factorized with partial pivoting (row interchanges confined to
//! the band, as in LAPACK's `gbtrf`).

use std::collections::VecDeque;

use super::csr::SparseMatrix;
use crate::error::{Error, Result};

/// Pivots below this fraction of the largest entry mark the block singular.
pub const SINGULAR_PIVOT_TOL: f64 = 1e-12;

/// Factorized diagonal block of the stage system.
#[derive(Debug, Clone)]
pub struct BlockFactorization {
    n: usize,
    /// `perm[new] = old`.
    perm: Vec<usize>,
    lower_bw: usize,
    upper_bw: usize,
    /// Row `r` of U stored from column `r` over `upper_bw + lower_bw + 1` slots.
    upper: Vec<f64>,
    /// Multipliers of column `k`, `lower_bw` per column.
    lower: Vec<f64>,
    pivots: Vec<usize>,
}

impl BlockFactorization {
    /// Factorizes a square sparse matrix.
    pub fn new(a: &SparseMatrix) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch {
                expected: a.nrows(),
                found: a.ncols(),
            });
        }
        let n = a.nrows();
        let perm = reverse_cuthill_mckee(a);
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }

        let (mut kl, mut ku) = (0usize, 0usize);
        for old_r in 0..n {
            let r = inv[old_r];
            for &old_c in a.row(old_r).0 {
                let c = inv[old_c];
                if c < r {
                    kl = kl.max(r - c);
                } else {
                    ku = ku.max(c - r);
                }
            }
        }
        // Row `r` spans columns [r - kl, r + ku + kl] after pivoting fill.
        let width = 2 * kl + ku + 1;
        let mut band = vec![0.0; n * width];
        let idx = |r: usize, c: usize| r * width + (c + kl - r);
        for old_r in 0..n {
            let r = inv[old_r];
            let (cols, vals) = a.row(old_r);
            for (&old_c, &v) in cols.iter().zip(vals) {
                band[idx(r, inv[old_c])] += v;
            }
        }

        let scale = a.max_abs();
        let tol = SINGULAR_PIVOT_TOL * if scale > 0.0 { scale } else { 1.0 };
        let mut lower = vec![0.0; n * kl.max(1)];
        let mut pivots = vec![0; n];
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = band[idx(k, k)].abs();
            for r in k + 1..=last_row {
                let v = band[idx(r, k)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best <= tol {
                return Err(Error::SingularBlock {
                    row: perm[k],
                    pivot: best,
                });
            }
            pivots[k] = p;
            let last_col = (k + kl + ku).min(n - 1);
            if p != k {
                for c in k..=last_col {
                    band.swap(idx(k, c), idx(p, c));
                }
            }
            let pivot = band[idx(k, k)];
            for r in k + 1..=last_row {
                let factor = band[idx(r, k)] / pivot;
                lower[k * kl + (r - k - 1)] = factor;
                band[idx(r, k)] = 0.0;
                if factor != 0.0 {
                    for c in k + 1..=last_col {
                        band[idx(r, c)] -= factor * band[idx(k, c)];
                    }
                }
            }
        }

        // Keep only the U part: columns [r, r + kl + ku].
        let uw = kl + ku + 1;
        let mut upper = vec![0.0; n * uw];
        for r in 0..n {
            for off in 0..uw {
                let c = r + off;
                if c < n {
                    upper[r * uw + off] = band[idx(r, c)];
                }
            }
        }
        Ok(BlockFactorization {
            n,
            perm,
            lower_bw: kl,
            upper_bw: ku,
            upper,
            lower,
            pivots,
        })
    }

    /// Factorizes `alpha M + dt K`.
    pub fn for_block(
        mass: &SparseMatrix,
        stiffness: &SparseMatrix,
        alpha: f64,
        dt: f64,
    ) -> Result<Self> {
        Self::new(&SparseMatrix::linear_combination(
            alpha, mass, dt, stiffness,
        )?)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Bandwidths `(lower, upper)` of the reordered matrix.
    pub fn bandwidths(&self) -> (usize, usize) {
        (self.lower_bw, self.upper_bw)
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: b.len(),
            });
        }
        let mut x = vec![0.0; self.n];
        self.solve_into(b, &mut x);
        Ok(x)
    }

    /// Solves into `x`; `b` and `x` must both have length `dim()`.
    pub fn solve_into(&self, b: &[f64], x: &mut [f64]) {
        let n = self.n;
        let kl = self.lower_bw;
        let uw = kl + self.upper_bw + 1;
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                y.swap(k, p);
            }
            let yk = y[k];
            if yk != 0.0 {
                let last = (k + kl).min(n - 1);
                for r in k + 1..=last {
                    y[r] -= self.lower[k * kl + (r - k - 1)] * yk;
                }
            }
        }
        for r in (0..n).rev() {
            let row = &self.upper[r * uw..(r + 1) * uw];
            let mut acc = y[r];
            for off in 1..uw {
                let c = r + off;
                if c >= n {
                    break;
                }
                acc -= row[off] * y[c];
            }
            y[r] = acc / row[0];
        }
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
    }
}

/// Reverse Cuthill-McKee ordering of the symmetrized pattern, `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &SparseMatrix) -> Vec<usize> {
    let n = a.nrows();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for r in 0..n {
        for &c in a.row(r).0 {
            if c != r {
                adj[r].push(c);
                adj[c].push(r);
            }
        }
    }
    for list in adj.iter_mut() {
        list.sort_unstable();
        list.dedup();
    }
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();

    let mut order = Vec::with_capacity(n);
    let mut visited = vec![false; n];
    while order.len() < n {
        // Each connected component starts from a pseudo-peripheral node.
        let seed = (0..n)
            .filter(|&v| !visited[v])
            .min_by_key(|&v| degree[v])
            .expect("unvisited node");
        let start = pseudo_peripheral(seed, &adj, &degree);
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_by_key(|&w| (degree[w], w));
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

fn bfs_levels(start: usize, adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut level = vec![usize::MAX; adj.len()];
    level[start] = 0;
    let mut levels = vec![vec![start]];
    loop {
        let mut next = Vec::new();
        for &v in levels.last().unwrap() {
            for &w in &adj[v] {
                if level[w] == usize::MAX {
                    level[w] = levels.len();
                    next.push(w);
                }
            }
        }
        if next.is_empty() {
            return levels;
        }
        levels.push(next);
    }
}

fn pseudo_peripheral(seed: usize, adj: &[Vec<usize>], degree: &[usize]) -> usize {
    let mut v = seed;
    let mut depth = bfs_levels(v, adj).len();
    loop {
        let levels = bfs_levels(v, adj);
        let candidate = *levels
            .last()
            .unwrap()
            .iter()
            .min_by_key(|&&w| degree[w])
            .unwrap();
        let cand_depth = bfs_levels(candidate, adj).len();
        if cand_depth > depth {
            v = candidate;
            depth = cand_depth;
        } else {
            return v;
        }
    }
}
