//! Sparse kernels for the coarse solvers: an envelope (skyline) Cholesky
//! factorization under reverse Cuthill-McKee ordering for the projective
//! dynamics global step, and a 3x3 block CSR matrix for the CG baseline.

use std::collections::VecDeque;

use nalgebra::Matrix3;

use crate::Vec3;

/// Reverse Cuthill-McKee ordering. Returns `order[new] = old`.
pub fn reverse_cuthill_mckee(adjacency: &[Vec<usize>]) -> Vec<usize> {
    let n = adjacency.len();
    let degree: Vec<usize> = adjacency.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::new();

    while order.len() < n {
        // Unvisited vertex of minimum degree, then walk to a pseudo-peripheral one.
        let seed = (0..n)
            .filter(|&v| !visited[v])
            .min_by_key(|&v| (degree[v], v))
            .unwrap();
        let start = pseudo_peripheral(adjacency, &degree, seed, &visited);

        visited[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adjacency[v]
                .iter()
                .copied()
                .filter(|&w| !visited[w])
                .collect();
            next.sort_by_key(|&w| (degree[w], w));
            next.dedup();
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

fn pseudo_peripheral(adjacency: &[Vec<usize>], degree: &[usize], seed: usize, blocked: &[bool]) -> usize {
    let mut current = seed;
    let mut eccentricity = 0;
    for _ in 0..8 {
        let levels = bfs_levels(adjacency, current, blocked);
        let depth = *levels.iter().flatten().max().unwrap_or(&0);
        if depth <= eccentricity && current != seed {
            break;
        }
        eccentricity = depth;
        let candidate = levels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == Some(depth))
            .min_by_key(|(v, _)| (degree[*v], *v))
            .map(|(v, _)| v)
            .unwrap();
        if candidate == current {
            break;
        }
        current = candidate;
    }
    current
}

fn bfs_levels(adjacency: &[Vec<usize>], start: usize, blocked: &[bool]) -> Vec<Option<usize>> {
    let mut level = vec![None; adjacency.len()];
    let mut queue = VecDeque::from([start]);
    level[start] = Some(0);
    while let Some(v) = queue.pop_front() {
        let d = level[v].unwrap();
        for &w in &adjacency[v] {
            if !blocked[w] && level[w].is_none() {
                level[w] = Some(d + 1);
                queue.push_back(w);
            }
        }
    }
    level
}

#[derive(Debug, Clone, PartialEq)]
pub struct NotPositiveDefinite {
    pub row: usize,
    pub pivot: f64,
}

/// Cholesky factor `P A Pᵀ = L Lᵀ` of a sparse SPD matrix, stored row-wise
/// over each row's envelope.
#[derive(Debug, Clone)]
pub struct EnvelopeCholesky {
    /// `order[new] = old`.
    order: Vec<usize>,
    /// `rank[old] = new`.
    rank: Vec<usize>,
    first: Vec<usize>,
    row_start: Vec<usize>,
    values: Vec<f64>,
}

impl EnvelopeCholesky {
    /// Factors the symmetric matrix given by `diagonal` and strictly
    /// off-diagonal entries `(i, j, value)` (each unordered pair once;
    /// duplicates are summed).
    pub fn factor(diagonal: &[f64], off_diagonal: &[(usize, usize, f64)]) -> Result<Self, NotPositiveDefinite> {
        let n = diagonal.len();
        let mut adjacency = vec![Vec::new(); n];
        for &(i, j, _) in off_diagonal {
            adjacency[i].push(j);
            adjacency[j].push(i);
        }
        let order = reverse_cuthill_mckee(&adjacency);
        let mut rank = vec![0; n];
        for (new, &old) in order.iter().enumerate() {
            rank[old] = new;
        }

        let mut first: Vec<usize> = (0..n).collect();
        for &(i, j, _) in off_diagonal {
            let (a, b) = (rank[i], rank[j]);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            first[hi] = first[hi].min(lo);
        }
        let mut row_start = Vec::with_capacity(n + 1);
        let mut total = 0;
        for i in 0..n {
            row_start.push(total);
            total += i - first[i] + 1;
        }
        row_start.push(total);

        let mut values = vec![0.0; total];
        for (old, &d) in diagonal.iter().enumerate() {
            let i = rank[old];
            values[row_start[i] + i - first[i]] += d;
        }
        for &(i, j, v) in off_diagonal {
            let (a, b) = (rank[i], rank[j]);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            values[row_start[hi] + lo - first[hi]] += v;
        }

        for i in 0..n {
            let fi = first[i];
            let ri = row_start[i];
            for j in fi..i {
                let fj = first[j];
                let rj = row_start[j];
                let k0 = fi.max(fj);
                let mut s = values[ri + j - fi];
                let row_i = &values[ri + k0 - fi..ri + j - fi];
                let row_j = &values[rj + k0 - fj..rj + j - fj];
                for (a, b) in row_i.iter().zip(row_j) {
                    s -= a * b;
                }
                values[ri + j - fi] = s / values[rj + j - fj];
            }
            let mut d = values[ri + i - fi];
            for v in &values[ri..ri + i - fi] {
                d -= v * v;
            }
            if !(d > 0.0) {
                return Err(NotPositiveDefinite { row: order[i], pivot: d });
            }
            values[ri + i - fi] = d.sqrt();
        }

        Ok(Self {
            order,
            rank,
            first,
            row_start,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.order.len()
    }

    /// Stored entries of the factor.
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Solves `A x = b` for three right-hand sides at once (one per coordinate).
    pub fn solve(&self, rhs: &[Vec3]) -> Vec<Vec3> {
        let n = self.dim();
        assert_eq!(rhs.len(), n, "rhs length must match the factored dimension");
        let mut y: Vec<[f64; 3]> = self.order.iter().map(|&old| rhs[old].into()).collect();

        for i in 0..n {
            let fi = self.first[i];
            let ri = self.row_start[i];
            let mut s = y[i];
            for (l, yk) in self.values[ri..ri + i - fi].iter().zip(&y[fi..i]) {
                s[0] -= l * yk[0];
                s[1] -= l * yk[1];
                s[2] -= l * yk[2];
            }
            let d = self.values[ri + i - fi];
            y[i] = [s[0] / d, s[1] / d, s[2] / d];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let ri = self.row_start[i];
            let d = self.values[ri + i - fi];
            let xi = [y[i][0] / d, y[i][1] / d, y[i][2] / d];
            y[i] = xi;
            let (head, _) = y.split_at_mut(i);
            for (l, yk) in self.values[ri..ri + i - fi].iter().zip(&mut head[fi..]) {
                yk[0] -= l * xi[0];
                yk[1] -= l * xi[1];
                yk[2] -= l * xi[2];
            }
        }
        let mut out = vec![Vec3::zeros(); n];
        for (old, x) in out.iter_mut().enumerate() {
            *x = Vec3::from(y[self.rank[old]]);
        }
        out
    }
}

/// Symmetric matrix of 3x3 blocks in compressed sparse row layout.
#[derive(Debug, Clone)]
pub struct BlockCsr {
    n: usize,
    row_start: Vec<usize>,
    cols: Vec<usize>,
    blocks: Vec<Matrix3<f64>>,
}

impl BlockCsr {
    /// Assembles from block triplets; duplicate `(row, col)` entries are summed.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, Matrix3<f64>)>) -> Self {
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut row_start = vec![0; n + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut blocks: Vec<Matrix3<f64>> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, b) in triplets {
            if last == Some((r, c)) {
                *blocks.last_mut().unwrap() += b;
            } else {
                cols.push(c);
                blocks.push(b);
                row_start[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..n {
            row_start[r + 1] += row_start[r];
        }
        Self {
            n,
            row_start,
            cols,
            blocks,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn mul_into(&self, x: &[Vec3], out: &mut [Vec3]) {
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = Vec3::zeros();
            for k in self.row_start[r]..self.row_start[r + 1] {
                acc += self.blocks[k] * x[self.cols[k]];
            }
            *o = acc;
        }
    }

    pub fn diagonal_block(&self, r: usize) -> Matrix3<f64> {
        (self.row_start[r]..self.row_start[r + 1])
            .find(|&k| self.cols[k] == r)
            .map(|k| self.blocks[k])
            .unwrap_or_else(Matrix3::zeros)
    }

    /// Dense `3n x 3n` copy, row-major.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; 3 * self.n]; 3 * self.n];
        for r in 0..self.n {
            for k in self.row_start[r]..self.row_start[r + 1] {
                let c = self.cols[k];
                for a in 0..3 {
                    for b in 0..3 {
                        dense[3 * r + a][3 * c + b] += self.blocks[k][(a, b)];
                    }
                }
            }
        }
        dense
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, p);
            b.swap(c, p);
            for r in c + 1..n {
                let f = a[r][c] / a[c][c];
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
                b[r] -= f * b[c];
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
            x[r] = (b[r] - s) / a[r][r];
        }
        x
    }

    #[test]
    fn envelope_cholesky_matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 40;
        let mut off = Vec::new();
        let mut diag = vec![1.0; n];
        for _ in 0..120 {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if i == j {
                continue;
            }
            let k: f64 = rng.random_range(0.1..5.0);
            off.push((i, j, -k));
            diag[i] += k;
            diag[j] += k;
        }
        let chol = EnvelopeCholesky::factor(&diag, &off).unwrap();
        let rhs: Vec<Vec3> = (0..n)
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let x = chol.solve(&rhs);

        let mut dense = vec![vec![0.0; n]; n];
        for i in 0..n {
            dense[i][i] = diag[i];
        }
        for &(i, j, v) in &off {
            dense[i][j] += v;
            dense[j][i] += v;
        }
        for c in 0..3 {
            let b: Vec<f64> = rhs.iter().map(|r| r[c]).collect();
            let expect = dense_solve(dense.clone(), b);
            for i in 0..n {
                assert!((x[i][c] - expect[i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let err = EnvelopeCholesky::factor(&[1.0, 1.0], &[(0, 1, 2.0)]).unwrap_err();
        assert!(err.pivot <= 0.0);
    }

    #[test]
    fn rcm_is_a_permutation_and_narrows_a_path() {
        // Path graph with scrambled labels.
        let labels = [5, 2, 7, 0, 3, 6, 1, 4];
        let mut adj = vec![Vec::new(); 8];
        for w in labels.windows(2) {
            adj[w[0]].push(w[1]);
            adj[w[1]].push(w[0]);
        }
        let order = reverse_cuthill_mckee(&adj);
        let mut sorted = order.clone();
        sorted.sort();
        assert_eq!(sorted, (0..8).collect::<Vec<_>>());
        let mut rank = [0usize; 8];
        for (new, &old) in order.iter().enumerate() {
            rank[old] = new;
        }
        for w in labels.windows(2) {
            assert_eq!(rank[w[0]].abs_diff(rank[w[1]]), 1);
        }
    }

    #[test]
    fn block_csr_sums_duplicates() {
        let m = BlockCsr::from_triplets(
            2,
            vec![
                (0, 0, Matrix3::identity()),
                (0, 0, Matrix3::identity()),
                (1, 0, Matrix3::identity() * 3.0),
            ],
        );
        let mut out = vec![Vec3::zeros(); 2];
        m.mul_into(&[Vec3::new(1.0, 2.0, 3.0), Vec3::zeros()], &mut out);
        assert_eq!(out[0], Vec3::new(2.0, 4.0, 6.0));
        assert_eq!(out[1], Vec3::new(3.0, 6.0, 9.0));
        assert_eq!(m.diagonal_block(1), Matrix3::zeros());
    }
}
