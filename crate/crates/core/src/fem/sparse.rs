//! Compressed sparse row storage, reverse Cuthill-McKee ordering and an
//! envelope (skyline) Cholesky factorization.

use std::collections::VecDeque;

use super::FemError;

/// Sparsity pattern of a square CSR matrix; column indices sorted per row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsrPattern {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
}

impl CsrPattern {
    /// Pattern of the P1 stiffness matrix: node pairs sharing a triangle.
    pub fn from_triangles(n: usize, tris: &[[usize; 3]]) -> Self {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for t in tris {
            for &a in t {
                rows[a].extend_from_slice(t);
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for r in &mut rows {
            r.sort_unstable();
            r.dedup();
            col_idx.extend_from_slice(r);
            row_ptr.push(col_idx.len());
        }
        Self {
            n,
            row_ptr,
            col_idx,
        }
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// Storage index of entry `(i, j)`.
    pub fn index(&self, i: usize, j: usize) -> Option<usize> {
        let row = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        row.binary_search(&j).ok().map(|k| self.row_ptr[i] + k)
    }

    pub fn row(&self, i: usize) -> std::ops::Range<usize> {
        self.row_ptr[i]..self.row_ptr[i + 1]
    }
}

/// Values over a shared [`CsrPattern`].
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<'a> {
    pub pattern: &'a CsrPattern,
    pub values: Vec<f64>,
}

impl<'a> CsrMatrix<'a> {
    pub fn zeros(pattern: &'a CsrPattern) -> Self {
        Self {
            pattern,
            values: vec![0.0; pattern.nnz()],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pattern.index(i, j).map_or(0.0, |k| self.values[k])
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.pattern.n)
            .map(|i| {
                self.pattern
                    .row(i)
                    .map(|k| self.values[k] * x[self.pattern.col_idx[k]])
                    .sum()
            })
            .collect()
    }

    pub fn frobenius(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest `|a_ij - a_ji|` relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut worst = 0.0f64;
        for i in 0..self.pattern.n {
            for k in self.pattern.row(i) {
                let j = self.pattern.col_idx[k];
                worst = worst.max((self.values[k] - self.get(j, i)).abs());
            }
        }
        if scale > 0.0 {
            worst / scale
        } else {
            0.0
        }
    }
}

/// Reverse Cuthill-McKee permutation of an undirected graph given as
/// adjacency lists. Returns `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let degree = |v: usize| adj[v].len();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);

    let bfs_levels = |start: usize| -> (usize, usize) {
        // (eccentricity, a minimum-degree node of the last level)
        let mut dist = vec![usize::MAX; n];
        dist[start] = 0;
        let mut q = VecDeque::from([start]);
        let mut last = start;
        while let Some(v) = q.pop_front() {
            for &w in &adj[v] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[v] + 1;
                    q.push_back(w);
                    if dist[w] > dist[last] || (dist[w] == dist[last] && degree(w) < degree(last)) {
                        last = w;
                    }
                }
            }
        }
        (dist[last], last)
    };

    while order.len() < n {
        let seed = (0..n)
            .filter(|&v| !visited[v])
            .min_by_key(|&v| (degree(v), v))
            .expect("unvisited node exists");
        // pseudo-peripheral start node
        let mut start = seed;
        let (mut ecc, mut far) = bfs_levels(start);
        for _ in 0..8 {
            let (e2, f2) = bfs_levels(far);
            if e2 <= ecc {
                break;
            }
            start = far;
            ecc = e2;
            far = f2;
        }
        visited[start] = true;
        let mut q = VecDeque::from([start]);
        while let Some(v) = q.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            nbrs.sort_by_key(|&w| (degree(w), w));
            for w in nbrs {
                visited[w] = true;
                q.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// Lower envelope of a symmetric matrix: row `i` stores columns
/// `first[i]..=i` contiguously.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub first: Vec<usize>,
    pub offset: Vec<usize>,
}

impl Envelope {
    /// Envelope of the lower triangle spanned by the entries `(i, j)`.
    pub fn from_entries(n: usize, entries: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut first: Vec<usize> = (0..n).collect();
        for (i, j) in entries {
            let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
            first[hi] = first[hi].min(lo);
        }
        let mut offset = Vec::with_capacity(n + 1);
        offset.push(0);
        for i in 0..n {
            offset.push(offset[i] + i - first[i] + 1);
        }
        Self { first, offset }
    }

    pub fn n(&self) -> usize {
        self.first.len()
    }

    pub fn len(&self) -> usize {
        *self.offset.last().unwrap_or(&0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Storage index of `(i, j)` with `first[i] <= j <= i`.
    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(j >= self.first[i] && j <= i);
        self.offset[i] + j - self.first[i]
    }
}

/// In-place Cholesky factor `L` (lower) of an envelope-stored SPD matrix.
#[derive(Debug, Clone)]
pub struct EnvelopeCholesky<'a> {
    env: &'a Envelope,
    l: Vec<f64>,
}

impl<'a> EnvelopeCholesky<'a> {
    pub fn factor(env: &'a Envelope, mut a: Vec<f64>) -> Result<Self, FemError> {
        let n = env.n();
        for i in 0..n {
            let fi = env.first[i];
            let oi = env.offset[i];
            for j in fi..i {
                let fj = env.first[j];
                let oj = env.offset[j];
                let k0 = fi.max(fj);
                let mut s = a[oi + j - fi];
                let ri = &a[oi + k0 - fi..oi + j - fi];
                let rj = &a[oj + k0 - fj..oj + j - fj];
                s -= ri.iter().zip(rj).map(|(x, y)| x * y).sum::<f64>();
                a[oi + j - fi] = s / a[oj + j - fj];
            }
            let row = &a[oi..oi + i - fi];
            let d = a[oi + i - fi] - row.iter().map(|x| x * x).sum::<f64>();
            if !(d > 0.0) {
                return Err(FemError::NotPositiveDefinite { pivot: i, value: d });
            }
            a[oi + i - fi] = d.sqrt();
        }
        Ok(Self { env, l: a })
    }

    /// Smallest diagonal entry of `L`.
    pub fn min_pivot(&self) -> f64 {
        (0..self.env.n())
            .map(|i| self.l[self.env.index(i, i)])
            .fold(f64::INFINITY, f64::min)
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let env = self.env;
        let n = env.n();
        for i in 0..n {
            let fi = env.first[i];
            let oi = env.offset[i];
            let s: f64 = self.l[oi..oi + i - fi]
                .iter()
                .zip(&b[fi..i])
                .map(|(x, y)| x * y)
                .sum();
            b[i] = (b[i] - s) / self.l[oi + i - fi];
        }
        for i in (0..n).rev() {
            let fi = env.first[i];
            let oi = env.offset[i];
            b[i] /= self.l[oi + i - fi];
            let bi = b[i];
            for (x, y) in self.l[oi..oi + i - fi].iter().zip(&mut b[fi..i]) {
                *y -= x * bi;
            }
        }
    }
}
