//! Bandwidth-reducing ordering and envelope LDLᵀ for symmetric systems.

use std::collections::VecDeque;

/// Reverse Cuthill–McKee ordering of an undirected graph.
///
/// `adj[v]` lists the neighbours of `v` (self-loops ignored). Returns `perm`
/// with `perm[new] = old`.
pub fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let degree: Vec<usize> = adj.iter().enumerate().map(|(v, a)| a.iter().filter(|&&u| u != v).count()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&v| (degree[v], v));
    let mut queue = VecDeque::new();
    let mut nbrs = Vec::new();
    for &seed in &by_degree {
        if visited[seed] {
            continue;
        }
        visited[seed] = true;
        queue.push_back(seed);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            nbrs.clear();
            nbrs.extend(adj[v].iter().copied().filter(|&u| !visited[u]));
            nbrs.sort_by_key(|&u| (degree[u], u));
            nbrs.dedup();
            for &u in &nbrs {
                visited[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    order
}

/// Symmetric matrix in envelope (skyline) storage, factorized in place as
/// L D Lᵀ without pivoting. Suitable for quasi-definite matrices, which admit
/// such a factorization under any symmetric ordering.
#[derive(Debug, Clone)]
pub struct EnvelopeLdl {
    first: Vec<usize>,
    start: Vec<usize>,
    vals: Vec<f64>,
    diag: Vec<f64>,
}

impl EnvelopeLdl {
    /// `first[i]` is the leftmost column with a nonzero in row `i` (≤ i).
    pub fn with_profile(first: Vec<usize>) -> Self {
        let mut start = Vec::with_capacity(first.len() + 1);
        let mut total = 0;
        for (i, &f) in first.iter().enumerate() {
            assert!(f <= i, "profile must lie in the lower triangle");
            start.push(total);
            total += i - f;
        }
        start.push(total);
        let n = first.len();
        Self { first, start, vals: vec![0.0; total], diag: vec![0.0; n] }
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    /// Stored off-diagonal entries.
    pub fn envelope_size(&self) -> usize {
        self.vals.len()
    }

    pub fn clear(&mut self) {
        self.vals.iter_mut().for_each(|v| *v = 0.0);
        self.diag.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Adds `v` at (i, j); the symmetric partner is implied.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i == j {
            self.diag[i] += v;
        } else {
            debug_assert!(j >= self.first[i], "entry outside envelope");
            self.vals[self.start[i] + j - self.first[i]] += v;
        }
    }

    /// In-place L D Lᵀ factorization. Fails on a zero or non-finite pivot.
    pub fn factor(&mut self) -> Result<(), String> {
        let n = self.dim();
        for i in 0..n {
            let fi = self.first[i];
            let si = self.start[i];
            let len = i - fi;
            // Row i holds w_k = l_ik d_k while it is being built.
            for j in fi..i {
                let fj = self.first[j];
                let sj = self.start[j];
                let lo = fi.max(fj);
                let mut s = self.vals[si + j - fi];
                for k in lo..j {
                    s -= self.vals[si + k - fi] * self.vals[sj + k - fj];
                }
                self.vals[si + j - fi] = s;
            }
            let mut d = self.diag[i];
            for t in 0..len {
                let k = fi + t;
                let w = self.vals[si + t];
                let l = w / self.diag[k];
                d -= w * l;
                self.vals[si + t] = l;
            }
            if d == 0.0 || !d.is_finite() {
                return Err(format!("zero or non-finite pivot at {i}"));
            }
            self.diag[i] = d;
        }
        Ok(())
    }

    /// Solves L D Lᵀ x = b in place using the factorized storage.
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let fi = self.first[i];
            let si = self.start[i];
            let mut s = b[i];
            for k in fi..i {
                s -= self.vals[si + k - fi] * b[k];
            }
            b[i] = s;
        }
        for i in 0..n {
            b[i] /= self.diag[i];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let si = self.start[i];
            let xi = b[i];
            for k in fi..i {
                b[k] -= self.vals[si + k - fi] * xi;
            }
        }
    }
}
