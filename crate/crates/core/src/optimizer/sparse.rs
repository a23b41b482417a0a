//! Sparse symmetric positive-definite solver: greedy minimum-degree ordering
//! on the block graph and an up-looking Cholesky factorization over the
//! upper triangle in compressed-column form.

use std::collections::BTreeSet;

/// Greedy minimum-degree elimination order for an undirected graph given as
/// adjacency lists. Ties go to the lowest index.
pub fn minimum_degree(adjacency: &[Vec<usize>]) -> Vec<usize> {
    let n = adjacency.len();
    let mut adj: Vec<BTreeSet<usize>> = adjacency
        .iter()
        .enumerate()
        .map(|(i, a)| a.iter().copied().filter(|&j| j != i).collect())
        .collect();
    let mut eliminated = vec![false; n];
    let mut by_degree: BTreeSet<(usize, usize)> = (0..n).map(|i| (adj[i].len(), i)).collect();
    let mut order = Vec::with_capacity(n);
    while let Some((_, v)) = by_degree.pop_first() {
        eliminated[v] = true;
        order.push(v);
        let nbrs: Vec<usize> = std::mem::take(&mut adj[v]).into_iter().collect();
        for &a in &nbrs {
            by_degree.remove(&(adj[a].len(), a));
            adj[a].remove(&v);
        }
        for (k, &a) in nbrs.iter().enumerate() {
            for &b in &nbrs[k + 1..] {
                adj[a].insert(b);
                adj[b].insert(a);
            }
        }
        for &a in &nbrs {
            debug_assert!(!eliminated[a]);
            by_degree.insert((adj[a].len(), a));
        }
    }
    order
}

/// Upper triangle (row <= col) of a symmetric matrix in compressed-column
/// form with sorted row indices.
#[derive(Debug, Clone)]
pub struct UpperCsc {
    pub n: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl UpperCsc {
    /// Builds the pattern from (row, col) pairs; duplicates are merged and
    /// lower-triangle pairs are mirrored.
    pub fn from_pattern(n: usize, entries: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut cols: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (r, c) in entries {
            let (r, c) = if r <= c { (r, c) } else { (c, r) };
            cols[c].push(r);
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for (c, mut rows) in cols.into_iter().enumerate() {
            rows.push(c);
            rows.sort_unstable();
            rows.dedup();
            row_idx.extend(rows);
            col_ptr.push(row_idx.len());
        }
        let nnz = row_idx.len();
        UpperCsc { n, col_ptr, row_idx, values: vec![0.0; nnz] }
    }

    /// Storage index of entry (r, c) in either triangle.
    pub fn slot(&self, r: usize, c: usize) -> Option<usize> {
        let (r, c) = if r <= c { (r, c) } else { (c, r) };
        let lo = self.col_ptr[c];
        let rows = &self.row_idx[lo..self.col_ptr[c + 1]];
        rows.binary_search(&r).ok().map(|k| lo + k)
    }

    pub fn diagonal_slot(&self, c: usize) -> usize {
        // rows are sorted and the diagonal is always stored, so it is last
        self.col_ptr[c + 1] - 1
    }

    pub fn clear(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Symbolic analysis shared by every factorization with the same pattern.
#[derive(Debug, Clone)]
pub struct Symbolic {
    n: usize,
    parent: Vec<Option<usize>>,
    l_col_ptr: Vec<usize>,
}

fn etree(a: &UpperCsc) -> Vec<Option<usize>> {
    let n = a.n;
    let mut parent = vec![None; n];
    let mut ancestor: Vec<Option<usize>> = vec![None; n];
    for k in 0..n {
        for &r in &a.row_idx[a.col_ptr[k]..a.col_ptr[k + 1]] {
            let mut i = Some(r);
            while let Some(node) = i.filter(|&x| x < k) {
                let next = ancestor[node];
                ancestor[node] = Some(k);
                if next.is_none() {
                    parent[node] = Some(k);
                }
                i = next;
            }
        }
    }
    parent
}

/// Nonzero pattern of row k of L (excluding the diagonal), written to
/// `stack[top..]` in topological order. Returns `top`.
fn ereach(
    a: &UpperCsc,
    k: usize,
    parent: &[Option<usize>],
    stack: &mut [usize],
    mark: &mut [bool],
) -> usize {
    let n = a.n;
    let mut top = n;
    mark[k] = true;
    for &r in &a.row_idx[a.col_ptr[k]..a.col_ptr[k + 1]] {
        if r > k {
            continue;
        }
        let mut len = 0;
        let mut i = r;
        while !mark[i] {
            stack[len] = i;
            len += 1;
            mark[i] = true;
            match parent[i] {
                Some(p) => i = p,
                None => break,
            }
        }
        while len > 0 {
            len -= 1;
            top -= 1;
            stack[top] = stack[len];
        }
    }
    for &i in &stack[top..n] {
        mark[i] = false;
    }
    mark[k] = false;
    top
}

impl Symbolic {
    pub fn analyze(a: &UpperCsc) -> Self {
        let n = a.n;
        let parent = etree(a);
        let mut counts = vec![1usize; n];
        let mut stack = vec![0; n];
        let mut mark = vec![false; n];
        for k in 0..n {
            let top = ereach(a, k, &parent, &mut stack, &mut mark);
            for &i in &stack[top..n] {
                counts[i] += 1;
            }
        }
        let mut l_col_ptr = Vec::with_capacity(n + 1);
        l_col_ptr.push(0);
        for c in counts {
            l_col_ptr.push(l_col_ptr.last().unwrap() + c);
        }
        Symbolic { n, parent, l_col_ptr }
    }

    pub fn factor_nnz(&self) -> usize {
        self.l_col_ptr[self.n]
    }
}

/// Lower-triangular Cholesky factor, diagonal first in each column.
#[derive(Debug, Clone)]
pub struct Factor {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

/// Factors `A + shift`, where `shift[i]` is added to the i-th diagonal.
/// Returns `None` if the matrix is not positive definite.
pub fn cholesky(a: &UpperCsc, sym: &Symbolic, shift: Option<&[f64]>) -> Option<Factor> {
    let n = sym.n;
    let nnz = sym.factor_nnz();
    let mut row_idx = vec![0usize; nnz];
    let mut values = vec![0.0; nnz];
    let mut next: Vec<usize> = sym.l_col_ptr[..n].to_vec();
    let mut x = vec![0.0; n];
    let mut stack = vec![0; n];
    let mut mark = vec![false; n];
    for k in 0..n {
        let top = ereach(a, k, &sym.parent, &mut stack, &mut mark);
        for p in a.col_ptr[k]..a.col_ptr[k + 1] {
            let r = a.row_idx[p];
            if r <= k {
                x[r] = a.values[p];
            }
        }
        let mut d = x[k] + shift.map_or(0.0, |s| s[k]);
        x[k] = 0.0;
        for &i in &stack[top..n] {
            let lki = x[i] / values[sym.l_col_ptr[i]];
            x[i] = 0.0;
            for p in sym.l_col_ptr[i] + 1..next[i] {
                x[row_idx[p]] -= values[p] * lki;
            }
            d -= lki * lki;
            let p = next[i];
            next[i] += 1;
            row_idx[p] = k;
            values[p] = lki;
        }
        if !(d > 0.0 && d.is_finite()) {
            return None;
        }
        let p = next[k];
        next[k] += 1;
        row_idx[p] = k;
        values[p] = d.sqrt();
    }
    Some(Factor { n, col_ptr: sym.l_col_ptr.clone(), row_idx, values })
}

impl Factor {
    /// Solves `L Lᵀ x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        for j in 0..self.n {
            let lo = self.col_ptr[j];
            b[j] /= self.values[lo];
            let bj = b[j];
            for p in lo + 1..self.col_ptr[j + 1] {
                b[self.row_idx[p]] -= self.values[p] * bj;
            }
        }
        for j in (0..self.n).rev() {
            let lo = self.col_ptr[j];
            let mut s = b[j];
            for p in lo + 1..self.col_ptr[j + 1] {
                s -= self.values[p] * b[self.row_idx[p]];
            }
            b[j] = s / self.values[lo];
        }
    }
}
