//! Symmetric sparse matrices and the two linear solvers used by the schemes:
//! an envelope Cholesky factorization under reverse Cuthill–McKee ordering
//! and Jacobi-preconditioned conjugate gradients.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::sync::{Arc, OnceLock};

/// Lower-triangular (diagonal included) CSR structure with sorted columns.
#[derive(Debug)]
pub struct SparsityPattern {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    rcm: OnceLock<Arc<EnvelopeSymbolic>>,
}

impl SparsityPattern {
    /// Builds the pattern from the (unordered, possibly repeated) list of
    /// coupled index pairs. Diagonal entries are always present.
    pub fn from_pairs(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut rows: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for (i, j) in pairs {
            let (r, c) = if i >= j { (i, j) } else { (j, i) };
            rows[r].push(c);
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_unstable();
            row.dedup();
            cols.extend(row);
            row_ptr.push(cols.len());
        }
        SparsityPattern {
            n,
            row_ptr,
            cols,
            rcm: OnceLock::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz_lower(&self) -> usize {
        self.cols.len()
    }

    #[inline]
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        let lo = self.row_ptr[r];
        let hi = self.row_ptr[r + 1];
        self.cols[lo..hi].binary_search(&c).ok().map(|k| lo + k)
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for i in 0..self.n {
            for &j in &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]] {
                if j != i {
                    adj[i].push(j);
                    adj[j].push(i);
                }
            }
        }
        adj
    }

    fn symbolic(&self) -> Arc<EnvelopeSymbolic> {
        self.rcm
            .get_or_init(|| Arc::new(EnvelopeSymbolic::new(self)))
            .clone()
    }
}

/// Symmetric matrix stored by its lower triangle.
#[derive(Debug, Clone)]
pub struct SymSparse {
    pattern: Arc<SparsityPattern>,
    values: Vec<f64>,
}

impl SymSparse {
    pub fn zeros(pattern: Arc<SparsityPattern>) -> Self {
        let values = vec![0.0; pattern.nnz_lower()];
        SymSparse { pattern, values }
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    pub fn dim(&self) -> usize {
        self.pattern.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Entry `(i, j)`; zero outside the pattern.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pattern.position(i, j).map_or(0.0, |k| self.values[k])
    }

    /// Adds `v` to the symmetric pair `(i, j)`, `(j, i)`.
    ///
    /// # Panics
    /// If `(i, j)` is not in the pattern.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self
            .pattern
            .position(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) outside sparsity pattern"));
        self.values[k] += v;
    }

    /// `(row, col, value)` for the stored lower triangle.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.dim()).flat_map(move |i| {
            (self.pattern.row_ptr[i]..self.pattern.row_ptr[i + 1])
                .map(move |k| (i, self.pattern.cols[k], self.values[k]))
        })
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        let p = &self.pattern;
        for i in 0..p.n {
            let mut acc = 0.0;
            for k in p.row_ptr[i]..p.row_ptr[i + 1] {
                let j = p.cols[k];
                let a = self.values[k];
                acc += a * x[j];
                if j != i {
                    y[j] += a * x[i];
                }
            }
            y[i] += acc;
        }
    }

    /// `xᵀ A x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.matvec(x))
    }

    /// `self += alpha * other`; both must share a pattern.
    pub fn add_scaled(&mut self, alpha: f64, other: &SymSparse) {
        assert!(
            Arc::ptr_eq(&self.pattern, &other.pattern),
            "matrices must share a sparsity pattern"
        );
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.values.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Dense row-major copy, for small problems and tests.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut d = vec![vec![0.0; n]; n];
        for (i, j, v) in self.entries() {
            d[i][j] = v;
            d[j][i] = v;
        }
        d
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Reverse Cuthill–McKee permutation and the envelope it induces.
#[derive(Debug)]
struct EnvelopeSymbolic {
    /// `perm[new] = old`
    perm: Vec<usize>,
    /// `inv[old] = new`
    inv: Vec<usize>,
    /// First stored column of each permuted row.
    first: Vec<usize>,
    /// Offset of each permuted row in the envelope storage.
    offset: Vec<usize>,
    len: usize,
}

impl EnvelopeSymbolic {
    fn new(p: &SparsityPattern) -> Self {
        let n = p.n;
        let adj = p.adjacency();
        let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
        let mut visited = vec![false; n];
        let mut order = Vec::with_capacity(n);
        while order.len() < n {
            // Start each component at an unvisited node of minimum degree.
            let start = (0..n)
                .filter(|&i| !visited[i])
                .min_by_key(|&i| (degree[i], i))
                .expect("unvisited node exists");
            let mut queue = VecDeque::from([start]);
            visited[start] = true;
            while let Some(v) = queue.pop_front() {
                order.push(v);
                let mut nbrs: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
                nbrs.sort_by_key(|&w| (degree[w], w));
                for w in nbrs {
                    visited[w] = true;
                    queue.push_back(w);
                }
            }
        }
        order.reverse();
        let perm = order;
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for (old, nbrs) in adj.iter().enumerate() {
            let i = inv[old];
            for &w in nbrs {
                let j = inv[w];
                if j < i {
                    first[i] = first[i].min(j);
                }
            }
        }
        let mut offset = Vec::with_capacity(n);
        let mut len = 0;
        for i in 0..n {
            offset.push(len);
            len += i - first[i] + 1;
        }
        EnvelopeSymbolic {
            perm,
            inv,
            first,
            offset,
            len,
        }
    }
}

/// Envelope (profile) Cholesky factor `P A Pᵀ = L Lᵀ`.
#[derive(Debug)]
pub struct EnvelopeCholesky {
    sym: Arc<EnvelopeSymbolic>,
    l: Vec<f64>,
}

impl EnvelopeCholesky {
    pub fn factor(a: &SymSparse) -> Result<Self> {
        let sym = a.pattern.symbolic();
        let n = a.dim();
        let mut l = vec![0.0; sym.len];
        let p = &a.pattern;
        for old_i in 0..n {
            for k in p.row_ptr[old_i]..p.row_ptr[old_i + 1] {
                let (i, j) = (sym.inv[old_i], sym.inv[p.cols[k]]);
                let (r, c) = if i >= j { (i, j) } else { (j, i) };
                l[sym.offset[r] + c - sym.first[r]] = a.values[k];
            }
        }
        let mut diag_min = f64::INFINITY;
        let mut diag_max: f64 = 0.0;
        for i in 0..n {
            let fi = sym.first[i];
            let oi = sym.offset[i];
            for j in fi..i {
                let fj = sym.first[j];
                let oj = sym.offset[j];
                let start = fi.max(fj);
                let mut s = l[oi + j - fi];
                for k in start..j {
                    s -= l[oi + k - fi] * l[oj + k - fj];
                }
                l[oi + j - fi] = s / l[oj + j - fj];
            }
            let mut d = l[oi + i - fi];
            for k in fi..i {
                let v = l[oi + k - fi];
                d -= v * v;
            }
            if !(d > 0.0) || !d.is_finite() {
                let cond = if diag_min.is_finite() && diag_min > 0.0 {
                    (diag_max / diag_min).powi(2)
                } else {
                    f64::INFINITY
                };
                return Err(Error::LinearSolver {
                    reason: format!("matrix not positive definite (pivot {d:.3e} at row {i})"),
                    condition_estimate: cond,
                });
            }
            let d = d.sqrt();
            diag_min = diag_min.min(d);
            diag_max = diag_max.max(d);
            l[oi + i - fi] = d;
        }
        Ok(EnvelopeCholesky { sym, l })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let s = &self.sym;
        let n = s.perm.len();
        let mut y: Vec<f64> = s.perm.iter().map(|&old| b[old]).collect();
        for i in 0..n {
            let fi = s.first[i];
            let oi = s.offset[i];
            let mut v = y[i];
            for k in fi..i {
                v -= self.l[oi + k - fi] * y[k];
            }
            y[i] = v / self.l[oi + i - fi];
        }
        for i in (0..n).rev() {
            let fi = s.first[i];
            let oi = s.offset[i];
            let xi = y[i] / self.l[oi + i - fi];
            y[i] = xi;
            for k in fi..i {
                y[k] -= self.l[oi + k - fi] * xi;
            }
        }
        let mut x = vec![0.0; n];
        for (new, &old) in s.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }

    /// Squared ratio of the extreme pivots, a cheap lower bound for the
    /// spectral condition number.
    pub fn condition_estimate(&self) -> f64 {
        let s = &self.sym;
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..s.perm.len() {
            let d = self.l[s.offset[i] + i - s.first[i]];
            lo = lo.min(d);
            hi = hi.max(d);
        }
        (hi / lo).powi(2)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LinearSolver {
    #[default]
    Cholesky,
    Cg { tol_rel: f64, max_iter: usize },
}

#[derive(Debug, Clone)]
pub struct LinearSolve {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// `‖A x - b‖₂`
    pub residual: f64,
}

impl LinearSolver {
    pub fn validate(&self) -> Result<()> {
        if let LinearSolver::Cg { tol_rel, max_iter } = *self {
            if !(tol_rel > 0.0 && tol_rel < 1.0) {
                return Err(Error::param("tol_rel", format!("must lie in (0, 1), got {tol_rel}")));
            }
            if max_iter == 0 {
                return Err(Error::param("max_iter", "must be >= 1"));
            }
        }
        Ok(())
    }

    pub fn solve(&self, a: &SymSparse, b: &[f64]) -> Result<LinearSolve> {
        match *self {
            LinearSolver::Cholesky => {
                let f = EnvelopeCholesky::factor(a)?;
                let x = f.solve(b);
                let residual = residual_norm(a, &x, b);
                Ok(LinearSolve {
                    x,
                    iterations: 1,
                    residual,
                })
            }
            LinearSolver::Cg { tol_rel, max_iter } => pcg(a, b, None, tol_rel, max_iter),
        }
    }
}

pub fn residual_norm(a: &SymSparse, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.matvec(x);
    ax.iter()
        .zip(b)
        .map(|(u, v)| (u - v) * (u - v))
        .sum::<f64>()
        .sqrt()
}

/// Jacobi-preconditioned conjugate gradients, stopping on `‖r‖ ≤ tol_rel ‖b‖`.
pub fn pcg(
    a: &SymSparse,
    b: &[f64],
    x0: Option<&[f64]>,
    tol_rel: f64,
    max_iter: usize,
) -> Result<LinearSolve> {
    let n = a.dim();
    let diag = a.diagonal();
    if diag.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::LinearSolver {
            reason: "non-positive diagonal entry".into(),
            condition_estimate: f64::INFINITY,
        });
    }
    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let ax = a.matvec(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(u, v)| u - v).collect();
    let bnorm = norm2(b);
    let target = tol_rel * bnorm;
    if bnorm == 0.0 {
        return Ok(LinearSolve {
            x: vec![0.0; n],
            iterations: 0,
            residual: 0.0,
        });
    }
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 0..=max_iter {
        let rn = norm2(&r);
        if rn <= target {
            return Ok(LinearSolve {
                x,
                iterations: it,
                residual: rn,
            });
        }
        if it == max_iter {
            break;
        }
        a.matvec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::LinearSolver {
                reason: format!("CG breakdown: pᵀAp = {pap:.3e}"),
                condition_estimate: f64::INFINITY,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::LinearSolver {
        reason: format!("CG did not reach tol_rel = {tol_rel:.1e} in {max_iter} iterations"),
        condition_estimate: f64::NAN,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, seed: u64) -> SymSparse {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in 0..i {
                if rng.random::<f64>() < 0.15 {
                    pairs.push((i, j));
                }
            }
        }
        let pat = Arc::new(SparsityPattern::from_pairs(n, pairs.clone()));
        let mut a = SymSparse::zeros(pat);
        for &(i, j) in &pairs {
            let v = rng.random::<f64>() - 0.5;
            a.add(i, j, v);
            // diagonal dominance keeps it SPD
            a.add(i, i, v.abs() + 0.1);
            a.add(j, j, v.abs() + 0.1);
        }
        for i in 0..n {
            a.add(i, i, 1.0);
        }
        a
    }

    #[test]
    fn cholesky_and_cg_agree_with_dense_solve() {
        let a = random_spd(60, 3);
        let b: Vec<f64> = (0..60).map(|i| (i as f64).sin()).collect();
        let x = LinearSolver::Cholesky.solve(&a, &b).unwrap();
        assert!(x.residual < 1e-12);
        let y = LinearSolver::Cg {
            tol_rel: 1e-13,
            max_iter: 1000,
        }
        .solve(&a, &b)
        .unwrap();
        for (u, v) in x.x.iter().zip(&y.x) {
            assert!((u - v).abs() < 1e-10);
        }
        let dense = nalgebra::DMatrix::from_fn(60, 60, |i, j| a.get(i, j));
        let xd = dense.cholesky().unwrap().solve(&nalgebra::DVector::from_vec(b));
        for (u, v) in x.x.iter().zip(xd.iter()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn indefinite_matrix_is_reported() {
        let pat = Arc::new(SparsityPattern::from_pairs(2, [(1, 0)]));
        let mut a = SymSparse::zeros(pat);
        a.add(0, 0, 1.0);
        a.add(1, 1, 1.0);
        a.add(1, 0, 2.0);
        let err = LinearSolver::Cholesky.solve(&a, &[1.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::LinearSolver { .. }));
    }

    #[test]
    fn matvec_uses_both_triangles() {
        let pat = Arc::new(SparsityPattern::from_pairs(3, [(2, 0)]));
        let mut a = SymSparse::zeros(pat);
        a.add(0, 2, 3.0);
        a.add(1, 1, 2.0);
        assert_eq!(a.matvec(&[1.0, 1.0, 1.0]), vec![3.0, 2.0, 3.0]);
        assert_eq!(a.get(0, 2), 3.0);
        assert_eq!(a.get(2, 0), 3.0);
        assert_eq!(a.get(1, 0), 0.0);
    }
}
