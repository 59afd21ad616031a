//! Compressed sparse row storage and the direct/iterative solver wrappers
//! used by every implicit sub-step.

use std::sync::Arc;

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::ldlt::factor::LdltRegularization;
use faer::sparse::linalg::cholesky::{factorize_symbolic_cholesky, LdltRef, SymbolicCholesky, SymmetricOrdering};
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMat, SymbolicSparseColMat};
use faer::{linalg::solvers::Solve, Conj, Mat, Par, Side};

use crate::error::{Error, Result};

/// Relative residual every direct solve must reach.
pub const SOLVE_RTOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

/// Accumulates `(row, col, value)` entries; duplicates are summed on build.
#[derive(Debug, Clone, Default)]
pub struct TripletBuilder {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, entries: Vec::new() }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        Self { nrows, ncols, entries: Vec::with_capacity(cap) }
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, val: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        self.entries.push((row, col, val));
    }

    /// Adds `scale * m` with its origin shifted to `(row_off, col_off)`.
    pub fn add_block(&mut self, row_off: usize, col_off: usize, m: &CsrMatrix, scale: f64) {
        for i in 0..m.nrows {
            for (j, v) in m.row(i) {
                self.push(row_off + i, col_off + j, scale * v);
            }
        }
    }

    pub fn build(mut self) -> CsrMatrix {
        // stable sort keeps the summation order of duplicates deterministic
        self.entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; self.nrows + 1];
        let mut col_idx = Vec::with_capacity(self.entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in &self.entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..self.nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix { nrows: self.nrows, ncols: self.ncols, row_ptr, col_idx, values }
    }
}

impl CsrMatrix {
    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
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

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[span.clone()].binary_search(&j) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    /// `y = Aᵀ x`
    pub fn transpose_matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for (i, &xi) in x.iter().enumerate() {
            for (j, v) in self.row(i) {
                y[j] += v * xi;
            }
        }
        y
    }

    /// `xᵀ A y`
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        assert_eq!(x.len(), self.nrows);
        (0..self.nrows).map(|i| x[i] * self.row(i).map(|(j, v)| v * y[j]).sum::<f64>()).sum()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.nrows).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut b = TripletBuilder::with_capacity(self.ncols, self.nrows, self.nnz());
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                b.push(j, i, v);
            }
        }
        b.build()
    }

    /// Largest `|a_ij - a_ji|`.
    pub fn max_asymmetry(&self) -> f64 {
        assert_eq!(self.nrows, self.ncols);
        let mut worst = 0.0f64;
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// `a * self + b * other` over the union of both patterns.
    pub fn linear_combination(&self, a: f64, other: &CsrMatrix, b: f64) -> CsrMatrix {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut t = TripletBuilder::with_capacity(self.nrows, self.ncols, self.nnz() + other.nnz());
        t.add_block(0, 0, self, a);
        t.add_block(0, 0, other, b);
        t.build()
    }

    /// Extracts the listed rows and columns, renumbered in the given order.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> CsrMatrix {
        let mut col_map = vec![usize::MAX; self.ncols];
        for (k, &c) in cols.iter().enumerate() {
            col_map[c] = k;
        }
        let mut t = TripletBuilder::new(rows.len(), cols.len());
        for (ri, &r) in rows.iter().enumerate() {
            for (j, v) in self.row(r) {
                if col_map[j] != usize::MAX {
                    t.push(ri, col_map[j], v);
                }
            }
        }
        t.build()
    }

    fn to_faer(&self) -> SparseColMat<usize, f64> {
        // CSR of A read column-wise is CSC of Aᵀ; transpose first.
        let t = self.transpose();
        let symbolic = SymbolicSparseColMat::new_checked(
            self.nrows,
            self.ncols,
            t.row_ptr,
            None,
            t.col_idx,
        );
        SparseColMat::new(symbolic, t.values)
    }
}

#[derive(Clone)]
enum Symbolic {
    Lu(SymbolicLu<usize>),
    Ldlt(Arc<SymbolicCholesky<usize>>),
}

/// Sparsity-pattern analysis that can be reused across numeric refactorizations
/// of matrices with identical structure (Newton iterations).
#[derive(Clone)]
pub struct LuPattern {
    symbolic: Symbolic,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl LuPattern {
    pub fn matches(&self, a: &CsrMatrix) -> bool {
        self.row_ptr == a.row_ptr && self.col_idx == a.col_idx
    }
}

enum Numeric {
    Lu(Lu<usize, f64>),
    Ldlt(Vec<f64>),
}

/// Sparse direct factorization (LU with partial pivoting, or pivot-free
/// LDLᵀ for symmetric quasi-definite matrices) with residual-checked solves.
pub struct DirectSolver {
    matrix: CsrMatrix,
    numeric: Numeric,
    pattern: LuPattern,
}

impl std::fmt::Debug for DirectSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DirectSolver").field("n", &self.matrix.nrows).field("nnz", &self.matrix.nnz()).finish()
    }
}

fn check_square(a: &CsrMatrix) -> Result<()> {
    if a.nrows != a.ncols {
        return Err(Error::LinearSolveFailed(format!("matrix is {}x{}", a.nrows, a.ncols)));
    }
    if a.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::LinearSolveFailed("matrix has non-finite entries".into()));
    }
    Ok(())
}

impl DirectSolver {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        Self::factor_with(a, None)
    }

    /// LU factorization of `a`, reusing `pattern` when it matches the structure of `a`.
    pub fn factor_with(a: &CsrMatrix, pattern: Option<&LuPattern>) -> Result<Self> {
        check_square(a)?;
        let mat = a.to_faer();
        let pattern = match pattern {
            Some(p @ LuPattern { symbolic: Symbolic::Lu(_), .. }) if p.matches(a) => p.clone(),
            _ => {
                let symbolic = SymbolicLu::try_new(mat.symbolic())
                    .map_err(|e| Error::LinearSolveFailed(format!("symbolic LU: {e:?}")))?;
                LuPattern { symbolic: Symbolic::Lu(symbolic), row_ptr: a.row_ptr.clone(), col_idx: a.col_idx.clone() }
            }
        };
        let Symbolic::Lu(symbolic) = &pattern.symbolic else { unreachable!() };
        let lu = Lu::try_new_with_symbolic(symbolic.clone(), mat.as_ref()).map_err(|e| match e {
            faer::sparse::linalg::LuError::SymbolicSingular { index } => {
                Error::SingularSystem(format!("structurally singular at pivot {index}"))
            }
            other => Error::LinearSolveFailed(format!("numeric LU: {other:?}")),
        })?;
        Ok(Self { matrix: a.clone(), numeric: Numeric::Lu(lu), pattern })
    }

    /// Pivot-free LDLᵀ of a symmetric matrix with a fill-reducing ordering.
    /// Safe for symmetric positive definite and quasi-definite matrices.
    pub fn factor_symmetric(a: &CsrMatrix, pattern: Option<&LuPattern>) -> Result<Self> {
        check_square(a)?;
        // for symmetric a, its CSR arrays are a valid CSC description
        let symbolic_mat = SymbolicSparseColMat::new_checked(a.nrows, a.ncols, a.row_ptr.clone(), None, a.col_idx.clone());
        let mat = SparseColMat::new(symbolic_mat, a.values.clone());
        let pattern = match pattern {
            Some(p @ LuPattern { symbolic: Symbolic::Ldlt(_), .. }) if p.matches(a) => p.clone(),
            _ => {
                let symbolic = factorize_symbolic_cholesky(mat.symbolic(), Side::Lower, SymmetricOrdering::Amd, Default::default())
                    .map_err(|e| Error::LinearSolveFailed(format!("symbolic LDLT: {e:?}")))?;
                LuPattern { symbolic: Symbolic::Ldlt(Arc::new(symbolic)), row_ptr: a.row_ptr.clone(), col_idx: a.col_idx.clone() }
            }
        };
        let Symbolic::Ldlt(symbolic) = &pattern.symbolic else { unreachable!() };
        let mut values = vec![0.0; symbolic.len_val()];
        let mut mem = MemBuffer::new(symbolic.factorize_numeric_ldlt_scratch::<f64>(Par::Seq, Default::default()));
        symbolic
            .factorize_numeric_ldlt(
                &mut values,
                mat.as_ref(),
                Side::Lower,
                LdltRegularization::default(),
                Par::Seq,
                MemStack::new(&mut mem),
                Default::default(),
            )
            .map_err(|e| Error::SingularSystem(format!("LDLT: {e}")))?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularSystem("LDLT produced non-finite factors".into()));
        }
        Ok(Self { matrix: a.clone(), numeric: Numeric::Ldlt(values), pattern })
    }

    pub fn pattern(&self) -> &LuPattern {
        &self.pattern
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    fn raw_solve(&self, rhs: &[f64]) -> Vec<f64> {
        match (&self.numeric, &self.pattern.symbolic) {
            (Numeric::Lu(lu), _) => {
                let b = Mat::from_fn(rhs.len(), 1, |i, _| rhs[i]);
                let x = lu.solve(&b);
                (0..rhs.len()).map(|i| x[(i, 0)]).collect()
            }
            (Numeric::Ldlt(values), Symbolic::Ldlt(symbolic)) => {
                let mut x = Mat::from_fn(rhs.len(), 1, |i, _| rhs[i]);
                let mut mem = MemBuffer::new(symbolic.solve_in_place_scratch::<f64>(1, Par::Seq));
                LdltRef::new(symbolic, values).solve_in_place_with_conj(Conj::No, x.as_mut(), Par::Seq, MemStack::new(&mut mem));
                (0..rhs.len()).map(|i| x[(i, 0)]).collect()
            }
            _ => unreachable!("numeric and symbolic kinds always agree"),
        }
    }

    /// Solves `A x = rhs` with up to two steps of iterative refinement, then
    /// falls back to BiCGStab from the direct iterate if the relative residual
    /// still exceeds [`SOLVE_RTOL`].
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.matrix.nrows;
        assert_eq!(rhs.len(), n);
        let bnorm = norm2(rhs);
        if bnorm == 0.0 {
            return Ok(vec![0.0; n]);
        }
        let mut x = self.raw_solve(rhs);
        for _ in 0..2 {
            if x.iter().any(|v| !v.is_finite()) {
                break;
            }
            let r = residual(&self.matrix, &x, rhs);
            let rel = norm2(&r) / bnorm;
            if rel <= SOLVE_RTOL * 1e-3 {
                return Ok(x);
            }
            let dx = self.raw_solve(&r);
            for (xi, di) in x.iter_mut().zip(&dx) {
                *xi += di;
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularSystem("direct solve produced non-finite values".into()));
        }
        let rel = norm2(&residual(&self.matrix, &x, rhs)) / bnorm;
        if rel <= SOLVE_RTOL {
            return Ok(x);
        }
        bicgstab(&self.matrix, rhs, &mut x, SOLVE_RTOL, 2000).map(|_| x)
    }

    /// Estimates `min |λ| / max|a_ij|` of a symmetric matrix by inverse
    /// iteration on the factorization. Values near machine precision flag a
    /// numerically singular system.
    pub fn symmetric_conditioning_probe(&self, iters: usize) -> f64 {
        let n = self.matrix.nrows;
        // deterministic pseudo-random start vector
        let mut x: Vec<f64> = (0..n).map(|i| ((i as f64 * 0.618_033_988_7).fract() - 0.5) + 1e-3).collect();
        let nx = norm2(&x);
        x.iter_mut().for_each(|v| *v /= nx);
        let mut lambda_inv = 0.0;
        for _ in 0..iters {
            let y = self.raw_solve(&x);
            let ny = norm2(&y);
            if !ny.is_finite() {
                return 0.0;
            }
            lambda_inv = ny;
            x = y.into_iter().map(|v| v / ny).collect();
        }
        let scale = self.matrix.max_abs();
        if lambda_inv == 0.0 || scale == 0.0 {
            return 0.0;
        }
        (1.0 / lambda_inv) / scale
    }
}

pub fn residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> Vec<f64> {
    let ax = a.matvec(x);
    b.iter().zip(ax).map(|(bi, ai)| bi - ai).collect()
}

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub fn max_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Jacobi-preconditioned BiCGStab, starting from `x`.
pub fn bicgstab(a: &CsrMatrix, b: &[f64], x: &mut [f64], rtol: f64, max_iter: usize) -> Result<usize> {
    let n = b.len();
    let diag: Vec<f64> = (0..n)
        .map(|i| {
            let d = a.get(i, i);
            if d.abs() > 0.0 { 1.0 / d } else { 1.0 }
        })
        .collect();
    let bnorm = norm2(b).max(f64::MIN_POSITIVE);
    let mut r = residual(a, x, b);
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    for it in 0..max_iter {
        if norm2(&r) / bnorm <= rtol {
            return Ok(it);
        }
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || omega == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let y: Vec<f64> = p.iter().zip(&diag).map(|(a, d)| a * d).collect();
        a.matvec_into(&y, &mut v);
        let denom = dot(&r_hat, &v);
        if denom == 0.0 {
            break;
        }
        alpha = rho / denom;
        let s: Vec<f64> = r.iter().zip(&v).map(|(ri, vi)| ri - alpha * vi).collect();
        let z: Vec<f64> = s.iter().zip(&diag).map(|(a, d)| a * d).collect();
        let t = a.matvec(&z);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * y[i] + omega * z[i];
            r[i] = s[i] - omega * t[i];
        }
    }
    let rel = norm2(&residual(a, x, b)) / bnorm;
    if rel <= rtol {
        Ok(max_iter)
    } else {
        Err(Error::LinearSolveFailed(format!("BiCGStab stalled at relative residual {rel:e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_1d(n: usize) -> CsrMatrix {
        let mut t = TripletBuilder::new(n, n);
        for i in 0..n {
            t.push(i, i, 2.0);
            if i > 0 {
                t.push(i, i - 1, -1.0);
            }
            if i + 1 < n {
                t.push(i, i + 1, -1.0);
            }
        }
        t.build()
    }

    #[test]
    fn duplicates_are_summed() {
        let mut t = TripletBuilder::new(2, 2);
        t.push(0, 0, 1.0);
        t.push(0, 0, 2.5);
        t.push(1, 0, -1.0);
        let m = t.build();
        assert_eq!(m.get(0, 0), 3.5);
        assert_eq!(m.get(1, 0), -1.0);
        assert_eq!(m.get(1, 1), 0.0);
        assert_eq!(m.nnz(), 2);
    }

    #[test]
    fn direct_solve_matches_known_solution() {
        let a = laplace_1d(50);
        let x_true: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let b = a.matvec(&x_true);
        let x = DirectSolver::factor(&a).unwrap().solve(&b).unwrap();
        for (u, v) in x.iter().zip(&x_true) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn pattern_reuse_gives_same_answer() {
        let a = laplace_1d(20);
        let s1 = DirectSolver::factor(&a).unwrap();
        let a2 = a.linear_combination(2.0, &CsrMatrix::identity(20), 1.0);
        let s2 = DirectSolver::factor_with(&a2, Some(s1.pattern())).unwrap();
        let b = vec![1.0; 20];
        let x = s2.solve(&b).unwrap();
        assert!(norm2(&residual(&a2, &x, &b)) < 1e-12);
    }

    #[test]
    fn bicgstab_converges_on_spd() {
        let a = laplace_1d(30);
        let b = vec![1.0; 30];
        let mut x = vec![0.0; 30];
        bicgstab(&a, &b, &mut x, 1e-12, 500).unwrap();
        assert!(norm2(&residual(&a, &x, &b)) / norm2(&b) < 1e-12);
    }

    #[test]
    fn conditioning_probe_flags_singular_matrix() {
        // 1D Neumann Laplacian: constants are in the kernel
        let mut t = TripletBuilder::new(10, 10);
        for i in 0..9 {
            t.push(i, i, 1.0);
            t.push(i + 1, i + 1, 1.0);
            t.push(i, i + 1, -1.0);
            t.push(i + 1, i, -1.0);
        }
        let singular = t.build();
        let probe = DirectSolver::factor(&singular).map(|s| s.symmetric_conditioning_probe(30)).unwrap_or(0.0);
        assert!(probe < 1e-12, "probe = {probe}");
        let regular = laplace_1d(10);
        assert!(DirectSolver::factor(&regular).unwrap().symmetric_conditioning_probe(30) > 1e-3);
    }

    #[test]
    fn ldlt_solves_quasi_definite_system() {
        // [[L, I], [I, -I]] with L SPD
        let n = 15;
        let l = laplace_1d(n);
        let mut t = TripletBuilder::new(2 * n, 2 * n);
        t.add_block(0, 0, &l, 1.0);
        for i in 0..n {
            t.push(i, n + i, 1.0);
            t.push(n + i, i, 1.0);
            t.push(n + i, n + i, -1.0);
        }
        let a = t.build();
        let s = DirectSolver::factor_symmetric(&a, None).unwrap();
        let b: Vec<f64> = (0..2 * n).map(|i| (i as f64).sin()).collect();
        let x = s.solve(&b).unwrap();
        assert!(norm2(&residual(&a, &x, &b)) < 1e-12);
        let s2 = DirectSolver::factor_symmetric(&a.linear_combination(2.0, &a, 0.0), Some(s.pattern())).unwrap();
        let x2 = s2.solve(&b).unwrap();
        assert!(x.iter().zip(&x2).all(|(a, b)| (a - 2.0 * b).abs() < 1e-12));
    }
}
