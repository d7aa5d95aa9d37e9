//! Compressed-sparse-row complex matrices and the handful of kernels the
//! Liouvillian needs. Dense operands are `nalgebra` column-major matrices.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

/// Square or rectangular CSR matrix. Column indices inside a row are sorted
/// and unique; explicit zeros are dropped on construction.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<C64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, indptr: vec![0; nrows + 1], indices: Vec::new(), values: Vec::new() }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![C64::new(1.0, 0.0); n],
        }
    }

    /// Builds from (row, col, value) triplets, summing duplicates.
    pub fn from_triplets(nrows: usize, ncols: usize, mut triplets: Vec<(usize, usize, C64)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<C64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        let mut rows_of = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) outside {nrows}x{ncols}");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                values.push(v);
                rows_of.push(r);
                last = Some((r, c));
            }
        }
        let mut kept_idx = Vec::with_capacity(indices.len());
        let mut kept_val = Vec::with_capacity(values.len());
        for ((r, c), v) in rows_of.into_iter().zip(indices).zip(values) {
            if v != C64::new(0.0, 0.0) {
                indptr[r + 1] += 1;
                kept_idx.push(c);
                kept_val.push(v);
            }
        }
        for r in 0..nrows {
            indptr[r + 1] += indptr[r];
        }
        Self { nrows, ncols, indptr, indices: kept_idx, values: kept_val }
    }

    pub fn from_dense(m: &DMatrix<C64>) -> Self {
        let mut t = Vec::new();
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                let v = m[(r, c)];
                if v != C64::new(0.0, 0.0) {
                    t.push((r, c, v));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), t)
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

    /// Iterates over stored entries as (row, col, value).
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            (self.indptr[r]..self.indptr[r + 1]).map(move |k| (r, self.indices[k], self.values[k]))
        })
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        (self.indptr[r]..self.indptr[r + 1]).map(move |k| (self.indices[k], self.values[k]))
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        let lo = self.indptr[r];
        let hi = self.indptr[r + 1];
        match self.indices[lo..hi].binary_search(&c) {
            Ok(k) => self.values[lo + k],
            Err(_) => C64::new(0.0, 0.0),
        }
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.iter() {
            m[(r, c)] = v;
        }
        m
    }

    pub fn adjoint(&self) -> Self {
        let t = self.iter().map(|(r, c, v)| (c, r, v.conj())).collect();
        Self::from_triplets(self.ncols, self.nrows, t)
    }

    pub fn scale(&self, s: C64) -> Self {
        let t = self.iter().map(|(r, c, v)| (r, c, v * s)).collect();
        Self::from_triplets(self.nrows, self.ncols, t)
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let t = self.iter().chain(other.iter()).collect();
        Self::from_triplets(self.nrows, self.ncols, t)
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.ncols, other.nrows);
        let mut t = Vec::new();
        let mut acc = vec![C64::new(0.0, 0.0); other.ncols];
        let mut touched = Vec::new();
        let mut flag = vec![false; other.ncols];
        for r in 0..self.nrows {
            for (k, a) in self.row(r) {
                for (c, b) in other.row(k) {
                    if !flag[c] {
                        flag[c] = true;
                        touched.push(c);
                    }
                    acc[c] += a * b;
                }
            }
            for &c in &touched {
                t.push((r, c, acc[c]));
                acc[c] = C64::new(0.0, 0.0);
                flag[c] = false;
            }
            touched.clear();
        }
        Self::from_triplets(self.nrows, other.ncols, t)
    }

    /// Kronecker product `self ⊗ other`.
    pub fn kron(&self, other: &Self) -> Self {
        let mut t = Vec::with_capacity(self.nnz() * other.nnz());
        for (r1, c1, v1) in self.iter() {
            for (r2, c2, v2) in other.iter() {
                t.push((r1 * other.nrows + r2, c1 * other.ncols + c2, v1 * v2));
            }
        }
        Self::from_triplets(self.nrows * other.nrows, self.ncols * other.ncols, t)
    }

    /// Largest absolute row sum, an upper bound on the spectral radius.
    pub fn max_row_sum(&self) -> f64 {
        (0..self.nrows)
            .map(|r| self.row(r).map(|(_, v)| v.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// `out += s * self * rho` for a dense column-major `rho`.
    pub fn mul_dense_acc(&self, s: C64, rho: &DMatrix<C64>, out: &mut DMatrix<C64>) {
        self.gather_acc(s, rho, out, false);
    }

    /// `out += s * conj(self) * rho` (elementwise conjugate, not adjoint).
    pub fn conj_mul_dense_acc(&self, s: C64, rho: &DMatrix<C64>, out: &mut DMatrix<C64>) {
        self.gather_acc(s, rho, out, true);
    }

    fn gather_acc(&self, s: C64, rho: &DMatrix<C64>, out: &mut DMatrix<C64>, conj: bool) {
        let n = rho.nrows();
        debug_assert_eq!(self.ncols, n);
        let m = self.nrows;
        let mut entries = Vec::with_capacity(self.nnz());
        for (r, c, v) in self.iter() {
            entries.push((r, c, if conj { s * v.conj() } else { s * v }));
        }
        let src = rho.as_slice();
        let dst = out.as_mut_slice();
        for col in 0..rho.ncols() {
            let b = &src[col * n..(col + 1) * n];
            let o = &mut dst[col * m..(col + 1) * m];
            for &(r, c, v) in &entries {
                o[r] += v * b[c];
            }
        }
    }

    /// `out += s * (self * rho)ᵀ` for a Hermitian `rho`. Row `k` of `rho` is
    /// the conjugate of its (contiguous) column `k`, so every update is a
    /// unit-stride axpy.
    pub fn mul_hermitian_transposed_acc(&self, s: C64, rho: &DMatrix<C64>, out: &mut DMatrix<C64>) {
        let n = rho.nrows();
        debug_assert_eq!(self.ncols, n);
        let src = rho.as_slice();
        let dst = out.as_mut_slice();
        for r in 0..self.nrows {
            let o = &mut dst[r * n..(r + 1) * n];
            for k in self.indptr[r]..self.indptr[r + 1] {
                let v = s * self.values[k];
                let col = self.indices[k];
                let b = &src[col * n..(col + 1) * n];
                for (oi, bi) in o.iter_mut().zip(b) {
                    oi.re += v.re * bi.re + v.im * bi.im;
                    oi.im += v.im * bi.re - v.re * bi.im;
                }
            }
        }
    }

    /// `out += s * y * self†` for a dense column-major `y`.
    pub fn dense_mul_adjoint_acc(&self, s: C64, y: &DMatrix<C64>, out: &mut DMatrix<C64>) {
        let n = y.nrows();
        debug_assert_eq!(y.ncols(), self.ncols);
        let src = y.as_slice();
        let dst = out.as_mut_slice();
        for j in 0..self.nrows {
            let o = &mut dst[j * n..(j + 1) * n];
            for k in self.indptr[j]..self.indptr[j + 1] {
                let v = s * self.values[k].conj();
                let col = self.indices[k];
                let b = &src[col * n..(col + 1) * n];
                for (oi, bi) in o.iter_mut().zip(b) {
                    oi.re += v.re * bi.re - v.im * bi.im;
                    oi.im += v.re * bi.im + v.im * bi.re;
                }
            }
        }
    }

    /// `(self * v)` for a dense vector.
    pub fn mul_vec(&self, v: &[C64]) -> Vec<C64> {
        (0..self.nrows)
            .map(|r| self.row(r).map(|(c, a)| a * v[c]).sum())
            .collect()
    }
}
