//! Dense row-major kernels.
//!
//! Products go through [`Scalar::gemm`]. Results are deterministic for a given
//! build and CPU; they are not guaranteed to match a naive triple loop bit for
//! bit because the backend may fuse multiply-adds.

use crate::scalar::Scalar;

/// `a[m,k] · b[k,n] -> [m,n]`.
pub fn matmul<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![S::zero(); m * n];
    S::gemm(m, k, n, a, [k, 1], b, [n, 1], &mut c);
    c
}

pub fn transpose<S: Scalar>(a: &[S], rows: usize, cols: usize) -> Vec<S> {
    let mut t = vec![S::zero(); rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = a[i * cols + j];
        }
    }
    t
}

/// `a[m,n] · b[k,n]ᵀ -> [m,k]`.
pub fn matmul_nt<S: Scalar>(a: &[S], b: &[S], m: usize, n: usize, k: usize) -> Vec<S> {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![S::zero(); m * k];
    S::gemm(m, n, k, a, [n, 1], b, [1, n], &mut c);
    c
}

/// `a[m,k]ᵀ · g[m,n] -> [k,n]`.
pub fn matmul_tn<S: Scalar>(a: &[S], g: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(g.len(), m * n);
    let mut c = vec![S::zero(); k * n];
    S::gemm(k, m, n, a, [1, k], g, [n, 1], &mut c);
    c
}

pub fn add_into<S: Scalar>(dst: &mut [S], src: &[S]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Sum in ascending index order.
pub fn sum<S: Scalar>(xs: &[S]) -> S {
    let mut acc = S::zero();
    for &x in xs {
        acc += x;
    }
    acc
}
