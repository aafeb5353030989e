//! Scalar abstraction shared by the tensor engine, the model and the optimizer.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point element type of every tensor: `f32` or `f64`.
///
/// The crate is exercised at `f64`; `f32` compiles and runs but is not what the
/// gradient and metric tolerances are pinned against.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`; constants in kernels go through here.
    fn of(v: f64) -> Self;

    /// Lossy conversion to `f64` (checkpoints are always written at f64).
    fn as_f64(self) -> f64;

    /// `c[m,n] += a[m,k] · b[k,n]` where `a` and `b` are addressed through
    /// `[row_stride, col_stride]` pairs and `c` is dense row-major.
    #[allow(clippy::too_many_arguments)]
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], sa: [usize; 2], b: &[Self], sb: [usize; 2], c: &mut [Self]);
}

fn check_gemm<T>(m: usize, k: usize, n: usize, a: &[T], sa: [usize; 2], b: &[T], sb: [usize; 2], c: &[T]) {
    let last = |r: usize, cols: usize, s: [usize; 2]| {
        if r == 0 || cols == 0 {
            0
        } else {
            (r - 1) * s[0] + (cols - 1) * s[1] + 1
        }
    };
    assert!(
        a.len() >= last(m, k, sa) && b.len() >= last(k, n, sb) && c.len() == m * n,
        "gemm operand sizes"
    );
}

impl Scalar for f32 {
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], sa: [usize; 2], b: &[Self], sb: [usize; 2], c: &mut [Self]) {
        check_gemm(m, k, n, a, sa, b, sb, c);
        if m == 0 || n == 0 {
            return;
        }
        // SAFETY: check_gemm bounds every strided access inside the slices.
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                sa[0] as isize,
                sa[1] as isize,
                b.as_ptr(),
                sb[0] as isize,
                sb[1] as isize,
                1.0,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], sa: [usize; 2], b: &[Self], sb: [usize; 2], c: &mut [Self]) {
        check_gemm(m, k, n, a, sa, b, sb, c);
        if m == 0 || n == 0 {
            return;
        }
        // SAFETY: check_gemm bounds every strided access inside the slices.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                sa[0] as isize,
                sa[1] as isize,
                b.as_ptr(),
                sb[0] as isize,
                sb[1] as isize,
                1.0,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}
