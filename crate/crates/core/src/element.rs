use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;

/// Scalar type a [`Graph`](crate::Graph) can run on.
///
/// Production code runs on `f32`; `f64` exists so gradient checks can evaluate
/// the same graph as a high-precision shadow.
pub trait Element: Float + Sum + Default + Debug + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c = alpha * a * b + beta * c` over strided row/column layouts.
    ///
    /// # Safety
    /// Every index reachable through the given strides and extents must be in
    /// bounds of the corresponding slice. Use [`gemm`] instead.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Element for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Element for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Row-major or transposed view of a dense matrix stored in a slice.
#[derive(Clone, Copy, Debug)]
pub struct MatLayout {
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl MatLayout {
    pub fn row_major(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// The transpose of a row-major `(cols, rows)` matrix.
    pub fn transposed(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_stride: 1,
            col_stride: rows,
        }
    }

    fn span(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride + 1
        }
    }
}

/// Bounds-checked `c = a * b + beta * c`.
pub fn gemm<T: Element>(
    a: &[T],
    la: MatLayout,
    b: &[T],
    lb: MatLayout,
    beta: T,
    c: &mut [T],
    lc: MatLayout,
) {
    assert_eq!(la.cols, lb.rows, "gemm inner dimension");
    assert_eq!(la.rows, lc.rows, "gemm output rows");
    assert_eq!(lb.cols, lc.cols, "gemm output cols");
    assert!(la.span() <= a.len() && lb.span() <= b.len() && lc.span() <= c.len());
    if lc.rows == 0 || lc.cols == 0 {
        return;
    }
    // SAFETY: spans checked above.
    unsafe {
        T::gemm_raw(
            la.rows,
            la.cols,
            lb.cols,
            T::one(),
            a.as_ptr(),
            la.row_stride as isize,
            la.col_stride as isize,
            b.as_ptr(),
            lb.row_stride as isize,
            lb.col_stride as isize,
            beta,
            c.as_mut_ptr(),
            lc.row_stride as isize,
            lc.col_stride as isize,
        )
    }
}
