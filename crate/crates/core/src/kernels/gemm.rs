/// Row/column strides of a dense matrix operand.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Layout {
    pub rs: isize,
    pub cs: isize,
}

impl Layout {
    /// Row-major storage with `cols` columns.
    pub fn row(cols: usize) -> Self {
        Layout { rs: cols as isize, cs: 1 }
    }

    /// Transposed view of a row-major matrix whose stored rows have `stored_cols` entries.
    pub fn col(stored_cols: usize) -> Self {
        Layout { rs: 1, cs: stored_cols as isize }
    }
}

/// `c = a * b + beta * c` with `c` row-major (`ldc` columns per row).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], la: Layout, b: &[f64], lb: Layout, c: &mut [f64], ldc: usize, beta: f64) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for row in c.chunks_mut(ldc).take(m) {
            for v in &mut row[..n] {
                *v *= beta;
            }
        }
        return;
    }
    assert!(span(m, k, la) <= a.len(), "gemm: lhs buffer too small");
    assert!(span(k, n, lb) <= b.len(), "gemm: rhs buffer too small");
    assert!((m - 1) * ldc + n <= c.len(), "gemm: output buffer too small");
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(m, k, n, 1.0, a.as_ptr(), la.rs, la.cs, b.as_ptr(), lb.rs, lb.cs, beta, c.as_mut_ptr(), ldc as isize, 1);
    }
}

fn span(rows: usize, cols: usize, l: Layout) -> usize {
    (rows - 1) * l.rs as usize + (cols - 1) * l.cs as usize + 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transposed_operands() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, Layout::row(2), &b, Layout::row(2), &mut c, 2, 0.0);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        // a^T b
        gemm(2, 2, 2, &a, Layout::col(2), &b, Layout::row(2), &mut c, 2, 0.0);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
    }
}
