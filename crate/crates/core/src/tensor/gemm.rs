//! Thin wrapper over `matrixmultiply::dgemm` with explicit strides.

/// A strided read-only matrix view.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub rs: isize,
    pub cs: isize,
}

impl<'a> MatRef<'a> {
    pub fn row_major(data: &'a [f64], rows: usize, cols: usize) -> Self {
        debug_assert!(data.len() >= rows * cols);
        Self {
            data,
            rows,
            cols,
            rs: cols as isize,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }
}

/// A strided mutable matrix view.
pub(crate) struct MatMut<'a> {
    pub data: &'a mut [f64],
    pub rows: usize,
    pub cols: usize,
    pub rs: isize,
    pub cs: isize,
}

/// `c = alpha * a @ b + beta * c` with `c` row-major `a.rows x b.cols`.
pub(crate) fn gemm(alpha: f64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: &mut [f64]) {
    let (m, n) = (a.rows, b.cols);
    assert!(c.len() >= m * n, "gemm output too small");
    let c = MatMut {
        data: c,
        rows: m,
        cols: n,
        rs: n as isize,
        cs: 1,
    };
    gemm_into(alpha, a, b, beta, c);
}

/// Below this many multiply-adds the packing in `dgemm` costs more than it saves.
const SMALL: usize = 4096;

/// `c = alpha * a @ b + beta * c` for an arbitrary strided `c`.
pub(crate) fn gemm_into(alpha: f64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: MatMut<'_>) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    assert!(c.rows == a.rows && c.cols == b.cols, "gemm output shape");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.rs >= 0 && c.cs >= 0);
    let last = (m - 1) as isize * c.rs + (n - 1) as isize * c.cs;
    assert!((last as usize) < c.data.len(), "gemm output out of bounds");
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let v = &mut c.data[(i as isize * c.rs + j as isize * c.cs) as usize];
                *v = if beta == 0.0 { 0.0 } else { *v * beta };
            }
        }
        return;
    }
    check_extent(&a);
    check_extent(&b);
    if m * n * k <= SMALL || k <= 2 {
        small_gemm(alpha, a, b, beta, c);
        return;
    }
    // SAFETY: the extents of a, b and c were checked against their slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            c.data.as_mut_ptr(),
            c.rs,
            c.cs,
        );
    }
}

fn small_gemm(alpha: f64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: MatMut<'_>) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let at = |i: usize, p: usize| a.data[(i as isize * a.rs + p as isize * a.cs) as usize];
    let bt = |p: usize, j: usize| b.data[(p as isize * b.rs + j as isize * b.cs) as usize];
    let mut row = vec![0.0; n];
    for i in 0..m {
        row.fill(0.0);
        for p in 0..k {
            let aip = at(i, p);
            if b.cs == 1 {
                let off = (p as isize * b.rs) as usize;
                row.iter_mut().zip(&b.data[off..off + n]).for_each(|(r, bv)| *r += aip * bv);
            } else {
                row.iter_mut().enumerate().for_each(|(j, r)| *r += aip * bt(p, j));
            }
        }
        for (j, r) in row.iter().enumerate() {
            let v = &mut c.data[(i as isize * c.rs + j as isize * c.cs) as usize];
            *v = if beta == 0.0 { alpha * r } else { beta * *v + alpha * r };
        }
    }
}

fn check_extent(m: &MatRef<'_>) {
    assert!(m.rs >= 0 && m.cs >= 0);
    let last = (m.rows - 1) as isize * m.rs + (m.cols - 1) as isize * m.cs;
    assert!((last as usize) < m.data.len(), "gemm operand out of bounds");
}
