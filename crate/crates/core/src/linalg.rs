//! Dense row-major matrices and the handful of kernels the tape needs.
//!
//! Everything here is deliberately boring: fixed loop orders so results are
//! bit-reproducible run to run, and reduction-free (axpy-style) inner loops
//! where possible so the compiler can vectorize without being asked to
//! reassociate floating-point sums.

/// Row-major `rows x cols` matrix of f64.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "Mat::from_vec: length mismatch");
        Mat { rows, cols, data }
    }

    /// Build from a function of (row, col).
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }
}

/// `acc[..] += s * x[..]`.
#[inline]
pub fn axpy(acc: &mut [f64], s: f64, x: &[f64]) {
    debug_assert_eq!(acc.len(), x.len());
    for (a, &b) in acc.iter_mut().zip(x) {
        *a += s * b;
    }
}

/// Dot product with fixed 4-way unrolling.
///
/// The four independent accumulators break the serial add dependency so the
/// loop vectorizes; the combination order (a0+a1)+(a2+a3)+tail is fixed, so
/// the result is identical on every run of the same build.
#[inline]
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let n = x.len();
    let chunks = n / 4;
    let (mut a0, mut a1, mut a2, mut a3) = (0.0, 0.0, 0.0, 0.0);
    for c in 0..chunks {
        let i = 4 * c;
        a0 += x[i] * y[i];
        a1 += x[i + 1] * y[i + 1];
        a2 += x[i + 2] * y[i + 2];
        a3 += x[i + 3] * y[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..n {
        tail += x[i] * y[i];
    }
    (a0 + a1) + (a2 + a3) + tail
}

/// Sum of a slice, 4-way unrolled, fixed combination order.
#[inline]
pub fn sum(x: &[f64]) -> f64 {
    let n = x.len();
    let chunks = n / 4;
    let (mut a0, mut a1, mut a2, mut a3) = (0.0, 0.0, 0.0, 0.0);
    for c in 0..chunks {
        let i = 4 * c;
        a0 += x[i];
        a1 += x[i + 1];
        a2 += x[i + 2];
        a3 += x[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..n {
        tail += x[i];
    }
    (a0 + a1) + (a2 + a3) + tail
}

/// out = A (p x q) * B (q x r), all row-major flat slices. out is overwritten.
///
/// ikj order: the inner loop is an axpy over a row of B, so there is no
/// reduction to reassociate.
pub fn matmul_nn(a: &[f64], p: usize, q: usize, b: &[f64], r: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), p * q);
    debug_assert_eq!(b.len(), q * r);
    debug_assert_eq!(out.len(), p * r);
    out.fill(0.0);
    for i in 0..p {
        let arow = &a[i * q..(i + 1) * q];
        let orow = &mut out[i * r..(i + 1) * r];
        for (k, &aik) in arow.iter().enumerate() {
            if aik != 0.0 {
                axpy(orow, aik, &b[k * r..(k + 1) * r]);
            }
        }
    }
}

/// out = A (p x q) * B^T where B is (r x q). out is (p x r).
pub fn matmul_nt(a: &[f64], p: usize, q: usize, b: &[f64], r: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), p * q);
    debug_assert_eq!(b.len(), r * q);
    debug_assert_eq!(out.len(), p * r);
    for i in 0..p {
        let arow = &a[i * q..(i + 1) * q];
        for j in 0..r {
            out[i * r + j] = dot(arow, &b[j * q..(j + 1) * q]);
        }
    }
}

/// out = A^T * B where A is (q x p), B is (q x r). out is (p x r).
///
/// Accumulates rank-1 updates row by row of A/B; axpy inner loop.
pub fn matmul_tn(a: &[f64], q: usize, p: usize, b: &[f64], r: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), q * p);
    debug_assert_eq!(b.len(), q * r);
    debug_assert_eq!(out.len(), p * r);
    out.fill(0.0);
    for k in 0..q {
        let arow = &a[k * p..(k + 1) * p];
        let brow = &b[k * r..(k + 1) * r];
        for (i, &aki) in arow.iter().enumerate() {
            if aki != 0.0 {
                axpy(&mut out[i * r..(i + 1) * r], aki, brow);
            }
        }
    }
}
