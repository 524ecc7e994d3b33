//! Row-major 2-D tensor and the handful of dense ops the network needs.

use super::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor2<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must equal rows*cols");
        Self { rows, cols, data }
    }

    pub fn from_rows_f64(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend(row.iter().map(|&v| T::from_f64(v)));
        }
        Self {
            rows: r,
            cols: c,
            data,
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn scale(&mut self, s: T) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn to_f64(&self) -> Tensor2<f64> {
        Tensor2 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| Scalar::to_f64(v)).collect(),
        }
    }

    /// `C = A * B`.
    pub fn matmul(a: &Self, b: &Self) -> Self {
        assert_eq!(a.cols, b.rows, "matmul dimension mismatch");
        let mut c = Self::zeros(a.rows, b.cols);
        unsafe {
            T::gemm(
                a.rows,
                a.cols,
                b.cols,
                T::one(),
                a.data.as_ptr(),
                a.cols as isize,
                1,
                b.data.as_ptr(),
                b.cols as isize,
                1,
                T::zero(),
                c.data.as_mut_ptr(),
                c.cols as isize,
                1,
            );
        }
        c
    }

    /// `C = A * B^T` where `b` is stored `n x k`.
    pub fn matmul_nt(a: &Self, b: &Self) -> Self {
        assert_eq!(a.cols, b.cols, "matmul_nt dimension mismatch");
        let mut c = Self::zeros(a.rows, b.rows);
        unsafe {
            T::gemm(
                a.rows,
                a.cols,
                b.rows,
                T::one(),
                a.data.as_ptr(),
                a.cols as isize,
                1,
                b.data.as_ptr(),
                1,
                b.cols as isize,
                T::zero(),
                c.data.as_mut_ptr(),
                c.cols as isize,
                1,
            );
        }
        c
    }

    /// `C += A^T * B` where `a` is stored `k x m`.
    pub fn matmul_tn_acc(a: &Self, b: &Self, c: &mut Self) {
        assert_eq!(a.rows, b.rows, "matmul_tn dimension mismatch");
        assert_eq!((c.rows, c.cols), (a.cols, b.cols));
        unsafe {
            T::gemm(
                a.cols,
                a.rows,
                b.cols,
                T::one(),
                a.data.as_ptr(),
                1,
                a.cols as isize,
                b.data.as_ptr(),
                b.cols as isize,
                1,
                T::one(),
                c.data.as_mut_ptr(),
                c.cols as isize,
                1,
            );
        }
    }
}

/// Row-wise numerically stable softmax.
pub fn softmax_rows<T: Scalar>(t: &Tensor2<T>) -> Tensor2<T> {
    let mut out = t.clone();
    for r in 0..out.rows {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}
