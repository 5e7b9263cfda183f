//! Dense row-major `f64` matrices.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor({}x{}, {:?})", self.rows, self.cols, self.data)
    }
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "tensor",
                format!("{} values for a {rows}x{cols} tensor", data.len()),
            ));
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn full(rows: usize, cols: usize, value: f64) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Builds a tensor from nested rows; every row must have the same length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape(
                    "from_rows",
                    format!("row {i} has {} columns, expected {cols}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Ok(Tensor {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn row_vector(values: &[f64]) -> Self {
        Tensor {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Tensor { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Value of a 1x1 tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::shape(
                "item",
                format!("expected 1x1, got {}x{}", self.rows, self.cols),
            ));
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        // branch-free over the exponent bits so the scan vectorizes
        const EXP: u64 = 0x7ff0_0000_0000_0000;
        !self.data.iter().fold(false, |bad, v| bad | (v.to_bits() & EXP == EXP))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// `op(a) . op(b)` where `op` optionally transposes; shapes are asserted.
    pub(crate) fn gemm(a: &Tensor, trans_a: bool, b: &Tensor, trans_b: bool) -> Tensor {
        let (m, k) = if trans_a { (a.cols, a.rows) } else { (a.rows, a.cols) };
        let (kb, n) = if trans_b { (b.cols, b.rows) } else { (b.rows, b.cols) };
        assert_eq!(k, kb, "gemm inner dimensions");
        let mut out = Vec::with_capacity(m * n);
        if k == 0 {
            out.resize(m * n, 0.0);
        } else if m > 0 && n > 0 {
            let (rsa, csa) = if trans_a { (1, a.cols as isize) } else { (a.cols as isize, 1) };
            let (rsb, csb) = if trans_b { (1, b.cols as isize) } else { (b.cols as isize, 1) };
            // SAFETY: strides describe the buffers of `a` and `b` (m*k and k*n
            // values) and the m*n capacity of `out`.
            unsafe {
                matrixmultiply::dgemm(
                    m,
                    k,
                    n,
                    1.0,
                    a.data.as_ptr(),
                    rsa,
                    csa,
                    b.data.as_ptr(),
                    rsb,
                    csb,
                    0.0,
                    out.as_mut_ptr(),
                    n as isize,
                    1,
                );
                // beta = 0: every output element was written without being read
                out.set_len(m * n);
            }
        }
        Tensor {
            rows: m,
            cols: n,
            data: out,
        }
    }

    /// Plain matrix product without shape checking beyond an assertion.
    pub(crate) fn matmul_raw(a: &Tensor, b: &Tensor) -> Tensor {
        Tensor::gemm(a, false, b, false)
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols != other.rows {
            return Err(Error::shape(
                "matmul",
                format!(
                    "({}x{}) . ({}x{})",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        Ok(Tensor::matmul_raw(self, other))
    }

    /// Stacks the rows of `parts` vertically.
    pub fn vstack(parts: &[&Tensor]) -> Result<Tensor> {
        let cols = parts.first().map_or(0, |t| t.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for t in parts {
            if t.cols != cols {
                return Err(Error::shape(
                    "vstack",
                    format!("{} columns vs {cols}", t.cols),
                ));
            }
            rows += t.rows;
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor { rows, cols, data })
    }

    /// Concatenates `a` and `b` along columns.
    pub fn hstack(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.rows != b.rows {
            return Err(Error::shape(
                "hstack",
                format!("{} rows vs {} rows", a.rows, b.rows),
            ));
        }
        let cols = a.cols + b.cols;
        let mut data = Vec::with_capacity(a.rows * cols);
        for i in 0..a.rows {
            data.extend_from_slice(a.row(i));
            data.extend_from_slice(b.row(i));
        }
        Ok(Tensor {
            rows: a.rows,
            cols,
            data,
        })
    }

    /// Gathers the listed rows into a new tensor.
    pub fn select_rows(&self, idx: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Tensor {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matmul() {
        let b = Tensor::from_rows(&[[3.0, 4.0], [5.0, 6.0]]).unwrap();
        assert_eq!(Tensor::eye(2).matmul(&b).unwrap(), b);
    }

    #[test]
    fn finiteness_scan() {
        let ok = Tensor::row_vector(&[0.0, -0.0, f64::MAX, f64::MIN_POSITIVE, 5e-324, -1.0]);
        assert!(ok.is_finite());
        for bad in [f64::NAN, f64::INFINITY, f64::NEG_INFINITY] {
            assert!(!Tensor::row_vector(&[1.0, bad, 2.0]).is_finite());
        }
        assert!(Tensor::zeros(0, 3).is_finite());
    }

    #[test]
    fn gemm_transposes_match_naive_product() {
        let naive = |a: &Tensor, b: &Tensor| {
            Tensor::from_fn(a.rows(), b.cols(), |i, j| (0..a.cols()).map(|p| a.get(i, p) * b.get(p, j)).sum())
        };
        let a = Tensor::from_fn(5, 3, |i, j| (i as f64 - 2.0) * 0.7 + j as f64 * 0.3);
        let b = Tensor::from_fn(3, 4, |i, j| (i * j) as f64 * 0.5 - 1.0);
        let close = |x: &Tensor, y: &Tensor| {
            x.shape() == y.shape() && x.data().iter().zip(y.data()).all(|(p, q)| (p - q).abs() < 1e-12)
        };
        assert!(close(&Tensor::gemm(&a, false, &b, false), &naive(&a, &b)));
        assert!(close(&Tensor::gemm(&a.transpose(), true, &b, false), &naive(&a, &b)));
        assert!(close(&Tensor::gemm(&a, false, &b.transpose(), true), &naive(&a, &b)));
        assert!(close(&Tensor::gemm(&a.transpose(), true, &b.transpose(), true), &naive(&a, &b)));
        assert_eq!(Tensor::gemm(&Tensor::zeros(2, 0), false, &Tensor::zeros(0, 3), false), Tensor::zeros(2, 3));
    }

    #[test]
    fn matmul_column() {
        let a = Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[[5.0], [6.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), (2, 1));
        assert_eq!(c.data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_rejects_bad_shapes() {
        let a = Tensor::zeros(2, 3);
        assert!(matches!(a.matmul(&a), Err(Error::Shape { .. })));
    }

    #[test]
    fn new_checks_length() {
        assert!(Tensor::new(2, 2, vec![1.0; 3]).is_err());
    }

    #[test]
    fn transpose_twice_is_identity() {
        let a = Tensor::from_fn(3, 2, |i, j| (i * 2 + j) as f64);
        assert_eq!(a.transpose().transpose(), a);
        assert_eq!(a.transpose().get(1, 2), a.get(2, 1));
    }
}
