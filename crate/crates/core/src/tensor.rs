//! Dense row-major `f64` tensors.
//!
//! 4-d tensors use NCHW order: batch, channels, height, width. Operations
//! allocate their output; nothing is mutated behind a shared reference.

use std::fmt;

use crate::error::{mismatch, Error, Result};

/// Tensor dimensions. Every dim is at least 1, so the element count is never 0.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::InvalidShape(dims));
        }
        Ok(Shape(dims))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Leading (batch) dimension.
    pub fn batch(&self) -> usize {
        self.0[0]
    }

    /// Channel count: dim 1 for rank ≥ 2, otherwise a single channel.
    pub fn channels(&self) -> usize {
        if self.0.len() >= 2 {
            self.0[1]
        } else {
            1
        }
    }

    /// Elements per channel per example (product of dims after the channel axis).
    pub fn channel_stride(&self) -> usize {
        if self.0.len() >= 2 {
            self.0[2..].iter().product()
        } else {
            self.0[0]
        }
    }

    /// `(n, c, h, w)` for a rank-4 shape.
    pub fn nchw(&self) -> Result<(usize, usize, usize, usize)> {
        match *self.0.as_slice() {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(mismatch(format!("expected a 4-d NCHW tensor, got {self:?}"))),
        }
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, "×")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, ")")
    }
}

impl TryFrom<&[usize]> for Shape {
    type Error = Error;

    fn try_from(dims: &[usize]) -> Result<Self> {
        Shape::new(dims.to_vec())
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl Tensor {
    /// A tensor with every element equal to `fill`.
    pub fn new(dims: &[usize], fill: f64) -> Result<Self> {
        let shape = Shape::new(dims.to_vec())?;
        Ok(Self::full(shape, fill))
    }

    pub fn full(shape: Shape, fill: f64) -> Self {
        let data = vec![fill; shape.numel()];
        Tensor { shape, data }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn from_vec(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        let shape = Shape::new(dims.to_vec())?;
        Self::from_shape_vec(shape, data)
    }

    pub fn from_shape_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(mismatch(format!(
                "{} values do not fill shape {shape:?}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    /// Always false: shapes cannot have zero elements.
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

    pub fn reshape(self, dims: &[usize]) -> Result<Self> {
        let shape = Shape::new(dims.to_vec())?;
        Self::from_shape_vec(shape, self.data)
    }

    /// Example `n` along the leading axis, as a flat slice.
    pub fn example(&self, n: usize) -> &[f64] {
        let stride = self.data.len() / self.shape.batch();
        &self.data[n * stride..(n + 1) * stride]
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.expect_same_shape(other)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    /// Sum of all elements, accumulated left to right.
    pub fn reduce_sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// 2-d matrix product `(m×k)·(k×n)`.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (&[m, k], &[k2, n]) = (self.dims(), rhs.dims()) else {
            return Err(mismatch(format!(
                "matmul needs 2-d operands, got {:?} and {:?}",
                self.shape, rhs.shape
            )));
        };
        if k != k2 {
            return Err(mismatch(format!(
                "matmul inner dims differ: {:?} · {:?}",
                self.shape, rhs.shape
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            (m, k, n),
            1.0,
            (&self.data, k, 1),
            (&rhs.data, n, 1),
            0.0,
            (&mut out, n, 1),
        );
        Tensor::from_vec(&[m, n], out)
    }

    pub(crate) fn expect_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(mismatch(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }
}

/// `c ← alpha·a·b + beta·c` for strided row/column layouts.
///
/// Each matrix is `(slice, row_stride, col_stride)`; `dims` is `(m, k, n)`.
/// Panics if any stride pattern reaches past the end of its slice.
pub(crate) fn gemm(
    (m, k, n): (usize, usize, usize),
    alpha: f64,
    a: (&[f64], usize, usize),
    b: (&[f64], usize, usize),
    beta: f64,
    c: (&mut [f64], usize, usize),
) {
    fn extent(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * rs + (cols - 1) * cs + 1
        }
    }
    assert!(extent(m, k, a.1, a.2) <= a.0.len(), "gemm: lhs out of bounds");
    assert!(extent(k, n, b.1, b.2) <= b.0.len(), "gemm: rhs out of bounds");
    assert!(extent(m, n, c.1, c.2) <= c.0.len(), "gemm: output out of bounds");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let v = &mut c.0[i * c.1 + j * c.2];
                *v = if beta == 0.0 { 0.0 } else { beta * *v };
            }
        }
        return;
    }
    // SAFETY: the asserts above bound every index the kernel touches, and
    // `c` is a unique borrow so it cannot alias `a` or `b`.
    unsafe {
        gemm::gemm(
            m,
            n,
            k,
            c.0.as_mut_ptr(),
            c.2 as isize,
            c.1 as isize,
            beta != 0.0,
            a.0.as_ptr(),
            a.2 as isize,
            a.1 as isize,
            b.0.as_ptr(),
            b.2 as isize,
            b.1 as isize,
            beta,
            alpha,
            false,
            false,
            false,
            gemm::Parallelism::None,
        );
    }
}
