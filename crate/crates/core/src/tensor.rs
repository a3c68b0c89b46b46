//! Dense `(n, c, h, w)` tensors.
//!
//! Storage is row-major with `w` varying fastest. Precision is a type
//! parameter ([`Scalar`] is implemented for `f32` and `f64`), so mixing
//! precisions in one operation does not compile.
//!
//! Reductions in this module run in ascending linear index order and
//! accumulate in `f64`. Matrix products go through `matrixmultiply`, whose
//! blocking order is fixed for a given shape, so repeated runs agree bit for
//! bit.

use std::fmt::Debug;

use num_traits::Float;

use crate::error::{shape_err, Error, Result};
use crate::rng::Rng;

/// Storage precision tag, as written into weight files (byte width).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32 = 4,
    F64 = 8,
}

impl Precision {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            4 => Some(Precision::F32),
            8 => Some(Precision::F64),
            _ => None,
        }
    }
}

pub trait Scalar: Float + Default + Debug + Send + Sync + 'static {
    const PRECISION: Precision;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    /// `c = alpha * a @ b + beta * c` on strided matrices (`m×k` times `k×n`).
    ///
    /// # Safety
    /// The pointers and strides must describe valid, in-bounds matrices and
    /// `c` must not alias `a` or `b`.
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

impl Scalar for f32 {
    const PRECISION: Precision = Precision::F32;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
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
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    const PRECISION: Precision = Precision::F64;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
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
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// A row-major matrix view, optionally read transposed.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a, S> {
    pub data: &'a [S],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a, S> Mat<'a, S> {
    pub fn new(data: &'a [S], rows: usize, cols: usize) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Mat {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    pub fn t(self) -> Self {
        Mat {
            transposed: !self.transposed,
            ..self
        }
    }

    fn logical(&self) -> (usize, usize, isize, isize) {
        if self.transposed {
            (self.cols, self.rows, 1, self.cols as isize)
        } else {
            (self.rows, self.cols, self.cols as isize, 1)
        }
    }
}

/// `out = a @ b` (or `out += a @ b` when `accumulate`), `out` row-major.
pub(crate) fn matmul<S: Scalar>(a: Mat<'_, S>, b: Mat<'_, S>, out: &mut [S], accumulate: bool) {
    let (m, k, rsa, csa) = a.logical();
    let (k2, n, rsb, csb) = b.logical();
    assert_eq!(k, k2, "inner dimensions differ");
    assert_eq!(out.len(), m * n, "output buffer size");
    assert!(a.data.len() >= m * k && b.data.len() >= k * n);
    let beta = if accumulate { S::one() } else { S::zero() };
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: bounds asserted above; `out` is a distinct &mut borrow.
    unsafe {
        S::gemm_raw(
            m,
            k,
            n,
            S::one(),
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// How to populate a freshly created tensor.
pub enum Fill<'a> {
    Constant(f64),
    Gaussian { mean: f64, sigma: f64, rng: &'a mut Rng },
    Uniform { lo: f64, hi: f64, rng: &'a mut Rng },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: [usize; 4],
    data: Vec<S>,
}

/// Per-`(n, c)` spatial maxima with the `(y, x)` of the first maximum.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelMax<S> {
    pub n: usize,
    pub c: usize,
    pub values: Vec<S>,
    pub positions: Vec<(usize, usize)>,
}

impl<S: Copy> ChannelMax<S> {
    pub fn get(&self, n: usize, c: usize) -> (S, (usize, usize)) {
        let i = n * self.c + c;
        (self.values[i], self.positions[i])
    }
}

fn checked_len(shape: [usize; 4]) -> Result<usize> {
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&len| len <= isize::MAX as usize / 8)
        .ok_or_else(|| Error::Size(format!("extent product of {shape:?} overflows")))
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: [usize; 4], fill: Fill<'_>) -> Result<Self> {
        let len = checked_len(shape)?;
        let data = match fill {
            Fill::Constant(v) => vec![S::from_f64(v); len],
            Fill::Gaussian { mean, sigma, rng } => {
                (0..len).map(|_| S::from_f64(rng.gaussian(mean, sigma))).collect()
            }
            Fill::Uniform { lo, hi, rng } => {
                (0..len).map(|_| S::from_f64(rng.uniform(lo, hi))).collect()
            }
        };
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![S::zero(); len],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<S>) -> Result<Self> {
        let len = checked_len(shape)?;
        if data.len() != len {
            return Err(shape_err!(
                "buffer of {} scalars does not fit shape {shape:?}",
                data.len()
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_f64_slice(shape: [usize; 4], data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&v| S::from_f64(v)).collect())
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<S> {
        self.data
    }

    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let [_, cs, hs, ws] = self.shape;
        ((n * cs + c) * hs + y) * ws + x
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> S {
        self.data[self.offset(n, c, y, x)]
    }

    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: S) {
        let i = self.offset(n, c, y, x);
        self.data[i] = v;
    }

    /// Contiguous slice for sample `n`.
    pub fn sample(&self, n: usize) -> &[S] {
        let stride = self.shape[1] * self.shape[2] * self.shape[3];
        &self.data[n * stride..(n + 1) * stride]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [S] {
        let stride = self.shape[1] * self.shape[2] * self.shape[3];
        &mut self.data[n * stride..(n + 1) * stride]
    }

    pub fn reshape(self, shape: [usize; 4]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(shape_err!("cannot reshape {:?} to {shape:?}", self.shape));
        }
        Ok(Tensor {
            shape,
            data: self.data,
        })
    }

    /// Bitwise equality of shape and every scalar.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits())
    }

    pub fn convert<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| T::from_f64(v.as_f64())).collect(),
        }
    }

    fn zip_with(&self, other: &Self, f: impl Fn(S, S) -> S) -> Result<Self> {
        if self.shape != other.shape {
            return Err(shape_err!("operands {:?} and {:?} differ", self.shape, other.shape));
        }
        Ok(Tensor {
            shape: self.shape,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, s: S) -> Self {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, other: &Self, alpha: S) -> Result<()> {
        if self.shape != other.shape {
            return Err(shape_err!("operands {:?} and {:?} differ", self.shape, other.shape));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + alpha * b;
        }
        Ok(())
    }

    /// Sum of all entries, accumulated in `f64` in ascending index order.
    pub fn sum(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc + v.as_f64())
    }

    pub fn max(&self) -> Result<S> {
        self.argmax().map(|i| self.data[i])
    }

    /// Linear index of the first maximum.
    pub fn argmax(&self) -> Result<usize> {
        first_argmax(&self.data).ok_or_else(|| Error::Domain("max of an empty tensor".into()))
    }

    /// Maximum over `(h, w)` for every `(n, c)`, ties to the first position.
    pub fn max_per_channel_spatial(&self) -> Result<ChannelMax<S>> {
        let [n, c, h, w] = self.shape;
        if h * w == 0 {
            return Err(Error::Domain("spatial extent is empty".into()));
        }
        let mut values = Vec::with_capacity(n * c);
        let mut positions = Vec::with_capacity(n * c);
        for plane in self.data.chunks_exact(h * w) {
            let i = first_argmax(plane).expect("nonempty plane");
            values.push(plane[i]);
            positions.push((i / w, i % w));
        }
        Ok(ChannelMax { n, c, values, positions })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Index of the first maximal element; NaNs never win.
pub(crate) fn first_argmax<S: Scalar>(xs: &[S]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in xs.iter().enumerate() {
        match best {
            None => best = Some(i),
            Some(b) if v > xs[b] || xs[b].is_nan() => best = Some(i),
            _ => {}
        }
    }
    best
}
