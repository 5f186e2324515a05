//! Dense row-major tensors and the raw kernels the autodiff graph is built on.

use std::fmt::{self, Debug, Display};
use std::iter::Sum;

use num_traits::Float;

use crate::error::{Error, Result};

/// Floating point element type. Training runs in `f32`; `f64` exists so
/// gradients can be checked against finite differences.
pub trait Scalar: Float + Default + Debug + Display + Sum + Send + Sync + 'static {
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?} {:?}", self.shape, self.data)
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// Builds an `rows x cols` matrix from nested rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Ok(Self {
            shape: vec![r, c],
            data: rows.iter().flatten().copied().collect(),
        })
    }

    /// A `1 x n` row vector.
    pub fn row(values: Vec<T>) -> Self {
        Self {
            shape: vec![1, values.len()],
            data: values,
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1, 1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::Dimension(format!("expected a matrix, got shape {other:?}"))),
        }
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols() + c]
    }

    pub fn row_slice(&self, r: usize) -> &[T] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn norm_sq(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.dims2()?;
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Self {
            shape: vec![c, r],
            data: out,
        })
    }

    /// `self · other`, or `self · otherᵀ` when `transpose_rhs` is set.
    pub fn matmul_ext(&self, other: &Self, transpose_rhs: bool) -> Result<Self> {
        let (m, k) = self.dims2()?;
        let (br, bc) = other.dims2()?;
        let (k2, n) = if transpose_rhs { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul inner extents differ: {:?} x {:?}{}",
                self.shape,
                other.shape,
                if transpose_rhs { "ᵀ" } else { "" }
            )));
        }
        let mut out = vec![T::zero(); m * n];
        let a = &self.data;
        let b = &other.data;
        if transpose_rhs {
            for i in 0..m {
                let arow = &a[i * k..(i + 1) * k];
                for j in 0..n {
                    let brow = &b[j * k..(j + 1) * k];
                    let mut acc = T::zero();
                    for p in 0..k {
                        acc = acc + arow[p] * brow[p];
                    }
                    out[i * n + j] = acc;
                }
            }
        } else {
            for i in 0..m {
                let orow = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let av = a[i * k + p];
                    if av == T::zero() {
                        continue;
                    }
                    let brow = &b[p * n..(p + 1) * n];
                    for (o, &bv) in orow.iter_mut().zip(brow) {
                        *o = *o + av * bv;
                    }
                }
            }
        }
        Ok(Self {
            shape: vec![m, n],
            data: out,
        })
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        self.matmul_ext(other, false)
    }

    /// Elementwise binary op with row/column/scalar broadcasting on rank-2 tensors.
    pub fn broadcast_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        let (ar, ac) = self.dims2()?;
        let (br, bc) = other.dims2()?;
        let r = broadcast_extent(ar, br).ok_or_else(|| mismatch(&self.shape, &other.shape))?;
        let c = broadcast_extent(ac, bc).ok_or_else(|| mismatch(&self.shape, &other.shape))?;
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            let ia = if ar == 1 { 0 } else { i };
            let ib = if br == 1 { 0 } else { i };
            for j in 0..c {
                let ja = if ac == 1 { 0 } else { j };
                let jb = if bc == 1 { 0 } else { j };
                out.push(f(self.data[ia * ac + ja], other.data[ib * bc + jb]));
            }
        }
        Ok(Self {
            shape: vec![r, c],
            data: out,
        })
    }

    /// Sums a rank-2 tensor down to `target` extents (the inverse of broadcasting).
    pub fn reduce_to(&self, target: &[usize]) -> Result<Self> {
        let (r, c) = self.dims2()?;
        let (tr, tc) = match target {
            [a, b] => (*a, *b),
            _ => return Err(Error::Dimension(format!("bad reduce target {target:?}"))),
        };
        if (tr, tc) == (r, c) {
            return Ok(self.clone());
        }
        let mut out = vec![T::zero(); tr * tc];
        for i in 0..r {
            let oi = if tr == 1 { 0 } else { i };
            for j in 0..c {
                let oj = if tc == 1 { 0 } else { j };
                out[oi * tc + oj] = out[oi * tc + oj] + self.data[i * c + j];
            }
        }
        Ok(Self {
            shape: vec![tr, tc],
            data: out,
        })
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(mismatch(&self.shape, &other.shape));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }
}

fn broadcast_extent(a: usize, b: usize) -> Option<usize> {
    if a == b {
        Some(a)
    } else if a == 1 {
        Some(b)
    } else if b == 1 {
        Some(a)
    } else {
        None
    }
}

fn mismatch(a: &[usize], b: &[usize]) -> Error {
    Error::Dimension(format!("incompatible shapes {a:?} and {b:?}"))
}

/// Row-wise softmax with optional keep-mask (`true` = participates).
///
/// Each row has its max subtracted before exponentiation. Masked entries are
/// exactly zero. A row with no kept entries is rejected.
pub fn softmax_rows<T: Scalar>(m: &Tensor<T>, mask: Option<&[bool]>) -> Result<Tensor<T>> {
    let (r, c) = m.dims2()?;
    if let Some(mask) = mask {
        if mask.len() != r * c {
            return Err(Error::Dimension(format!(
                "mask has {} entries for a {r}x{c} matrix",
                mask.len()
            )));
        }
    }
    let mut out = vec![T::zero(); r * c];
    for i in 0..r {
        let row = &m.data()[i * c..(i + 1) * c];
        let keep = |j: usize| mask.is_none_or(|mk| mk[i * c + j]);
        let mut max = T::neg_infinity();
        for (j, &v) in row.iter().enumerate() {
            if keep(j) && v > max {
                max = v;
            }
        }
        if max == T::neg_infinity() {
            return Err(Error::DegenerateMask { row: i });
        }
        let mut total = T::zero();
        for (j, &v) in row.iter().enumerate() {
            if keep(j) {
                let e = (v - max).exp();
                out[i * c + j] = e;
                total = total + e;
            }
        }
        for v in &mut out[i * c..(i + 1) * c] {
            *v = *v / total;
        }
    }
    Tensor::new(vec![r, c], out)
}

/// Row-wise log-softmax, stabilized by the row max.
pub fn log_softmax_rows<T: Scalar>(m: &Tensor<T>) -> Result<Tensor<T>> {
    let (r, c) = m.dims2()?;
    if c == 0 {
        return Err(Error::DegenerateMask { row: 0 });
    }
    let mut out = vec![T::zero(); r * c];
    for i in 0..r {
        let row = &m.data()[i * c..(i + 1) * c];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        for j in 0..c {
            out[i * c + j] = row[j] - lse;
        }
    }
    Tensor::new(vec![r, c], out)
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
