//! Dense row-major tensors and the handful of kernels the network needs.
//!
//! Values are generic over [`Real`] so gradient checks can run at 64-bit
//! while training runs at 32-bit.

use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;
use rand::distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn byte_width(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

/// Floating-point element type of a [`Tensor`].
pub trait Real:
    Float
    + Default
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + fmt::Debug
    + fmt::Display
    + 'static
{
    const PRECISION: Precision;

    fn lit(x: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Real for f32 {
    const PRECISION: Precision = Precision::F32;

    #[inline]
    fn lit(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"))
    }
}

impl Real for f64 {
    const PRECISION: Precision = Precision::F64;

    #[inline]
    fn lit(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T = f64> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const MAX: usize = 16;
        write!(f, "Tensor{:?} ", self.shape)?;
        if self.data.len() <= MAX {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "{:?}...", &self.data[..MAX])
        }
    }
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::Dimension("shape must have at least one dimension".into()));
    }
    if let Some(d) = shape.iter().position(|&d| d == 0) {
        return Err(Error::Dimension(format!(
            "dimension {d} of shape {shape:?} is zero"
        )));
    }
    Ok(shape.iter().product())
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n = check_shape(shape)?;
        if data.len() != n {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("tensor data contains non-finite values".into()));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Builds a tensor without validation. Callers guarantee the shape and
    /// length agree.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn filled(shape: &[usize], value: T) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::filled(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::filled(shape, T::one())
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Result<Self> {
        let n = check_shape(shape)?;
        Self::new(shape, (0..n).map(&mut f).collect())
    }

    pub fn scalar(value: T) -> Self {
        Self::from_parts(vec![1], vec![value])
    }

    pub fn zeros_like(&self) -> Self {
        Self::from_parts(self.shape.clone(), vec![T::zero(); self.data.len()])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() {
            return Err(Error::Dimension(format!(
                "index {index:?} has rank {}, tensor shape is {:?}",
                index.len(),
                self.shape
            )));
        }
        let mut off = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            if i >= d {
                return Err(Error::Dimension(format!(
                    "index {index:?} out of bounds for shape {:?}",
                    self.shape
                )));
            }
            off = off * d + i;
        }
        Ok(off)
    }

    pub fn get(&self, index: &[usize]) -> Result<T> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn set(&mut self, index: &[usize], value: T) -> Result<()> {
        let off = self.offset(index)?;
        self.data[off] = value;
        Ok(())
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != self.data.len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        )
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).abs())
            .fold(T::zero(), T::max))
    }

    fn same_shape(&self, other: &Self, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    fn zip_with(&self, other: &Self, op: &str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.same_shape(other, op)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::finite(self.shape.clone(), data, op)
    }

    fn finite(shape: Vec<usize>, data: Vec<T>, op: &str) -> Result<Self> {
        if data.iter().any(|v: &T| !v.is_finite()) {
            return Err(Error::Domain(format!("{op} produced a non-finite value")));
        }
        Ok(Self::from_parts(shape, data))
    }

    fn map(&self, op: &str, f: impl Fn(T) -> T) -> Result<Self> {
        Self::finite(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect(), op)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn add_scalar(&self, s: T) -> Result<Self> {
        self.map("add_scalar", |v| v + s)
    }

    pub fn scale(&self, s: T) -> Result<Self> {
        self.map("scale", |v| v * s)
    }

    pub fn exp(&self) -> Result<Self> {
        self.map("exp", T::exp)
    }

    /// Natural log. Any non-positive entry is a domain error; clip first.
    pub fn ln(&self) -> Result<Self> {
        if let Some(i) = self.data.iter().position(|&v| v <= T::zero()) {
            return Err(Error::Domain(format!(
                "log of non-positive value {} at flat index {i}",
                self.data[i]
            )));
        }
        self.map("ln", T::ln)
    }

    pub fn clip(&self, lo: T, hi: T) -> Result<Self> {
        if lo > hi {
            return Err(Error::Parameter(format!("clip bounds [{lo}, {hi}] are inverted")));
        }
        self.map("clip", |v| v.max(lo).min(hi))
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.rank() != 2 || other.rank() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::Dimension(format!(
                "matmul: cannot multiply {:?} by {:?}",
                self.shape, other.shape
            )));
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![T::zero(); m * n];
        gemm_nn(m, k, n, &self.data, &other.data, &mut out);
        Self::finite(vec![m, n], out, "matmul")
    }

    pub fn transpose2(&self) -> Result<Self> {
        if self.rank() != 2 {
            return Err(Error::Dimension(format!(
                "transpose2 needs rank 2, got {:?}",
                self.shape
            )));
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Self::from_parts(vec![c, r], out))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// U(-sqrt(6/fan_in), +sqrt(6/fan_in)).
    HeUniform,
    Zeros,
    Ones,
}

/// Fan-in convention: rank 1 and rank 2 (`in x out` dense weights) use
/// `shape[0]`; rank >= 3 (`out x in x kh x kw` kernels) use the product of
/// the trailing dimensions.
pub fn fan_in(shape: &[usize]) -> usize {
    match shape.len() {
        0 => 1,
        1 | 2 => shape[0],
        _ => shape[1..].iter().product(),
    }
}

pub fn init_weights<T: Real>(shape: &[usize], scheme: Init, rng: &mut Rng) -> Result<Tensor<T>> {
    match scheme {
        Init::Zeros => Tensor::zeros(shape),
        Init::Ones => Tensor::ones(shape),
        Init::HeUniform => {
            check_shape(shape)?;
            let limit = (6.0 / fan_in(shape) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
            Tensor::from_fn(shape, |_| T::lit(dist.sample(rng)))
        }
    }
}

/// `c[m x n] += a[m x k] * b[k x n]`.
pub(crate) fn gemm_nn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m x n] += a[m x k] * b[n x k]^T`.
pub(crate) fn gemm_nt<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] += dot(a_row, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `c[m x n] += a[k x m]^T * b[k x n]`.
pub(crate) fn gemm_tn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert!(a.len() >= k * m && b.len() >= k * n && c.len() >= m * n);
    for p in 0..k {
        let b_row = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == T::zero() {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes.
/// Summation order is fixed, so results are reproducible.
#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    const LANES: usize = 8;
    let n = a.len().min(b.len());
    let mut acc = [T::zero(); LANES];
    let chunks = n / LANES;
    for c in 0..chunks {
        let a8 = &a[c * LANES..c * LANES + LANES];
        let b8 = &b[c * LANES..c * LANES + LANES];
        for l in 0..LANES {
            acc[l] += a8[l] * b8[l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * LANES..n {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.data()[i * k + p] * b.data()[p * n + j];
                }
                out[i * n + j] = s;
            }
        }
        Tensor::new(&[m, n], out).unwrap()
    }

    fn random(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.uniform(-1.0, 1.0)).unwrap()
    }

    #[test]
    fn identity_matmul() {
        let i2 = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let a = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(i2.matmul(&a).unwrap(), a);
    }

    #[test]
    fn row_times_column() {
        let a = Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(&[2, 1], vec![3.0, 4.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = Rng::new(11);
        let a = random(&[7, 5], &mut rng);
        let b = random(&[5, 3], &mut rng);
        let d = a.matmul(&b).unwrap().max_abs_diff(&naive(&a, &b)).unwrap();
        assert!(d < 1e-12, "{d}");
    }

    #[test]
    fn matmul_matches_triple_loop_all_small_shapes() {
        let mut rng = Rng::new(3);
        for m in 1..=8 {
            for k in 1..=8 {
                for n in 1..=8 {
                    let a = random(&[m, k], &mut rng);
                    let b = random(&[k, n], &mut rng);
                    let d = a.matmul(&b).unwrap().max_abs_diff(&naive(&a, &b)).unwrap();
                    assert!(d < 1e-12, "{m}x{k}x{n}: {d}");
                }
            }
        }
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let a = Tensor::<f64>::zeros(&[2, 3]).unwrap();
        let b = Tensor::<f64>::zeros(&[2, 3]).unwrap();
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.matches("[2, 3]").count() == 2, "{msg}");
    }

    #[test]
    fn matmul_is_associative() {
        let mut rng = Rng::new(5);
        for _ in 0..50 {
            let a = random(&[4, 6], &mut rng);
            let b = random(&[6, 5], &mut rng);
            let c = random(&[5, 3], &mut rng);
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            assert!(left.max_abs_diff(&right).unwrap() < 1e-9);
        }
    }

    #[test]
    fn gemm_variants_agree_with_matmul() {
        let mut rng = Rng::new(9);
        let a = random(&[4, 13], &mut rng);
        let b = random(&[13, 6], &mut rng);
        let expected = naive(&a, &b);

        let bt = b.transpose2().unwrap();
        let mut c = vec![0.0; 24];
        gemm_nt(4, 13, 6, a.data(), bt.data(), &mut c);
        assert!(Tensor::new(&[4, 6], c).unwrap().max_abs_diff(&expected).unwrap() < 1e-12);

        let at = a.transpose2().unwrap();
        let mut c = vec![0.0; 24];
        gemm_tn(4, 13, 6, at.data(), b.data(), &mut c);
        assert!(Tensor::new(&[4, 6], c).unwrap().max_abs_diff(&expected).unwrap() < 1e-12);
    }

    #[test]
    fn elementwise_basics() {
        let a = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(&[2], vec![3.0, 4.0]).unwrap();
        assert_eq!(a.add(&b).unwrap().data(), &[4.0, 6.0]);
        assert_eq!(b.sub(&a).unwrap().data(), &[2.0, 2.0]);
        assert_eq!(a.mul(&b).unwrap().data(), &[3.0, 8.0]);
        assert_eq!(a.scale(0.5).unwrap().data(), &[0.5, 1.0]);

        let c = Tensor::new(&[3], vec![-1.0, 0.5, 2.0]).unwrap();
        assert_eq!(c.clip(0.0, 1.0).unwrap().data(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn exp_log_inverse() {
        let mut rng = Rng::new(1);
        let x = Tensor::from_fn(&[200], |_| rng.uniform(0.1, 10.0)).unwrap();
        let back = x.ln().unwrap().exp().unwrap();
        assert!(back.max_abs_diff(&x).unwrap() < 1e-12);
    }

    #[test]
    fn log_of_non_positive_is_domain_error() {
        let x = Tensor::new(&[2], vec![1.0, 0.0]).unwrap();
        assert!(matches!(x.ln(), Err(Error::Domain(_))));
        assert!(x.clip(1e-7, 1.0).unwrap().ln().is_ok());
    }

    #[test]
    fn binary_shape_mismatch() {
        let a = Tensor::<f64>::zeros(&[2]).unwrap();
        let b = Tensor::<f64>::zeros(&[3]).unwrap();
        assert!(matches!(a.add(&b), Err(Error::Dimension(_))));
    }

    #[test]
    fn exp_overflow_is_rejected() {
        let a = Tensor::new(&[1], vec![1000.0]).unwrap();
        assert!(matches!(a.exp(), Err(Error::Domain(_))));
    }

    #[test]
    fn shape_invariants() {
        assert!(Tensor::<f64>::zeros(&[]).is_err());
        assert!(Tensor::<f64>::zeros(&[2, 0]).is_err());
        assert!(Tensor::new(&[2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(&[1], vec![f64::NAN]).is_err());
    }

    #[test]
    fn constant_inits() {
        let mut rng = Rng::new(0);
        let z: Tensor<f64> = init_weights(&[2, 2], Init::Zeros, &mut rng).unwrap();
        assert_eq!(z.data(), &[0.0; 4]);
        let o: Tensor<f64> = init_weights(&[3], Init::Ones, &mut rng).unwrap();
        assert_eq!(o.data(), &[1.0; 3]);
    }

    #[test]
    fn he_uniform_statistics() {
        let mut rng = Rng::new(7);
        let w: Tensor<f64> = init_weights(&[100, 100], Init::HeUniform, &mut rng).unwrap();
        let limit = (6.0f64 / 100.0).sqrt();
        let mean = w.sum() / w.len() as f64;
        assert!(mean.abs() < 0.01, "{mean}");
        assert!(w.data().iter().all(|v| v.abs() <= limit));
    }

    #[test]
    fn fan_in_convention() {
        assert_eq!(fan_in(&[288, 64]), 288);
        assert_eq!(fan_in(&[8, 4, 3, 3]), 36);
    }
}
