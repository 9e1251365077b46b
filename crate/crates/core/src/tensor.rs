//! Dense row-major `f64` tensors.
//!
//! This is deliberately small: the layers in [`crate::nn`] work directly on
//! the flat buffers and only lean on this module for construction, shape
//! bookkeeping and the handful of generic ops (elementwise with trailing-dim
//! broadcasting, 2-D matmul, axis reductions).

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

impl BinaryOp {
    #[inline]
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::shape("tensor rank must be at least 1"));
    }
    if let Some(d) = shape.iter().position(|&d| d == 0) {
        return Err(Error::shape(format!("dimension {d} of {shape:?} is zero")));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Panics on an invalid shape; intended for shapes computed internally.
    pub fn full(shape: &[usize], value: f64) -> Self {
        let len = check_shape(shape).expect("invalid tensor shape");
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Self::zeros(&other.shape)
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let len = check_shape(shape).expect("invalid tensor shape");
        Tensor {
            shape: shape.to_vec(),
            data: (0..len).map(&mut f).collect(),
        }
    }

    /// Rows of equal length stacked into a rank-2 tensor.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged rows"));
        }
        Tensor::new(&[rows.len(), cols], rows.concat())
    }

    pub fn eye(n: usize) -> Self {
        Tensor::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 })
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape, self.data.clone())
    }

    pub fn into_reshape(self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, k: f64) -> Tensor {
        self.map(|v| v * k)
    }

    /// In-place `self += k * other`; shapes must match exactly.
    pub fn axpy(&mut self, k: f64, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!("axpy on {:?} and {:?}", self.shape, other.shape)));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += k * b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Values rounded through `f32`, for compact storage.
    pub fn to_f32_precision(&self) -> Tensor {
        self.map(|v| v as f32 as f64)
    }

    pub fn elementwise(&self, other: &Tensor, op: BinaryOp) -> Result<Tensor> {
        let a = &self.shape;
        let b = &other.shape;
        if a == b {
            let data = self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&x, &y)| op.apply(x, y))
                .collect();
            return Ok(Tensor { shape: a.clone(), data });
        }
        let mismatch = || Error::shape(format!("cannot broadcast {b:?} onto {a:?}"));
        if b.len() > a.len() {
            return Err(mismatch());
        }
        let offset = a.len() - b.len();
        for (i, &bd) in b.iter().enumerate() {
            if bd != 1 && bd != a[offset + i] {
                return Err(mismatch());
            }
        }
        // b strides in a's index space; size-1 dims get stride 0.
        let mut strides = vec![0usize; a.len()];
        let mut acc = 1;
        for i in (0..b.len()).rev() {
            if b[i] != 1 {
                strides[offset + i] = acc;
            }
            acc *= b[i];
        }
        let mut index = vec![0usize; a.len()];
        let mut data = Vec::with_capacity(self.data.len());
        for &x in &self.data {
            let bi: usize = index.iter().zip(&strides).map(|(i, s)| i * s).sum();
            data.push(op.apply(x, other.data[bi]));
            for ax in (0..a.len()).rev() {
                index[ax] += 1;
                if index[ax] < a[ax] {
                    break;
                }
                index[ax] = 0;
            }
        }
        Ok(Tensor { shape: a.clone(), data })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(other, BinaryOp::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(other, BinaryOp::Sub)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(other, BinaryOp::Mul)
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::shape(format!(
                "matmul of {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let b = &other.data[p * n..(p + 1) * n];
                for (o, &bv) in row.iter_mut().zip(b) {
                    *o += a * bv;
                }
            }
        }
        Tensor::new(&[m, n], out)
    }

    /// Transpose of a rank-2 tensor.
    pub fn t(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::shape(format!("transpose of rank-{} tensor", self.rank())));
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        Ok(Tensor::from_fn(&[c, r], |i| self.data[(i % r) * c + i / r]))
    }

    /// Reduces over `axes`. Reduced dims are dropped unless `keep_dims`; a
    /// full reduction without `keep_dims` yields shape `[1]`.
    pub fn reduce(&self, axes: &[usize], op: ReduceOp, keep_dims: bool) -> Result<Tensor> {
        let rank = self.rank();
        if let Some(&ax) = axes.iter().find(|&&ax| ax >= rank) {
            return Err(Error::Index(format!("axis {ax} out of range for rank {rank}")));
        }
        if axes.is_empty() {
            return Ok(self.clone());
        }
        let reduced: Vec<bool> = (0..rank).map(|d| axes.contains(&d)).collect();
        let kept_shape: Vec<usize> = self
            .shape
            .iter()
            .zip(&reduced)
            .map(|(&d, &r)| if r { 1 } else { d })
            .collect();
        let out_len: usize = kept_shape.iter().product();
        let count = self.data.len() / out_len;

        let mut out_strides = vec![0usize; rank];
        let mut acc = 1;
        for d in (0..rank).rev() {
            if !reduced[d] {
                out_strides[d] = acc;
            }
            acc *= kept_shape[d];
        }

        let init = match op {
            ReduceOp::Max => f64::NEG_INFINITY,
            _ => 0.0,
        };
        let mut out = vec![init; out_len];
        // Means accumulate offsets from the first element of each group so a
        // constant group reduces to exactly that constant.
        let mut pivot: Vec<Option<f64>> = vec![None; out_len];
        let mut index = vec![0usize; rank];
        for &x in &self.data {
            let o: usize = index.iter().zip(&out_strides).map(|(i, s)| i * s).sum();
            match op {
                ReduceOp::Max => out[o] = out[o].max(x),
                ReduceOp::Sum => out[o] += x,
                ReduceOp::Mean => out[o] += x - *pivot[o].get_or_insert(x),
            }
            for ax in (0..rank).rev() {
                index[ax] += 1;
                if index[ax] < self.shape[ax] {
                    break;
                }
                index[ax] = 0;
            }
        }
        if op == ReduceOp::Mean {
            for (v, p) in out.iter_mut().zip(&pivot) {
                *v = p.unwrap_or(0.0) + *v / count as f64;
            }
        }
        let shape = if keep_dims {
            kept_shape
        } else {
            let s: Vec<usize> = self
                .shape
                .iter()
                .zip(&reduced)
                .filter(|(_, &r)| !r)
                .map(|(&d, _)| d)
                .collect();
            if s.is_empty() {
                vec![1]
            } else {
                s
            }
        };
        Tensor::new(&shape, out)
    }

    /// Concatenates rank-2 tensors with equal row counts along columns.
    pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
        let rows = parts.first().map(|t| t.shape[0]).unwrap_or(0);
        if parts.iter().any(|t| t.rank() != 2 || t.shape[0] != rows) {
            return Err(Error::shape("concat_cols needs rank-2 tensors with equal rows"));
        }
        let cols: usize = parts.iter().map(|t| t.shape[1]).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for t in parts {
                let c = t.shape[1];
                data.extend_from_slice(&t.data[r * c..(r + 1) * c]);
            }
        }
        Tensor::new(&[rows, cols], data)
    }

    /// Column range `[start, end)` of a rank-2 tensor.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Tensor> {
        if self.rank() != 2 || start >= end || end > self.shape[1] {
            return Err(Error::shape(format!("column slice {start}..{end} of {:?}", self.shape)));
        }
        let (rows, cols) = (self.shape[0], self.shape[1]);
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&self.data[r * cols + start..r * cols + end]);
        }
        Tensor::new(&[rows, end - start], data)
    }

    /// Stacks equally-shaped tensors along a new leading axis.
    pub fn stack(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::shape("stack of zero tensors"))?;
        if parts.iter().any(|t| t.shape != first.shape) {
            return Err(Error::shape("stack needs equal shapes"));
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&first.shape);
        let data = parts.iter().flat_map(|t| t.data.iter().copied()).collect();
        Tensor::new(&shape, data)
    }

    /// Leading-axis item `i` with the leading axis removed (or kept as 1 for rank 1).
    pub fn index_axis0(&self, i: usize) -> Result<Tensor> {
        if i >= self.shape[0] {
            return Err(Error::Index(format!("index {i} of axis size {}", self.shape[0])));
        }
        let inner: usize = self.shape[1..].iter().product();
        let shape = if self.rank() == 1 {
            vec![1]
        } else {
            self.shape[1..].to_vec()
        };
        Tensor::new(&shape, self.data[i * inner..(i + 1) * inner].to_vec())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        write!(f, "Tensor{:?} [", self.shape)?;
        for (i, v) in self.data.iter().take(PREVIEW).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v:.6}")?;
        }
        if self.data.len() > PREVIEW {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn add_direct() {
        let a = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(&[2], vec![3.0, 4.0]).unwrap();
        assert_eq!(a.add(&b).unwrap().data(), &[4.0, 6.0]);
    }

    #[test]
    fn mul_by_ones_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[3, 4, 5], &mut rng);
        assert_eq!(x.mul(&Tensor::ones(&[3, 4, 5])).unwrap(), x);
    }

    #[test]
    fn broadcast_mismatch_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4]);
        let err = a.add(&b).unwrap_err().to_string();
        assert!(err.contains("[4]") && err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn broadcast_trailing_and_unit_dims() {
        let a = Tensor::from_fn(&[2, 3], |i| i as f64);
        let row = Tensor::new(&[3], vec![10.0, 20.0, 30.0]).unwrap();
        assert_eq!(a.add(&row).unwrap().data(), &[10.0, 21.0, 32.0, 13.0, 24.0, 35.0]);
        let col = Tensor::new(&[2, 1], vec![1.0, -1.0]).unwrap();
        assert_eq!(a.mul(&col).unwrap().data(), &[0.0, 1.0, 2.0, -3.0, -4.0, -5.0]);
    }

    #[test]
    fn matmul_examples() {
        let m = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(Tensor::eye(2).matmul(&m).unwrap(), m);
        let a = Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(&[2, 1], vec![3.0, 4.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[11.0]);
        assert!(matches!(a.matmul(&a), Err(Error::Shape(_))));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random(&[5, 7], &mut rng);
        let b = random(&[7, 3], &mut rng);
        let c = a.matmul(&b).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..7 {
                    s += a.data()[i * 7 + k] * b.data()[k * 3 + j];
                }
                assert!((c.data()[i * 3 + j] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reduce_examples() {
        let a = Tensor::new(&[2, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let m = a.reduce(&[0, 1], ReduceOp::Mean, false).unwrap();
        assert_eq!(m.shape(), &[1]);
        assert_eq!(m.data(), &[4.0]);
        assert_eq!(a.reduce(&[], ReduceOp::Sum, false).unwrap(), a);
        assert!(matches!(a.reduce(&[2], ReduceOp::Sum, false), Err(Error::Index(_))));
        let mx = a.reduce(&[1], ReduceOp::Max, true).unwrap();
        assert_eq!(mx.shape(), &[2, 1]);
        assert_eq!(mx.data(), &[3.0, 7.0]);
    }

    #[test]
    fn mean_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&[2, 3, 4], &mut rng);
        let m = a.reduce(&[0, 2], ReduceOp::Mean, false).unwrap();
        assert_eq!(m.shape(), &[3]);
        for j in 0..3 {
            let mut s = 0.0;
            for i in 0..2 {
                for k in 0..4 {
                    s += a.data()[i * 12 + j * 4 + k];
                }
            }
            assert!((m.data()[j] - s / 8.0).abs() < 1e-14);
        }
    }

    #[test]
    fn mean_of_constant_is_exact() {
        let a = Tensor::full(&[3, 5, 7], 0.1);
        let m = a.reduce(&[0, 1, 2], ReduceOp::Mean, false).unwrap();
        assert_eq!(m.data()[0], 0.1);
    }

    #[test]
    fn invalid_shapes_rejected() {
        assert!(Tensor::new(&[2, 0], vec![]).is_err());
        assert!(Tensor::new(&[], vec![]).is_err());
        assert!(Tensor::new(&[2, 2], vec![1.0]).is_err());
    }

    proptest! {
        #[test]
        fn add_and_mul_commute(vals in proptest::collection::vec(-1e3f64..1e3, 12),
                               other in proptest::collection::vec(-1e3f64..1e3, 12)) {
            let a = Tensor::new(&[3, 4], vals).unwrap();
            let b = Tensor::new(&[3, 4], other).unwrap();
            prop_assert_eq!(a.add(&b).unwrap(), b.add(&a).unwrap());
            prop_assert_eq!(a.mul(&b).unwrap(), b.mul(&a).unwrap());
        }

        #[test]
        fn matmul_is_associative(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random(&[3, 4], &mut rng);
            let b = random(&[4, 5], &mut rng);
            let c = random(&[5, 2], &mut rng);
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            for (x, y) in left.data().iter().zip(right.data()) {
                prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1.0));
            }
        }

        #[test]
        fn finite_in_finite_out(vals in proptest::collection::vec(-1e6f64..1e6, 6)) {
            let a = Tensor::new(&[2, 3], vals).unwrap();
            prop_assert!(a.add(&a).unwrap().is_finite());
            prop_assert!(a.matmul(&a.t().unwrap()).unwrap().is_finite());
            prop_assert!(a.reduce(&[1], ReduceOp::Mean, false).unwrap().is_finite());
        }
    }
}
