//! Dense NCHW tensors of `f64`.
//!
//! Every tensor is four-dimensional. Images are `(N, 3, H, W)`, masks
//! `(1, 1, H, W)` or `(N, 1, H, W)`, and flat feature vectors are stored as
//! `(N, F, 1, 1)`. Gradients live next to the data in an optional buffer of
//! the same length so that parameter tensors can carry their own gradient.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Elements in one batch item.
    pub const fn item_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn with_batch(&self, n: usize) -> Shape {
        Shape { n, ..*self }
    }
}

impl From<[usize; 4]> for Shape {
    fn from(d: [usize; 4]) -> Self {
        Shape::new(d[0], d[1], d[2], d[3])
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn zeros(shape: impl Into<Shape>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: impl Into<Shape>) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: impl Into<Shape>, value: f64) -> Self {
        let shape = shape.into();
        Tensor {
            shape,
            data: vec![value; shape.numel()],
            grad: None,
        }
    }

    pub fn from_vec(shape: impl Into<Shape>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if data.len() != shape.numel() {
            return Err(Error::InvalidShape(format!(
                "shape {shape} needs {} values, got {}",
                shape.numel(),
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn numel(&self) -> usize {
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

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Gradient buffer, allocated as zeros on first access.
    pub fn grad_mut(&mut self) -> &mut [f64] {
        let len = self.data.len();
        self.grad.get_or_insert_with(|| vec![0.0; len])
    }

    /// Data and gradient borrowed together, for optimizers.
    pub fn data_and_grad_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        let len = self.data.len();
        let grad = self.grad.get_or_insert_with(|| vec![0.0; len]);
        (&mut self.data, grad)
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn accumulate_grad(&mut self, delta: &[f64]) {
        debug_assert_eq!(delta.len(), self.data.len());
        self.grad_mut()
            .iter_mut()
            .zip(delta)
            .for_each(|(g, d)| *g += d);
    }

    /// Copy without the gradient buffer.
    pub fn detached(&self) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.clone(),
            grad: None,
        }
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + y) * self.shape.w + x
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: f64) {
        let i = self.index(n, c, y, x);
        self.data[i] = v;
    }

    pub fn reshape(&self, shape: impl Into<Shape>) -> Result<Tensor> {
        let shape = shape.into();
        if shape.numel() != self.numel() {
            return Err(Error::InvalidShape(format!(
                "cannot reshape {} into {shape}",
                self.shape
            )));
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
            grad: None,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }

    pub fn scale(&self, k: f64) -> Tensor {
        self.map(|v| v * k)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.expect_shape(other.shape)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        self.expect_shape(other.shape)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn expect_shape(&self, expected: Shape) -> Result<()> {
        if self.shape != expected {
            return Err(Error::ShapeMismatch {
                expected,
                actual: self.shape,
            });
        }
        Ok(())
    }

    pub fn elementwise(&self, other: &Tensor, op: ElementwiseOp) -> Result<Tensor> {
        self.expect_shape(other.shape)?;
        let f: fn(f64, f64) -> f64 = match op {
            ElementwiseOp::Add => |a, b| a + b,
            ElementwiseOp::Sub => |a, b| a - b,
            ElementwiseOp::Mul => |a, b| a * b,
        };
        Ok(Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            grad: None,
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(other, ElementwiseOp::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(other, ElementwiseOp::Sub)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(other, ElementwiseOp::Mul)
    }

    /// Batch item `n` as a `(1, C, H, W)` tensor.
    pub fn item(&self, n: usize) -> Tensor {
        let len = self.shape.item_len();
        Tensor {
            shape: self.shape.with_batch(1),
            data: self.data[n * len..(n + 1) * len].to_vec(),
            grad: None,
        }
    }

    pub fn item_data(&self, n: usize) -> &[f64] {
        let len = self.shape.item_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn item_data_mut(&mut self, n: usize) -> &mut [f64] {
        let len = self.shape.item_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    /// Concatenate tensors along the batch axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot stack zero tensors".into()))?;
        let per = first.shape.with_batch(1);
        let mut data = Vec::with_capacity(per.numel() * items.len());
        let mut n = 0;
        for t in items {
            if t.shape.with_batch(1) != per {
                return Err(Error::ShapeMismatch {
                    expected: per.with_batch(t.shape.n),
                    actual: t.shape,
                });
            }
            data.extend_from_slice(&t.data);
            n += t.shape.n;
        }
        Tensor::from_vec(per.with_batch(n), data)
    }

    /// Spatial window `[top, top+h) x [left, left+w)` of every item and channel.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Tensor> {
        if top + h > self.shape.h || left + w > self.shape.w {
            return Err(Error::InvalidShape(format!(
                "crop {h}x{w} at ({top},{left}) exceeds {}",
                self.shape
            )));
        }
        let s = self.shape;
        let mut out = Tensor::zeros(Shape::new(s.n, s.c, h, w));
        for n in 0..s.n {
            for c in 0..s.c {
                for y in 0..h {
                    let src = self.index(n, c, top + y, left);
                    let dst = out.index(n, c, y, 0);
                    out.data[dst..dst + w].copy_from_slice(&self.data[src..src + w]);
                }
            }
        }
        Ok(out)
    }

    /// Inverse of [`Tensor::crop`]: write `patch` into a copy of `self` at `(top, left)`.
    pub fn paste(&self, patch: &Tensor, top: usize, left: usize) -> Result<Tensor> {
        let (s, p) = (self.shape, patch.shape);
        if p.n != s.n || p.c != s.c || top + p.h > s.h || left + p.w > s.w {
            return Err(Error::InvalidShape(format!(
                "cannot paste {p} into {s} at ({top},{left})"
            )));
        }
        let mut out = self.detached();
        for n in 0..s.n {
            for c in 0..s.c {
                for y in 0..p.h {
                    let dst = out.index(n, c, top + y, left);
                    let src = patch.index(n, c, y, 0);
                    out.data[dst..dst + p.w].copy_from_slice(&patch.data[src..src + p.w]);
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::from_vec([1, 1, 2, 2], vec![0.0; 3]).is_err());
        let t = Tensor::from_vec([2, 3, 4, 4], vec![0.0; 96]).unwrap();
        assert_eq!(t.numel(), 96);
    }

    #[test]
    fn zero_extent_is_empty() {
        let t = Tensor::zeros([0, 3, 4, 4]);
        assert!(t.is_empty());
    }

    #[test]
    fn elementwise_ops() {
        let a = Tensor::from_vec([1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::from_vec([1, 1, 1, 2], vec![3.0, 4.0]).unwrap();
        assert_eq!(a.mul(&b).unwrap().data(), &[3.0, 8.0]);
        assert_eq!(a.add(&b).unwrap().data(), &[4.0, 6.0]);
        assert_eq!(a.sub(&b).unwrap().data(), &[-2.0, -2.0]);
        assert_eq!(a.mul(&Tensor::ones(a.shape())).unwrap(), a);
        assert_eq!(
            a.mul(&Tensor::zeros(a.shape())).unwrap(),
            Tensor::zeros(a.shape())
        );
    }

    #[test]
    fn elementwise_shape_mismatch() {
        let a = Tensor::zeros([1, 1, 1, 2]);
        let b = Tensor::zeros([1, 1, 2, 1]);
        assert!(matches!(
            a.add(&b),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn crop_paste_round_trip() {
        let data: Vec<f64> = (0..2 * 3 * 6 * 6).map(|v| v as f64).collect();
        let t = Tensor::from_vec([2, 3, 6, 6], data).unwrap();
        let c = t.crop(1, 2, 3, 4).unwrap();
        assert_eq!(c.get(1, 2, 0, 0), t.get(1, 2, 1, 2));
        let back = t.paste(&c, 1, 2).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn stack_concatenates_batch() {
        let a = Tensor::full([1, 2, 2, 2], 1.0);
        let b = Tensor::full([2, 2, 2, 2], 2.0);
        let s = Tensor::stack(&[a, b]).unwrap();
        assert_eq!(s.shape(), Shape::new(3, 2, 2, 2));
        assert_eq!(s.item(2).data(), &[2.0; 8]);
    }

    #[test]
    fn grad_buffer_matches_data() {
        let mut t = Tensor::zeros([1, 2, 3, 3]);
        assert!(t.grad().is_none());
        assert_eq!(t.grad_mut().len(), t.numel());
        t.accumulate_grad(&[1.0; 18]);
        t.zero_grad();
        assert!(t.grad().unwrap().iter().all(|&g| g == 0.0));
    }
}
