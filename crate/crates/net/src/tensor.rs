//! Dense NHWC tensors.

use crate::error::{invalid, Result};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Batch, height, width, channels; channels vary fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    pub dims: [usize; 4],
    pub data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(dims: [usize; 4]) -> Self {
        Self { dims, data: vec![0.0; dims.iter().product()] }
    }

    pub fn filled(dims: [usize; 4], value: f64) -> Self {
        Self { dims, data: vec![value; dims.iter().product()] }
    }

    pub fn from_vec(dims: [usize; 4], data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.iter().product::<usize>() {
            return invalid(format!("{} values do not fill dims {:?}", data.len(), dims));
        }
        Ok(Self { dims, data })
    }

    pub fn randn<R: Rng + ?Sized>(dims: [usize; 4], rng: &mut R) -> Self {
        let n = dims.iter().product();
        Self { dims, data: (0..n).map(|_| StandardNormal.sample(rng)).collect() }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    pub fn height(&self) -> usize {
        self.dims[1]
    }

    pub fn width(&self) -> usize {
        self.dims[2]
    }

    pub fn channels(&self) -> usize {
        self.dims[3]
    }

    /// Pixels per image.
    pub fn plane(&self) -> usize {
        self.dims[1] * self.dims[2]
    }

    pub fn index(&self, n: usize, y: usize, x: usize, c: usize) -> usize {
        ((n * self.dims[1] + y) * self.dims[2] + x) * self.dims[3] + c
    }

    pub fn at(&self, n: usize, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.index(n, y, x, c)]
    }

    pub fn set(&mut self, n: usize, y: usize, x: usize, c: usize, v: f64) {
        let i = self.index(n, y, x, c);
        self.data[i] = v;
    }

    pub fn dot(&self, other: &Tensor4) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn add_assign(&mut self, other: &Tensor4) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Images `start..start+count` of the batch.
    pub fn slice_batch(&self, start: usize, count: usize) -> Tensor4 {
        let per = self.dims[1] * self.dims[2] * self.dims[3];
        Tensor4 {
            dims: [count, self.dims[1], self.dims[2], self.dims[3]],
            data: self.data[start * per..(start + count) * per].to_vec(),
        }
    }

    /// Stacks equally shaped tensors along the batch axis.
    pub fn stack(parts: &[Tensor4]) -> Result<Tensor4> {
        let Some(first) = parts.first() else {
            return invalid("nothing to stack");
        };
        let mut dims = first.dims;
        if parts.iter().any(|p| p.dims[1..] != first.dims[1..]) {
            return invalid("stacked tensors differ in shape");
        }
        dims[0] = parts.iter().map(|p| p.dims[0]).sum();
        let mut data = Vec::with_capacity(dims.iter().product());
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor4 { dims, data })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
