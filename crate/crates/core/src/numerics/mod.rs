//! Dense 2-D tensors, a reverse-mode gradient tape, Adam, and a
//! finite-difference gradient checker.

mod adam;
mod gradcheck;
mod tape;

pub use adam::Adam;
pub use gradcheck::{grad_check, grad_check_strided, relative_error, GRADIENT_FLOOR};
pub use tape::{AttentionPattern, Axis, Gradients, Tape, Var};

use rand::Rng;

/// Row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 2],
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: [usize; 2], data: Vec<f64>) -> Self {
        assert_eq!(shape[0] * shape[1], data.len(), "data length must match shape {shape:?}");
        Tensor { shape, data }
    }

    pub fn zeros(shape: [usize; 2]) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape[0] * shape[1]],
        }
    }

    pub fn filled(shape: [usize; 2], value: f64) -> Self {
        Tensor {
            shape,
            data: vec![value; shape[0] * shape[1]],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::new([1, 1], vec![value])
    }

    pub fn column_vector(values: Vec<f64>) -> Self {
        Tensor::new([values.len(), 1], values)
    }

    pub fn from_fn(shape: [usize; 2], mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape[0] * shape[1]);
        for r in 0..shape[0] {
            for c in 0..shape[1] {
                data.push(f(r, c));
            }
        }
        Tensor { shape, data }
    }

    /// Glorot/Xavier uniform initialization.
    pub fn glorot<R: Rng>(shape: [usize; 2], rng: &mut R) -> Self {
        let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
        Tensor::from_fn(shape, |_, _| rng.gen_range(-limit..limit))
    }

    pub fn shape(&self) -> [usize; 2] {
        self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
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

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape[1] + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let w = self.shape[1];
        &self.data[r * w..(r + 1) * w]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.shape[0]).map(|r| self.get(r, c)).collect()
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on a non-scalar tensor");
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Copy with rows reordered: row `i` of the result is row `order[i]`.
    pub fn gather_rows(&self, order: &[usize]) -> Tensor {
        let w = self.shape[1];
        let mut data = Vec::with_capacity(order.len() * w);
        for &r in order {
            data.extend_from_slice(self.row(r));
        }
        Tensor::new([order.len(), w], data)
    }

    pub fn matmul(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.shape[1], other.shape[0], "matmul inner dimensions");
        let (n, k, m) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let row = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[p * m..(p + 1) * m];
                for (o, b) in row.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Tensor::new([n, m], out)
    }
}
