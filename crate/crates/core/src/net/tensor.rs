use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense `(batch, channels, height, width)` array, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<T> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn new(shape: [usize; 4], data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Shape(format!("zero-sized dimension in {shape:?}")));
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {} values, got {}",
                shape.iter().product::<usize>(),
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    /// Elements per batch item.
    pub fn item_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
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

    pub fn item(&self, n: usize) -> &[T] {
        let l = self.item_len();
        &self.data[n * l..(n + 1) * l]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [T] {
        let l = self.item_len();
        &mut self.data[n * l..(n + 1) * l]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Tensor4<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor4<U> {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|v| U::c(v.to_f64_lossy())).collect(),
        }
    }
}
