use crate::error::{Error, Result};
use crate::tensor::{Dims, Real, Tensor4};

/// A single-channel image stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane<T = f32> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

/// Grayscale image with values nominally in `[0, 1]`.
pub type ImageGray = Plane<f32>;

impl<T: Real> Plane<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::config(format!("image dims must be positive, got {width}x{height}")));
        }
        if data.len() != width * height {
            return Err(Error::shape(
                "Plane::new",
                format!("{} pixels for {width}x{height}", data.len()),
            ));
        }
        Ok(Plane { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Plane {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Plane { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
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

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    pub fn same_dims<U>(&self, other: &Plane<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Self, context: &str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if !self.same_dims(other) {
            return Err(Error::shape(
                context,
                format!(
                    "{}x{} vs {}x{}",
                    self.width, self.height, other.width, other.height
                ),
            ));
        }
        Ok(Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn clamp01(&self) -> Self {
        self.map(|v| v.max(T::zero()).min(T::one()))
    }

    pub fn cast<U: Real>(&self) -> Plane<U> {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    /// Copies the `size × size` window with top-left corner `(x, y)`.
    pub fn crop(&self, x: usize, y: usize, size: usize, out: &mut [T]) {
        debug_assert!(x + size <= self.width && y + size <= self.height);
        for (r, dst) in out.chunks_exact_mut(size).take(size).enumerate() {
            let start = (y + r) * self.width + x;
            dst.copy_from_slice(&self.data[start..start + size]);
        }
    }

    /// View as a `(1, 1, h, w)` tensor.
    pub fn to_tensor(&self) -> Tensor4<T> {
        Tensor4::from_vec(Dims::new(1, 1, self.height, self.width), self.data.clone())
            .expect("plane length matches dims")
    }

    /// Inverse of [`Plane::to_tensor`]; requires a single-sample, single-channel tensor.
    pub fn from_tensor(t: &Tensor4<T>) -> Result<Self> {
        let d = t.dims();
        if d.n != 1 || d.c != 1 {
            return Err(Error::shape("Plane::from_tensor", format!("expected 1x1xHxW, got {d}")));
        }
        Plane::new(d.w, d.h, t.data().to_vec())
    }
}
