use num_complex::Complex;

use crate::error::{FpmError, Result};
use crate::field::{ComplexGrid, RealGrid};
use crate::scalar::Real;

/// Dense row-major real array.
///
/// Complex quantities are carried as a leading axis of length 2 holding the
/// real and imaginary planes.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(FpmError::shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: &[usize], v: T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(FpmError::shape(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        self.shape = shape;
        Ok(self)
    }

    /// `[H, W]` tensor from a real grid.
    pub fn from_grid(g: &RealGrid<T>) -> Self {
        Tensor {
            shape: vec![g.height(), g.width()],
            data: g.data().to_vec(),
        }
    }

    /// `[C, H, W]` tensor from equally sized planes.
    pub fn from_planes(planes: &[&RealGrid<T>]) -> Result<Self> {
        let first = planes.first().ok_or_else(|| FpmError::shape("no planes"))?;
        let (h, w) = first.dims();
        let mut data = Vec::with_capacity(planes.len() * h * w);
        for p in planes {
            p.check_same_dims((h, w), "stacked planes")?;
            data.extend_from_slice(p.data());
        }
        Ok(Tensor {
            shape: vec![planes.len(), h, w],
            data,
        })
    }

    /// `[2, H, W]` tensor holding real then imaginary planes.
    pub fn from_complex(g: &ComplexGrid<T>) -> Self {
        let n = g.len();
        let mut data = vec![T::zero(); 2 * n];
        for (k, z) in g.data().iter().enumerate() {
            data[k] = z.re;
            data[n + k] = z.im;
        }
        Tensor {
            shape: vec![2, g.height(), g.width()],
            data,
        }
    }

    /// Plane `c` of a `[C, H, W]` tensor.
    pub fn plane(&self, c: usize) -> Result<RealGrid<T>> {
        if self.rank() != 3 || c >= self.shape[0] {
            return Err(FpmError::shape(format!("plane {c} of shape {:?}", self.shape)));
        }
        let (h, w) = (self.shape[1], self.shape[2]);
        RealGrid::from_vec(h, w, self.data[c * h * w..(c + 1) * h * w].to_vec())
    }

    pub fn to_grid(&self) -> Result<RealGrid<T>> {
        match self.shape.as_slice() {
            [h, w] => RealGrid::from_vec(*h, *w, self.data.clone()),
            [1, h, w] => RealGrid::from_vec(*h, *w, self.data.clone()),
            s => Err(FpmError::shape(format!("expected a single plane, got {s:?}"))),
        }
    }

    pub fn to_complex(&self) -> Result<ComplexGrid<T>> {
        match self.shape.as_slice() {
            [2, h, w] => {
                let n = h * w;
                let data = (0..n).map(|k| Complex::new(self.data[k], self.data[n + k])).collect();
                ComplexGrid::from_vec(*h, *w, data)
            }
            s => Err(FpmError::shape(format!("expected [2, H, W], got {s:?}"))),
        }
    }
}

/// Inverse of the pixel shuffle: `[C, rH, rW] → [C·r², H, W]`.
pub fn pixel_unshuffle<T: Real>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (c, h, w) = match x.shape() {
        [c, h, w] if r > 0 && h % r == 0 && w % r == 0 => (*c, *h / r, *w / r),
        s => return Err(FpmError::shape(format!("cannot unshuffle {s:?} by {r}"))),
    };
    let mut out = vec![T::zero(); x.numel()];
    for ch in 0..c {
        for i in 0..r {
            for j in 0..r {
                let oc = ch * r * r + i * r + j;
                for y in 0..h {
                    for xx in 0..w {
                        out[(oc * h + y) * w + xx] = x.data()[(ch * h * r + y * r + i) * w * r + xx * r + j];
                    }
                }
            }
        }
    }
    Tensor::new(vec![c * r * r, h, w], out)
}
