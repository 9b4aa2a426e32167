//! Two-dimensional real and complex grids with a centred FFT.
//!
//! Transform convention: the forward transform is unnormalized, the inverse
//! carries `1/(H·W)`, and the zero frequency sits at `(H/2, W/2)` (integer
//! division) in every centred spectrum.

use std::collections::HashMap;
use std::ops::{Index, IndexMut};
use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{FpmError, Result};
use crate::geometry::PixelShift;
use crate::scalar::Real;

/// Row-major complex samples.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexGrid<T> {
    height: usize,
    width: usize,
    data: Vec<Complex<T>>,
}

/// Row-major real samples.
#[derive(Clone, Debug, PartialEq)]
pub struct RealGrid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

trait Finite {
    fn finite(&self) -> bool;
}

impl<T: Real> Finite for T {
    fn finite(&self) -> bool {
        self.is_finite()
    }
}

impl<T: Real> Finite for Complex<T> {
    fn finite(&self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

macro_rules! grid_common {
    ($grid:ident, $elem:ty) => {
        impl<T: Real> $grid<T> {
            pub fn from_vec(height: usize, width: usize, data: Vec<$elem>) -> Result<Self> {
                if data.len() != height * width {
                    return Err(FpmError::shape(format!(
                        "{} samples for a {height}x{width} grid",
                        data.len()
                    )));
                }
                Ok($grid { height, width, data })
            }

            pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> $elem) -> Self {
                let mut data = Vec::with_capacity(height * width);
                for i in 0..height {
                    for j in 0..width {
                        data.push(f(i, j));
                    }
                }
                $grid { height, width, data }
            }

            pub fn height(&self) -> usize {
                self.height
            }

            pub fn width(&self) -> usize {
                self.width
            }

            pub fn dims(&self) -> (usize, usize) {
                (self.height, self.width)
            }

            pub fn len(&self) -> usize {
                self.data.len()
            }

            pub fn is_empty(&self) -> bool {
                self.data.is_empty()
            }

            pub fn data(&self) -> &[$elem] {
                &self.data
            }

            pub fn data_mut(&mut self) -> &mut [$elem] {
                &mut self.data
            }

            pub fn into_data(self) -> Vec<$elem> {
                self.data
            }

            pub fn is_finite(&self) -> bool {
                self.data.iter().all(|v| Finite::finite(v))
            }

            /// Sub-block with top-left corner `(top, left)`; caller checks bounds.
            pub fn block(&self, top: usize, left: usize, height: usize, width: usize) -> Self {
                $grid::from_fn(height, width, |i, j| self[(top + i, left + j)])
            }

            /// Rotation by 180° about the grid centre.
            pub fn rotate180(&self) -> Self {
                let (h, w) = (self.height, self.width);
                $grid::from_fn(h, w, |i, j| self[(h - 1 - i, w - 1 - j)])
            }

            pub fn check_same_dims(&self, other_dims: (usize, usize), what: &str) -> Result<()> {
                if self.dims() != other_dims {
                    return Err(FpmError::shape(format!(
                        "{what}: {}x{} vs {}x{}",
                        self.height, self.width, other_dims.0, other_dims.1
                    )));
                }
                Ok(())
            }
        }

        impl<T> Index<(usize, usize)> for $grid<T> {
            type Output = $elem;
            #[inline]
            fn index(&self, (i, j): (usize, usize)) -> &$elem {
                &self.data[i * self.width + j]
            }
        }

        impl<T> IndexMut<(usize, usize)> for $grid<T> {
            #[inline]
            fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut $elem {
                &mut self.data[i * self.width + j]
            }
        }
    };
}

grid_common!(ComplexGrid, Complex<T>);
grid_common!(RealGrid, T);

impl<T: Real> ComplexGrid<T> {
    pub fn zeros(height: usize, width: usize) -> Self {
        ComplexGrid {
            height,
            width,
            data: vec![Complex::new(T::zero(), T::zero()); height * width],
        }
    }

    pub fn from_real(re: &RealGrid<T>) -> Self {
        ComplexGrid {
            height: re.height,
            width: re.width,
            data: re.data.iter().map(|&r| Complex::new(r, T::zero())).collect(),
        }
    }

    /// `amplitude · e^{i·phase}` per pixel.
    pub fn from_polar(amplitude: &RealGrid<T>, phase: &RealGrid<T>) -> Result<Self> {
        amplitude.check_same_dims(phase.dims(), "amplitude/phase planes")?;
        Ok(ComplexGrid {
            height: amplitude.height,
            width: amplitude.width,
            data: amplitude
                .data
                .iter()
                .zip(&phase.data)
                .map(|(&a, &p)| Complex::from_polar(a, p))
                .collect(),
        })
    }

    pub fn map(&self, f: impl Fn(Complex<T>) -> Complex<T>) -> Self {
        ComplexGrid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&z| f(z)).collect(),
        }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|z| z * s)
    }

    pub fn conj(&self) -> Self {
        self.map(|z| z.conj())
    }

    /// Per-pixel `|z|²`.
    pub fn intensity(&self) -> RealGrid<T> {
        self.to_real(|z| z.norm_sqr())
    }

    /// Per-pixel `|z|`.
    pub fn amplitude(&self) -> RealGrid<T> {
        self.to_real(|z| z.norm())
    }

    /// Per-pixel `arg z` in `(-π, π]`.
    pub fn phase(&self) -> RealGrid<T> {
        self.to_real(|z| z.arg())
    }

    pub fn real_part(&self) -> RealGrid<T> {
        self.to_real(|z| z.re)
    }

    pub fn imag_part(&self) -> RealGrid<T> {
        self.to_real(|z| z.im)
    }

    fn to_real(&self, f: impl Fn(Complex<T>) -> T) -> RealGrid<T> {
        RealGrid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&z| f(z)).collect(),
        }
    }

    /// Hermitian inner product `Σ conj(a)·b`.
    pub fn inner(&self, other: &Self) -> Complex<T> {
        self.data
            .iter()
            .zip(&other.data)
            .fold(Complex::new(T::zero(), T::zero()), |acc, (a, b)| acc + a.conj() * b)
    }

    pub fn energy(&self) -> T {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn mul_elem(&self, other: &Self) -> Result<Self> {
        self.check_same_dims(other.dims(), "elementwise product")?;
        Ok(ComplexGrid {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect(),
        })
    }

    pub fn mul_real(&self, mask: &RealGrid<T>) -> Result<Self> {
        self.check_same_dims(mask.dims(), "mask product")?;
        Ok(ComplexGrid {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&mask.data).map(|(a, &m)| a * m).collect(),
        })
    }
}

impl<T: Real> RealGrid<T> {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, T::zero())
    }

    pub fn filled(height: usize, width: usize, v: T) -> Self {
        RealGrid {
            height,
            width,
            data: vec![v; height * width],
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        RealGrid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same_dims(other.dims(), "elementwise op")?;
        Ok(RealGrid {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_same_dims(other.dims(), "accumulation")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::lit(self.data.len() as f64)
    }

    /// Population variance.
    pub fn variance(&self) -> T {
        let mu = self.mean();
        self.data.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / T::lit(self.data.len() as f64)
    }

    pub fn std_dev(&self) -> T {
        self.variance().sqrt()
    }

    pub fn min_max(&self) -> (T, T) {
        self.data.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
    }

    pub fn cast<U: Real>(&self) -> RealGrid<U> {
        RealGrid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample_nearest(&self, factor: usize) -> Self {
        RealGrid::from_fn(self.height * factor, self.width * factor, |i, j| {
            self[(i / factor, j / factor)]
        })
    }
}

/// Cached 1-D plans for a fixed `H × W` shape.
pub struct Fft2<T: Real> {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<T>>,
    row_inv: Arc<dyn Fft<T>>,
    col_fwd: Arc<dyn Fft<T>>,
    col_inv: Arc<dyn Fft<T>>,
}

impl<T: Real> Fft2<T> {
    pub fn new(height: usize, width: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            height,
            width,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    fn transform(&self, data: &mut [Complex<T>], inverse: bool) {
        let (h, w) = (self.height, self.width);
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        let scratch_len = row
            .get_inplace_scratch_len()
            .max(col.get_inplace_scratch_len());
        let mut scratch = vec![Complex::new(T::zero(), T::zero()); scratch_len];
        row.process_with_scratch(data, &mut scratch);
        let mut t = transpose(data, h, w);
        col.process_with_scratch(&mut t, &mut scratch);
        let back = transpose(&t, w, h);
        data.copy_from_slice(&back);
    }

    /// Centred, unnormalized forward transform of row-major `data` in place.
    pub fn forward_centered(&self, data: &mut [Complex<T>]) {
        debug_assert_eq!(data.len(), self.height * self.width);
        ifftshift(data, self.height, self.width);
        self.transform(data, false);
        fftshift(data, self.height, self.width);
    }

    /// Centred inverse transform with `1/(H·W)` normalization, in place.
    pub fn inverse_centered(&self, data: &mut [Complex<T>]) {
        debug_assert_eq!(data.len(), self.height * self.width);
        ifftshift(data, self.height, self.width);
        self.transform(data, true);
        fftshift(data, self.height, self.width);
        let s = T::one() / T::lit((self.height * self.width) as f64);
        for z in data.iter_mut() {
            *z = *z * s;
        }
    }
}

/// Plans keyed by shape, owned by one task.
pub struct FftCache<T: Real> {
    plans: HashMap<(usize, usize), Fft2<T>>,
}

impl<T: Real> Default for FftCache<T> {
    fn default() -> Self {
        FftCache {
            plans: HashMap::new(),
        }
    }
}

impl<T: Real> FftCache<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn plan(&mut self, height: usize, width: usize) -> &Fft2<T> {
        self.plans
            .entry((height, width))
            .or_insert_with(|| Fft2::new(height, width))
    }
}

fn transpose<T: Copy>(data: &[T], h: usize, w: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(data.len());
    for j in 0..w {
        for i in 0..h {
            out.push(data[i * w + j]);
        }
    }
    out
}

fn roll<T: Copy>(data: &mut [T], h: usize, w: usize, dy: usize, dx: usize) {
    if dy == 0 && dx == 0 {
        return;
    }
    let src = data.to_vec();
    for i in 0..h {
        let ti = (i + dy) % h;
        for j in 0..w {
            data[ti * w + (j + dx) % w] = src[i * w + j];
        }
    }
}

/// Moves index 0 to the centre `(h/2, w/2)`.
fn fftshift<T: Copy>(data: &mut [T], h: usize, w: usize) {
    roll(data, h, w, h / 2, w / 2);
}

/// Moves the centre `(h/2, w/2)` to index 0.
fn ifftshift<T: Copy>(data: &mut [T], h: usize, w: usize) {
    roll(data, h, w, h - h / 2, w - w / 2);
}

pub fn fft_centered<T: Real>(x: &ComplexGrid<T>) -> ComplexGrid<T> {
    let mut out = x.clone();
    Fft2::new(x.height, x.width).forward_centered(&mut out.data);
    out
}

pub fn ifft_centered<T: Real>(x: &ComplexGrid<T>) -> ComplexGrid<T> {
    let mut out = x.clone();
    Fft2::new(x.height, x.width).inverse_centered(&mut out.data);
    out
}

/// Top-left corner of an `m × m` window whose centre pixel `(m/2, m/2)` lands
/// on `(h/2 + shift.y, w/2 + shift.x)`, or `None` when it leaves the grid.
pub(crate) fn window_origin(h: usize, w: usize, m: usize, shift: PixelShift) -> Option<(usize, usize)> {
    let top = (h / 2) as i64 + shift.y - (m / 2) as i64;
    let left = (w / 2) as i64 + shift.x - (m / 2) as i64;
    if top < 0 || left < 0 || top + m as i64 > h as i64 || left + m as i64 > w as i64 {
        None
    } else {
        Some((top as usize, left as usize))
    }
}

/// The `m × m` sub-block centred at `centre + offset`.
pub fn crop_centered<T: Real>(x: &ComplexGrid<T>, m: usize, offset: PixelShift) -> Result<ComplexGrid<T>> {
    let (top, left) = window_origin(x.height, x.width, m, offset).ok_or_else(|| {
        FpmError::domain(format!(
            "{m}x{m} window at offset ({}, {}) leaves the {}x{} grid",
            offset.x, offset.y, x.height, x.width
        ))
    })?;
    Ok(x.block(top, left, m, m))
}

/// Zero-padded placement of `x` into an `n × n` grid; the adjoint of
/// [`crop_centered`] with the same offset.
pub fn embed_centered<T: Real>(x: &ComplexGrid<T>, n: usize, offset: PixelShift) -> Result<ComplexGrid<T>> {
    if x.height != x.width {
        return Err(FpmError::shape(format!("embed expects a square block, got {}x{}", x.height, x.width)));
    }
    let m = x.height;
    let (top, left) = window_origin(n, n, m, offset).ok_or_else(|| {
        FpmError::domain(format!(
            "{m}x{m} block at offset ({}, {}) does not fit in {n}x{n}",
            offset.x, offset.y
        ))
    })?;
    let mut out = ComplexGrid::zeros(n, n);
    for i in 0..m {
        let dst = (top + i) * n + left;
        out.data[dst..dst + m].copy_from_slice(&x.data[i * m..(i + 1) * m]);
    }
    Ok(out)
}

pub fn intensity<T: Real>(x: &ComplexGrid<T>) -> RealGrid<T> {
    x.intensity()
}

pub fn amplitude<T: Real>(x: &ComplexGrid<T>) -> RealGrid<T> {
    x.amplitude()
}
