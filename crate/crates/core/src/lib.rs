//! Multiplexed Fourier ptychographic microscopy: illumination geometry, the
//! forward model, a small reverse-mode differentiation engine, physics-based
//! reconstruction, toy reconstruction networks, data generation and the
//! hybrid pipeline.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar to `f64`.

pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
pub mod field;
pub mod forward;
pub mod geometry;
pub mod io;
pub mod nn;
pub mod patterns;
pub mod physics;
pub mod pipeline;
pub mod scalar;

pub use error::{FpmError, Result};
pub use geometry::{IlluminationPattern, LedIndex, OpticalConfig, PixelShift, WaveVector};
pub use scalar::Real;

pub type ComplexImage = field::ComplexGrid<f64>;
pub type RealImage = field::RealGrid<f64>;
pub type Tensor = autodiff::Tensor<f64>;
pub type Graph = autodiff::Graph<f64>;
pub type Simulator = forward::Simulator<f64>;
pub type IntensityStack = forward::IntensityStack<f64>;
