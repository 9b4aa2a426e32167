//! Procedural ground-truth objects.

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::field::{ComplexGrid, RealGrid};
use crate::scalar::Real;

/// Amplitude of the clear bars.
pub const BAR_LEVEL: f64 = 1.0;
/// Amplitude of the surrounding substrate.
pub const BACKGROUND_LEVEL: f64 = 0.2;

/// Bar groups of a resolution target: where each group sits and its bar width.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BarGroup {
    pub top: usize,
    pub left: usize,
    pub bar: usize,
}

impl BarGroup {
    /// Height and width of the group footprint.
    pub fn extent(&self) -> (usize, usize) {
        (5 * self.bar, 11 * self.bar)
    }
}

/// Layout of three-bar groups at decreasing scale for an `n × n` field.
///
/// Groups fill rows from the top-left; the lower part of the field stays
/// blank.
pub fn usaf_groups(n: usize) -> Vec<BarGroup> {
    let unit = (n / 128).max(1);
    let widths = [6, 5, 4, 3, 2, 2, 1, 1];
    let margin = 2 * unit;
    let (mut top, mut left, mut row_h) = (margin, margin, 0);
    let mut out = Vec::new();
    for w in widths {
        let bar = w * unit;
        let g = BarGroup { top, left, bar };
        let (gh, gw) = g.extent();
        if gw + 2 * margin > n {
            continue;
        }
        if left + gw + margin > n {
            top += row_h + 2 * unit;
            left = margin;
            row_h = 0;
        }
        let g = BarGroup { top, left, bar };
        if top + gh + margin > n * 3 / 4 {
            break;
        }
        out.push(g);
        left += gw + 2 * unit;
        row_h = row_h.max(gh);
    }
    out
}

/// USAF-like amplitude target: horizontal and vertical three-bar elements.
pub fn usaf_like<T: Real>(n: usize) -> RealGrid<T> {
    let mut img = RealGrid::filled(n, n, T::lit(BACKGROUND_LEVEL));
    for g in usaf_groups(n) {
        paint_group(&mut img, g);
    }
    img
}

fn paint_group<T: Real>(img: &mut RealGrid<T>, g: BarGroup) {
    let b = g.bar;
    let on = T::lit(BAR_LEVEL);
    for k in 0..3 {
        // Horizontal bars stacked vertically.
        for i in 0..b {
            for j in 0..5 * b {
                img[(g.top + 2 * k * b + i, g.left + j)] = on;
            }
        }
        // Vertical bars side by side.
        for i in 0..5 * b {
            for j in 0..b {
                img[(g.top + i, g.left + 6 * b + 2 * k * b + j)] = on;
            }
        }
    }
}

/// Smooth random field in `[-1, 1]` built from `modes` plane waves whose
/// periods are at least `min_period` pixels.
pub fn smooth_noise<T: Real>(n: usize, modes: usize, min_period: f64, rng: &mut ChaCha8Rng) -> RealGrid<T> {
    let fmax = 1.0 / min_period;
    let waves: Vec<(f64, f64, f64, f64)> = (0..modes)
        .map(|_| {
            let fx = rng.random_range(-fmax..fmax);
            let fy = rng.random_range(-fmax..fmax);
            let ph = rng.random_range(0.0..std::f64::consts::TAU);
            let a = rng.random_range(0.5..1.0);
            (fx, fy, ph, a)
        })
        .collect();
    let norm: f64 = waves.iter().map(|w| w.3).sum();
    RealGrid::from_fn(n, n, |i, j| {
        let v: f64 = waves
            .iter()
            .map(|&(fx, fy, ph, a)| a * (std::f64::consts::TAU * (fx * j as f64 + fy * i as f64) + ph).cos())
            .sum();
        T::lit(v / norm)
    })
}

/// Complex textured specimen with amplitude in `[0.3, 1]` and phase in
/// `[-0.8, 0.8]` rad.
pub fn textured<T: Real>(n: usize, seed: u64) -> ComplexGrid<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amp: RealGrid<T> = smooth_noise(n, 24, 3.0, &mut rng);
    let phase: RealGrid<T> = smooth_noise(n, 24, 3.0, &mut rng);
    ComplexGrid::from_fn(n, n, |i, j| {
        let a = T::lit(0.65) + T::lit(0.35) * amp[(i, j)];
        Complex::from_polar(a, T::lit(0.8) * phase[(i, j)])
    })
}
