//! Image formation for single and multiplexed LED illumination.
//!
//! One LED images `|F⁻¹{crop(F{o}, shift) · P}|² · (M/N)²`; a pattern records
//! the incoherent sum of its LEDs. The `(M/N)²` factor makes the total energy
//! of a bright-field capture equal to that of the object under the transform
//! convention of [`crate::field`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{FpmError, Result};
use crate::field::{window_origin, ComplexGrid, Fft2, RealGrid};
use crate::geometry::{
    led_wavevector, pupil_mask, shift_pixels, IlluminationPattern, LedIndex, OpticalConfig, PixelShift,
    WaveVector,
};
use crate::scalar::Real;

/// Low-resolution captures, one per illumination pattern.
#[derive(Clone, Debug, PartialEq)]
pub struct IntensityStack<T> {
    pub images: Vec<RealGrid<T>>,
    pub patterns: Vec<IlluminationPattern>,
    pub cfg: OpticalConfig,
}

impl<T: Real> IntensityStack<T> {
    pub fn new(images: Vec<RealGrid<T>>, patterns: Vec<IlluminationPattern>, cfg: OpticalConfig) -> Result<Self> {
        if images.len() != patterns.len() {
            return Err(FpmError::shape(format!(
                "{} images for {} patterns",
                images.len(),
                patterns.len()
            )));
        }
        let m = cfg.lr_size();
        for (i, img) in images.iter().enumerate() {
            if img.dims() != (m, m) {
                return Err(FpmError::shape(format!(
                    "image {i} is {}x{}, expected {m}x{m}",
                    img.height(),
                    img.width()
                )));
            }
        }
        Ok(IntensityStack { images, patterns, cfg })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn cast<U: Real>(&self) -> IntensityStack<U> {
        IntensityStack {
            images: self.images.iter().map(|i| i.cast()).collect(),
            patterns: self.patterns.clone(),
            cfg: self.cfg,
        }
    }
}

/// Measurement noise applied after simulation. Both stages default to off.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    /// Standard deviation of additive Gaussian noise (intensity units).
    pub gaussian_sigma: f64,
    /// Photons per unit intensity for shot noise; `0` disables it.
    pub photons_per_unit: f64,
}

impl NoiseModel {
    pub fn is_off(&self) -> bool {
        self.gaussian_sigma <= 0.0 && self.photons_per_unit <= 0.0
    }

    /// Adds noise to every image in place, clamping at zero.
    pub fn apply<T: Real>(&self, images: &mut [RealGrid<T>], seed: u64) -> Result<()> {
        if self.is_off() {
            return Ok(());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gauss = if self.gaussian_sigma > 0.0 {
            Some(Normal::new(0.0, self.gaussian_sigma).map_err(|e| FpmError::Config(e.to_string()))?)
        } else {
            None
        };
        for img in images.iter_mut() {
            for v in img.data_mut() {
                let mut x = v.as_f64();
                if self.photons_per_unit > 0.0 {
                    let lambda = x * self.photons_per_unit;
                    if lambda > 0.0 {
                        let p = Poisson::new(lambda).map_err(|e| FpmError::Numerical(e.to_string()))?;
                        x = p.sample(&mut rng) / self.photons_per_unit;
                    }
                }
                if let Some(g) = &gauss {
                    x += g.sample(&mut rng);
                }
                *v = T::lit(x.max(0.0));
            }
        }
        Ok(())
    }
}

/// Forward model bound to one optical configuration.
///
/// Holds the pupil and the low-resolution FFT plans so repeated captures do
/// not re-plan.
pub struct Simulator<T: Real> {
    cfg: OpticalConfig,
    pupil: RealGrid<T>,
    hr_fft: Fft2<T>,
    lr_fft: Fft2<T>,
}

impl<T: Real> Simulator<T> {
    pub fn new(cfg: &OpticalConfig) -> Result<Self> {
        cfg.validate()?;
        let (n, m) = (cfg.hr_size, cfg.lr_size());
        Ok(Simulator {
            cfg: *cfg,
            pupil: pupil_mask(cfg).mask,
            hr_fft: Fft2::new(n, n),
            lr_fft: Fft2::new(m, m),
        })
    }

    pub fn cfg(&self) -> &OpticalConfig {
        &self.cfg
    }

    pub fn pupil(&self) -> &RealGrid<T> {
        &self.pupil
    }

    /// Energy normalization `(M/N)²`.
    pub fn energy_scale(&self) -> T {
        let r = self.cfg.lr_size() as f64 / self.cfg.hr_size as f64;
        T::lit(r * r)
    }

    pub fn spectrum(&self, obj: &ComplexGrid<T>) -> Result<ComplexGrid<T>> {
        let n = self.cfg.hr_size;
        if obj.dims() != (n, n) {
            return Err(FpmError::shape(format!(
                "object is {}x{}, configuration expects {n}x{n}",
                obj.height(),
                obj.width()
            )));
        }
        let mut s = obj.clone();
        self.hr_fft.forward_centered(s.data_mut());
        Ok(s)
    }

    pub fn shift_for(&self, led: LedIndex) -> Result<PixelShift> {
        let k = led_wavevector(&self.cfg, led, (0.0, 0.0))?;
        shift_pixels(&self.cfg, k)
    }

    /// Image of one LED given the object's centred spectrum.
    pub fn image_from_spectrum(&self, spectrum: &ComplexGrid<T>, shift: PixelShift) -> Result<RealGrid<T>> {
        let (n, m) = (self.cfg.hr_size, self.cfg.lr_size());
        let (top, left) = window_origin(n, n, m, shift).ok_or_else(|| {
            FpmError::domain(format!(
                "pupil window at shift ({}, {}) leaves the {n}x{n} spectrum",
                shift.x, shift.y
            ))
        })?;
        let mut low = ComplexGrid::from_fn(m, m, |i, j| spectrum[(top + i, left + j)] * self.pupil[(i, j)]);
        self.lr_fft.inverse_centered(low.data_mut());
        let scale = self.energy_scale();
        Ok(low.intensity().map(|v| v * scale))
    }

    pub fn single_led(&self, obj: &ComplexGrid<T>, k: WaveVector) -> Result<RealGrid<T>> {
        let s = self.spectrum(obj)?;
        self.image_from_spectrum(&s, shift_pixels(&self.cfg, k)?)
    }

    pub fn pattern_from_spectrum(&self, spectrum: &ComplexGrid<T>, pat: &IlluminationPattern) -> Result<RealGrid<T>> {
        pat.validate(&self.cfg)?;
        let m = self.cfg.lr_size();
        let mut acc = RealGrid::zeros(m, m);
        for &led in &pat.leds {
            acc.add_assign(&self.image_from_spectrum(spectrum, self.shift_for(led)?)?)?;
        }
        Ok(acc)
    }

    pub fn pattern(&self, obj: &ComplexGrid<T>, pat: &IlluminationPattern) -> Result<RealGrid<T>> {
        let s = self.spectrum(obj)?;
        self.pattern_from_spectrum(&s, pat)
    }

    pub fn capture(
        &self,
        obj: &ComplexGrid<T>,
        patterns: &[IlluminationPattern],
        noise: &NoiseModel,
        seed: u64,
    ) -> Result<IntensityStack<T>> {
        let s = self.spectrum(obj)?;
        let mut images = patterns
            .iter()
            .map(|p| self.pattern_from_spectrum(&s, p))
            .collect::<Result<Vec<_>>>()?;
        noise.apply(&mut images, seed)?;
        IntensityStack::new(images, patterns.to_vec(), self.cfg)
    }
}

/// Coherent image of `obj` under a single plane wave `k`.
pub fn simulate_single_led<T: Real>(obj: &ComplexGrid<T>, cfg: &OpticalConfig, k: WaveVector) -> Result<RealGrid<T>> {
    Simulator::new(cfg)?.single_led(obj, k)
}

/// Incoherent sum over the LEDs of `pat`.
pub fn simulate_pattern<T: Real>(
    obj: &ComplexGrid<T>,
    cfg: &OpticalConfig,
    pat: &IlluminationPattern,
) -> Result<RealGrid<T>> {
    Simulator::new(cfg)?.pattern(obj, pat)
}

/// One capture per pattern, in order, without noise.
pub fn simulate_capture<T: Real>(
    obj: &ComplexGrid<T>,
    cfg: &OpticalConfig,
    patterns: &[IlluminationPattern],
) -> Result<IntensityStack<T>> {
    Simulator::new(cfg)?.capture(obj, patterns, &NoiseModel::default(), 0)
}

/// Noisy variant of [`simulate_capture`]; identical seeds give identical stacks.
pub fn simulate_capture_noisy<T: Real>(
    obj: &ComplexGrid<T>,
    cfg: &OpticalConfig,
    patterns: &[IlluminationPattern],
    noise: &NoiseModel,
    seed: u64,
) -> Result<IntensityStack<T>> {
    Simulator::new(cfg)?.capture(obj, patterns, noise, seed)
}

/// One singleton capture per LED of the grid in row-major order.
pub fn sequential_capture<T: Real>(obj: &ComplexGrid<T>, cfg: &OpticalConfig) -> Result<IntensityStack<T>> {
    let patterns: Vec<_> = cfg.all_leds().into_iter().map(IlluminationPattern::single).collect();
    simulate_capture(obj, cfg, &patterns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex;
    use rand::{Rng, SeedableRng};

    type C = Complex<f64>;

    fn small_cfg() -> OpticalConfig {
        let mut cfg = OpticalConfig::usaf_system().with_hr_size(16);
        cfg.na = 0.25;
        cfg.led_grid = 3;
        cfg.led_pitch = 20e-3;
        cfg
    }

    fn random_object(n: usize, seed: u64) -> ComplexGrid<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ComplexGrid::from_fn(n, n, |_, _| C::from_polar(rng.random_range(0.2..1.0), rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn constant_object_darkfield_is_black() {
        let mut cfg = small_cfg();
        cfg.na = 0.05;
        let step = cfg.freq_step();
        let obj = ComplexGrid::from_fn(16, 16, |_, _| C::new(0.7, 0.0));
        let img = simulate_single_led(&obj, &cfg, WaveVector::new(3.0 * step, 0.0)).unwrap();
        assert!(img.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_object_brightfield_is_uniform() {
        let cfg = small_cfg();
        let c = C::new(0.6, 0.3);
        let obj = ComplexGrid::from_fn(16, 16, |_, _| c);
        let img = simulate_single_led(&obj, &cfg, WaveVector::ZERO).unwrap();
        // The DC term alone passes: |c·N²/M²|²·(M/N)² = |c|²·(N/M)².
        let expected = c.norm_sqr() * 4.0;
        assert!(img.data().iter().all(|&v| (v - expected).abs() < 1e-12));
    }

    #[test]
    fn pattern_is_sum_of_singles() {
        let cfg = small_cfg();
        let obj = random_object(16, 1);
        let sim = Simulator::new(&cfg).unwrap();
        let a = LedIndex::new(1, 0);
        let b = LedIndex::new(-1, 1);
        let single = sim.pattern(&obj, &IlluminationPattern::single(a)).unwrap();
        let direct = sim.single_led(&obj, led_wavevector(&cfg, a, (0.0, 0.0)).unwrap()).unwrap();
        assert_eq!(single, direct);
        let pair = sim.pattern(&obj, &IlluminationPattern::new(vec![a, b])).unwrap();
        let sb = sim.pattern(&obj, &IlluminationPattern::single(b)).unwrap();
        for ((p, x), y) in pair.data().iter().zip(single.data()).zip(sb.data()) {
            assert_eq!(*p, x + y);
        }
    }

    #[test]
    fn empty_pattern_is_rejected() {
        let cfg = small_cfg();
        let obj = random_object(16, 2);
        assert!(simulate_pattern(&obj, &cfg, &IlluminationPattern::new(vec![])).is_err());
    }

    #[test]
    fn wrong_object_size_is_rejected() {
        let cfg = small_cfg();
        let obj = random_object(8, 2);
        assert!(matches!(
            simulate_single_led(&obj, &cfg, WaveVector::ZERO),
            Err(FpmError::Shape(_))
        ));
    }

    #[test]
    fn sequential_capture_covers_grid() {
        let cfg = small_cfg();
        let obj = random_object(16, 3);
        let stack = sequential_capture(&obj, &cfg).unwrap();
        assert_eq!(stack.len(), 9);
        let centre = simulate_single_led(&obj, &cfg, WaveVector::ZERO).unwrap();
        assert_eq!(stack.images[4], centre);
        assert_eq!(stack.patterns[0].leds, vec![LedIndex::new(-1, -1)]);
        assert_eq!(stack.patterns[1].leds, vec![LedIndex::new(0, -1)]);
    }

    #[test]
    fn eleven_by_eleven_grid_gives_121_images() {
        let mut cfg = OpticalConfig::usaf_system().with_hr_size(32);
        cfg.led_pitch = 1e-3;
        let obj = random_object(32, 4);
        assert_eq!(sequential_capture(&obj, &cfg).unwrap().len(), 121);
    }

    #[test]
    fn noise_is_seeded() {
        let cfg = small_cfg();
        let obj = random_object(16, 5);
        let pats = vec![IlluminationPattern::single(LedIndex::CENTER)];
        let noise = NoiseModel {
            gaussian_sigma: 0.01,
            photons_per_unit: 500.0,
        };
        let a = simulate_capture_noisy(&obj, &cfg, &pats, &noise, 9).unwrap();
        let b = simulate_capture_noisy(&obj, &cfg, &pats, &noise, 9).unwrap();
        let c = simulate_capture_noisy(&obj, &cfg, &pats, &noise, 10).unwrap();
        let clean = simulate_capture(&obj, &cfg, &pats).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, clean);
        assert!(a.images[0].data().iter().all(|v| *v >= 0.0));
        assert_eq!(clean, simulate_capture(&obj, &cfg, &pats).unwrap());
    }

    #[test]
    fn global_phase_does_not_change_captures() {
        let cfg = small_cfg();
        let obj = random_object(16, 6);
        let rotated = obj.map(|z| z * C::from_polar(1.0, 0.77));
        let pats: Vec<_> = cfg.all_leds().into_iter().map(IlluminationPattern::single).collect();
        let a = simulate_capture(&obj, &cfg, &pats).unwrap();
        let b = simulate_capture(&rotated, &cfg, &pats).unwrap();
        for (x, y) in a.images.iter().zip(&b.images) {
            for (p, q) in x.data().iter().zip(y.data()) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stack_shape_is_checked() {
        let cfg = small_cfg();
        let bad = IntensityStack::new(vec![RealGrid::<f64>::zeros(4, 4)], vec![IlluminationPattern::single(LedIndex::CENTER)], cfg);
        assert!(bad.is_err());
        let count = IntensityStack::<f64>::new(vec![], vec![IlluminationPattern::single(LedIndex::CENTER)], cfg);
        assert!(count.is_err());
    }
}
