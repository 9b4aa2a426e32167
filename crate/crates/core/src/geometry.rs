//! Illumination and pupil geometry of an LED-array microscope.
//!
//! Frequencies are in cycles per metre on the object plane. The high-resolution
//! spectrum is sampled on an `hr_size`-square grid with step
//! `Δk = 1 / (hr_size · Δx)`, where `Δx` is the object-plane pixel after
//! upsampling. Low-resolution captures live on an `lr_size = hr_size / upsample`
//! grid sharing the same frequency step.
//!
//! LED indices are `(x, y)` offsets from the array centre. An LED displaced by
//! `+d` along an axis gives `sin θ = -d / r`, so the captured window of the
//! spectrum moves toward the LED.

use serde::{Deserialize, Serialize};

use crate::error::{FpmError, Result};
use crate::field::RealGrid;
use crate::scalar::Real;

/// System parameters of the microscope and its LED array.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpticalConfig {
    /// Illumination wavelength (m).
    pub wavelength: f64,
    /// Objective numerical aperture.
    pub na: f64,
    pub magnification: f64,
    /// Camera pixel pitch (m).
    pub camera_pixel: f64,
    /// High-resolution pixels per low-resolution pixel along each axis.
    pub upsample: usize,
    /// Side of the square high-resolution grid.
    pub hr_size: usize,
    /// LED spacing (m).
    pub led_pitch: f64,
    /// Distance from the LED array to the sample (m).
    pub led_distance: f64,
    /// LEDs per side; odd so that a central LED exists.
    pub led_grid: usize,
}

impl Default for OpticalConfig {
    /// The USAF-chart optics on a 64² grid.
    fn default() -> Self {
        OpticalConfig::usaf_system().with_hr_size(64)
    }
}

impl OpticalConfig {
    /// The USAF-chart system: 470 nm, 0.1 NA, 4x, 2.4 µm pixels, LED array
    /// 97 mm below the sample, 11x11 LEDs at 4 mm pitch, 1024² HR / 512² LR.
    pub fn usaf_system() -> Self {
        OpticalConfig {
            wavelength: 470e-9,
            na: 0.1,
            magnification: 4.0,
            camera_pixel: 2.4e-6,
            upsample: 2,
            hr_size: 1024,
            led_pitch: 4e-3,
            led_distance: 97e-3,
            led_grid: 11,
        }
    }

    /// Same optics on a smaller grid.
    pub fn with_hr_size(mut self, hr_size: usize) -> Self {
        self.hr_size = hr_size;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("wavelength", self.wavelength),
            ("camera_pixel", self.camera_pixel),
            ("magnification", self.magnification),
            ("led_pitch", self.led_pitch),
            ("led_distance", self.led_distance),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(FpmError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.na > 0.0 && self.na < 1.0) {
            return Err(FpmError::Config(format!("na must lie in (0, 1), got {}", self.na)));
        }
        if self.upsample == 0 || self.hr_size == 0 {
            return Err(FpmError::Config("upsample and hr_size must be positive".into()));
        }
        if self.hr_size % self.upsample != 0 {
            return Err(FpmError::Config(format!(
                "hr_size {} is not divisible by upsample {}",
                self.hr_size, self.upsample
            )));
        }
        if self.led_grid == 0 || self.led_grid % 2 == 0 {
            return Err(FpmError::Config(format!("led_grid must be odd, got {}", self.led_grid)));
        }
        Ok(())
    }

    /// Low-resolution grid side `M`.
    pub fn lr_size(&self) -> usize {
        self.hr_size / self.upsample
    }

    /// Object-plane pixel of the high-resolution grid (m).
    pub fn hr_pixel(&self) -> f64 {
        self.camera_pixel / self.magnification / self.upsample as f64
    }

    /// Frequency step of both grids (cycles/m).
    pub fn freq_step(&self) -> f64 {
        1.0 / (self.hr_size as f64 * self.hr_pixel())
    }

    /// Pupil cutoff `na / λ` (cycles/m).
    pub fn cutoff(&self) -> f64 {
        self.na / self.wavelength
    }

    /// Largest LED offset from the centre along one axis.
    pub fn led_radius(&self) -> i32 {
        (self.led_grid / 2) as i32
    }

    pub fn contains_led(&self, led: LedIndex) -> bool {
        let r = self.led_radius();
        led.x.abs() <= r && led.y.abs() <= r
    }

    /// All LEDs in row-major order (`y` outer, `x` inner).
    pub fn all_leds(&self) -> Vec<LedIndex> {
        let r = self.led_radius();
        (-r..=r)
            .flat_map(|y| (-r..=r).map(move |x| LedIndex::new(x, y)))
            .collect()
    }
}

/// Position of an LED relative to the array centre, in grid steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[i32; 2]", into = "[i32; 2]")]
pub struct LedIndex {
    pub x: i32,
    pub y: i32,
}

impl LedIndex {
    pub const CENTER: LedIndex = LedIndex { x: 0, y: 0 };

    pub const fn new(x: i32, y: i32) -> Self {
        LedIndex { x, y }
    }
}

impl From<[i32; 2]> for LedIndex {
    fn from([x, y]: [i32; 2]) -> Self {
        LedIndex { x, y }
    }
}

impl From<LedIndex> for [i32; 2] {
    fn from(l: LedIndex) -> Self {
        [l.x, l.y]
    }
}

/// Spatial-frequency shift induced by one LED.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct WaveVector {
    pub kx: f64,
    pub ky: f64,
}

impl WaveVector {
    pub const ZERO: WaveVector = WaveVector { kx: 0.0, ky: 0.0 };

    pub fn new(kx: f64, ky: f64) -> Self {
        WaveVector { kx, ky }
    }

    pub fn norm(&self) -> f64 {
        self.kx.hypot(self.ky)
    }
}

impl std::ops::Neg for WaveVector {
    type Output = WaveVector;
    fn neg(self) -> WaveVector {
        WaveVector::new(-self.kx, -self.ky)
    }
}

/// Integer displacement on the frequency grid, `x` along columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct PixelShift {
    pub x: i64,
    pub y: i64,
}

impl PixelShift {
    pub const ZERO: PixelShift = PixelShift { x: 0, y: 0 };

    pub const fn new(x: i64, y: i64) -> Self {
        PixelShift { x, y }
    }
}

impl std::ops::Neg for PixelShift {
    type Output = PixelShift;
    fn neg(self) -> PixelShift {
        PixelShift::new(-self.x, -self.y)
    }
}

/// Set of LEDs fired together for one exposure.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IlluminationPattern {
    pub leds: Vec<LedIndex>,
}

impl IlluminationPattern {
    pub fn new(leds: Vec<LedIndex>) -> Self {
        IlluminationPattern { leds }
    }

    pub fn single(led: LedIndex) -> Self {
        IlluminationPattern { leds: vec![led] }
    }

    pub fn len(&self) -> usize {
        self.leds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leds.is_empty()
    }

    pub fn validate(&self, cfg: &OpticalConfig) -> Result<()> {
        if self.leds.is_empty() {
            return Err(FpmError::domain("illumination pattern has no LEDs"));
        }
        for (i, led) in self.leds.iter().enumerate() {
            if !cfg.contains_led(*led) {
                return Err(FpmError::domain(format!(
                    "LED ({}, {}) lies outside the {}x{} grid",
                    led.x, led.y, cfg.led_grid, cfg.led_grid
                )));
            }
            if self.leds[..i].contains(led) {
                return Err(FpmError::domain(format!("LED ({}, {}) listed twice", led.x, led.y)));
            }
        }
        Ok(())
    }
}

/// Illumination wavevector of `led` for a tile whose centre sits at
/// `patch_offset` (m) from the optical axis.
pub fn led_wavevector(
    cfg: &OpticalConfig,
    led: LedIndex,
    patch_offset: (f64, f64),
) -> Result<WaveVector> {
    if !cfg.contains_led(led) {
        return Err(FpmError::domain(format!(
            "LED ({}, {}) lies outside the {}x{} grid",
            led.x, led.y, cfg.led_grid, cfg.led_grid
        )));
    }
    if !(cfg.led_distance > 0.0) {
        return Err(FpmError::domain("led_distance must be positive"));
    }
    let dx = cfg.led_pitch * led.x as f64 - patch_offset.0;
    let dy = cfg.led_pitch * led.y as f64 - patch_offset.1;
    let r = (dx * dx + dy * dy + cfg.led_distance * cfg.led_distance).sqrt();
    let (sx, sy) = (-dx / r, -dy / r);
    Ok(WaveVector::new(sx / cfg.wavelength, sy / cfg.wavelength))
}

/// Binary pupil on an `m × m` centred frequency grid with step `freq_step`.
#[derive(Clone, Debug, PartialEq)]
pub struct PupilMask<T> {
    pub mask: RealGrid<T>,
}

impl<T: Real> PupilMask<T> {
    pub fn size(&self) -> usize {
        self.mask.height()
    }

    /// Number of pixels inside the aperture.
    pub fn area(&self) -> usize {
        self.mask.data().iter().filter(|v| **v > T::zero()).count()
    }
}

/// Ideal circular pupil of radius `na / λ` on the low-resolution grid.
pub fn pupil_mask<T: Real>(cfg: &OpticalConfig) -> PupilMask<T> {
    let m = cfg.lr_size();
    PupilMask {
        mask: disk(m, m, cfg.freq_step(), cfg.cutoff(), PixelShift::ZERO),
    }
}

/// `{0,1}` disk of frequency radius `cutoff` centred at `centre + shift` on a
/// centred grid.
pub(crate) fn disk<T: Real>(
    height: usize,
    width: usize,
    step: f64,
    cutoff: f64,
    shift: PixelShift,
) -> RealGrid<T> {
    let (cy, cx) = ((height / 2) as i64 + shift.y, (width / 2) as i64 + shift.x);
    RealGrid::from_fn(height, width, |i, j| {
        let ky = (i as i64 - cy) as f64 * step;
        let kx = (j as i64 - cx) as f64 * step;
        if kx.hypot(ky) <= cutoff {
            T::one()
        } else {
            T::zero()
        }
    })
}

/// Nearest-pixel spectrum shift of `k`, ties rounded away from zero.
///
/// Fails when the shifted pupil cannot overlap the high-resolution spectrum.
pub fn shift_pixels(cfg: &OpticalConfig, k: WaveVector) -> Result<PixelShift> {
    let step = cfg.freq_step();
    let (fx, fy) = (k.kx / step, k.ky / step);
    if !(fx.is_finite() && fy.is_finite()) {
        return Err(FpmError::domain("non-finite wavevector"));
    }
    let shift = PixelShift::new(fx.round() as i64, fy.round() as i64);
    // Nearest distance from the shifted pupil centre to the grid rectangle.
    let n = cfg.hr_size as i64;
    let lo = -(n / 2);
    let hi = n - 1 - n / 2;
    let gap = |s: i64| {
        if s < lo {
            (lo - s) as f64
        } else if s > hi {
            (s - hi) as f64
        } else {
            0.0
        }
    };
    let radius = cfg.cutoff() / step;
    if gap(shift.x).hypot(gap(shift.y)) > radius {
        return Err(FpmError::domain(format!(
            "spectrum shift ({}, {}) moves the pupil entirely outside the {n}x{n} spectrum",
            shift.x, shift.y
        )));
    }
    Ok(shift)
}

/// True when the illumination lies inside the objective's acceptance cone.
pub fn is_brightfield(cfg: &OpticalConfig, k: WaveVector) -> bool {
    cfg.wavelength * k.norm() <= cfg.na
}

#[cfg(test)]
mod tests {
    use super::*;

    fn usaf() -> OpticalConfig {
        OpticalConfig::usaf_system()
    }

    #[test]
    fn central_led_is_on_axis() {
        let k = led_wavevector(&usaf(), LedIndex::CENTER, (0.0, 0.0)).unwrap();
        assert_eq!(k, WaveVector::ZERO);
        assert!(is_brightfield(&usaf(), k));
    }

    #[test]
    fn first_ring_led_matches_trigonometry() {
        let k = led_wavevector(&usaf(), LedIndex::new(1, 0), (0.0, 0.0)).unwrap();
        let expected = (4.0 / (4.0f64 * 4.0 + 97.0 * 97.0).sqrt()) / 470e-9;
        assert!((k.kx.abs() - expected).abs() < 1e-9 * expected);
        // The quoted magnitude is approximate; it agrees to 1e-4 relative.
        assert!((k.kx.abs() / 8.767e4 - 1.0).abs() < 1e-4);
        assert!(k.kx < 0.0, "spectrum shifts toward the LED");
        assert_eq!(k.ky, 0.0);

        let mirrored = led_wavevector(&usaf(), LedIndex::new(-1, 0), (0.0, 0.0)).unwrap();
        assert_eq!(mirrored.kx, -k.kx);
        assert_eq!(mirrored.ky, 0.0);
    }

    #[test]
    fn patch_offset_equivalent_to_moving_the_led() {
        let cfg = usaf();
        let a = led_wavevector(&cfg, LedIndex::new(2, 1), (cfg.led_pitch, 0.0)).unwrap();
        let b = led_wavevector(&cfg, LedIndex::new(1, 1), (0.0, 0.0)).unwrap();
        assert!((a.kx - b.kx).abs() < 1e-9 && (a.ky - b.ky).abs() < 1e-9);
    }

    #[test]
    fn out_of_grid_led_is_rejected() {
        let err = led_wavevector(&usaf(), LedIndex::new(6, 0), (0.0, 0.0));
        assert!(matches!(err, Err(FpmError::Domain(_))));
    }

    #[test]
    fn usaf_pupil_cutoff_radius() {
        let cfg = usaf();
        assert!((cfg.hr_pixel() - 0.3e-6).abs() < 1e-18);
        let radius = cfg.cutoff() / cfg.freq_step();
        assert!((radius - 65.36).abs() < 0.01, "radius {radius}");
        let pupil: PupilMask<f64> = pupil_mask(&cfg);
        let c = cfg.lr_size() / 2;
        let passing = (c + 1..cfg.lr_size())
            .filter(|&j| pupil.mask[(c, j)] == 1.0)
            .count();
        assert_eq!(passing, 65);
    }

    #[test]
    fn vanishing_aperture_keeps_only_dc() {
        let mut cfg = usaf().with_hr_size(64);
        cfg.na = 1e-9;
        let pupil: PupilMask<f64> = pupil_mask(&cfg);
        assert_eq!(pupil.area(), 1);
        assert_eq!(pupil.mask[(16, 16)], 1.0);
    }

    #[test]
    fn pupil_is_point_symmetric() {
        let cfg = usaf().with_hr_size(96);
        let pupil: PupilMask<f64> = pupil_mask(&cfg);
        let m = pupil.size();
        // Even grids are symmetric about the DC pixel, excluding the unpaired
        // first row/column.
        for i in 1..m {
            for j in 1..m {
                assert_eq!(pupil.mask[(i, j)], pupil.mask[(m - i, m - j)]);
            }
        }
    }

    #[test]
    fn shift_rounding() {
        let cfg = usaf().with_hr_size(128);
        let step = cfg.freq_step();
        assert_eq!(shift_pixels(&cfg, WaveVector::ZERO).unwrap(), PixelShift::ZERO);
        let s = shift_pixels(&cfg, WaveVector::new(2.4 * step, -2.6 * step)).unwrap();
        assert_eq!(s, PixelShift::new(2, -3));
        let tie = shift_pixels(&cfg, WaveVector::new(-2.5 * step, 2.5 * step)).unwrap();
        assert_eq!(tie, PixelShift::new(-3, 3));
    }

    #[test]
    fn shift_of_first_ring_led_on_usaf_grid() {
        let cfg = usaf();
        let k = led_wavevector(&cfg, LedIndex::new(1, 0), (0.0, 0.0)).unwrap();
        // kx / Δk evaluated independently: sinθ = 4/√(16+9409), Δk = 1/(1024·0.3 µm).
        let ratio = -(4.0 / 9425f64.sqrt()) / 470e-9 * (1024.0 * 0.3e-6);
        assert!((ratio + 26.93).abs() < 0.01);
        let s = shift_pixels(&cfg, k).unwrap();
        assert_eq!(s, PixelShift::new(ratio.round() as i64, 0));
        assert_eq!(s.x, -27);
    }

    #[test]
    fn far_shift_is_a_domain_error() {
        let cfg = usaf().with_hr_size(64);
        let step = cfg.freq_step();
        assert!(shift_pixels(&cfg, WaveVector::new(200.0 * step, 0.0)).is_err());
    }

    #[test]
    fn darkfield_led_classification() {
        let mut cfg = usaf();
        cfg.led_pitch = 10e-3;
        let k = led_wavevector(&cfg, LedIndex::new(1, 0), (0.0, 0.0)).unwrap();
        assert!((cfg.wavelength * k.norm() - 0.10255).abs() < 1e-4);
        assert!(!is_brightfield(&cfg, k));
    }

    #[test]
    fn cutoff_boundary_counts_as_brightfield() {
        let mut cfg = usaf();
        cfg.wavelength = 0.5;
        cfg.na = 0.25;
        assert!(is_brightfield(&cfg, WaveVector::new(0.5, 0.0)));
        assert!(!is_brightfield(&cfg, WaveVector::new(0.5000001, 0.0)));
    }

    #[test]
    fn every_usaf_led_propagates() {
        let cfg = usaf();
        for led in cfg.all_leds() {
            let k = led_wavevector(&cfg, led, (0.0, 0.0)).unwrap();
            assert!(cfg.wavelength * k.norm() < 1.0);
        }
        assert_eq!(cfg.all_leds().len(), 121);
    }

    #[test]
    fn pattern_validation() {
        let cfg = usaf();
        assert!(IlluminationPattern::new(vec![]).validate(&cfg).is_err());
        let dup = IlluminationPattern::new(vec![LedIndex::new(1, 1), LedIndex::new(1, 1)]);
        assert!(dup.validate(&cfg).is_err());
        let outside = IlluminationPattern::new(vec![LedIndex::new(0, -6)]);
        assert!(outside.validate(&cfg).is_err());
        assert!(IlluminationPattern::single(LedIndex::new(5, -5)).validate(&cfg).is_ok());
    }

    #[test]
    fn config_validation() {
        let mut cfg = usaf();
        assert!(cfg.validate().is_ok());
        cfg.hr_size = 1023;
        assert!(cfg.validate().is_err());
        let mut cfg = usaf();
        cfg.na = 1.2;
        assert!(cfg.validate().is_err());
        let mut cfg = usaf();
        cfg.led_grid = 10;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn led_index_serializes_as_pair() {
        let p = IlluminationPattern::new(vec![LedIndex::new(-1, 2)]);
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, "[[-1,2]]");
        let back: IlluminationPattern = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn wavevector_is_odd(x in -5i32..=5, y in -5i32..=5) {
                let cfg = usaf();
                let a = led_wavevector(&cfg, LedIndex::new(x, y), (0.0, 0.0)).unwrap();
                let b = led_wavevector(&cfg, LedIndex::new(-x, -y), (0.0, 0.0)).unwrap();
                prop_assert_eq!(a.kx, -b.kx);
                prop_assert_eq!(a.ky, -b.ky);
            }

            #[test]
            fn shift_is_odd_away_from_ties(fx in -40.0f64..40.0, fy in -40.0f64..40.0) {
                prop_assume!((fx.fract().abs() - 0.5).abs() > 1e-6);
                prop_assume!((fy.fract().abs() - 0.5).abs() > 1e-6);
                let cfg = usaf().with_hr_size(128);
                let k = WaveVector::new(fx * cfg.freq_step(), fy * cfg.freq_step());
                let a = shift_pixels(&cfg, k).unwrap();
                let b = shift_pixels(&cfg, -k).unwrap();
                prop_assert_eq!(a, -b);
            }

            #[test]
            fn pupil_area_grows_with_na(na1 in 0.01f64..0.5, na2 in 0.01f64..0.5) {
                let (lo, hi) = if na1 <= na2 { (na1, na2) } else { (na2, na1) };
                let mut a = usaf().with_hr_size(64);
                a.na = lo;
                let mut b = a;
                b.na = hi;
                let pa: PupilMask<f64> = pupil_mask(&a);
                let pb: PupilMask<f64> = pupil_mask(&b);
                prop_assert!(pa.area() <= pb.area());
            }
        }
    }
}
