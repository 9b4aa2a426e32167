//! Physics-based reconstruction: a trainable centred spectrum pushed through
//! the differentiable image-formation graph and fitted to measured captures.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, Graph, Tensor, TensorAdam, Var};
use crate::error::{FpmError, Result};
use crate::field::{fft_centered, ifft_centered, ComplexGrid, RealGrid};
use crate::forward::{IntensityStack, Simulator};
use crate::geometry::{IlluminationPattern, OpticalConfig, PixelShift};
use crate::scalar::Real;

/// Which quantity the L1 data term compares.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossDomain {
    #[default]
    Intensity,
    Amplitude,
}

/// Stage that produced an estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StageLabel {
    #[serde(rename = "DL")]
    Dl,
    #[serde(rename = "PM")]
    Pm,
    #[serde(rename = "FUSED")]
    Fused,
}

impl StageLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            StageLabel::Dl => "DL",
            StageLabel::Pm => "PM",
            StageLabel::Fused => "FUSED",
        }
    }
}

impl std::fmt::Display for StageLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub loss_domain: LossDomain,
    /// Print progress every this many iterations; 0 disables.
    pub log_every: usize,
    /// Learning rate at the last iteration as a fraction of the first; the
    /// rate follows a cosine between the two.
    pub final_lr_fraction: f64,
    /// Iterations over which the rate ramps linearly up to `learning_rate`.
    pub warmup: usize,
    /// Rescale the starting spectrum so predicted and measured total
    /// intensity agree before the first step.
    pub match_energy: bool,
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig {
            iterations: 300,
            learning_rate: 1e-2,
            loss_domain: LossDomain::Intensity,
            log_every: 0,
            final_lr_fraction: 1.0,
            warmup: 0,
            match_energy: true,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(FpmError::Config("iterations must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(FpmError::Config(format!("learning rate {} is not positive", self.learning_rate)));
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return Err(FpmError::Config(format!(
                "final_lr_fraction {} must lie in (0, 1]",
                self.final_lr_fraction
            )));
        }
        Ok(())
    }

    /// Learning rate used at zero-based iteration `it`.
    pub fn lr_at(&self, it: usize) -> f64 {
        if it < self.warmup {
            return self.learning_rate * (it + 1) as f64 / (self.warmup + 1) as f64;
        }
        let span = self.iterations.saturating_sub(self.warmup + 1);
        if span == 0 {
            return self.learning_rate;
        }
        let t = (it - self.warmup) as f64 / span as f64;
        let f = self.final_lr_fraction;
        self.learning_rate * (f + (1.0 - f) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
    }
}

/// Trainable centred object spectrum.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierObjectLayer<T> {
    pub spectrum: ComplexGrid<T>,
}

impl<T: Real> FourierObjectLayer<T> {
    pub fn from_spectrum(spectrum: ComplexGrid<T>) -> Self {
        FourierObjectLayer { spectrum }
    }

    pub fn size(&self) -> usize {
        self.spectrum.height()
    }

    /// Object field represented by the layer.
    pub fn object(&self) -> ComplexGrid<T> {
        ifft_centered(&self.spectrum)
    }
}

/// Amplitude `√I` upsampled by pixel replication, zero phase.
pub fn init_from_central<T: Real>(stack: &IntensityStack<T>, central_index: usize) -> Result<FourierObjectLayer<T>> {
    let img = stack.images.get(central_index).ok_or_else(|| {
        FpmError::domain(format!(
            "central index {central_index} outside a stack of {} captures",
            stack.len()
        ))
    })?;
    let amp = img.map(|v| v.max(T::zero()).sqrt()).upsample_nearest(stack.cfg.upsample);
    Ok(FourierObjectLayer::from_spectrum(fft_centered(&ComplexGrid::from_real(&amp))))
}

pub fn init_from_prior<T: Real>(prior: &ComplexGrid<T>, cfg: &OpticalConfig) -> Result<FourierObjectLayer<T>> {
    prior.check_same_dims((cfg.hr_size, cfg.hr_size), "prior vs configured object size")?;
    Ok(FourierObjectLayer::from_spectrum(fft_centered(prior)))
}

/// Index of the pattern made of the central LED alone, if any.
pub fn central_pattern_index(patterns: &[IlluminationPattern]) -> Option<usize> {
    patterns
        .iter()
        .position(|p| p.leds.len() == 1 && p.leds[0] == crate::geometry::LedIndex::CENTER)
}

/// How the starting spectrum was obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub init: String,
    pub recon: Option<ReconConfig>,
}

/// Output of one stage of the pipeline.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconResult<T> {
    pub estimate: ComplexGrid<T>,
    pub loss_trace: Vec<f64>,
    pub stage: StageLabel,
    pub provenance: Provenance,
}

/// Differentiable image formation for a fixed configuration and pattern list.
///
/// The trainable tensor holds the spectrum divided by `N`, which keeps Adam
/// step sizes comparable to object-domain amplitudes.
pub struct PhysicsModel<T: Real> {
    cfg: OpticalConfig,
    /// Real pupil replicated on both complex planes, `[2, M, M]`.
    pupil: Tensor<T>,
    shifts: Vec<Vec<PixelShift>>,
}

impl<T: Real> PhysicsModel<T> {
    pub fn new(cfg: &OpticalConfig, patterns: &[IlluminationPattern]) -> Result<Self> {
        let sim = Simulator::<T>::new(cfg)?;
        let shifts = patterns
            .iter()
            .map(|p| {
                p.validate(cfg)?;
                p.leds.iter().map(|&l| sim.shift_for(l)).collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let mask = sim.pupil();
        let pupil = Tensor::from_planes(&[mask, mask])?;
        Ok(PhysicsModel { cfg: *cfg, pupil, shifts })
    }

    pub fn spectrum_scale(&self) -> T {
        T::lit(self.cfg.hr_size as f64)
    }

    pub fn to_param(&self, layer: &FourierObjectLayer<T>) -> Result<Tensor<T>> {
        let n = self.cfg.hr_size;
        layer.spectrum.check_same_dims((n, n), "spectrum vs configured object size")?;
        let s = T::one() / self.spectrum_scale();
        Ok(Tensor::from_complex(&layer.spectrum).map(|v| v * s))
    }

    pub fn from_param(&self, p: &Tensor<T>) -> Result<FourierObjectLayer<T>> {
        let s = self.spectrum_scale();
        Ok(FourierObjectLayer::from_spectrum(p.map(|v| v * s).to_complex()?))
    }

    /// Predicted captures `[P·M, M]` from the scaled spectrum `param`.
    pub fn predict(&self, g: &mut Graph<T>, param: Var) -> Result<Var> {
        let m = self.cfg.lr_size();
        let spectrum = g.scale(param, self.spectrum_scale());
        let pupil = g.constant(self.pupil.clone());
        let r = m as f64 / self.cfg.hr_size as f64;
        let mut images = Vec::with_capacity(self.shifts.len());
        for leds in &self.shifts {
            let mut acc: Option<Var> = None;
            for &shift in leds {
                let win = g.crop(spectrum, m, shift)?;
                let low = g.mul(win, pupil)?;
                let field = g.ifft(low)?;
                let i = g.modsq(field)?;
                acc = Some(match acc {
                    None => i,
                    Some(a) => g.add(a, i)?,
                });
            }
            let sum = acc.ok_or_else(|| FpmError::domain("pattern without LEDs"))?;
            images.push(g.scale(sum, T::lit(r * r)));
        }
        // Captures are stacked row-wise into [P·M, M].
        g.concat(&images, 0)
    }

    /// Data-fit loss of `param` against `measured` (`[P·M, M]`).
    pub fn loss(&self, g: &mut Graph<T>, param: Var, measured: Var, domain: LossDomain) -> Result<Var> {
        let pred = self.predict(g, param)?;
        match domain {
            LossDomain::Intensity => g.l1_loss(pred, measured),
            LossDomain::Amplitude => {
                let a = g.sqrt_eps(pred, T::lit(1e-12));
                g.l1_loss(a, measured)
            }
        }
    }

    /// Amplitude factor that makes the predicted total intensity equal the
    /// measured one; 1 when either is zero.
    pub fn energy_gain(&self, param: &Tensor<T>, stack: &IntensityStack<T>) -> Result<T> {
        let mut g = Graph::new();
        let p = g.constant(param.clone());
        let pred = self.predict(&mut g, p)?;
        let predicted: T = g.value(pred).data().iter().copied().sum();
        let measured: T = stack.images.iter().map(|i| i.sum()).sum();
        if predicted > T::zero() && measured > T::zero() {
            Ok((measured / predicted).sqrt())
        } else {
            Ok(T::one())
        }
    }

    /// Measurement tensor matching [`Self::predict`] for `domain`.
    pub fn measurement(&self, stack: &IntensityStack<T>, domain: LossDomain) -> Result<Tensor<T>> {
        if stack.len() != self.shifts.len() {
            return Err(FpmError::shape(format!(
                "{} captures for {} patterns",
                stack.len(),
                self.shifts.len()
            )));
        }
        let m = self.cfg.lr_size();
        let mut data = Vec::with_capacity(stack.len() * m * m);
        for img in &stack.images {
            img.check_same_dims((m, m), "capture vs configured sensor size")?;
            match domain {
                LossDomain::Intensity => data.extend_from_slice(img.data()),
                LossDomain::Amplitude => data.extend(img.data().iter().map(|&v| (v + T::lit(1e-12)).max(T::zero()).sqrt())),
            }
        }
        Tensor::new(vec![stack.len() * m, m], data)
    }
}

/// Fits `layer` to `stack` with full-batch Adam.
pub fn reconstruct<T: Real>(
    layer: &FourierObjectLayer<T>,
    stack: &IntensityStack<T>,
    rcfg: &ReconConfig,
    init: &str,
) -> Result<ReconResult<T>> {
    rcfg.validate()?;
    if stack.cfg.hr_size != layer.size() {
        return Err(FpmError::shape(format!(
            "layer is {}x{0}, stack expects {}x{1}",
            layer.size(),
            stack.cfg.hr_size
        )));
    }
    let model = PhysicsModel::new(&stack.cfg, &stack.patterns)?;
    let target = model.measurement(stack, rcfg.loss_domain)?;
    let mut param = model.to_param(layer)?;
    if rcfg.match_energy {
        let gain = model.energy_gain(&param, stack)?;
        param = param.map(|v| v * gain);
    }
    let mut opt = TensorAdam::new(Adam::with_lr(rcfg.learning_rate), param.numel());
    let mut trace = Vec::with_capacity(rcfg.iterations);
    for it in 0..rcfg.iterations {
        let mut g = Graph::new();
        let p = g.param(param.clone());
        let meas = g.constant(target.clone());
        let loss = model.loss(&mut g, p, meas, rcfg.loss_domain)?;
        let value = g.value(loss).item().as_f64();
        if !value.is_finite() {
            return Err(FpmError::Numerical(format!("loss is {value} at iteration {it}")));
        }
        if let Some(&first) = trace.first() {
            if value > 10.0 * first && first > 0.0 {
                return Err(FpmError::Numerical(format!(
                    "loss {value:.3e} at iteration {it} exceeds ten times the initial {first:.3e}"
                )));
            }
        }
        trace.push(value);
        if rcfg.log_every > 0 && it % rcfg.log_every == 0 {
            eprintln!("iter {it:5}  loss {value:.6e}");
        }
        let grad = g.backward(loss)?.get_or_zeros(p);
        opt.cfg.lr = rcfg.lr_at(it);
        opt.update(&mut param, &grad)?;
    }
    let out = model.from_param(&param)?;
    let estimate = out.object();
    if !estimate.is_finite() {
        return Err(FpmError::Numerical("reconstruction produced non-finite values".into()));
    }
    Ok(ReconResult {
        estimate,
        loss_trace: trace,
        stage: StageLabel::Pm,
        provenance: Provenance {
            init: init.to_string(),
            recon: Some(*rcfg),
        },
    })
}

/// Data-fit loss of a spectrum without taking a step.
pub fn data_loss<T: Real>(layer: &FourierObjectLayer<T>, stack: &IntensityStack<T>, domain: LossDomain) -> Result<f64> {
    let model = PhysicsModel::new(&stack.cfg, &stack.patterns)?;
    let mut g = Graph::new();
    let p = g.constant(model.to_param(layer)?);
    let meas = g.constant(model.measurement(stack, domain)?);
    let loss = model.loss(&mut g, p, meas, domain)?;
    Ok(g.value(loss).item().as_f64())
}

/// Union of the shifted pupil supports on the `N × N` frequency grid.
pub fn synthetic_aperture_mask<T: Real>(cfg: &OpticalConfig, patterns: &[IlluminationPattern]) -> Result<RealGrid<T>> {
    let sim = Simulator::<T>::new(cfg)?;
    let (n, m) = (cfg.hr_size, cfg.lr_size());
    let mut mask = RealGrid::zeros(n, n);
    for p in patterns {
        p.validate(cfg)?;
        for &led in &p.leds {
            let shift = sim.shift_for(led)?;
            let (top, left) = crate::field::window_origin(n, n, m, shift)
                .ok_or_else(|| FpmError::domain(format!("pupil window at {shift:?} leaves the spectrum")))?;
            for i in 0..m {
                for j in 0..m {
                    if sim.pupil()[(i, j)] > T::zero() {
                        mask[(top + i, left + j)] = T::one();
                    }
                }
            }
        }
    }
    Ok(mask)
}

/// Restriction of `field` to the frequencies where `mask` is set.
pub fn band_limit<T: Real>(field: &ComplexGrid<T>, mask: &RealGrid<T>) -> Result<ComplexGrid<T>> {
    Ok(ifft_centered(&fft_centered(field).mul_real(mask)?))
}

/// PSNR (peak 1) between the amplitudes of `estimate` and `truth` after both
/// are band-limited to `mask`.
pub fn in_band_psnr<T: Real>(estimate: &ComplexGrid<T>, truth: &ComplexGrid<T>, mask: &RealGrid<T>) -> Result<f64> {
    let a = band_limit(estimate, mask)?.amplitude();
    let b = band_limit(truth, mask)?.amplitude();
    crate::data::metrics::psnr(&a, &b, 1.0)
}

/// Gaussian low-pass of `field` with standard deviation `sigma` frequency
/// pixels, a stand-in for a learned prior.
pub fn blurred_prior<T: Real>(field: &ComplexGrid<T>, sigma: f64) -> ComplexGrid<T> {
    let (h, w) = field.dims();
    let spec = fft_centered(field);
    let filtered = ComplexGrid::from_fn(h, w, |i, j| {
        let dy = i as f64 - (h / 2) as f64;
        let dx = j as f64 - (w / 2) as f64;
        let g = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
        spec[(i, j)] * T::lit(g)
    });
    ifft_centered(&filtered)
}

/// Zero-phase field with the given amplitude.
pub fn amplitude_field<T: Real>(amp: &RealGrid<T>) -> ComplexGrid<T> {
    ComplexGrid::from_fn(amp.height(), amp.width(), |i, j| Complex::new(amp[(i, j)], T::zero()))
}

/// Ideal low-pass of `field` keeping frequencies within `radius` pixels of
/// the centre.
pub fn disk_prior<T: Real>(field: &ComplexGrid<T>, radius: f64) -> ComplexGrid<T> {
    let (h, w) = field.dims();
    let spec = fft_centered(field);
    let filtered = ComplexGrid::from_fn(h, w, |i, j| {
        let dy = i as f64 - (h / 2) as f64;
        let dx = j as f64 - (w / 2) as f64;
        if dx * dx + dy * dy <= radius * radius {
            spec[(i, j)]
        } else {
            Complex::new(T::zero(), T::zero())
        }
    });
    ifft_centered(&filtered)
}
