use serde::{Deserialize, Serialize};

use crate::autodiff::{BoundParams, Graph, ParamSet, Tensor, Var};
use crate::error::{FpmError, Result};
use crate::field::ComplexGrid;
use crate::forward::IntensityStack;
use crate::scalar::Real;

use super::{add_conv, conv, decode_planes, seeded, Network, LEAKY_SLOPE};

pub(crate) const SPEC_KIND: f64 = 1.0;

/// Architecture of the end-to-end network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct E2ENetSpec {
    pub in_images: usize,
    pub base_channels: usize,
    /// U-Net levels; level `l` runs at `1/2^l` of the output resolution.
    pub depth: usize,
    /// Each stage is a 1×1 convolution and a ×2 pixel shuffle.
    pub upsample_stages: usize,
    pub out_channels: usize,
}

impl Default for E2ENetSpec {
    fn default() -> Self {
        E2ENetSpec {
            in_images: 10,
            base_channels: 8,
            depth: 2,
            upsample_stages: 1,
            out_channels: 2,
        }
    }
}

impl E2ENetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.in_images == 0 || self.base_channels == 0 || self.depth == 0 {
            return Err(FpmError::Config(format!("degenerate network spec {self:?}")));
        }
        if self.out_channels != 2 {
            return Err(FpmError::Config("the network emits exactly two planes".into()));
        }
        Ok(())
    }

    /// Output side for an `lr × lr` input.
    pub fn output_size(&self, lr: usize) -> usize {
        lr << self.upsample_stages
    }

    /// Checks that an `lr × lr` input yields a valid U-Net resolution.
    pub fn check_input(&self, channels: usize, lr: usize) -> Result<()> {
        if channels != self.in_images {
            return Err(FpmError::shape(format!(
                "network expects {} input images, got {channels}",
                self.in_images
            )));
        }
        let n = self.output_size(lr);
        if n % (1 << (self.depth - 1)) != 0 {
            return Err(FpmError::shape(format!("output side {n} is not divisible by 2^{}", self.depth - 1)));
        }
        Ok(())
    }

    fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let v = [
            SPEC_KIND,
            self.in_images as f64,
            self.base_channels as f64,
            self.depth as f64,
            self.upsample_stages as f64,
            self.out_channels as f64,
        ];
        Tensor::new(vec![v.len()], v.iter().map(|&x| T::lit(x)).collect()).expect("spec vector")
    }

    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Self> {
        let d: Vec<usize> = t.data().iter().map(|v| v.as_f64() as usize).collect();
        if d.len() != 6 || t.data()[0].as_f64() != SPEC_KIND {
            return Err(FpmError::format("malformed end-to-end network spec"));
        }
        let s = E2ENetSpec {
            in_images: d[1],
            base_channels: d[2],
            depth: d[3],
            upsample_stages: d[4],
            out_channels: d[5],
        };
        s.validate()?;
        Ok(s)
    }
}

/// Head (1×1 convolution and pixel shuffle) followed by a U-Net whose skips
/// are gated by sigmoid attention maps.
#[derive(Clone, Debug, PartialEq)]
pub struct E2ENet<T> {
    pub spec: E2ENetSpec,
    params: ParamSet<T>,
}

impl<T: Real> E2ENet<T> {
    pub fn new(spec: E2ENetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = seeded(seed);
        let mut p = ParamSet::new();
        let c0 = spec.base_channels;
        for s in 0..spec.upsample_stages {
            let ci = if s == 0 { spec.in_images } else { c0 };
            add_conv(&mut p, &format!("head.{s}"), 4 * c0, ci, 1, &mut rng);
        }
        add_conv(&mut p, "enc.0", c0, c0, 3, &mut rng);
        for l in 1..spec.depth {
            add_conv(&mut p, &format!("down.{l}"), spec.channels(l), spec.channels(l - 1), 3, &mut rng);
            add_conv(&mut p, &format!("enc.{l}"), spec.channels(l), spec.channels(l), 3, &mut rng);
        }
        for l in (1..spec.depth).rev() {
            let c = spec.channels(l - 1);
            add_conv(&mut p, &format!("up.{l}"), 4 * c, spec.channels(l), 1, &mut rng);
            add_conv(&mut p, &format!("gate.{l}"), c, c, 1, &mut rng);
            add_conv(&mut p, &format!("dec.{l}"), c, 2 * c, 3, &mut rng);
        }
        add_conv(&mut p, "out", spec.out_channels, c0, 1, &mut rng);
        Ok(E2ENet { spec, params: p })
    }

    pub fn from_params(spec: E2ENetSpec, params: ParamSet<T>) -> Result<Self> {
        spec.validate()?;
        let fresh = Self::new(spec, 0)?;
        super::check_against(&params, fresh.params())?;
        Ok(E2ENet { spec, params })
    }

    /// `[in_images, M, M]` input tensor of a stack.
    pub fn input(&self, stack: &IntensityStack<T>) -> Result<Tensor<T>> {
        let planes: Vec<_> = stack.images.iter().collect();
        let t = Tensor::from_planes(&planes)?;
        self.spec.check_input(t.shape()[0], t.shape()[1])?;
        Ok(t)
    }

    /// Amplitude and phase planes `[2, N, N]` for a stack.
    pub fn forward_planes(&self, stack: &IntensityStack<T>) -> Result<Tensor<T>> {
        let x = self.input(stack)?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let input = g.constant(x);
        let out = self.forward_graph(&mut g, &p, input)?;
        Ok(g.value(out).clone())
    }

    pub fn forward(&self, stack: &IntensityStack<T>) -> Result<ComplexGrid<T>> {
        decode_planes(&self.forward_planes(stack)?)
    }
}

impl<T: Real> Network<T> for E2ENet<T> {
    fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    fn forward_graph(&self, g: &mut Graph<T>, p: &BoundParams, input: Var) -> Result<Var> {
        let s = &self.spec;
        let shape = g.shape(input).to_vec();
        if shape.len() != 3 || shape[1] != shape[2] {
            return Err(FpmError::shape(format!("network input must be [C, M, M], got {shape:?}")));
        }
        s.check_input(shape[0], shape[1])?;
        let slope = T::lit(LEAKY_SLOPE);
        let mut x = input;
        for st in 0..s.upsample_stages {
            let y = conv(g, p, &format!("head.{st}"), x, 1)?;
            x = g.pixel_shuffle(y, 2)?;
        }
        let e = conv(g, p, "enc.0", x, 1)?;
        let mut skips = vec![g.leaky_relu(e, slope)];
        for l in 1..s.depth {
            let prev = *skips.last().expect("level 0 exists");
            let d = conv(g, p, &format!("down.{l}"), prev, 2)?;
            let d = g.leaky_relu(d, slope);
            let e = conv(g, p, &format!("enc.{l}"), d, 1)?;
            skips.push(g.leaky_relu(e, slope));
        }
        let mut d = skips.pop().expect("deepest level");
        for l in (1..s.depth).rev() {
            let up = conv(g, p, &format!("up.{l}"), d, 1)?;
            let up = g.pixel_shuffle(up, 2)?;
            let gate = conv(g, p, &format!("gate.{l}"), up, 1)?;
            let gate = g.sigmoid(gate);
            let gated = g.mul(skips[l - 1], gate)?;
            let cat = g.concat(&[up, gated], 0)?;
            let y = conv(g, p, &format!("dec.{l}"), cat, 1)?;
            d = g.leaky_relu(y, slope);
        }
        let o = conv(g, p, "out", d, 1)?;
        let amp = g.narrow(o, 0, 0, 1)?;
        let amp = g.softplus(amp);
        let ph = g.narrow(o, 0, 1, 1)?;
        let ph = g.tanh(ph);
        let ph = g.scale(ph, T::PI());
        g.concat(&[amp, ph], 0)
    }
}
