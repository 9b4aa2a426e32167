use serde::{Deserialize, Serialize};

use crate::autodiff::{BoundParams, Graph, ParamSet, Tensor, Var};
use crate::error::{FpmError, Result};
use crate::field::ComplexGrid;
use crate::scalar::Real;

use super::{add_conv, conv, decode_planes, encode_planes, seeded, zero_layer, Network, LEAKY_SLOPE};

pub(crate) const SPEC_KIND: f64 = 2.0;

/// Architecture of the fusion network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionNetSpec {
    /// Planes of both estimates: amplitude and phase of DL, then of PM.
    pub in_channels: usize,
    pub hidden: usize,
    /// Convolution layers including the output layer.
    pub layers: usize,
    pub kernel: usize,
}

impl Default for FusionNetSpec {
    fn default() -> Self {
        FusionNetSpec {
            in_channels: 4,
            hidden: 16,
            layers: 3,
            kernel: 3,
        }
    }
}

impl FusionNetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels != 4 {
            return Err(FpmError::Config("fusion input is four planes".into()));
        }
        if self.hidden == 0 || self.layers < 2 || self.kernel % 2 == 0 {
            return Err(FpmError::Config(format!("degenerate fusion spec {self:?}")));
        }
        Ok(())
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let v = [
            SPEC_KIND,
            self.in_channels as f64,
            self.hidden as f64,
            self.layers as f64,
            self.kernel as f64,
        ];
        Tensor::new(vec![v.len()], v.iter().map(|&x| T::lit(x)).collect()).expect("spec vector")
    }

    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Self> {
        let d: Vec<usize> = t.data().iter().map(|v| v.as_f64() as usize).collect();
        if d.len() != 5 || t.data()[0].as_f64() != SPEC_KIND {
            return Err(FpmError::format("malformed fusion network spec"));
        }
        let s = FusionNetSpec {
            in_channels: d[1],
            hidden: d[2],
            layers: d[3],
            kernel: d[4],
        };
        s.validate()?;
        Ok(s)
    }
}

/// Convolution stack predicting a correction that is added to the PM planes.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionNet<T> {
    pub spec: FusionNetSpec,
    params: ParamSet<T>,
}

impl<T: Real> FusionNet<T> {
    /// Random hidden layers and a zero output layer, so a fresh network
    /// passes the PM estimate through unchanged.
    pub fn new(spec: FusionNetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = seeded(seed);
        let mut p = ParamSet::new();
        let k = spec.kernel;
        add_conv(&mut p, "conv.0", spec.hidden, spec.in_channels, k, &mut rng);
        for i in 1..spec.layers - 1 {
            add_conv(&mut p, &format!("conv.{i}"), spec.hidden, spec.hidden, k, &mut rng);
        }
        add_conv(&mut p, "out", 2, spec.hidden, k, &mut rng);
        zero_layer(&mut p, "out");
        Ok(FusionNet { spec, params: p })
    }

    pub fn from_params(spec: FusionNetSpec, params: ParamSet<T>) -> Result<Self> {
        spec.validate()?;
        let fresh = Self::new(spec, 0)?;
        super::check_against(&params, fresh.params())?;
        Ok(FusionNet { spec, params })
    }

    /// `[4, H, W]` input: DL amplitude, DL phase, PM amplitude, PM phase.
    pub fn input(dl: &ComplexGrid<T>, pm: &ComplexGrid<T>) -> Result<Tensor<T>> {
        dl.check_same_dims(pm.dims(), "fusion inputs")?;
        let (a, b) = (encode_planes(dl), encode_planes(pm));
        let (h, w) = dl.dims();
        let mut data = a.into_data();
        data.extend_from_slice(b.data());
        Tensor::new(vec![4, h, w], data)
    }

    /// Output amplitude and phase planes.
    pub fn forward_planes(&self, dl: &ComplexGrid<T>, pm: &ComplexGrid<T>) -> Result<Tensor<T>> {
        let x = Self::input(dl, pm)?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let input = g.constant(x);
        let out = self.forward_graph(&mut g, &p, input)?;
        Ok(g.value(out).clone())
    }

    pub fn forward(&self, dl: &ComplexGrid<T>, pm: &ComplexGrid<T>) -> Result<ComplexGrid<T>> {
        decode_planes(&self.forward_planes(dl, pm)?)
    }
}

impl<T: Real> Network<T> for FusionNet<T> {
    fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    fn forward_graph(&self, g: &mut Graph<T>, p: &BoundParams, input: Var) -> Result<Var> {
        let shape = g.shape(input).to_vec();
        if shape.len() != 3 || shape[0] != self.spec.in_channels {
            return Err(FpmError::shape(format!("fusion input must be [4, H, W], got {shape:?}")));
        }
        let slope = T::lit(LEAKY_SLOPE);
        // The paired features enter as the DL−PM discrepancy next to the PM
        // planes, so a duplicated input does not count twice.
        let dl = g.narrow(input, 0, 0, 2)?;
        let pm = g.narrow(input, 0, 2, 2)?;
        let diff = g.sub(dl, pm)?;
        let mut x = g.concat(&[diff, pm], 0)?;
        for i in 0..self.spec.layers - 1 {
            let y = conv(g, p, &format!("conv.{i}"), x, 1)?;
            x = g.leaky_relu(y, slope);
        }
        let correction = conv(g, p, "out", x, 1)?;
        g.add(correction, pm)
    }
}
