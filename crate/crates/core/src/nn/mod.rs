//! Toy-scale reconstruction networks built on [`crate::autodiff`].
//!
//! Both networks emit two planes, amplitude and phase, decoded as
//! `softplus` and `π·tanh` (E2E) or added onto the physics estimate (fusion).

mod e2e;
mod fusion;
mod train;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{BoundParams, Graph, ParamSet, Tensor, Var};
use crate::error::{FpmError, Result};
use crate::field::{ComplexGrid, RealGrid};
use crate::scalar::Real;

pub use e2e::{E2ENet, E2ENetSpec};
pub use fusion::{FusionNet, FusionNetSpec};
pub use train::{train, Curriculum, Phase, TrainConfig, TrainHistory, TrainSample};

/// Slope of every leaky ReLU.
pub const LEAKY_SLOPE: f64 = 0.1;

/// Name of the tensor that records the architecture inside a parameter file.
pub const SPEC_TENSOR: &str = "meta.spec";

/// A network that maps an input tensor to `[2, H, W]` output planes.
pub trait Network<T: Real> {
    fn params(&self) -> &ParamSet<T>;
    fn params_mut(&mut self) -> &mut ParamSet<T>;
    /// Records the forward pass of `input` on `g`.
    fn forward_graph(&self, g: &mut Graph<T>, p: &BoundParams, input: Var) -> Result<Var>;
}

/// Amplitude and phase planes `[2, H, W]` of a field.
pub fn encode_planes<T: Real>(z: &ComplexGrid<T>) -> Tensor<T> {
    let a = z.amplitude();
    // Adding +0 folds a negative zero phase into +0 so a zero correction
    // leaves the planes bitwise unchanged.
    let p = z.phase().map(|v| v + T::zero());
    Tensor::from_planes(&[&a, &p]).expect("planes share dimensions")
}

/// Field with amplitude plane 0 and phase plane 1.
pub fn decode_planes<T: Real>(t: &Tensor<T>) -> Result<ComplexGrid<T>> {
    let (a, p) = (t.plane(0)?, t.plane(1)?);
    ComplexGrid::from_polar(&a, &p)
}

/// Planes of a field as separate grids.
pub fn planes_of<T: Real>(t: &Tensor<T>) -> Result<(RealGrid<T>, RealGrid<T>)> {
    Ok((t.plane(0)?, t.plane(1)?))
}

/// Adds a `[co, ci, k, k]` kernel drawn from He-normal and a zero bias.
pub(crate) fn add_conv<T: Real>(p: &mut ParamSet<T>, name: &str, co: usize, ci: usize, k: usize, rng: &mut ChaCha8Rng) {
    let std = (2.0 / (ci * k * k) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    let n = co * ci * k * k;
    let w = (0..n).map(|_| T::lit(normal.sample(rng))).collect();
    p.insert(format!("{name}.w"), Tensor::new(vec![co, ci, k, k], w).expect("kernel shape"));
    p.insert(format!("{name}.b"), Tensor::zeros(&[co]));
}

/// Zeroes the weights and bias of layer `name`.
pub(crate) fn zero_layer<T: Real>(p: &mut ParamSet<T>, name: &str) {
    for suffix in ["w", "b"] {
        if let Some(t) = p.get_mut(&format!("{name}.{suffix}")) {
            t.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }
}

/// `conv2d` followed by a per-channel bias.
pub(crate) fn conv<T: Real>(g: &mut Graph<T>, p: &BoundParams, name: &str, x: Var, stride: usize) -> Result<Var> {
    let w = p.var(&format!("{name}.w"))?;
    let b = p.var(&format!("{name}.b"))?;
    let k = g.shape(w)[2];
    let y = g.conv2d(x, w, stride, k / 2)?;
    g.add_bias(y, b)
}

pub(crate) fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Checks a loaded parameter set against the tensors `expected` describes.
pub(crate) fn check_against<T: Real>(loaded: &ParamSet<T>, expected: &ParamSet<T>) -> Result<()> {
    for (name, t) in expected.iter() {
        let got = loaded
            .get(name)
            .map_err(|_| FpmError::format(format!("parameter file lacks tensor `{name}`")))?;
        if got.shape() != t.shape() {
            return Err(FpmError::format(format!(
                "tensor `{name}` has shape {:?}, architecture expects {:?}",
                got.shape(),
                t.shape()
            )));
        }
    }
    for name in loaded.names() {
        if expected.get(name).is_err() {
            return Err(FpmError::format(format!("parameter file has unexpected tensor `{name}`")));
        }
    }
    Ok(())
}

/// Either network, as stored in a parameter file.
pub enum AnyNet {
    E2E(E2ENet<f64>),
    Fusion(FusionNet<f64>),
}

/// Writes a network's parameters together with its architecture.
pub fn save_params<T: Real, N: Network<T>>(net: &N, spec: Tensor<T>, path: &Path) -> Result<()> {
    let mut p = net.params().clone();
    p.insert(SPEC_TENSOR, spec);
    crate::io::write_params(path, &p)
}

/// Loads either network kind, checking every tensor name and shape against
/// the recorded architecture.
pub fn load_params(path: &Path) -> Result<AnyNet> {
    let mut p: ParamSet<f64> = crate::io::read_params(path)?;
    let spec = p
        .get(SPEC_TENSOR)
        .map_err(|_| FpmError::format(format!("{}: no `{SPEC_TENSOR}` tensor", path.display())))?
        .clone();
    p.remove(SPEC_TENSOR);
    let kind = spec.data().first().copied().unwrap_or(0.0);
    if kind == e2e::SPEC_KIND {
        let s = E2ENetSpec::from_tensor(&spec)?;
        let fresh = E2ENet::<f64>::new(s, 0)?;
        check_against(&p, fresh.params())?;
        Ok(AnyNet::E2E(E2ENet::from_params(s, p)?))
    } else if kind == fusion::SPEC_KIND {
        let s = FusionNetSpec::from_tensor(&spec)?;
        let fresh = FusionNet::<f64>::new(s, 0)?;
        check_against(&p, fresh.params())?;
        Ok(AnyNet::Fusion(FusionNet::from_params(s, p)?))
    } else {
        Err(FpmError::format(format!("{}: unknown network kind {kind}", path.display())))
    }
}

pub fn load_e2e(path: &Path) -> Result<E2ENet<f64>> {
    match load_params(path)? {
        AnyNet::E2E(n) => Ok(n),
        AnyNet::Fusion(_) => Err(FpmError::format(format!("{} holds a fusion network", path.display()))),
    }
}

pub fn load_fusion(path: &Path) -> Result<FusionNet<f64>> {
    match load_params(path)? {
        AnyNet::Fusion(n) => Ok(n),
        AnyNet::E2E(_) => Err(FpmError::format(format!("{} holds an end-to-end network", path.display()))),
    }
}
