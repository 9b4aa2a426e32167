use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, Graph, OptimState, ParamSet, Tensor};
use crate::error::{FpmError, Result};
use crate::scalar::Real;

use super::{seeded, Network};

/// One input/target pair; `simple` marks the sparsely detailed subset.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample<T> {
    pub input: Tensor<T>,
    pub target: Tensor<T>,
    pub simple: bool,
}

/// Which samples a phase trains on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    All,
    Simple,
    Complex,
}

impl Phase {
    fn admits(self, simple: bool) -> bool {
        match self {
            Phase::All => true,
            Phase::Simple => simple,
            Phase::Complex => !simple,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::All => "all",
            Phase::Simple => "simple",
            Phase::Complex => "complex",
        }
    }
}

/// Training schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Curriculum {
    /// Every sample for all epochs.
    None,
    /// `epochs` on the Simple subset, then `epochs` more on the Complex one.
    SimpleThenComplex,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub adam: Adam,
    pub seed: u64,
    pub curriculum: Curriculum,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            adam: Adam::with_lr(1e-3),
            seed: 0,
            curriculum: Curriculum::None,
        }
    }
}

impl TrainConfig {
    fn phases(&self) -> Vec<Phase> {
        match self.curriculum {
            Curriculum::None => vec![Phase::All],
            Curriculum::SimpleThenComplex => vec![Phase::Simple, Phase::Complex],
        }
    }
}

/// Boundary bookkeeping for one phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub phase: Phase,
    pub start_epoch: usize,
    pub epochs: usize,
    pub samples: usize,
}

/// Mean loss per epoch, the phase boundaries, and the parameters at the end
/// of every phase.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainHistory<T> {
    pub epoch_loss: Vec<f64>,
    pub phases: Vec<PhaseRecord>,
    pub phase_params: Vec<ParamSet<T>>,
}

impl<T: Real> TrainHistory<T> {
    /// `epoch,phase,loss` CSV.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,phase,loss\n");
        for rec in &self.phases {
            for e in rec.start_epoch..rec.start_epoch + rec.epochs {
                s.push_str(&format!("{e},{},{:.12e}\n", rec.phase.as_str(), self.epoch_loss[e]));
            }
        }
        s
    }
}

/// Minimizes the L1 distance between network output and target planes with
/// one Adam step per sample, in a seeded shuffled order.
pub fn train<T: Real, N: Network<T>>(
    net: &mut N,
    samples: &[TrainSample<T>],
    cfg: &TrainConfig,
) -> Result<TrainHistory<T>> {
    if samples.is_empty() {
        return Err(FpmError::domain("training set is empty"));
    }
    let mut rng = seeded(cfg.seed);
    let mut opt = OptimState::new(cfg.adam, net.params());
    let mut hist = TrainHistory {
        epoch_loss: Vec::new(),
        phases: Vec::new(),
        phase_params: Vec::new(),
    };
    for phase in cfg.phases() {
        let mut idx: Vec<usize> = (0..samples.len()).filter(|&i| phase.admits(samples[i].simple)).collect();
        if idx.is_empty() {
            return Err(FpmError::domain(format!("no {} samples for the curriculum", phase.as_str())));
        }
        hist.phases.push(PhaseRecord {
            phase,
            start_epoch: hist.epoch_loss.len(),
            epochs: cfg.epochs,
            samples: idx.len(),
        });
        for epoch in 0..cfg.epochs {
            idx.shuffle(&mut rng);
            let mut total = 0.0;
            for &i in &idx {
                let s = &samples[i];
                let mut g = Graph::new();
                let bound = net.params().bind(&mut g);
                let x = g.constant(s.input.clone());
                let y = g.constant(s.target.clone());
                let out = net.forward_graph(&mut g, &bound, x)?;
                let loss = g.l1_loss(out, y)?;
                let v = g.value(loss).item().as_f64();
                if !v.is_finite() {
                    return Err(FpmError::Numerical(format!(
                        "training loss is {v} in {} epoch {epoch}",
                        phase.as_str()
                    )));
                }
                total += v;
                let grads = bound.gradients(&g.backward(loss)?);
                opt.update(net.params_mut(), &grads)?;
            }
            hist.epoch_loss.push(total / idx.len() as f64);
        }
        hist.phase_params.push(net.params().clone());
    }
    Ok(hist)
}
