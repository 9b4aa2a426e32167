//! Synthetic training data: augmented targets pushed through the forward model.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FpmError, Result};
use crate::field::{ComplexGrid, RealGrid};
use crate::forward::{IntensityStack, NoiseModel, Simulator};
use crate::geometry::{IlluminationPattern, OpticalConfig};
use crate::scalar::Real;

use super::augment::{classify_complexity, composite, extract_background, BBox, Complexity, RoiSpec, Transform};
use super::phantom::{smooth_noise, usaf_groups, usaf_like};

/// Phase given to composited amplitude targets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PhaseMode {
    /// Amplitude-only object.
    #[default]
    Zero,
    /// Smooth random phase of the given peak magnitude in radians.
    Smooth { peak: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    #[serde(rename = "train")]
    Train,
    #[serde(rename = "val")]
    Val,
    #[serde(rename = "test")]
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(FpmError::format(format!("unknown split `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub count: usize,
    pub seed: u64,
    /// Complex samples draw between `simple_threshold + 1` and this many ROIs.
    pub max_rois: usize,
    pub simple_threshold: usize,
    /// Probability that a sample is drawn from the Simple class.
    pub simple_fraction: f64,
    /// Train/val/test weights.
    pub split: [usize; 3],
    pub phase: PhaseMode,
    pub noise: NoiseModel,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            count: 24,
            seed: 0,
            max_rois: 5,
            simple_threshold: super::augment::DEFAULT_SIMPLE_THRESHOLD,
            simple_fraction: 0.5,
            split: [4, 1, 1],
            phase: PhaseMode::Zero,
            noise: NoiseModel::default(),
        }
    }
}

/// Sizes of the train, val and test parts of `n` samples; train and val take
/// the floor of their share and test the remainder.
pub fn split_sizes(n: usize, weights: [usize; 3]) -> Result<[usize; 3]> {
    let total: usize = weights.iter().sum();
    if total == 0 {
        return Err(FpmError::Config("split weights sum to zero".into()));
    }
    let train = n * weights[0] / total;
    let val = n * weights[1] / total;
    Ok([train, val, n - train - val])
}

/// One generated training example.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSample<T> {
    pub stack: IntensityStack<T>,
    pub target: ComplexGrid<T>,
    pub complexity: Complexity,
    pub split: Split,
    pub seed: u64,
    pub rois: usize,
    pub noise: NoiseModel,
}

/// Seed of sample `index` derived from the dataset seed.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    // SplitMix64 finalizer.
    let mut z = seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Target amplitude made of randomly placed and transformed bar groups on
/// the extracted background, with the number of groups.
pub fn augmented_amplitude<T: Real>(
    source: &RealGrid<T>,
    boxes: &[BBox],
    dcfg: &DatasetConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(RealGrid<T>, usize)> {
    let background = extract_background(source, boxes)?;
    let k = if rng.random_bool(dcfg.simple_fraction) {
        rng.random_range(1..=dcfg.simple_threshold.max(1))
    } else {
        rng.random_range(dcfg.simple_threshold + 1..=dcfg.max_rois.max(dcfg.simple_threshold + 1))
    };
    let transforms = Transform::all();
    let (h, w) = source.dims();
    let mut rois = Vec::with_capacity(k);
    for _ in 0..k {
        let b = boxes[rng.random_range(0..boxes.len())];
        let t = transforms[rng.random_range(0..transforms.len())];
        let (ph, pw) = t.output_dims(b.h, b.w);
        if ph > h || pw > w {
            return Err(FpmError::domain(format!("ROI {b:?} cannot fit the canvas")));
        }
        let x = rng.random_range(0..=w - pw);
        let y = rng.random_range(0..=h - ph);
        rois.push(RoiSpec {
            source: source.clone(),
            bbox: b,
            transform: t,
            paste: (x, y),
        });
    }
    Ok((composite(&background, &rois)?, k))
}

/// The USAF-like chart of size `n` and the bounding boxes of its bar groups.
pub fn usaf_source<T: Real>(n: usize) -> Result<(RealGrid<T>, Vec<BBox>)> {
    let boxes: Vec<BBox> = usaf_groups(n)
        .into_iter()
        .map(|g| {
            let (h, w) = g.extent();
            BBox::new(g.left, g.top, w, h)
        })
        .collect();
    if boxes.is_empty() {
        return Err(FpmError::Config(format!("no bar groups fit a {n}x{n} field")));
    }
    Ok((usaf_like(n), boxes))
}

/// Generates `dcfg.count` samples; sample `i` depends only on
/// `sample_seed(dcfg.seed, i)`.
pub fn generate_dataset<T: Real>(
    cfg: &OpticalConfig,
    patterns: &[IlluminationPattern],
    dcfg: &DatasetConfig,
) -> Result<Vec<DatasetSample<T>>> {
    if dcfg.count == 0 {
        return Err(FpmError::Config("dataset count must be at least 1".into()));
    }
    cfg.validate()?;
    let n = cfg.hr_size;
    let (source, boxes) = usaf_source::<T>(n)?;
    let [train, val, _] = split_sizes(dcfg.count, dcfg.split)?;
    let sim = Simulator::<T>::new(cfg)?;
    (0..dcfg.count)
        .into_par_iter()
        .map(|i| {
            let seed = sample_seed(dcfg.seed, i);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (amp, k) = augmented_amplitude(&source, &boxes, dcfg, &mut rng)?;
            let phase = match dcfg.phase {
                PhaseMode::Zero => RealGrid::zeros(n, n),
                PhaseMode::Smooth { peak } => {
                    smooth_noise::<T>(n, 12, 8.0, &mut rng).map(|v| v * T::lit(peak))
                }
            };
            let target = ComplexGrid::from_polar(&amp, &phase)?;
            let stack = sim.capture(&target, patterns, &dcfg.noise, seed)?;
            let split = if i < train {
                Split::Train
            } else if i < train + val {
                Split::Val
            } else {
                Split::Test
            };
            Ok(DatasetSample {
                stack,
                target,
                complexity: classify_complexity(k, dcfg.simple_threshold),
                split,
                seed,
                rois: k,
                noise: dcfg.noise,
            })
        })
        .collect()
}

fn sample_dir(root: &Path, i: usize) -> PathBuf {
    root.join(format!("sample_{i:04}"))
}

/// Writes one folder per sample holding `stack.fpms`, `target.fpmc` and `meta`.
pub fn write_dataset<T: Real>(root: &Path, samples: &[DatasetSample<T>]) -> Result<()> {
    fs::create_dir_all(root)?;
    for (i, s) in samples.iter().enumerate() {
        let dir = sample_dir(root, i);
        fs::create_dir_all(&dir)?;
        crate::io::write_stack(&dir.join("stack.fpms"), &s.stack)?;
        crate::io::write_complex(&dir.join("target.fpmc"), &s.target)?;
        let meta = format!(
            "complexity={}\nsplit={}\nseed={}\nrois={}\nnoise={}\nsource=usaf-like composite\n",
            s.complexity.as_str(),
            s.split.as_str(),
            s.seed,
            s.rois,
            serde_json::to_string(&s.noise).expect("noise serializes")
        );
        crate::io::write_text(&dir.join("meta"), &meta)?;
    }
    Ok(())
}

fn meta_field<'a>(text: &'a str, key: &str, dir: &Path) -> Result<&'a str> {
    text.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .ok_or_else(|| FpmError::format(format!("{}: meta lacks `{key}`", dir.display())))
}

/// Reads every `sample_*` folder under `root` in name order.
pub fn read_dataset<T: Real>(root: &Path) -> Result<Vec<DatasetSample<T>>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("sample_")))
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(FpmError::format(format!("{}: no samples", root.display())));
    }
    dirs.iter()
        .map(|dir| {
            let text = fs::read_to_string(dir.join("meta"))?;
            let noise = serde_json::from_str(meta_field(&text, "noise", dir)?)
                .map_err(|e| FpmError::format(format!("{}: noise: {e}", dir.display())))?;
            let num = |k| {
                meta_field(&text, k, dir)?
                    .parse::<u64>()
                    .map_err(|e| FpmError::format(format!("{}: {k}: {e}", dir.display())))
            };
            Ok(DatasetSample {
                stack: crate::io::read_stack(&dir.join("stack.fpms"))?,
                target: crate::io::read_complex(&dir.join("target.fpmc"))?,
                complexity: Complexity::parse(meta_field(&text, "complexity", dir)?)?,
                split: Split::parse(meta_field(&text, "split", dir)?)?,
                seed: num("seed")?,
                rois: num("rois")? as usize,
                noise,
            })
        })
        .collect()
}

/// Re-simulates the stack of `s` from its target and compares it with the
/// stored images after rounding to `f32`, the on-disk precision.
pub fn resimulates_exactly<T: Real>(s: &DatasetSample<T>) -> Result<bool> {
    let sim = Simulator::<T>::new(&s.stack.cfg)?;
    let again = sim.capture(&s.target, &s.stack.patterns, &s.noise, s.seed)?;
    Ok(again.images.iter().zip(&s.stack.images).all(|(a, b)| {
        a.data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| x.as_f64() as f32 == y.as_f64() as f32)
    }))
}

/// Splits an image into `k × k` equal tiles in row-major order.
pub fn tile_split<T: Real>(img: &RealGrid<T>, k: usize) -> Result<Vec<RealGrid<T>>> {
    let (h, w) = img.dims();
    if k == 0 || h % k != 0 || w % k != 0 {
        return Err(FpmError::shape(format!("{h}x{w} image cannot be cut into {k}x{k} tiles")));
    }
    let (th, tw) = (h / k, w / k);
    let mut out = Vec::with_capacity(k * k);
    for r in 0..k {
        for c in 0..k {
            out.push(img.block(r * th, c * tw, th, tw));
        }
    }
    Ok(out)
}

/// Indices of the `⌈fraction·n⌉` highest-contrast tiles (population standard
/// deviation), most contrasted first, ties in input order.
pub fn contrast_rank<T: Real>(tiles: &[RealGrid<T>], keep_fraction: f64) -> Vec<usize> {
    let keep = ((keep_fraction.clamp(0.0, 1.0) * tiles.len() as f64).ceil() as usize).min(tiles.len());
    let contrast: Vec<f64> = tiles.iter().map(|t| t.std_dev().as_f64()).collect();
    let mut idx: Vec<usize> = (0..tiles.len()).collect();
    idx.sort_by(|&a, &b| contrast[b].partial_cmp(&contrast[a]).expect("finite contrast"));
    idx.truncate(keep);
    idx
}

/// The tiles selected by [`contrast_rank`].
pub fn contrast_filter<T: Real>(tiles: &[RealGrid<T>], keep_fraction: f64) -> Vec<RealGrid<T>> {
    contrast_rank(tiles, keep_fraction)
        .into_iter()
        .map(|i| tiles[i].clone())
        .collect()
}
