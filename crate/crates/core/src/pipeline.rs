//! The three-step hybrid reconstruction, the ablation protocol and report
//! emission.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::dataset::{contrast_rank, tile_split, DatasetSample, Split};
use crate::data::metrics::{psnr, ssim, MetricReport};
use crate::error::{FpmError, Result};
use crate::field::{ComplexGrid, RealGrid};
use crate::forward::IntensityStack;
use crate::nn::{encode_planes, E2ENet, FusionNet, Network, TrainConfig, TrainHistory, TrainSample};
use crate::physics::{init_from_prior, reconstruct, Provenance, ReconConfig, ReconResult, StageLabel};
use crate::scalar::Real;

/// Outputs of the three stages for one stack.
#[derive(Clone, Debug, PartialEq)]
pub struct HybridRun<T> {
    pub dl: ReconResult<T>,
    pub pm: ReconResult<T>,
    pub fused: ReconResult<T>,
    pub recon: ReconConfig,
    /// Wall time of each stage in seconds, DL, PM, fused. Not part of any
    /// emitted file so reports stay byte-identical.
    pub timings: [f64; 3],
}

/// Step 1 only: the end-to-end estimate.
pub fn dl_stage<T: Real>(stack: &IntensityStack<T>, e2e: &E2ENet<T>) -> Result<ReconResult<T>> {
    let estimate = e2e.forward(stack).map_err(|e| e.in_stage("DL"))?;
    Ok(ReconResult {
        estimate,
        loss_trace: Vec::new(),
        stage: StageLabel::Dl,
        provenance: Provenance {
            init: "network".into(),
            recon: None,
        },
    })
}

/// Step 2 only: physics reconstruction seeded by `prior`.
pub fn pm_stage<T: Real>(
    stack: &IntensityStack<T>,
    prior: &ComplexGrid<T>,
    rcfg: &ReconConfig,
) -> Result<ReconResult<T>> {
    let layer = init_from_prior(prior, &stack.cfg).map_err(|e| e.in_stage("PM"))?;
    reconstruct(&layer, stack, rcfg, "prior:DL").map_err(|e| e.in_stage("PM"))
}

/// Step 3 only: fusion of the two estimates.
pub fn fusion_stage<T: Real>(
    dl: &ComplexGrid<T>,
    pm: &ComplexGrid<T>,
    fusion: &FusionNet<T>,
) -> Result<ReconResult<T>> {
    let estimate = fusion.forward(dl, pm).map_err(|e| e.in_stage("FUSED"))?;
    Ok(ReconResult {
        estimate,
        loss_trace: Vec::new(),
        stage: StageLabel::Fused,
        provenance: Provenance {
            init: "fusion(DL, PM)".into(),
            recon: None,
        },
    })
}

/// End-to-end estimate, physics refinement seeded by it, then fusion of the
/// two.
pub fn run_hybrid<T: Real>(
    stack: &IntensityStack<T>,
    e2e: &E2ENet<T>,
    fusion: &FusionNet<T>,
    rcfg: &ReconConfig,
) -> Result<HybridRun<T>> {
    let t0 = Instant::now();
    let dl = dl_stage(stack, e2e)?;
    let t1 = Instant::now();
    let pm = pm_stage(stack, &dl.estimate, rcfg)?;
    let t2 = Instant::now();
    let fused = fusion_stage(&dl.estimate, &pm.estimate, fusion)?;
    let t3 = Instant::now();
    Ok(HybridRun {
        dl,
        pm,
        fused,
        recon: *rcfg,
        timings: [
            (t1 - t0).as_secs_f64(),
            (t2 - t1).as_secs_f64(),
            (t3 - t2).as_secs_f64(),
        ],
    })
}

/// Inputs given to the fusion network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Combo {
    DlDl,
    PmPm,
    DlPm,
}

impl Combo {
    pub const ALL: [Combo; 3] = [Combo::DlDl, Combo::PmPm, Combo::DlPm];

    pub fn label(self) -> &'static str {
        match self {
            Combo::DlDl => "(DL,DL)",
            Combo::PmPm => "(PM,PM)",
            Combo::DlPm => "(DL,PM)",
        }
    }

    pub fn pick<'a, T>(self, dl: &'a ComplexGrid<T>, pm: &'a ComplexGrid<T>) -> (&'a ComplexGrid<T>, &'a ComplexGrid<T>) {
        match self {
            Combo::DlDl => (dl, dl),
            Combo::PmPm => (pm, pm),
            Combo::DlPm => (dl, pm),
        }
    }
}

/// Fusion networks for the three input combinations.
#[derive(Clone, Debug)]
pub struct FusionSet<T> {
    pub dl_dl: FusionNet<T>,
    pub pm_pm: FusionNet<T>,
    pub dl_pm: FusionNet<T>,
}

impl<T: Real> FusionSet<T> {
    pub fn get(&self, c: Combo) -> &FusionNet<T> {
        match c {
            Combo::DlDl => &self.dl_dl,
            Combo::PmPm => &self.pm_pm,
            Combo::DlPm => &self.dl_pm,
        }
    }
}

/// Tile selection for scoring.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub tiles_per_side: usize,
    /// Fraction of tiles kept by contrast for the metric table.
    pub keep_fraction: f64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            tiles_per_side: 4,
            keep_fraction: 0.5,
        }
    }
}

/// Mean SSIM and PSNR of one method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub method: String,
    pub ssim: f64,
    pub psnr_db: f64,
}

/// Five-row table in the order DL, PM, (DL,DL), (PM,PM), (DL,PM), plus
/// per-tile metrics and blank-tile residual variances.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub tiles: MetricReport,
    pub blank_tiles: usize,
    /// Variance of `estimate − truth` over blank tiles for PM and (DL,PM).
    pub blank_variance_pm: f64,
    pub blank_variance_fused: f64,
}

pub const METHODS: [&str; 5] = ["DL", "PM", "(DL,DL)", "(PM,PM)", "(DL,PM)"];

impl AblationReport {
    pub fn row(&self, method: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// Table with `method,ssim,psnr_db` columns.
    pub fn table_csv(&self) -> String {
        let mut s = String::from("method,ssim,psnr_db\n");
        for r in &self.rows {
            s.push_str(&format!("{},{:.6},{:.6}\n", r.method, r.ssim, r.psnr_db));
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = String::from("Ablation (amplitude, mean over scored tiles)\n");
        s.push_str(&format!("{:<10} {:>8} {:>10}\n", "method", "SSIM", "PSNR(dB)"));
        for r in &self.rows {
            s.push_str(&format!("{:<10} {:>8.6} {:>10.6}\n", r.method, r.ssim, r.psnr_db));
        }
        s.push_str(&format!(
            "blank tiles: {}  residual variance PM {:.6e}  fused {:.6e}\n",
            self.blank_tiles, self.blank_variance_pm, self.blank_variance_fused
        ));
        s
    }
}

/// Estimates of every method for one test stack.
#[derive(Clone, Debug)]
pub struct CaseOutputs<T> {
    pub dl: ComplexGrid<T>,
    pub pm: ComplexGrid<T>,
    pub fused: [ComplexGrid<T>; 3],
}

pub fn evaluate_case<T: Real>(
    stack: &IntensityStack<T>,
    e2e: &E2ENet<T>,
    fusions: &FusionSet<T>,
    rcfg: &ReconConfig,
) -> Result<CaseOutputs<T>> {
    let dl = dl_stage(stack, e2e)?.estimate;
    let pm = pm_stage(stack, &dl, rcfg)?.estimate;
    let mut fused = Vec::with_capacity(3);
    for c in Combo::ALL {
        let (a, b) = c.pick(&dl, &pm);
        fused.push(fusion_stage(a, b, fusions.get(c))?.estimate);
    }
    let fused: [ComplexGrid<T>; 3] = fused.try_into().map_err(|_| FpmError::shape("three fusion outputs"))?;
    Ok(CaseOutputs { dl, pm, fused })
}

/// Scores DL, PM and the three fusion combinations on the amplitude of every
/// test stack.
pub fn run_ablation<T: Real>(
    tests: &[(IntensityStack<T>, ComplexGrid<T>)],
    e2e: &E2ENet<T>,
    fusions: &FusionSet<T>,
    rcfg: &ReconConfig,
    acfg: &AblationConfig,
) -> Result<AblationReport> {
    if tests.is_empty() {
        return Err(FpmError::domain("ablation needs at least one test sample"));
    }
    let outputs = tests
        .iter()
        .map(|(stack, _)| evaluate_case(stack, e2e, fusions, rcfg))
        .collect::<Result<Vec<_>>>()?;
    score(tests, &outputs, acfg)
}

/// Table and blank-tile statistics from precomputed outputs.
pub fn score<T: Real>(
    tests: &[(IntensityStack<T>, ComplexGrid<T>)],
    outputs: &[CaseOutputs<T>],
    acfg: &AblationConfig,
) -> Result<AblationReport> {
    let k = acfg.tiles_per_side;
    let mut sums = [[0.0f64; 2]; 5];
    let mut scored = 0usize;
    let mut tiles = MetricReport::default();
    let (mut blank, mut sq_pm, mut sq_fused, mut n_px) = (0usize, 0.0, 0.0, 0usize);
    let (mut sum_pm, mut sum_fused) = (0.0, 0.0);
    for (case, ((_, truth), out)) in tests.iter().zip(outputs).enumerate() {
        let truth_tiles = tile_split(&truth.amplitude(), k)?;
        let methods: [RealGrid<T>; 5] = [
            out.dl.amplitude(),
            out.pm.amplitude(),
            out.fused[0].amplitude(),
            out.fused[1].amplitude(),
            out.fused[2].amplitude(),
        ];
        let method_tiles = methods
            .iter()
            .map(|m| tile_split(m, k))
            .collect::<Result<Vec<_>>>()?;
        for t in contrast_rank(&truth_tiles, acfg.keep_fraction) {
            scored += 1;
            for (m, mt) in method_tiles.iter().enumerate() {
                let s = ssim(&truth_tiles[t], &mt[t])?;
                let p = psnr(&truth_tiles[t], &mt[t], 1.0)?;
                sums[m][0] += s;
                sums[m][1] += p;
                tiles.push(format!("case{case}/tile{t}/{}", METHODS[m]), p, s);
            }
        }
        for (t, tt) in truth_tiles.iter().enumerate() {
            let (lo, hi) = tt.min_max();
            if lo != hi {
                continue;
            }
            blank += 1;
            for ((a, b), c) in tt.data().iter().zip(method_tiles[1][t].data()).zip(method_tiles[4][t].data()) {
                let dp = b.as_f64() - a.as_f64();
                let df = c.as_f64() - a.as_f64();
                sum_pm += dp;
                sum_fused += df;
                sq_pm += dp * dp;
                sq_fused += df * df;
                n_px += 1;
            }
        }
    }
    let rows = METHODS
        .iter()
        .zip(sums)
        .map(|(m, s)| AblationRow {
            method: m.to_string(),
            ssim: s[0] / scored as f64,
            psnr_db: s[1] / scored as f64,
        })
        .collect();
    let var = |sq: f64, s: f64| {
        if n_px == 0 {
            f64::NAN
        } else {
            let n = n_px as f64;
            sq / n - (s / n) * (s / n)
        }
    };
    Ok(AblationReport {
        rows,
        tiles,
        blank_tiles: blank,
        blank_variance_pm: var(sq_pm, sum_pm),
        blank_variance_fused: var(sq_fused, sum_fused),
    })
}

/// Everything produced by the desk-scale experiment.
pub struct Experiment<T> {
    pub e2e: E2ENet<T>,
    /// End-to-end network after the Simple phase, used to build fusion data.
    pub e2e_weak: E2ENet<T>,
    pub e2e_history: TrainHistory<T>,
    pub fusions: FusionSet<T>,
    pub fusion_histories: Vec<TrainHistory<T>>,
}

pub fn e2e_samples<T: Real>(e2e: &E2ENet<T>, samples: &[&DatasetSample<T>]) -> Result<Vec<TrainSample<T>>> {
    samples
        .iter()
        .map(|s| {
            Ok(TrainSample {
                input: e2e.input(&s.stack)?,
                target: encode_planes(&s.target),
                simple: s.complexity == crate::data::augment::Complexity::Simple,
            })
        })
        .collect()
}

/// Fusion training pairs for `combo` from DL and PM estimates.
pub fn fusion_samples<T: Real>(
    estimates: &[(ComplexGrid<T>, ComplexGrid<T>)],
    targets: &[&ComplexGrid<T>],
    combo: Combo,
) -> Result<Vec<TrainSample<T>>> {
    estimates
        .iter()
        .zip(targets)
        .map(|((dl, pm), t)| {
            let (a, b) = combo.pick(dl, pm);
            Ok(TrainSample {
                input: FusionNet::input(a, b)?,
                target: encode_planes(t),
                simple: true,
            })
        })
        .collect()
}

/// Settings of the complete train-then-evaluate experiment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSettings {
    pub e2e: crate::nn::E2ENetSpec,
    pub fusion: crate::nn::FusionNetSpec,
    pub train_e2e: TrainConfig,
    pub train_fusion: TrainConfig,
    pub recon: ReconConfig,
}

/// Trains the end-to-end network with the curriculum, builds fusion data
/// from its Simple-phase snapshot, and trains one fusion network per combo.
pub fn train_all<T: Real>(samples: &[DatasetSample<T>], s: &ExperimentSettings) -> Result<Experiment<T>> {
    let train: Vec<&DatasetSample<T>> = samples.iter().filter(|x| x.split == Split::Train).collect();
    if train.is_empty() {
        return Err(FpmError::domain("no training samples"));
    }
    let mut e2e = E2ENet::new(s.e2e, s.train_e2e.seed)?;
    let data = e2e_samples(&e2e, &train)?;
    let hist = crate::nn::train(&mut e2e, &data, &s.train_e2e).map_err(|e| e.in_stage("train-e2e"))?;
    let weak_params = hist.phase_params.first().cloned().unwrap_or_else(|| e2e.params().clone());
    let e2e_weak = E2ENet::from_params(s.e2e, weak_params)?;
    let estimates = train
        .iter()
        .map(|x| {
            let dl = dl_stage(&x.stack, &e2e_weak)?.estimate;
            let pm = pm_stage(&x.stack, &dl, &s.recon)?.estimate;
            Ok((dl, pm))
        })
        .collect::<Result<Vec<_>>>()?;
    let targets: Vec<&ComplexGrid<T>> = train.iter().map(|x| &x.target).collect();
    let mut nets = Vec::with_capacity(3);
    let mut histories = Vec::with_capacity(3);
    for c in Combo::ALL {
        let mut f = FusionNet::new(s.fusion, s.train_fusion.seed)?;
        let data = fusion_samples(&estimates, &targets, c)?;
        histories.push(crate::nn::train(&mut f, &data, &s.train_fusion).map_err(|e| e.in_stage("train-fusion"))?);
        nets.push(f);
    }
    let mut it = nets.into_iter();
    let fusions = FusionSet {
        dl_dl: it.next().expect("three nets"),
        pm_pm: it.next().expect("three nets"),
        dl_pm: it.next().expect("three nets"),
    };
    Ok(Experiment {
        e2e,
        e2e_weak,
        e2e_history: hist,
        fusions,
        fusion_histories: histories,
    })
}

/// Files written by [`emit_hybrid_report`].
pub fn hybrid_report_files(dir: &Path) -> Vec<PathBuf> {
    [
        "dl_amplitude.png",
        "dl_phase.png",
        "pm_amplitude.png",
        "pm_phase.png",
        "fused_amplitude.png",
        "fused_phase.png",
        "dl.fpmc",
        "pm.fpmc",
        "fused.fpmc",
        "pm_loss.csv",
        "metrics.csv",
        "summary.txt",
    ]
    .iter()
    .map(|f| dir.join(f))
    .collect()
}

fn phase_png<T: Real>(path: &Path, z: &ComplexGrid<T>) -> Result<()> {
    let pi = std::f64::consts::PI;
    crate::io::write_png(path, &z.phase(), -pi, pi)
}

/// Writes PNGs and FPMC files of every stage, the PM loss trace, metrics
/// against `truth` when given, and a summary.
pub fn emit_hybrid_report<T: Real>(run: &HybridRun<T>, truth: Option<&ComplexGrid<T>>, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let stages = [(&run.dl, "dl"), (&run.pm, "pm"), (&run.fused, "fused")];
    for (r, name) in stages {
        crate::io::write_png(&dir.join(format!("{name}_amplitude.png")), &r.estimate.amplitude(), 0.0, 1.0)?;
        phase_png(&dir.join(format!("{name}_phase.png")), &r.estimate)?;
        crate::io::write_complex(&dir.join(format!("{name}.fpmc")), &r.estimate)?;
    }
    crate::io::write_text(&dir.join("pm_loss.csv"), &crate::io::loss_csv(&run.pm.loss_trace))?;
    let mut report = MetricReport::default();
    if let Some(t) = truth {
        let ta = t.amplitude();
        for (r, _) in stages {
            report.evaluate(r.stage.as_str(), &ta, &r.estimate.amplitude())?;
        }
    }
    crate::io::write_text(&dir.join("metrics.csv"), &report.to_csv())?;
    let mut s = String::from("Hybrid reconstruction\n");
    for (r, _) in stages {
        s.push_str(&format!("stage {} init {}\n", r.stage, r.provenance.init));
    }
    if let (Some(first), Some(last)) = (run.pm.loss_trace.first(), run.pm.loss_trace.last()) {
        s.push_str(&format!(
            "PM iterations {} loss {first:.6e} -> {last:.6e}\n",
            run.pm.loss_trace.len()
        ));
    }
    for r in &report.rows {
        s.push_str(&format!("{},{:.6},{:.6}\n", r.name, r.psnr_db, r.ssim));
    }
    crate::io::write_text(&dir.join("summary.txt"), &s)
}

/// Files written by [`emit_ablation_report`].
pub fn ablation_report_files(dir: &Path) -> Vec<PathBuf> {
    ["table.csv", "tiles.csv", "summary.txt"].iter().map(|f| dir.join(f)).collect()
}

pub fn emit_ablation_report(report: &AblationReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    crate::io::write_text(&dir.join("table.csv"), &report.table_csv())?;
    crate::io::write_text(&dir.join("tiles.csv"), &report.tiles.to_csv())?;
    crate::io::write_text(&dir.join("summary.txt"), &report.summary())
}
