use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fpm_core::config::ExperimentConfig;
use fpm_core::data::augment::Complexity;
use fpm_core::data::dataset::{
    augmented_amplitude, contrast_rank, generate_dataset, read_dataset, tile_split, usaf_source, write_dataset,
    DatasetSample, Split,
};
use fpm_core::data::metrics::MetricReport;
use fpm_core::data::phantom;
use fpm_core::forward::{NoiseModel, Simulator};
use fpm_core::io;
use fpm_core::nn::{self, E2ENet, FusionNet, TrainSample};
use fpm_core::physics::{self, amplitude_field, ReconResult};
use fpm_core::pipeline::{self, Combo};
use fpm_core::{ComplexImage, RealImage};

use crate::*;

/// Caps the worker pool at `FPM_THREADS` when set.
pub fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("FPM_THREADS") {
        let n: usize = v.parse().with_context(|| format!("FPM_THREADS={v} is not a number"))?;
        if n == 0 {
            bail!("FPM_THREADS must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

pub fn run(config: Option<&Path>, cmd: Command) -> Result<()> {
    let cfg = match config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    match cmd {
        Command::Simulate(a) => simulate(&cfg, a),
        Command::Augment(a) => augment(&cfg, a),
        Command::MakeDataset(a) => make_dataset(cfg, a),
        Command::TrainE2e(a) => train_e2e(cfg, a),
        Command::TrainFusion(a) => train_fusion(cfg, a),
        Command::Reconstruct(a) => reconstruct(cfg, a),
        Command::Hybrid(a) => hybrid(cfg, a),
        Command::Ablate(a) => ablate(&cfg, a),
        Command::Metrics(a) => metrics(a),
    }
}

fn simulate(cfg: &ExperimentConfig, a: SimulateArgs) -> Result<()> {
    let n = cfg.optics.hr_size;
    let object: ComplexImage = match &a.object {
        Some(p) => io::read_complex(p)?,
        None => match a.phantom {
            PhantomKind::Usaf => amplitude_field(&phantom::usaf_like(n)),
            PhantomKind::Textured => phantom::textured(n, a.seed),
        },
    };
    let noise = NoiseModel {
        gaussian_sigma: a.noise_sigma.unwrap_or(0.0),
        photons_per_unit: 0.0,
    };
    let patterns = cfg.pattern_set()?.patterns;
    let stack = Simulator::new(&cfg.optics)?.capture(&object, &patterns, &noise, a.seed)?;
    io::write_stack(&a.out, &stack)?;
    if let Some(p) = &a.object_out {
        io::write_complex(p, &object)?;
    }
    if let Some(dir) = &a.png_dir {
        for (i, img) in stack.images.iter().enumerate() {
            io::write_png_auto(&dir.join(format!("pattern_{i:02}.png")), img)?;
        }
    }
    println!("wrote {} images of {}x{} to {}", stack.len(), cfg.optics.lr_size(), cfg.optics.lr_size(), a.out.display());
    Ok(())
}

fn augment(cfg: &ExperimentConfig, a: AugmentArgs) -> Result<()> {
    let (source, boxes) = usaf_source::<f64>(cfg.optics.hr_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let (amp, k) = augmented_amplitude(&source, &boxes, &cfg.dataset, &mut rng)?;
    io::write_complex(&a.out, &amplitude_field(&amp))?;
    if let Some(p) = &a.png {
        io::write_png(p, &amp, 0.0, 1.0)?;
    }
    let label = fpm_core::data::augment::classify_complexity(k, cfg.dataset.simple_threshold);
    println!("{k} regions ({})", label.as_str());
    Ok(())
}

fn make_dataset(mut cfg: ExperimentConfig, a: MakeDatasetArgs) -> Result<()> {
    if let Some(c) = a.count {
        cfg.dataset.count = c;
    }
    if let Some(s) = a.seed {
        cfg.dataset.seed = s;
    }
    let patterns = cfg.pattern_set()?.patterns;
    let samples = generate_dataset::<f64>(&cfg.optics, &patterns, &cfg.dataset)?;
    write_dataset(&a.out, &samples)?;
    let simple = samples.iter().filter(|s| s.complexity == Complexity::Simple).count();
    println!(
        "wrote {} samples ({simple} simple) to {}",
        samples.len(),
        a.out.display()
    );
    Ok(())
}

fn load_samples(dir: &Path, split: Split) -> Result<Vec<DatasetSample<f64>>> {
    let all = read_dataset::<f64>(dir)?;
    let picked: Vec<_> = all.into_iter().filter(|s| s.split == split).collect();
    if picked.is_empty() {
        bail!("{} has no {} samples", dir.display(), split.as_str());
    }
    Ok(picked)
}

fn write_history(path: Option<&PathBuf>, csv: &str) -> Result<()> {
    if let Some(p) = path {
        io::write_text(p, csv)?;
    }
    Ok(())
}

fn train_e2e(mut cfg: ExperimentConfig, a: TrainE2eArgs) -> Result<()> {
    if let Some(e) = a.epochs {
        cfg.train_e2e.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.train_e2e.seed = s;
    }
    if let Some(lr) = a.lr {
        cfg.train_e2e.adam.lr = lr;
    }
    let train = load_samples(&a.dataset, Split::Train)?;
    let refs: Vec<&DatasetSample<f64>> = train.iter().collect();
    let mut net = E2ENet::new(cfg.e2e, cfg.train_e2e.seed)?;
    let data = pipeline::e2e_samples(&net, &refs)?;
    let hist = nn::train(&mut net, &data, &cfg.train_e2e)?;
    nn::save_params(&net, cfg.e2e.to_tensor(), &a.out)?;
    if let Some(p) = &a.snapshot {
        let first = hist.phase_params.first().ok_or_else(|| anyhow!("training recorded no phase"))?;
        let weak = E2ENet::from_params(cfg.e2e, first.clone())?;
        nn::save_params(&weak, cfg.e2e.to_tensor(), p)?;
    }
    write_history(a.history.as_ref(), &hist.to_csv())?;
    let last = hist.epoch_loss.last().copied().unwrap_or(f64::NAN);
    println!("trained on {} samples, final loss {last:.6e}", data.len());
    Ok(())
}

fn combo_of(c: ComboArg) -> Combo {
    match c {
        ComboArg::DlDl => Combo::DlDl,
        ComboArg::PmPm => Combo::PmPm,
        ComboArg::DlPm => Combo::DlPm,
    }
}

fn train_fusion(mut cfg: ExperimentConfig, a: TrainFusionArgs) -> Result<()> {
    if let Some(e) = a.epochs {
        cfg.train_fusion.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.train_fusion.seed = s;
    }
    if let Some(lr) = a.lr {
        cfg.train_fusion.adam.lr = lr;
    }
    let e2e = nn::load_e2e(&a.e2e)?;
    let train = load_samples(&a.dataset, Split::Train)?;
    let estimates = train
        .iter()
        .map(|s| {
            let dl = pipeline::dl_stage(&s.stack, &e2e)?.estimate;
            let pm = pipeline::pm_stage(&s.stack, &dl, &cfg.recon)?.estimate;
            Ok((dl, pm))
        })
        .collect::<fpm_core::Result<Vec<_>>>()?;
    let targets: Vec<&ComplexImage> = train.iter().map(|s| &s.target).collect();
    let data: Vec<TrainSample<f64>> = pipeline::fusion_samples(&estimates, &targets, combo_of(a.combo))?;
    let mut net = FusionNet::new(cfg.fusion, cfg.train_fusion.seed)?;
    let hist = nn::train(&mut net, &data, &cfg.train_fusion)?;
    nn::save_params(&net, cfg.fusion.to_tensor(), &a.out)?;
    write_history(a.history.as_ref(), &hist.to_csv())?;
    let last = hist.epoch_loss.last().copied().unwrap_or(f64::NAN);
    println!("trained {} on {} samples, final loss {last:.6e}", combo_of(a.combo).label(), data.len());
    Ok(())
}

fn write_estimate(dir: &Path, name: &str, z: &ComplexImage) -> Result<()> {
    io::write_complex(&dir.join(format!("{name}.fpmc")), z)?;
    io::write_png(&dir.join(format!("{name}_amplitude.png")), &z.amplitude(), 0.0, 1.0)?;
    let pi = std::f64::consts::PI;
    io::write_png(&dir.join(format!("{name}_phase.png")), &z.phase(), -pi, pi)?;
    Ok(())
}

fn reconstruct(mut cfg: ExperimentConfig, a: ReconstructArgs) -> Result<()> {
    if let Some(i) = a.iterations {
        cfg.recon.iterations = i;
    }
    if let Some(lr) = a.lr {
        cfg.recon.learning_rate = lr;
    }
    let stack = io::read_stack::<f64>(&a.stack)?;
    let (layer, init) = match a.init {
        InitKind::Central => {
            let idx = physics::central_pattern_index(&stack.patterns)
                .ok_or_else(|| anyhow!("stack has no central-LED pattern"))?;
            (physics::init_from_central(&stack, idx)?, "central".to_string())
        }
        InitKind::Prior => {
            let p = a.prior.as_ref().ok_or_else(|| anyhow!("--init prior needs --prior <file>"))?;
            let prior: ComplexImage = io::read_complex(p)?;
            (physics::init_from_prior(&prior, &stack.cfg)?, format!("prior:{}", p.display()))
        }
    };
    let r: ReconResult<f64> = physics::reconstruct(&layer, &stack, &cfg.recon, &init).map_err(|e| e.in_stage("PM"))?;
    std::fs::create_dir_all(&a.out)?;
    write_estimate(&a.out, "estimate", &r.estimate)?;
    io::write_text(&a.out.join("loss.csv"), &io::loss_csv(&r.loss_trace))?;
    let mut summary = format!(
        "init {}\niterations {}\nloss {:.6e} -> {:.6e}\n",
        r.provenance.init,
        r.loss_trace.len(),
        r.loss_trace.first().copied().unwrap_or(f64::NAN),
        r.loss_trace.last().copied().unwrap_or(f64::NAN)
    );
    if let Some(t) = &a.truth {
        let truth: ComplexImage = io::read_complex(t)?;
        let mut m = MetricReport::default();
        m.evaluate("PM", &truth.amplitude(), &r.estimate.amplitude())?;
        summary.push_str(&m.to_csv());
    }
    io::write_text(&a.out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn hybrid(mut cfg: ExperimentConfig, a: HybridArgs) -> Result<()> {
    if let Some(i) = a.iterations {
        cfg.recon.iterations = i;
    }
    let stack = io::read_stack::<f64>(&a.stack)?;
    let e2e = nn::load_e2e(&a.e2e).map_err(|e| e.in_stage("DL"))?;
    let fusion = nn::load_fusion(&a.fusion).map_err(|e| e.in_stage("FUSED"))?;
    let run = pipeline::run_hybrid(&stack, &e2e, &fusion, &cfg.recon)?;
    let truth = a.truth.as_ref().map(|p| io::read_complex::<f64>(p)).transpose()?;
    pipeline::emit_hybrid_report(&run, truth.as_ref(), &a.out)?;
    print!("{}", std::fs::read_to_string(a.out.join("summary.txt"))?);
    Ok(())
}

fn ablate(cfg: &ExperimentConfig, a: AblateArgs) -> Result<()> {
    let out = a.out.clone().unwrap_or_else(|| cfg.out_dir.join("ablation"));
    let samples = match &a.dataset {
        Some(d) => read_dataset::<f64>(d)?,
        None => {
            let patterns = cfg.pattern_set()?.patterns;
            generate_dataset::<f64>(&cfg.optics, &patterns, &cfg.dataset)?
        }
    };
    let settings = cfg.settings();
    let ex = pipeline::train_all(&samples, &settings)?;
    let tests: Vec<_> = samples
        .iter()
        .filter(|s| s.split == Split::Test)
        .map(|s| (s.stack.clone(), s.target.clone()))
        .collect();
    let report = pipeline::run_ablation(&tests, &ex.e2e, &ex.fusions, &cfg.recon, &cfg.ablation)?;
    std::fs::create_dir_all(&out)?;
    let models = out.join("models");
    nn::save_params(&ex.e2e, cfg.e2e.to_tensor(), &models.join("e2e.fpmw"))?;
    nn::save_params(&ex.e2e_weak, cfg.e2e.to_tensor(), &models.join("e2e_simple.fpmw"))?;
    io::write_text(&out.join("e2e_history.csv"), &ex.e2e_history.to_csv())?;
    for (c, h) in Combo::ALL.iter().zip(&ex.fusion_histories) {
        let tag = match c {
            Combo::DlDl => "dl_dl",
            Combo::PmPm => "pm_pm",
            Combo::DlPm => "dl_pm",
        };
        let net = ex.fusions.get(*c);
        nn::save_params(net, cfg.fusion.to_tensor(), &models.join(format!("fusion_{tag}.fpmw")))?;
        io::write_text(&out.join(format!("fusion_{tag}_history.csv")), &h.to_csv())?;
    }
    pipeline::emit_ablation_report(&report, &out)?;
    print!("{}", report.summary());
    Ok(())
}

fn load_amplitude(p: &Path) -> Result<RealImage> {
    let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("");
    Ok(match ext {
        "fpmc" => io::read_complex::<f64>(p)?.amplitude(),
        "fpmr" => io::read_real(p)?,
        "png" => io::read_png(p)?,
        _ => bail!("{}: expected an .fpmc, .fpmr or .png file", p.display()),
    })
}

fn metrics(a: MetricsArgs) -> Result<()> {
    if a.test.is_empty() {
        bail!("at least one --test image is required");
    }
    let reference = load_amplitude(&a.reference)?;
    let mut report = MetricReport::default();
    for t in &a.test {
        let img = load_amplitude(t)?;
        let name = t.display().to_string();
        match a.tiles {
            None => report.evaluate(name, &reference, &img)?,
            Some(k) => {
                let rt = tile_split(&reference, k)?;
                let tt = tile_split(&img, k)?;
                for i in contrast_rank(&rt, a.keep) {
                    report.evaluate(format!("{name}#{i}"), &rt[i], &tt[i])?;
                }
            }
        }
    }
    let csv = report.to_csv();
    match &a.out {
        Some(p) => io::write_text(p, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}
