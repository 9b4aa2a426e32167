use fpm_core::data::dataset::{generate_dataset, DatasetConfig};
use fpm_core::data::metrics::MetricReport;
use fpm_core::nn::{E2ENet, E2ENetSpec, FusionNet, FusionNetSpec, Network};
use fpm_core::patterns::PatternSet;
use fpm_core::physics::{init_from_prior, reconstruct, ReconConfig, StageLabel};
use fpm_core::pipeline::*;
use fpm_core::OpticalConfig;

fn rcfg() -> ReconConfig {
    ReconConfig {
        iterations: 8,
        learning_rate: 0.02,
        warmup: 2,
        ..ReconConfig::default()
    }
}

fn setup() -> (Vec<(fpm_core::IntensityStack, fpm_core::ComplexImage)>, E2ENet<f64>, FusionSet<f64>) {
    let cfg = OpticalConfig::usaf_system().with_hr_size(32);
    let pats = PatternSet::bundled_ten().patterns;
    let dcfg = DatasetConfig {
        count: 2,
        seed: 9,
        ..DatasetConfig::default()
    };
    let samples = generate_dataset::<f64>(&cfg, &pats, &dcfg).unwrap();
    let tests = samples.into_iter().map(|s| (s.stack, s.target)).collect();
    let e2e = E2ENet::new(
        E2ENetSpec {
            base_channels: 4,
            ..E2ENetSpec::default()
        },
        1,
    )
    .unwrap();
    let mut fusion = FusionNet::new(FusionNetSpec::default(), 2).unwrap();
    // Perturb the output layer so the fusion stage is not the identity.
    for (_, t) in fusion.params_mut().iter_mut().filter(|(n, _)| n.starts_with("out")) {
        t.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v += 1e-3 * ((i % 7) as f64 - 3.0));
    }
    let fusions = FusionSet {
        dl_dl: fusion.clone(),
        pm_pm: fusion.clone(),
        dl_pm: fusion,
    };
    (tests, e2e, fusions)
}

#[test]
fn hybrid_equals_manual_composition() {
    let (tests, e2e, fusions) = setup();
    let (stack, _) = &tests[0];
    let run = run_hybrid(stack, &e2e, &fusions.dl_pm, &rcfg()).unwrap();
    let dl = e2e.forward(stack).unwrap();
    let layer = init_from_prior(&dl, &stack.cfg).unwrap();
    let pm = reconstruct(&layer, stack, &rcfg(), "prior:DL").unwrap();
    let fused = fusions.dl_pm.forward(&dl, &pm.estimate).unwrap();
    assert_eq!(run.dl.estimate, dl);
    assert_eq!(run.pm.estimate, pm.estimate);
    assert_eq!(run.pm.loss_trace, pm.loss_trace);
    assert_eq!(run.fused.estimate, fused);
    assert_eq!(
        [run.dl.stage, run.pm.stage, run.fused.stage],
        [StageLabel::Dl, StageLabel::Pm, StageLabel::Fused]
    );
    assert_eq!(run.fused.stage.as_str(), "FUSED");
}

#[test]
fn stage_failures_are_tagged() {
    let (tests, e2e, fusions) = setup();
    let (stack, _) = &tests[0];
    let bad = ReconConfig {
        learning_rate: -1.0,
        ..rcfg()
    };
    let err = run_hybrid(stack, &e2e, &fusions.dl_pm, &bad).unwrap_err().to_string();
    assert!(err.starts_with("PM:"), "{err}");
    let wrong = E2ENet::new(
        E2ENetSpec {
            in_images: 4,
            ..E2ENetSpec::default()
        },
        0,
    )
    .unwrap();
    let err = run_hybrid(stack, &wrong, &fusions.dl_pm, &rcfg()).unwrap_err().to_string();
    assert!(err.starts_with("DL:"), "{err}");
}

#[test]
fn ablation_table_layout_and_determinism() {
    let (tests, e2e, fusions) = setup();
    let acfg = AblationConfig {
        tiles_per_side: 2,
        keep_fraction: 0.5,
    };
    let a = run_ablation(&tests, &e2e, &fusions, &rcfg(), &acfg).unwrap();
    let b = run_ablation(&tests, &e2e, &fusions, &rcfg(), &acfg).unwrap();
    let names: Vec<&str> = a.rows.iter().map(|r| r.method.as_str()).collect();
    assert_eq!(names, ["DL", "PM", "(DL,DL)", "(PM,PM)", "(DL,PM)"]);
    assert_eq!(a.table_csv(), b.table_csv());
    assert_eq!(a.tiles.to_csv(), b.tiles.to_csv());
    assert!(a.rows.iter().all(|r| r.ssim.is_finite() && r.psnr_db.is_finite()));
    assert!(run_ablation(&[], &e2e, &fusions, &rcfg(), &acfg).is_err());

    let dir = tempfile::tempdir().unwrap();
    emit_ablation_report(&a, dir.path()).unwrap();
    for f in ablation_report_files(dir.path()) {
        assert!(f.exists(), "{}", f.display());
    }
    assert_eq!(std::fs::read_to_string(dir.path().join("table.csv")).unwrap(), a.table_csv());
}

#[test]
fn hybrid_report_files_are_consistent() {
    let (tests, e2e, fusions) = setup();
    let (stack, truth) = &tests[1];
    let run = run_hybrid(stack, &e2e, &fusions.dl_pm, &rcfg()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_hybrid_report(&run, Some(truth), dir.path()).unwrap();
    for f in hybrid_report_files(dir.path()) {
        assert!(f.exists(), "{}", f.display());
    }
    let png: fpm_core::RealImage = fpm_core::io::read_png(&dir.path().join("fused_amplitude.png")).unwrap();
    assert_eq!(png.dims(), run.fused.estimate.dims());

    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let summary = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    for row in rows {
        assert!(summary.contains(row), "summary lacks `{row}`");
    }
    let mut direct = MetricReport::default();
    direct.evaluate("PM", &truth.amplitude(), &run.pm.estimate.amplitude()).unwrap();
    assert!(csv.contains(direct.to_csv().lines().nth(1).unwrap()));

    let first = std::fs::read(dir.path().join("fused.fpmc")).unwrap();
    emit_hybrid_report(&run, Some(truth), dir.path()).unwrap();
    assert_eq!(std::fs::read(dir.path().join("fused.fpmc")).unwrap(), first);
}
